//! Model objects: responses, matrix predictors, the joint covariance and the
//! layout of the parameter vector θ = (β, ρ, p, τ).

mod covariance;
mod link;
mod predictor;
mod variance;

pub use covariance::{
    cholesky,
    build_joint_c, build_sigma_r, dchol, rho_index, sigma_b, JointCovariance,
};
pub(crate) use covariance::{assemble_joint, sigma_from_parts, sqrt_variance};
pub use link::LinkFunction;
pub use predictor::{build_omega, CovarianceLink, MatrixPredictor, ZMatrix};
pub use variance::{variance_eval, VarianceFunction};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::DesignInfo;
use crate::error::{McglmError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", content = "value", rename_all = "lowercase")]
pub enum PowerPolicy {
    Fixed(f64),
    /// Estimated, starting from the given value.
    Estimated(f64),
}

impl PowerPolicy {
    pub fn value(&self) -> f64 {
        match *self {
            PowerPolicy::Fixed(p) | PowerPolicy::Estimated(p) => p,
        }
    }

    pub fn is_estimated(&self) -> bool {
        matches!(self, PowerPolicy::Estimated(_))
    }
}

#[derive(Debug, Clone)]
pub struct ResponseSpec {
    pub name: String,
    pub link: LinkFunction,
    pub variance: VarianceFunction,
    /// N × k_r design matrix.
    pub x: DMatrix<f64>,
    pub power: PowerPolicy,
    /// Term structure behind `x`, when the design was built from a formula.
    pub design: Option<DesignInfo>,
}

impl ResponseSpec {
    pub fn new(
        name: impl Into<String>,
        link: LinkFunction,
        variance: VarianceFunction,
        x: DMatrix<f64>,
        power: PowerPolicy,
    ) -> Self {
        ResponseSpec { name: name.into(), link, variance, x, power, design: None }
    }

    pub fn with_design(mut self, design: DesignInfo) -> Self {
        self.design = Some(design);
        self
    }

    pub fn n_coefficients(&self) -> usize {
        self.x.ncols()
    }

    pub fn column_names(&self) -> Vec<String> {
        match &self.design {
            Some(d) => d.column_names.clone(),
            None => (0..self.x.ncols()).map(|j| format!("x{j}")).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationStructure {
    /// Off-diagonal entries of Σ_b are estimated.
    #[default]
    Unstructured,
    /// Σ_b fixed at the identity; no ρ parameters.
    Independent,
}

#[derive(Debug, Clone)]
pub struct McglmModel {
    responses: Vec<ResponseSpec>,
    predictors: Vec<MatrixPredictor>,
    correlation: CorrelationStructure,
    layout: ParamLayout,
}

impl McglmModel {
    pub fn new(
        responses: Vec<ResponseSpec>,
        predictors: Vec<MatrixPredictor>,
        correlation: CorrelationStructure,
    ) -> Result<Self> {
        if responses.is_empty() {
            return Err(McglmError::Shape("a model needs at least one response".into()));
        }
        if predictors.len() != responses.len() {
            return Err(McglmError::Shape(format!(
                "{} responses but {} matrix predictors",
                responses.len(),
                predictors.len()
            )));
        }
        let n = responses[0].x.nrows();
        for (r, (spec, mp)) in responses.iter().zip(&predictors).enumerate() {
            if spec.x.nrows() != n {
                return Err(McglmError::Shape(format!(
                    "response {r} has {} rows, expected {n}",
                    spec.x.nrows()
                )));
            }
            if mp.dim() != n {
                return Err(McglmError::Shape(format!(
                    "matrix predictor of response {r} is {}x{0}, expected {n}x{n}",
                    mp.dim()
                )));
            }
            if spec.x.ncols() == 0 {
                return Err(McglmError::Shape(format!("response {r} has an empty design")));
            }
        }
        let layout = ParamLayout::new(&responses, &predictors, correlation);
        Ok(McglmModel { responses, predictors, correlation, layout })
    }

    /// Same matrix predictor for every response.
    pub fn with_shared_predictor(
        responses: Vec<ResponseSpec>,
        predictor: MatrixPredictor,
        correlation: CorrelationStructure,
    ) -> Result<Self> {
        let predictors = vec![predictor; responses.len()];
        Self::new(responses, predictors, correlation)
    }

    pub fn responses(&self) -> &[ResponseSpec] {
        &self.responses
    }

    pub fn predictors(&self) -> &[MatrixPredictor] {
        &self.predictors
    }

    pub fn correlation(&self) -> CorrelationStructure {
        self.correlation
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn n_responses(&self) -> usize {
        self.responses.len()
    }

    pub fn n_obs(&self) -> usize {
        self.responses[0].x.nrows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ParamKind {
    Beta { response: usize, column: usize },
    Rho { first: usize, second: usize },
    Power { response: usize },
    Tau { response: usize, index: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamInfo {
    pub name: String,
    pub kind: ParamKind,
}

/// Position of every parameter in θ: β by response then by column of X_r,
/// followed by λ = (ρ, p, τ). Only estimated powers appear in λ.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    params: Vec<ParamInfo>,
    beta_offsets: Vec<usize>,
    n_beta: usize,
    n_rho: usize,
    power_slots: Vec<Option<usize>>,
    tau_offsets: Vec<usize>,
    tau_lens: Vec<usize>,
}

impl ParamLayout {
    fn new(
        responses: &[ResponseSpec],
        predictors: &[MatrixPredictor],
        correlation: CorrelationStructure,
    ) -> Self {
        let n_resp = responses.len();
        let mut params = Vec::new();
        let mut beta_offsets = Vec::new();
        for (r, spec) in responses.iter().enumerate() {
            beta_offsets.push(params.len());
            for (j, col) in spec.column_names().into_iter().enumerate() {
                params.push(ParamInfo {
                    name: format!("{}:{}", spec.name, col),
                    kind: ParamKind::Beta { response: r, column: j },
                });
            }
        }
        let n_beta = params.len();
        let mut n_rho = 0;
        if correlation == CorrelationStructure::Unstructured {
            for r in 0..n_resp {
                for s in (r + 1)..n_resp {
                    params.push(ParamInfo {
                        name: format!("rho:{},{}", responses[r].name, responses[s].name),
                        kind: ParamKind::Rho { first: r, second: s },
                    });
                    n_rho += 1;
                }
            }
        }
        let mut power_slots = Vec::new();
        for (r, spec) in responses.iter().enumerate() {
            if spec.power.is_estimated() {
                power_slots.push(Some(params.len()));
                params.push(ParamInfo {
                    name: format!("{}:power", spec.name),
                    kind: ParamKind::Power { response: r },
                });
            } else {
                power_slots.push(None);
            }
        }
        let mut tau_offsets = Vec::new();
        let mut tau_lens = Vec::new();
        for (r, mp) in predictors.iter().enumerate() {
            tau_offsets.push(params.len());
            tau_lens.push(mp.len());
            for d in 0..mp.len() {
                params.push(ParamInfo {
                    name: format!("{}:tau{}", responses[r].name, d),
                    kind: ParamKind::Tau { response: r, index: d },
                });
            }
        }
        ParamLayout { params, beta_offsets, n_beta, n_rho, power_slots, tau_offsets, tau_lens }
    }

    pub fn params(&self) -> &[ParamInfo] {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// K.
    pub fn n_beta(&self) -> usize {
        self.n_beta
    }

    /// Q.
    pub fn n_lambda(&self) -> usize {
        self.params.len() - self.n_beta
    }

    pub fn n_rho(&self) -> usize {
        self.n_rho
    }

    pub fn beta_range(&self, r: usize) -> std::ops::Range<usize> {
        let start = self.beta_offsets[r];
        let end = self.beta_offsets.get(r + 1).copied().unwrap_or(self.n_beta);
        start..end
    }

    pub fn rho_range(&self) -> std::ops::Range<usize> {
        self.n_beta..self.n_beta + self.n_rho
    }

    pub fn power_index(&self, r: usize) -> Option<usize> {
        self.power_slots[r]
    }

    pub fn tau_range(&self, r: usize) -> std::ops::Range<usize> {
        self.tau_offsets[r]..self.tau_offsets[r] + self.tau_lens[r]
    }

    /// Indices of θ* — every parameter except the correlations ρ.
    pub fn non_rho_indices(&self) -> Vec<usize> {
        (0..self.params.len()).filter(|i| !self.rho_range().contains(i)).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn names(&self) -> Vec<String> {
        self.params.iter().map(|p| p.name.clone()).collect()
    }
}

/// θ unpacked into per-response pieces.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub beta: Vec<DVector<f64>>,
    /// Full set of R(R−1)/2 correlations (zeros when Σ_b is fixed).
    pub rho: Vec<f64>,
    /// Power in effect for each response (fixed or estimated).
    pub power: Vec<f64>,
    pub tau: Vec<DVector<f64>>,
}

impl Params {
    pub fn unpack(model: &McglmModel, theta: &DVector<f64>) -> Result<Self> {
        let layout = model.layout();
        if theta.len() != layout.len() {
            return Err(McglmError::Shape(format!(
                "theta has {} entries, layout expects {}",
                theta.len(),
                layout.len()
            )));
        }
        let n_resp = model.n_responses();
        let beta = (0..n_resp)
            .map(|r| DVector::from_iterator(layout.beta_range(r).len(), layout.beta_range(r).map(|i| theta[i])))
            .collect();
        let n_pairs = n_resp * n_resp.saturating_sub(1) / 2;
        let rho = if layout.n_rho == 0 {
            vec![0.0; n_pairs]
        } else {
            layout.rho_range().map(|i| theta[i]).collect()
        };
        let power = model
            .responses()
            .iter()
            .enumerate()
            .map(|(r, spec)| match layout.power_index(r) {
                Some(i) => theta[i],
                None => spec.power.value(),
            })
            .collect();
        let tau = (0..n_resp)
            .map(|r| DVector::from_iterator(layout.tau_range(r).len(), layout.tau_range(r).map(|i| theta[i])))
            .collect();
        Ok(Params { beta, rho, power, tau })
    }

    pub fn pack(&self, model: &McglmModel) -> DVector<f64> {
        let layout = model.layout();
        let mut theta = DVector::zeros(layout.len());
        for r in 0..model.n_responses() {
            for (k, i) in layout.beta_range(r).enumerate() {
                theta[i] = self.beta[r][k];
            }
            if let Some(i) = layout.power_index(r) {
                theta[i] = self.power[r];
            }
            for (k, i) in layout.tau_range(r).enumerate() {
                theta[i] = self.tau[r][k];
            }
        }
        for (k, i) in layout.rho_range().enumerate() {
            theta[i] = self.rho[k];
        }
        theta
    }
}
