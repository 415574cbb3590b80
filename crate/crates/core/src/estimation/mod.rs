//! Estimating functions, the modified chaser algorithm and the Godambe
//! information.

mod evaluate;

use log::debug;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{McglmError, Result};
use crate::model::{build_joint_c, build_sigma_r, LinkFunction, McglmModel, ParamLayout, Params};

pub(crate) use evaluate::{evaluate, Clusters, Evaluation, Level};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    /// Convergence threshold on max |ψ|.
    pub tolerance: f64,
    pub max_iter: usize,
    /// Chaser step factor α for the λ update.
    pub alpha: f64,
    pub max_halvings: usize,
    pub verbose: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { tolerance: 1e-6, max_iter: 100, alpha: 1.0, max_halvings: 10, verbose: false }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(McglmError::InvalidArgument("tolerance must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(McglmError::InvalidArgument("max_iter must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(McglmError::InvalidArgument("alpha must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Iterate of the chaser algorithm.
#[derive(Debug, Clone)]
pub struct EstimatingState {
    pub beta: DVector<f64>,
    pub lambda: DVector<f64>,
    /// Stacked residual 𝒴 − ℳ, response-major.
    pub residual: DVector<f64>,
    pub iteration: usize,
    pub norm_history: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct GodambeMatrices {
    /// Joint sensitivity S_θ.
    pub sensitivity: DMatrix<f64>,
    /// Joint variability V_θ.
    pub variability: DMatrix<f64>,
    /// J⁻¹ = S⁻¹ V S⁻ᵀ; rows and columns follow the model's [`ParamLayout`].
    pub inverse: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct McglmFit {
    pub model: McglmModel,
    pub theta: DVector<f64>,
    pub godambe: GodambeMatrices,
    /// (y − μ̂)/√C_ll per response.
    pub pearson_residuals: Vec<DVector<f64>>,
    pub fitted: Vec<DVector<f64>>,
    pub converged: bool,
    pub iterations: usize,
    /// max |ψ| at the start of every iteration.
    pub norm_history: Vec<f64>,
    pub options: FitOptions,
}

impl McglmFit {
    pub fn layout(&self) -> &ParamLayout {
        self.model.layout()
    }

    pub fn params(&self) -> Params {
        Params::unpack(&self.model, &self.theta).expect("theta matches the layout")
    }

    pub fn std_errors(&self) -> DVector<f64> {
        self.godambe.inverse.diagonal().map(f64::sqrt)
    }

    /// Restriction of J⁻¹ to the given θ indices.
    pub fn covariance_of(&self, indices: &[usize]) -> DMatrix<f64> {
        let j = &self.godambe.inverse;
        DMatrix::from_fn(indices.len(), indices.len(), |a, b| j[(indices[a], indices[b])])
    }
}

/// Quasi-score ψ_β = DᵀC⁻¹(𝒴 − ℳ) and D, built densely.
pub fn quasi_score(
    model: &McglmModel,
    theta: &DVector<f64>,
    y: &[DVector<f64>],
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_data(model, y)?;
    let params = Params::unpack(model, theta)?;
    let n = model.n_obs();
    let layout = model.layout();
    let mut d = DMatrix::zeros(n * model.n_responses(), layout.n_beta());
    let mut r = DVector::zeros(n * model.n_responses());
    let mut sigmas = Vec::new();
    for (k, spec) in model.responses().iter().enumerate() {
        let eta = &spec.x * &params.beta[k];
        let mu = spec.link.inverse_vec(&eta)?;
        let dmu = spec.link.mu_eta_vec(&eta)?;
        for (j, g) in layout.beta_range(k).enumerate() {
            for i in 0..n {
                d[(k * n + i, g)] = spec.x[(i, j)] * dmu[i];
            }
        }
        for i in 0..n {
            r[k * n + i] = y[k][i] - mu[i];
        }
        sigmas.push(build_sigma_r(spec, &model.predictors()[k], &mu, &params.tau[k], params.power[k])?);
    }
    let joint = build_joint_c(&sigmas, &crate::model::sigma_b(model.n_responses(), &params.rho)?)?;
    let chol = crate::model::cholesky(&joint.c).ok_or_else(|| McglmError::not_pd("joint covariance C"))?;
    Ok((d.tr_mul(&chol.solve(&r)), d))
}

/// The joint covariance and ∂C/∂λ_i, ∂C/∂β_j in layout order, built densely.
pub struct CovarianceDerivatives {
    pub c: DMatrix<f64>,
    pub residual: DVector<f64>,
    pub d_lambda: Vec<DMatrix<f64>>,
    pub d_beta: Vec<DMatrix<f64>>,
}

pub fn covariance_derivatives(
    model: &McglmModel,
    theta: &DVector<f64>,
    y: &[DVector<f64>],
) -> Result<CovarianceDerivatives> {
    check_data(model, y)?;
    let (c, residual, d_lambda, d_beta) = evaluate::dense_derivatives(model, theta, y)?;
    Ok(CovarianceDerivatives { c, residual, d_lambda, d_beta })
}

/// Pearson estimating function ψ_λi = tr(W_λi(rrᵀ − C)) with
/// W_λi = C⁻¹(∂C/∂λ_i)C⁻¹, returned together with the W matrices.
pub fn pearson_function(
    model: &McglmModel,
    theta: &DVector<f64>,
    y: &[DVector<f64>],
) -> Result<(DVector<f64>, Vec<DMatrix<f64>>)> {
    let cd = covariance_derivatives(model, theta, y)?;
    let chol = crate::model::cholesky(&cd.c).ok_or_else(|| McglmError::not_pd("joint covariance C"))?;
    let cinv = chol.inverse();
    let w: Vec<DMatrix<f64>> = cd.d_lambda.iter().map(|dc| &cinv * dc * &cinv).collect();
    let psi = DVector::from_iterator(
        w.len(),
        w.iter().map(|wi| cd.residual.dot(&(wi * &cd.residual)) - (wi * &cd.c).trace()),
    );
    Ok((psi, w))
}

/// First column of `m` that is (numerically) a combination of the earlier ones.
pub(crate) fn first_dependent_column(m: &DMatrix<f64>) -> Option<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for j in 0..m.ncols() {
        let col = m.column(j).into_owned();
        let norm = col.norm();
        let mut v = col;
        for q in &basis {
            let proj = q.dot(&v);
            v -= q * proj;
        }
        let rest = v.norm();
        if norm == 0.0 || rest <= 1e-10 * norm {
            return Some(j);
        }
        basis.push(v / rest);
    }
    None
}

/// V_β = DᵀC⁻¹D. A rank-deficient D is reported by response and column.
pub fn variability_beta(d: &DMatrix<f64>, c: &DMatrix<f64>, layout: &ParamLayout) -> Result<DMatrix<f64>> {
    let chol = crate::model::cholesky(c).ok_or_else(|| McglmError::not_pd("joint covariance C"))?;
    let v = d.tr_mul(&chol.solve(d));
    if crate::model::cholesky(&v).is_none() {
        let g = first_dependent_column(d).unwrap_or(0);
        let (response, column) = beta_position(layout, g);
        return Err(McglmError::SingularSensitivity { response, column });
    }
    Ok(v)
}

/// S_β = −DᵀC⁻¹D.
pub fn sensitivity_beta(d: &DMatrix<f64>, c: &DMatrix<f64>, layout: &ParamLayout) -> Result<DMatrix<f64>> {
    Ok(-variability_beta(d, c, layout)?)
}

fn beta_position(layout: &ParamLayout, g: usize) -> (usize, usize) {
    match layout.params().get(g).map(|p| p.kind) {
        Some(crate::model::ParamKind::Beta { response, column }) => (response, column),
        _ => (0, g),
    }
}

/// S_λij = −tr(W_i C W_j C).
pub fn sensitivity_lambda(w: &[DMatrix<f64>], c: &DMatrix<f64>) -> DMatrix<f64> {
    let wc: Vec<DMatrix<f64>> = w.iter().map(|wi| wi * c).collect();
    DMatrix::from_fn(w.len(), w.len(), |i, j| -(&wc[i] * &wc[j]).trace())
}

/// V_λij = 2tr(W_i C W_j C) + Σ_l k̂₄_l (W_i)_ll (W_j)_ll with k̂₄_l = r_l⁴ − 3C_ll².
pub fn variability_lambda(w: &[DMatrix<f64>], c: &DMatrix<f64>, r: &DVector<f64>) -> DMatrix<f64> {
    let wc: Vec<DMatrix<f64>> = w.iter().map(|wi| wi * c).collect();
    let k4 = DVector::from_fn(r.len(), |l, _| r[l].powi(4) - 3.0 * c[(l, l)].powi(2));
    DMatrix::from_fn(w.len(), w.len(), |i, j| {
        2.0 * (&wc[i] * &wc[j]).trace() + (0..r.len()).map(|l| k4[l] * w[i][(l, l)] * w[j][(l, l)]).sum::<f64>()
    })
}

/// Cross blocks (S_βλ, S_λβ, V_λβ). S_βλ is zero; S_λβij = −tr(W_i ∂C/∂β_j);
/// V_λβij = Σ_l r_l³ (W_i)_ll (C⁻¹D)_lj.
pub fn cross_matrices(
    d: &DMatrix<f64>,
    w: &[DMatrix<f64>],
    c: &DMatrix<f64>,
    r: &DVector<f64>,
    d_beta: &[DMatrix<f64>],
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let chol = crate::model::cholesky(c).ok_or_else(|| McglmError::not_pd("joint covariance C"))?;
    let cid = chol.solve(d);
    let (k, q) = (d.ncols(), w.len());
    let s_bl = DMatrix::zeros(k, q);
    let s_lb = DMatrix::from_fn(q, k, |i, j| -(&w[i] * &d_beta[j]).trace());
    let v_lb = DMatrix::from_fn(q, k, |i, j| (0..r.len()).map(|l| r[l].powi(3) * w[i][(l, l)] * cid[(l, j)]).sum());
    Ok((s_bl, s_lb, v_lb))
}

/// J⁻¹ = S⁻¹ V S⁻ᵀ, symmetrized.
pub fn godambe_inverse(s: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let lu = s.clone().full_piv_lu();
    let s_inv = lu.try_inverse().ok_or_else(|| McglmError::SingularInformation("sensitivity matrix".into()))?;
    if s_inv.iter().any(|x| !x.is_finite()) {
        return Err(McglmError::SingularInformation("sensitivity matrix".into()));
    }
    let j = &s_inv * v * s_inv.transpose();
    Ok((&j + j.transpose()) * 0.5)
}

fn joint_blocks(ev: &Evaluation) -> (DMatrix<f64>, DMatrix<f64>) {
    let k = ev.psi_beta.len();
    let q = ev.psi_lambda.len();
    let mut s = DMatrix::zeros(k + q, k + q);
    let mut v = DMatrix::zeros(k + q, k + q);
    s.view_mut((0, 0), (k, k)).copy_from(&(-&ev.v_beta));
    s.view_mut((k, 0), (q, k)).copy_from(&ev.s_lambda_beta);
    s.view_mut((k, k), (q, q)).copy_from(&ev.s_lambda);
    v.view_mut((0, 0), (k, k)).copy_from(&ev.v_beta);
    v.view_mut((k, 0), (q, k)).copy_from(&ev.v_lambda_beta);
    v.view_mut((0, k), (k, q)).copy_from(&ev.v_lambda_beta.transpose());
    v.view_mut((k, k), (q, q)).copy_from(&ev.v_lambda);
    (s, v)
}

fn check_data(model: &McglmModel, y: &[DVector<f64>]) -> Result<()> {
    if y.len() != model.n_responses() {
        return Err(McglmError::Shape(format!(
            "{} response vectors for {} responses",
            y.len(),
            model.n_responses()
        )));
    }
    for (r, yr) in y.iter().enumerate() {
        if yr.len() != model.n_obs() {
            return Err(McglmError::Shape(format!(
                "response {r} has {} values, expected {}",
                yr.len(),
                model.n_obs()
            )));
        }
        if let Some(i) = yr.iter().position(|v| !v.is_finite()) {
            return Err(McglmError::Domain { index: i, message: format!("response {r} is not finite") });
        }
    }
    Ok(())
}

/// Starting values: β from least squares of g(μ₀) on X, τ = (1, 0, …),
/// ρ = 0 and the configured power.
pub fn initial_theta(model: &McglmModel, y: &[DVector<f64>]) -> Result<DVector<f64>> {
    check_data(model, y)?;
    let mut beta = Vec::new();
    for (r, spec) in model.responses().iter().enumerate() {
        let mu0 = y[r].map(|v| match spec.link {
            LinkFunction::Identity => v,
            LinkFunction::Log => v.max(0.0) + 0.1,
            LinkFunction::Logit => (v.clamp(0.0, 1.0) + 0.5) / 2.0,
        });
        let z = spec.link.link_vec(&mu0)?;
        let xtx = spec.x.tr_mul(&spec.x);
        let chol = crate::model::cholesky(&xtx).ok_or_else(|| {
            let column = first_dependent_column(&spec.x).unwrap_or(0);
            McglmError::SingularSensitivity { response: r, column }
        })?;
        beta.push(chol.solve(&spec.x.tr_mul(&z)));
    }
    let n_pairs = model.n_responses() * (model.n_responses() - 1) / 2;
    let params = Params {
        beta,
        rho: vec![0.0; n_pairs],
        power: model.responses().iter().map(|s| s.power.value()).collect(),
        tau: model
            .predictors()
            .iter()
            .map(|mp| DVector::from_fn(mp.len(), |d, _| if d == 0 { 1.0 } else { 0.0 }))
            .collect(),
    };
    Ok(params.pack(model))
}

fn check_design(model: &McglmModel) -> Result<()> {
    for (r, spec) in model.responses().iter().enumerate() {
        if let Some(column) = first_dependent_column(&spec.x) {
            return Err(McglmError::SingularSensitivity { response: r, column });
        }
    }
    Ok(())
}

fn solve_pd(m: &DMatrix<f64>, b: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    crate::model::cholesky(m)
        .map(|c| c.solve(b))
        .ok_or_else(|| McglmError::SingularInformation(what.into()))
}

/// Fits the model by the modified chaser algorithm from the default start.
pub fn fit(model: &McglmModel, y: &[DVector<f64>], options: &FitOptions) -> Result<McglmFit> {
    let theta0 = initial_theta(model, y)?;
    fit_from(model, y, theta0, options)
}

/// Fits the model starting from `theta0`.
pub fn fit_from(
    model: &McglmModel,
    y: &[DVector<f64>],
    theta0: DVector<f64>,
    options: &FitOptions,
) -> Result<McglmFit> {
    options.validate()?;
    check_data(model, y)?;
    check_design(model)?;
    if theta0.len() != model.layout().len() {
        return Err(McglmError::Shape("initial theta does not match the layout".into()));
    }
    let clusters = Clusters::new(model);
    let k = model.layout().n_beta();
    let mut theta = theta0;
    let mut ev = evaluate(model, &clusters, &theta, y, Level::Scores)?;
    let mut norm_history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < options.max_iter {
        let norm = ev.max_norm();
        norm_history.push(norm);
        if options.verbose {
            debug!("iteration {iterations}: max |psi| = {norm:e}");
        }
        if norm < options.tolerance {
            converged = true;
            break;
        }
        iterations += 1;

        // regression step
        let delta_beta = solve_pd(&ev.v_beta, &ev.psi_beta, "V_beta")?;
        let mut h = 1.0;
        let mut halvings = 0;
        let after_beta = loop {
            let mut trial = theta.clone();
            for i in 0..k {
                trial[i] += h * delta_beta[i];
            }
            match evaluate(model, &clusters, &trial, y, Level::Scores) {
                Ok(e) => break (trial, e),
                Err(err) if err.is_infeasible() && halvings < options.max_halvings => {
                    h *= 0.5;
                    halvings += 1;
                }
                Err(err) if err.is_infeasible() => {
                    return Err(McglmError::StepHalvingExhausted { halvings, reason: err.to_string() })
                }
                Err(err) => return Err(err),
            }
        };
        theta = after_beta.0;
        ev = after_beta.1;

        // dispersion step
        if ev.psi_lambda.is_empty() {
            continue;
        }
        let neg = -&ev.s_lambda;
        let delta_lambda = solve_pd(&neg, &ev.psi_lambda, "S_lambda")?;
        let base_norm = ev.lambda_norm();
        let mut h = options.alpha;
        let mut halvings = 0;
        let mut fallback: Option<(DVector<f64>, Evaluation)> = None;
        let accepted = loop {
            let mut trial = theta.clone();
            for (q, dl) in delta_lambda.iter().enumerate() {
                trial[k + q] += h * dl;
            }
            let outcome = evaluate(model, &clusters, &trial, y, Level::Scores);
            match outcome {
                Ok(e) if e.lambda_norm() <= 10.0 * base_norm || halvings >= options.max_halvings => {
                    break (trial, e);
                }
                Ok(e) => {
                    fallback.get_or_insert((trial, e));
                    h *= 0.5;
                    halvings += 1;
                }
                Err(err) if err.is_infeasible() && halvings < options.max_halvings => {
                    h *= 0.5;
                    halvings += 1;
                }
                Err(err) if err.is_infeasible() => match fallback.take() {
                    Some(f) => break f,
                    None => {
                        return Err(McglmError::StepHalvingExhausted { halvings, reason: err.to_string() })
                    }
                },
                Err(err) => return Err(err),
            }
        };
        theta = accepted.0;
        ev = accepted.1;
    }
    if !converged {
        norm_history.push(ev.max_norm());
        converged = ev.max_norm() < options.tolerance;
    }

    let full = evaluate(model, &clusters, &theta, y, Level::Full)?;
    let (s, v) = joint_blocks(&full);
    let inverse = godambe_inverse(&s, &v)?;
    let pearson_residuals = full
        .residuals
        .iter()
        .zip(&full.c_diag)
        .map(|(r, c)| r.zip_map(c, |a, b| a / b.sqrt()))
        .collect();
    Ok(McglmFit {
        model: model.clone(),
        theta,
        godambe: GodambeMatrices { sensitivity: s, variability: v, inverse },
        pearson_residuals,
        fitted: full.mu,
        converged,
        iterations,
        norm_history,
        options: *options,
    })
}

/// Evaluates (ψ_β, ψ_λ) at θ with the clustered evaluator.
pub fn estimating_functions(
    model: &McglmModel,
    theta: &DVector<f64>,
    y: &[DVector<f64>],
) -> Result<(DVector<f64>, DVector<f64>)> {
    check_data(model, y)?;
    let ev = evaluate(model, &Clusters::new(model), theta, y, Level::Scores)?;
    Ok((ev.psi_beta, ev.psi_lambda))
}

/// Joint S_θ and V_θ at θ with the clustered evaluator.
pub fn joint_matrices(
    model: &McglmModel,
    theta: &DVector<f64>,
    y: &[DVector<f64>],
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_data(model, y)?;
    let ev = evaluate(model, &Clusters::new(model), theta, y, Level::Full)?;
    Ok(joint_blocks(&ev))
}
