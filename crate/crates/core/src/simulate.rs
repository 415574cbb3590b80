//! Gaussian-copula (NORTA) data generation and rejection-rate studies over
//! fixed hypothesis grids.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{McglmError, Result};
use crate::estimation::{fit, FitOptions, McglmFit};
use crate::model::{
    cholesky, CorrelationStructure, LinkFunction, McglmModel, MatrixPredictor, PowerPolicy, ResponseSpec,
    VarianceFunction, ZMatrix,
};
use crate::wald::{kronecker_hypothesis, wald_test, Hypothesis, ParamBlock};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "distribution", rename_all = "lowercase")]
pub enum MarginalSpec {
    Normal { mean: f64, sd: f64 },
    Poisson { rate: f64 },
    Bernoulli { prob: f64 },
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

impl MarginalSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            MarginalSpec::Normal { mean, sd } => mean.is_finite() && sd > 0.0 && sd.is_finite(),
            MarginalSpec::Poisson { rate } => rate > 0.0 && rate.is_finite(),
            MarginalSpec::Bernoulli { prob } => prob > 0.0 && prob < 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(McglmError::InvalidArgument(format!("invalid marginal {self:?}")))
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            MarginalSpec::Normal { mean, .. } => mean,
            MarginalSpec::Poisson { rate } => rate,
            MarginalSpec::Bernoulli { prob } => prob,
        }
    }

    /// Maps a standard normal draw to this marginal.
    pub fn transform(&self, z: f64) -> f64 {
        match *self {
            MarginalSpec::Normal { mean, sd } => mean + sd * z,
            MarginalSpec::Bernoulli { prob } => {
                if std_normal_cdf(z) > 1.0 - prob {
                    1.0
                } else {
                    0.0
                }
            }
            MarginalSpec::Poisson { rate } => {
                let u = std_normal_cdf(z);
                let cap = rate + 40.0 * rate.sqrt() + 100.0;
                let mut k = 0.0;
                let mut p = (-rate).exp();
                let mut cdf = p;
                while cdf < u && k < cap {
                    k += 1.0;
                    p *= rate / k;
                    cdf += p;
                }
                k
            }
        }
    }
}

/// Draws n rows from the copula with correlation `corr`, using `rng`.
pub fn norta_sample_with<R: Rng + ?Sized>(
    marginals: &[MarginalSpec],
    corr: &DMatrix<f64>,
    n: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let k = marginals.len();
    if corr.nrows() != k || corr.ncols() != k {
        return Err(McglmError::Shape(format!("correlation must be {k}x{k}")));
    }
    for m in marginals {
        m.validate()?;
    }
    if (0..k).any(|i| corr[(i, i)] != 1.0) || corr != &corr.transpose() {
        return Err(McglmError::Shape("copula correlation must be symmetric with unit diagonal".into()));
    }
    let l = cholesky(corr).ok_or_else(|| McglmError::not_pd("copula correlation"))?.l();
    let mut out = DMatrix::zeros(n, k);
    let mut z = DVector::zeros(k);
    for i in 0..n {
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let x = &l * &z;
        for r in 0..k {
            out[(i, r)] = marginals[r].transform(x[r]);
        }
    }
    Ok(out)
}

pub fn norta_sample(marginals: &[MarginalSpec], corr: &DMatrix<f64>, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    norta_sample_with(marginals, corr, n, &mut rng)
}

fn pearson_correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

pub const MATCH_PROBES: usize = 100_000;
pub const MATCH_TOLERANCE: f64 = 0.01;

/// Copula correlation whose output product-moment correlation hits `target`,
/// found pair by pair by bisection on Monte Carlo estimates.
pub fn match_correlation(marginals: &[MarginalSpec], target: &DMatrix<f64>, seed: u64) -> Result<DMatrix<f64>> {
    let k = marginals.len();
    let mut out = DMatrix::identity(k, k);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z1: Vec<f64> = (0..MATCH_PROBES).map(|_| rng.sample(StandardNormal)).collect();
    let z2: Vec<f64> = (0..MATCH_PROBES).map(|_| rng.sample(StandardNormal)).collect();
    for i in 0..k {
        for j in (i + 1)..k {
            let goal = target[(i, j)];
            let achieved = |rho: f64| {
                let s = (1.0 - rho * rho).sqrt();
                let a: Vec<f64> = z1.iter().map(|&u| marginals[i].transform(u)).collect();
                let b: Vec<f64> = z1.iter().zip(&z2).map(|(&u, &v)| marginals[j].transform(rho * u + s * v)).collect();
                pearson_correlation(&a, &b)
            };
            let (mut lo, mut hi) = (-0.999, 0.999);
            let mut mid = goal;
            for _ in 0..60 {
                mid = 0.5 * (lo + hi);
                let got = achieved(mid);
                if (got - goal).abs() < MATCH_TOLERANCE / 4.0 {
                    break;
                }
                if got < goal {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            out[(i, j)] = mid;
            out[(j, i)] = mid;
        }
    }
    if cholesky(&out).is_none() {
        return Err(McglmError::not_pd("matched copula correlation"));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distribution {
    Normal,
    Poisson,
    Bernoulli,
}

impl std::str::FromStr for Distribution {
    type Err = McglmError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "normal" => Ok(Distribution::Normal),
            "poisson" => Ok(Distribution::Poisson),
            "bernoulli" => Ok(Distribution::Bernoulli),
            other => Err(McglmError::InvalidArgument(format!("unknown distribution '{other}'"))),
        }
    }
}

impl std::fmt::Display for Distribution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Distribution::Normal => "normal",
            Distribution::Poisson => "poisson",
            Distribution::Bernoulli => "bernoulli",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridTarget {
    Regression,
    Dispersion,
}

const NORMAL_GRID: [[f64; 4]; 20] = [
    [5.0, 0.0, 0.0, 0.0],
    [4.85, 0.05, 0.05, 0.05],
    [4.7, 0.1, 0.1, 0.1],
    [4.55, 0.15, 0.15, 0.15],
    [4.4, 0.2, 0.2, 0.2],
    [4.25, 0.25, 0.25, 0.25],
    [4.1, 0.3, 0.3, 0.3],
    [3.95, 0.35, 0.35, 0.35],
    [3.8, 0.4, 0.4, 0.4],
    [3.65, 0.45, 0.45, 0.45],
    [3.5, 0.5, 0.5, 0.5],
    [3.35, 0.55, 0.55, 0.55],
    [3.2, 0.6, 0.6, 0.6],
    [3.05, 0.65, 0.65, 0.65],
    [2.9, 0.7, 0.7, 0.7],
    [2.75, 0.75, 0.75, 0.75],
    [2.6, 0.8, 0.8, 0.8],
    [2.45, 0.85, 0.85, 0.85],
    [2.3, 0.9, 0.9, 0.9],
    [2.15, 0.95, 0.95, 0.95],
];

const POISSON_GRID: [[f64; 4]; 20] = [
    [2.3, 0.0, 0.0, 0.0],
    [2.25, 0.017, 0.017, 0.017],
    [2.2, 0.033, 0.033, 0.033],
    [2.15, 0.05, 0.05, 0.05],
    [2.10, 0.067, 0.067, 0.067],
    [2.05, 0.083, 0.083, 0.083],
    [2.0, 0.1, 0.1, 0.1],
    [1.95, 0.117, 0.117, 0.117],
    [1.9, 0.133, 0.133, 0.133],
    [1.85, 0.15, 0.15, 0.15],
    [1.8, 0.167, 0.167, 0.167],
    [1.75, 0.167, 0.167, 0.167],
    [1.7, 0.2, 0.2, 0.2],
    [1.65, 0.217, 0.217, 0.217],
    [1.6, 0.233, 0.233, 0.233],
    [1.55, 0.25, 0.25, 0.25],
    [1.5, 0.267, 0.267, 0.267],
    [1.45, 0.283, 0.283, 0.283],
    [1.4, 0.3, 0.3, 0.3],
    [1.35, 0.317, 0.317, 0.317],
];

const BERNOULLI_GRID: [[f64; 4]; 20] = [
    [0.5, 0.0, 0.0, 0.0],
    [0.250, 0.083, 0.083, 0.083],
    [0.0, 0.167, 0.167, 0.167],
    [-0.25, 0.25, 0.25, 0.25],
    [-0.500, 0.333, 0.333, 0.333],
    [-0.750, 0.417, 0.417, 0.417],
    [-1.0, 0.5, 0.5, 0.5],
    [-1.250, 0.583, 0.583, 0.583],
    [-1.500, 0.667, 0.667, 0.667],
    [-1.75, 0.75, 0.75, 0.75],
    [-2.000, 0.833, 0.833, 0.833],
    [-2.250, 0.917, 0.917, 0.917],
    [-2.5, 1.0, 1.0, 1.0],
    [-2.750, 1.083, 1.083, 1.083],
    [-3.000, 1.167, 1.167, 1.167],
    [-3.25, 1.25, 1.25, 1.25],
    [-3.500, 1.333, 1.333, 1.333],
    [-3.750, 1.417, 1.417, 1.417],
    [-4.0, 1.5, 1.5, 1.5],
    [-4.250, 1.583, 1.583, 1.583],
];

const DISPERSION_GRID: [[f64; 2]; 20] = [
    [1.0, 0.0],
    [0.98, 0.02],
    [0.96, 0.04],
    [0.94, 0.06],
    [0.92, 0.08],
    [0.9, 0.1],
    [0.88, 0.12],
    [0.86, 0.14],
    [0.84, 0.16],
    [0.82, 0.18],
    [0.8, 0.2],
    [0.78, 0.22],
    [0.76, 0.24],
    [0.74, 0.26],
    [0.72, 0.28],
    [0.7, 0.3],
    [0.68, 0.32],
    [0.66, 0.34],
    [0.64, 0.36],
    [0.62, 0.38],
];

/// The 20 null-value vectors tested in a study. The dispersion grid is the
/// same for every distribution.
pub fn hypothesis_grid(distribution: Distribution, target: GridTarget) -> Vec<Vec<f64>> {
    match target {
        GridTarget::Dispersion => DISPERSION_GRID.iter().map(|r| r.to_vec()).collect(),
        GridTarget::Regression => {
            let g = match distribution {
                Distribution::Normal => &NORMAL_GRID,
                Distribution::Poisson => &POISSON_GRID,
                Distribution::Bernoulli => &BERNOULLI_GRID,
            };
            g.iter().map(|r| r.to_vec()).collect()
        }
    }
}

/// Parameter values used to generate the data of a study.
pub fn truth(distribution: Distribution, target: GridTarget) -> Vec<f64> {
    hypothesis_grid(distribution, target)[0].clone()
}

/// Euclidean distances to `truth`, divided by the largest.
pub fn normalized_distances(grid: &[Vec<f64>], truth: &[f64]) -> Result<Vec<f64>> {
    if grid.is_empty() {
        return Err(McglmError::DegenerateGrid("empty grid".into()));
    }
    let d: Vec<f64> = grid
        .iter()
        .map(|row| {
            if row.len() != truth.len() {
                return Err(McglmError::Shape("grid row and truth differ in length".into()));
            }
            Ok(row.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
        })
        .collect::<Result<_>>()?;
    let max = d.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return Err(McglmError::DegenerateGrid("every hypothesis equals the truth".into()));
    }
    Ok(d.into_iter().map(|x| x / max).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Univariate,
    Trivariate,
}

impl Scenario {
    pub fn n_responses(&self) -> usize {
        match self {
            Scenario::Univariate => 1,
            Scenario::Trivariate => 3,
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scenario::Univariate => "univariate",
            Scenario::Trivariate => "trivariate",
        })
    }
}

/// Between-response correlation of the trivariate scenario.
pub fn trivariate_sigma_b() -> DMatrix<f64> {
    DMatrix::from_row_slice(3, 3, &[1.0, 0.75, 0.5, 0.75, 1.0, 0.25, 0.5, 0.25, 1.0])
}

pub const CLUSTER_SIZE: usize = 5;
const MAX_FAILURE_SHARE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub scenario: Scenario,
    pub distribution: Distribution,
    pub target: GridTarget,
    /// Number of data rows; for dispersion studies a multiple of 5.
    pub sample_sizes: Vec<usize>,
    pub replicates: usize,
    pub alpha: f64,
    pub seed: u64,
    /// Adjust the copula correlation so the output correlation hits Σ_b.
    #[serde(default)]
    pub match_correlation: bool,
    #[serde(default)]
    pub fit_options: FitOptions,
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(McglmError::InvalidArgument("replicates must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(McglmError::InvalidArgument("alpha must lie in (0, 1)".into()));
        }
        if self.sample_sizes.is_empty() {
            return Err(McglmError::InvalidArgument("no sample sizes given".into()));
        }
        for &n in &self.sample_sizes {
            if self.target == GridTarget::Dispersion && (n == 0 || n % CLUSTER_SIZE != 0) {
                return Err(McglmError::InvalidArgument(format!(
                    "dispersion studies need n divisible by {CLUSTER_SIZE}, got {n}"
                )));
            }
            if self.target == GridTarget::Regression && n < 8 {
                return Err(McglmError::InvalidArgument(format!("sample size {n} is too small")));
            }
        }
        self.fit_options.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerRow {
    pub scenario: Scenario,
    pub distribution: Distribution,
    pub n: usize,
    /// 1-based row of the hypothesis grid.
    pub hypothesis_index: usize,
    pub distance: f64,
    pub rejection_rate: f64,
    pub mc_se: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PowerCurve {
    pub rows: Vec<PowerRow>,
}

impl PowerCurve {
    pub fn for_size(&self, n: usize) -> Vec<&PowerRow> {
        self.rows.iter().filter(|r| r.n == n).collect()
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replicate k at sample size n.
pub fn replicate_seed(base: u64, n: usize, k: usize) -> u64 {
    base ^ splitmix64(splitmix64(n as u64) ^ k as u64)
}

fn marginal(distribution: Distribution, target: GridTarget) -> MarginalSpec {
    match (distribution, target) {
        (Distribution::Normal, _) => MarginalSpec::Normal { mean: 5.0, sd: 1.0 },
        (Distribution::Poisson, GridTarget::Regression) => MarginalSpec::Poisson { rate: 2.3f64.exp() },
        (Distribution::Poisson, GridTarget::Dispersion) => MarginalSpec::Poisson { rate: 10.0 },
        (Distribution::Bernoulli, GridTarget::Regression) => {
            MarginalSpec::Bernoulli { prob: LinkFunction::Logit.inverse(0.5) }
        }
        (Distribution::Bernoulli, GridTarget::Dispersion) => MarginalSpec::Bernoulli { prob: 0.6 },
    }
}

fn response_family(distribution: Distribution) -> (LinkFunction, VarianceFunction, f64) {
    match distribution {
        Distribution::Normal => (LinkFunction::Identity, VarianceFunction::Power, 0.0),
        Distribution::Poisson => (LinkFunction::Log, VarianceFunction::Power, 1.0),
        Distribution::Bernoulli => (LinkFunction::Logit, VarianceFunction::binomial(), 1.0),
    }
}

/// Design of a study at n rows: a four-level factor cycling A, B, C, D for
/// regression studies; an intercept with 5-row clusters for dispersion
/// studies.
pub fn study_model(scenario: Scenario, distribution: Distribution, target: GridTarget, n: usize) -> Result<McglmModel> {
    let (link, variance, p) = response_family(distribution);
    let (x, mp) = match target {
        GridTarget::Regression => {
            let x = DMatrix::from_fn(n, 4, |i, j| if j == 0 || i % 4 == j { 1.0 } else { 0.0 });
            (x, MatrixPredictor::independent(n))
        }
        GridTarget::Dispersion => {
            let units: Vec<usize> = (0..n).map(|i| i / CLUSTER_SIZE).collect();
            let mp = MatrixPredictor::new(vec![ZMatrix::Identity(n), ZMatrix::group_blocks(&units)])?;
            (DMatrix::from_element(n, 1, 1.0), mp)
        }
    };
    let specs = (0..scenario.n_responses())
        .map(|r| ResponseSpec::new(format!("y{}", r + 1), link, variance, x.clone(), PowerPolicy::Fixed(p)))
        .collect();
    let corr = match scenario {
        Scenario::Univariate => CorrelationStructure::Independent,
        Scenario::Trivariate => CorrelationStructure::Unstructured,
    };
    McglmModel::with_shared_predictor(specs, mp, corr)
}

/// Joint hypothesis that the tested block equals `row` for every response.
pub fn grid_hypothesis(model: &McglmModel, target: GridTarget, row: &[f64]) -> Result<Hypothesis> {
    let block = match target {
        GridTarget::Regression => ParamBlock::Beta,
        GridTarget::Dispersion => ParamBlock::Tau,
    };
    let r = model.n_responses();
    let h = row.len();
    let c = DVector::from_iterator(r * h, (0..r).flat_map(|_| row.iter().copied()));
    kronecker_hypothesis(model, block, &DMatrix::identity(r, r), &DMatrix::identity(h, h), Some(c))
}

fn replicate(
    config: &StudyConfig,
    model: &McglmModel,
    copula: &DMatrix<f64>,
    hyps: &[Hypothesis],
    n: usize,
    k: usize,
) -> Option<Vec<bool>> {
    let marginals = vec![marginal(config.distribution, config.target); config.scenario.n_responses()];
    let data = norta_sample(&marginals, copula, n, replicate_seed(config.seed, n, k)).ok()?;
    let y: Vec<DVector<f64>> = (0..data.ncols()).map(|r| data.column(r).into_owned()).collect();
    let f: McglmFit = fit(model, &y, &config.fit_options).ok()?;
    if !f.converged {
        return None;
    }
    hyps.iter()
        .map(|h| wald_test(&f, h).ok().map(|res| res.p_value < config.alpha))
        .collect()
}

pub fn run_power_study(config: &StudyConfig) -> Result<PowerCurve> {
    config.validate()?;
    let grid = hypothesis_grid(config.distribution, config.target);
    let distances = normalized_distances(&grid, &truth(config.distribution, config.target))?;
    let copula = match config.scenario {
        Scenario::Univariate => DMatrix::identity(1, 1),
        Scenario::Trivariate => {
            let target = trivariate_sigma_b();
            if config.match_correlation {
                let m = marginal(config.distribution, config.target);
                match_correlation(&[m, m, m], &target, config.seed)?
            } else {
                target
            }
        }
    };
    let mut curve = PowerCurve::default();
    for &n in &config.sample_sizes {
        let model = study_model(config.scenario, config.distribution, config.target, n)?;
        let hyps: Vec<Hypothesis> =
            grid.iter().map(|row| grid_hypothesis(&model, config.target, row)).collect::<Result<_>>()?;
        let outcomes: Vec<Option<Vec<bool>>> = (0..config.replicates)
            .into_par_iter()
            .map(|k| replicate(config, &model, &copula, &hyps, n, k))
            .collect();
        let failures = outcomes.iter().filter(|o| o.is_none()).count();
        if failures as f64 > MAX_FAILURE_SHARE * config.replicates as f64 {
            return Err(McglmError::StudyAborted { n, failures, replicates: config.replicates });
        }
        let ok: Vec<&Vec<bool>> = outcomes.iter().flatten().collect();
        let m = ok.len() as f64;
        for (h, &distance) in distances.iter().enumerate() {
            let rejections = ok.iter().filter(|o| o[h]).count() as f64;
            let rate = rejections / m;
            curve.rows.push(PowerRow {
                scenario: config.scenario,
                distribution: config.distribution,
                n,
                hypothesis_index: h + 1,
                distance,
                rejection_rate: rate,
                mc_se: (rate * (1.0 - rate) / m).sqrt(),
                failures,
            });
        }
    }
    Ok(curve)
}
