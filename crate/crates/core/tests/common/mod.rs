#![allow(dead_code)]

use mcglm::design::{build_design, DesignInfo, Formula, Frame, Variable};
use mcglm::estimation::{fit, FitOptions, McglmFit};
use mcglm::model::{
    CorrelationStructure, LinkFunction, McglmModel, MatrixPredictor, PowerPolicy, ResponseSpec, VarianceFunction,
    ZMatrix,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn gaussian_spec(name: &str, x: DMatrix<f64>) -> ResponseSpec {
    ResponseSpec::new(name, LinkFunction::Identity, VarianceFunction::Power, x, PowerPolicy::Fixed(0.0))
}

pub fn gaussian_model(x: DMatrix<f64>) -> McglmModel {
    let n = x.nrows();
    McglmModel::new(vec![gaussian_spec("y", x)], vec![MatrixPredictor::independent(n)], CorrelationStructure::Independent)
        .unwrap()
}

/// Random design with an intercept and k − 1 standard normal covariates.
pub fn random_design(rng: &mut ChaCha8Rng, n: usize, k: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, k, |_, j| if j == 0 { 1.0 } else { normal(rng) })
}

pub fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    (x.transpose() * x).try_inverse().unwrap() * x.transpose() * y
}

pub struct Repeated {
    pub model: McglmModel,
    pub y: Vec<DVector<f64>>,
    pub design: DesignInfo,
}

/// Two bounded scores measured on 62 subjects at three moments in two
/// treatment groups; two rows are missing, leaving 184.
pub fn repeated_scores(seed: u64) -> Repeated {
    let mut rng = rng(seed);
    let moments = ["T0", "T1", "T2"];
    let (mut m, mut g, mut s) = (Vec::new(), Vec::new(), Vec::new());
    for subject in 0..62usize {
        for (t, moment) in moments.iter().enumerate() {
            if (subject == 7 && t == 2) || (subject == 40 && t == 1) {
                continue;
            }
            m.push(moment.to_string());
            g.push(if subject < 31 { "placebo" } else { "probiotic" }.to_string());
            s.push(subject);
        }
    }
    let n = s.len();
    let mut frame = Frame::new();
    frame.push("moment", Variable::factor(&m)).unwrap();
    frame.push("group", Variable::factor(&g)).unwrap();
    let formula = Formula::parse(true, &["moment*group"]).unwrap();
    let (x, design) = build_design(&frame, &formula).unwrap();
    let effects: Vec<f64> = (0..62).map(|_| 0.4 * normal(&mut rng)).collect();
    let logistic = |e: f64| 1.0 / (1.0 + (-e).exp());
    let y: Vec<DVector<f64>> = [(-0.8, -0.3), (-0.5, -0.2)]
        .iter()
        .map(|&(base, slope)| {
            DVector::from_fn(n, |i, _| {
                let t = moments.iter().position(|v| *v == m[i]).unwrap() as f64;
                let trt = if g[i] == "probiotic" { 1.0 } else { 0.0 };
                logistic(base + slope * t * trt + effects[s[i]] + 0.5 * normal(&mut rng))
            })
        })
        .collect();
    let mp = MatrixPredictor::new(vec![ZMatrix::Identity(n), ZMatrix::group_blocks(&s)]).unwrap();
    let specs = ["YFAS", "BES"]
        .iter()
        .map(|name| {
            ResponseSpec::new(*name, LinkFunction::Logit, VarianceFunction::binomial(), x.clone(), PowerPolicy::Estimated(1.0))
                .with_design(design.clone())
        })
        .collect();
    let model = McglmModel::with_shared_predictor(specs, mp, CorrelationStructure::Unstructured).unwrap();
    Repeated { model, y, design }
}

/// Gaussian fit of y on two factors and a covariate, without interactions.
pub fn main_effects_fit(seed: u64) -> McglmFit {
    let mut r = rng(seed);
    let n = 60 + (seed as usize % 5) * 10;
    let la = 2 + seed as usize % 3;
    let lb = 2 + (seed as usize / 3) % 3;
    let a: Vec<String> = (0..n).map(|i| format!("a{}", i % la)).collect();
    let b: Vec<String> = (0..n).map(|i| format!("b{}", (i / la) % lb)).collect();
    let x1: Vec<f64> = (0..n).map(|_| normal(&mut r)).collect();
    let mut frame = Frame::new();
    frame.push("a", Variable::factor(&a)).unwrap();
    frame.push("b", Variable::factor(&b)).unwrap();
    frame.push("x1", Variable::Numeric(x1)).unwrap();
    let (x, info) = build_design(&frame, &Formula::parse(true, &["a", "x1", "b"]).unwrap()).unwrap();
    let y = DVector::from_fn(n, |i, _| 2.0 + 0.3 * x[(i, 1)] + normal(&mut r));
    let spec = gaussian_spec("y", x).with_design(info);
    let model =
        McglmModel::new(vec![spec], vec![MatrixPredictor::independent(n)], CorrelationStructure::Independent).unwrap();
    fit(&model, &[y], &FitOptions::default()).unwrap()
}
