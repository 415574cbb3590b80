//! End-to-end acceptance checks, one line per criterion.
//!
//! Run with `cargo test -p mcglm --test acceptance`. Criterion 12 needs the
//! probiotic study data as CSV (columns id, moment, group, YFAS, BES with
//! scores in [0, 1]) at the path in `MCGLM_PROBIOTIC_CSV`; without it the
//! criterion reports SKIP after checking the table layouts on simulated data.

mod common;

use std::collections::HashMap;
use std::time::Instant;

use common::{gaussian_model, gaussian_spec, main_effects_fit, normal, ols, random_design, repeated_scores, rng};
use mcglm::anova::{anova_table, dispersion_anova, manova_table, AnovaType};
use mcglm::design::{build_design, Formula, Frame, Variable};
use mcglm::estimation::{covariance_derivatives, fit, FitOptions, McglmFit};
use mcglm::model::{
    build_joint_c, build_sigma_r, sigma_b, CorrelationStructure, LinkFunction, McglmModel, MatrixPredictor, Params,
    PowerPolicy, ResponseSpec, VarianceFunction, ZMatrix,
};
use mcglm::multcomp::{build_k0, build_k1, pairwise_tests, BonferroniCount, ComparisonScope, ContrastSelection};
use mcglm::simulate::{
    hypothesis_grid, run_power_study, Distribution, GridTarget, PowerCurve, Scenario, StudyConfig,
};
use mcglm::wald::{block_scope, build_l_single, chi2_sf, kronecker_hypothesis, wald_test, Hypothesis, ParamBlock};
use nalgebra::{dvector, DMatrix, DVector};
use statrs::function::erf::erfc;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Check = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn criterion_1() -> Check {
    let start = Instant::now();
    let mut worst_beta: f64 = 0.0;
    let mut worst_tau: f64 = 0.0;
    for seed in 0..50u64 {
        let mut r = rng(1000 + seed);
        let k = 1 + (seed as usize % 5);
        let x = random_design(&mut r, 200, k);
        let y = DVector::from_fn(200, |i, _| (0..k).map(|j| x[(i, j)] * (j as f64 - 1.0)).sum::<f64>() + 2.0 * normal(&mut r));
        let f = fit(&gaussian_model(x.clone()), &[y.clone()], &FitOptions::default()).map_err(|e| e.to_string())?;
        ensure(f.converged, || format!("problem {seed} did not converge"))?;
        let beta = ols(&x, &y);
        let res = &y - &x * &beta;
        for j in 0..k {
            worst_beta = worst_beta.max((f.theta[j] - beta[j]).abs());
        }
        worst_tau = worst_tau.max((f.theta[k] - res.dot(&res) / 200.0).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(worst_beta < 1e-6 && worst_tau < 1e-6 && secs < 10.0, || {
        format!("max |Δβ| {worst_beta:.2e}, max |Δτ| {worst_tau:.2e}, {secs:.2} s")
    })?;
    Ok(format!("max |Δβ| {worst_beta:.2e}, max |Δτ| {worst_tau:.2e}, {secs:.2} s"))
}

fn toy_fits() -> Vec<McglmFit> {
    let mut out = Vec::new();
    let mut r = rng(77);
    let x = random_design(&mut r, 60, 3);
    let y = DVector::from_fn(60, |i, _| 1.0 + x[(i, 1)] + normal(&mut r));
    out.push(fit(&gaussian_model(x.clone()), &[y], &FitOptions::default()).unwrap());

    let counts = DVector::from_fn(60, |i, _| ((2.0 + 0.5 * x[(i, 1)]).exp() + 2.0 * normal(&mut r)).round().max(0.0));
    let spec = ResponseSpec::new("c", LinkFunction::Log, VarianceFunction::Power, x.clone(), PowerPolicy::Fixed(1.0));
    let m = McglmModel::new(vec![spec], vec![MatrixPredictor::independent(60)], CorrelationStructure::Independent).unwrap();
    out.push(fit(&m, &[counts], &FitOptions::default()).unwrap());

    let data = repeated_scores(5);
    out.push(fit(&data.model, &data.y, &FitOptions::default()).unwrap());
    out
}

fn criterion_2() -> Check {
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for f in toy_fits() {
        let scope: Vec<usize> = f.layout().non_rho_indices();
        let se = f.std_errors();
        for (pos, &i) in scope.iter().enumerate() {
            let w = wald_test(&f, &build_l_single(&scope, pos).unwrap()).map_err(|e| e.to_string())?.statistic;
            let z = f.theta[i] / se[i];
            worst = worst.max((w - z * z).abs() / (z * z).max(1e-300));
            count += 1;
        }
    }
    ensure(worst < 1e-10, || format!("max relative gap {worst:.2e}"))?;
    Ok(format!("{count} parameters, max relative gap {worst:.2e}"))
}

fn study(scenario: Scenario, target: GridTarget, n: usize, replicates: usize, seed: u64) -> Result<PowerCurve, String> {
    let config = StudyConfig {
        scenario,
        distribution: Distribution::Normal,
        target,
        sample_sizes: vec![n],
        replicates,
        alpha: 0.05,
        seed,
        match_correlation: false,
        fit_options: FitOptions::default(),
    };
    run_power_study(&config).map_err(|e| e.to_string())
}

fn criterion_3() -> Check {
    let start = Instant::now();
    let uni = study(Scenario::Univariate, GridTarget::Regression, 1000, 500, 2023)?;
    let tri = study(Scenario::Trivariate, GridTarget::Regression, 50, 500, 2024)?;
    let (a, b) = (uni.rows[0].rejection_rate, tri.rows[0].rejection_rate);
    let msg = format!(
        "univariate n=1000 rate {a:.3}, trivariate n=50 rate {b:.3} ({} failed fits), {:.1} s",
        tri.rows[0].failures,
        start.elapsed().as_secs_f64()
    );
    ensure((0.030..=0.075).contains(&a) && b <= 0.12, || msg.clone())?;
    Ok(msg)
}

fn criterion_4() -> Check {
    let curve = study(Scenario::Univariate, GridTarget::Regression, 250, 200, 2025)?;
    let rows = &curve.rows;
    for i in 0..rows.len() {
        for j in (i + 1)..rows.len() {
            let slack = 2.0 * rows[i].mc_se.max(rows[j].mc_se);
            ensure(rows[j].rejection_rate >= rows[i].rejection_rate - slack, || {
                format!("rate at H{:02} {} below H{:02} {}", j + 1, rows[j].rejection_rate, i + 1, rows[i].rejection_rate)
            })?;
        }
    }
    let last = rows.last().unwrap();
    ensure(last.distance == 1.0 && last.rejection_rate >= 0.95, || format!("rate at distance 1 is {}", last.rejection_rate))?;
    let rates: Vec<String> = rows.iter().step_by(4).map(|r| format!("{:.2}", r.rejection_rate)).collect();
    Ok(format!("rates at H01,H05,..: {}; at d=1 {:.3}", rates.join(" "), last.rejection_rate))
}

fn criterion_5() -> Check {
    let curve = study(Scenario::Univariate, GridTarget::Dispersion, 250, 200, 2026)?;
    let rate = curve.rows[0].rejection_rate;
    ensure((0.02..=0.10).contains(&rate), || format!("truth-row rate {rate}"))?;
    Ok(format!("truth-row rate {rate:.3}"))
}

fn criterion_6() -> Check {
    for seed in 0..20 {
        let f = main_effects_fit(100 + seed);
        let two = anova_table(&f, 0, AnovaType::II).map_err(|e| e.to_string())?;
        let three = anova_table(&f, 0, AnovaType::III).map_err(|e| e.to_string())?;
        for (a, b) in two.rows.iter().zip(&three.rows) {
            ensure(
                a.df == b.df
                    && a.statistic.to_bits() == b.statistic.to_bits()
                    && a.p_value.to_bits() == b.p_value.to_bits(),
                || format!("model {seed}, term {} differs", a.label),
            )?;
        }
    }
    Ok("20 models, all rows bit-identical".into())
}

fn criterion_7() -> Check {
    let mut worst: f64 = 0.0;
    for seed in 0..5u64 {
        let mut r = rng(300 + seed);
        let n = 80;
        let x = random_design(&mut r, n, 3);
        let specs = vec![gaussian_spec("a", x.clone()), gaussian_spec("b", x.clone())];
        let model = McglmModel::with_shared_predictor(specs, MatrixPredictor::independent(n), CorrelationStructure::Unstructured)
            .unwrap();
        let z: Vec<f64> = (0..n).map(|_| normal(&mut r)).collect();
        let y = vec![
            DVector::from_fn(n, |i, _| 1.0 + x[(i, 1)] + z[i]),
            DVector::from_fn(n, |i, _| 0.5 * x[(i, 2)] + 0.6 * z[i] + 0.8 * normal(&mut r)),
        ];
        let f = fit(&model, &y, &FitOptions::default()).map_err(|e| e.to_string())?;
        let fm = DMatrix::from_row_slice(2, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let kron = kronecker_hypothesis(&model, ParamBlock::Beta, &DMatrix::identity(2, 2), &fm, None).unwrap();
        let mut hand = DMatrix::zeros(4, 6);
        hand[(0, 1)] = 1.0;
        hand[(1, 2)] = 1.0;
        hand[(2, 4)] = 1.0;
        hand[(3, 5)] = 1.0;
        let manual = Hypothesis::new(block_scope(&model, ParamBlock::Beta), hand, DVector::zeros(4)).unwrap();
        let a = wald_test(&f, &kron).map_err(|e| e.to_string())?.statistic;
        let b = wald_test(&f, &manual).map_err(|e| e.to_string())?.statistic;
        worst = worst.max((a - b).abs() / a.max(1.0));
    }
    ensure(worst <= 1e-12, || format!("max relative gap {worst:.2e}"))?;
    Ok(format!("5 bivariate fits, max relative gap {worst:.2e}"))
}

fn criterion_8() -> Check {
    let mut frame = Frame::new();
    let levels: Vec<&str> = (0..12).map(|i| ["A", "B", "C", "D"][i % 4]).collect();
    frame.push("X", Variable::factor(&levels)).unwrap();
    let (_, info) = build_design(&frame, &Formula::parse(true, &["X"]).unwrap()).unwrap();
    let k0 = build_k0(&info, &["X"]).map_err(|e| e.to_string())?;
    let expected_k0 =
        DMatrix::from_row_slice(4, 4, &[1., 0., 0., 0., 1., 1., 0., 0., 1., 0., 1., 0., 1., 0., 0., 1.]);
    ensure(k0.k0 == expected_k0 && k0.labels == ["A", "B", "C", "D"], || format!("K0 = {}", k0.k0))?;
    let k1 = build_k1(&k0).map_err(|e| e.to_string())?;
    #[rustfmt::skip]
    let expected_k1 = DMatrix::from_row_slice(6, 4, &[
        0., -1., 0., 0.,
        0., 0., -1., 0.,
        0., 0., 0., -1.,
        0., 1., -1., 0.,
        0., 1., 0., -1.,
        0., 0., 1., -1.,
    ]);
    ensure(k1.k1 == expected_k1 && k1.labels == ["A-B", "A-C", "A-D", "B-C", "B-D", "C-D"], || format!("K1 = {}", k1.k1))?;
    let row = |label: &str| k1.k1.row(k1.labels.iter().position(|l| l == label).unwrap()).into_owned();
    let cycle = row("A-B") + row("B-C") - row("A-C");
    ensure(cycle.iter().all(|&v| v == 0.0), || format!("cycle residual {cycle}"))?;
    Ok("K0 4x4 and K1 6x4 exact, cycle identity exact".into())
}

#[rustfmt::skip]
const NORMAL: [[f64; 4]; 20] = [
    [5.0, 0.0, 0.0, 0.0], [4.85, 0.05, 0.05, 0.05], [4.7, 0.1, 0.1, 0.1], [4.55, 0.15, 0.15, 0.15],
    [4.4, 0.2, 0.2, 0.2], [4.25, 0.25, 0.25, 0.25], [4.1, 0.3, 0.3, 0.3], [3.95, 0.35, 0.35, 0.35],
    [3.8, 0.4, 0.4, 0.4], [3.65, 0.45, 0.45, 0.45], [3.5, 0.5, 0.5, 0.5], [3.35, 0.55, 0.55, 0.55],
    [3.2, 0.6, 0.6, 0.6], [3.05, 0.65, 0.65, 0.65], [2.9, 0.7, 0.7, 0.7], [2.75, 0.75, 0.75, 0.75],
    [2.6, 0.8, 0.8, 0.8], [2.45, 0.85, 0.85, 0.85], [2.3, 0.9, 0.9, 0.9], [2.15, 0.95, 0.95, 0.95],
];
const POISSON_B0: [f64; 20] = [
    2.3, 2.25, 2.2, 2.15, 2.1, 2.05, 2.0, 1.95, 1.9, 1.85, 1.8, 1.75, 1.7, 1.65, 1.6, 1.55, 1.5, 1.45, 1.4, 1.35,
];
const POISSON_B: [f64; 20] = [
    0.0, 0.017, 0.033, 0.05, 0.067, 0.083, 0.1, 0.117, 0.133, 0.15, 0.167, 0.167, 0.2, 0.217, 0.233, 0.25, 0.267,
    0.283, 0.3, 0.317,
];
const BERNOULLI_B: [f64; 20] = [
    0.0, 0.083, 0.167, 0.25, 0.333, 0.417, 0.5, 0.583, 0.667, 0.75, 0.833, 0.917, 1.0, 1.083, 1.167, 1.25, 1.333,
    1.417, 1.5, 1.583,
];

fn criterion_9() -> Check {
    let mut checked = 0;
    let mut compare = |got: Vec<Vec<f64>>, expected: Vec<Vec<f64>>, name: &str| -> std::result::Result<(), String> {
        ensure(got.len() == 20, || format!("{name} has {} rows", got.len()))?;
        for (k, (g, e)) in got.iter().zip(&expected).enumerate() {
            ensure(g == e, || format!("{name} row H{:02}: {g:?} vs {e:?}", k + 1))?;
            checked += 1;
        }
        Ok(())
    };
    compare(hypothesis_grid(Distribution::Normal, GridTarget::Regression), NORMAL.iter().map(|r| r.to_vec()).collect(), "normal")?;
    compare(
        hypothesis_grid(Distribution::Poisson, GridTarget::Regression),
        (0..20).map(|k| vec![POISSON_B0[k], POISSON_B[k], POISSON_B[k], POISSON_B[k]]).collect(),
        "poisson",
    )?;
    compare(
        hypothesis_grid(Distribution::Bernoulli, GridTarget::Regression),
        (0..20).map(|k| vec![0.5 - 0.25 * k as f64, BERNOULLI_B[k], BERNOULLI_B[k], BERNOULLI_B[k]]).collect(),
        "bernoulli",
    )?;
    let dispersion: Vec<Vec<f64>> = (0..20).map(|k| vec![(100 - 2 * k) as f64 / 100.0, (2 * k) as f64 / 100.0]).collect();
    for d in [Distribution::Normal, Distribution::Poisson, Distribution::Bernoulli] {
        compare(hypothesis_grid(d, GridTarget::Dispersion), dispersion.clone(), "dispersion")?;
    }
    Ok(format!("{checked} rows verbatim"))
}

fn chi2_closed_form(w: f64, df: usize) -> f64 {
    let h = w / 2.0;
    match df {
        1 => erfc(h.sqrt()),
        2 => (-h).exp(),
        3 => erfc(h.sqrt()) + (2.0 * w / std::f64::consts::PI).sqrt() * (-h).exp(),
        4 => (-h).exp() * (1.0 + h),
        6 => (-h).exp() * (1.0 + h + h * h / 2.0),
        _ => unreachable!(),
    }
}

fn criterion_10() -> Check {
    let mut points = vec![(3.841459, 1usize)];
    for (i, df) in [1usize, 2, 3, 4, 6].iter().enumerate() {
        for k in 0..10 {
            if points.len() < 50 {
                points.push((0.01 + 0.37 * i as f64 + k as f64 * 3.3, *df));
            }
        }
    }
    let mut worst: f64 = 0.0;
    for &(w, df) in &points {
        worst = worst.max((chi2_sf(w, df).map_err(|e| e.to_string())? - chi2_closed_form(w, df)).abs());
    }
    let p05 = chi2_sf(3.841459, 1).unwrap();
    ensure(worst < 1e-8 && (p05 - 0.05).abs() < 1e-5, || format!("max gap {worst:.2e}, Q(3.841459; 1) = {p05}"))?;
    Ok(format!("{} points, max gap {worst:.2e}, Q(3.841459; 1) = {p05:.7}", points.len()))
}

fn criterion_11() -> Check {
    let x = DMatrix::from_row_slice(6, 2, &[1.0, 0.3, 1.0, -0.2, 1.0, 1.1, 1.0, 0.5, 1.0, -0.7, 1.0, 0.0]);
    let mp = MatrixPredictor::new(vec![ZMatrix::Identity(6), ZMatrix::group_blocks(&[0, 0, 0, 1, 1, 2])]).unwrap();
    let a = ResponseSpec::new("a", LinkFunction::Log, VarianceFunction::PoissonTweedie, x.clone(), PowerPolicy::Estimated(1.4));
    let b = ResponseSpec::new("b", LinkFunction::Logit, VarianceFunction::binomial(), x, PowerPolicy::Estimated(0.8));
    let model = McglmModel::with_shared_predictor(vec![a, b], mp, CorrelationStructure::Unstructured).unwrap();
    let params = Params {
        beta: vec![dvector![0.9, 0.4], dvector![-0.3, 0.7]],
        rho: vec![0.35],
        power: vec![1.4, 0.8],
        tau: vec![dvector![0.7, 0.25], dvector![0.9, 0.2]],
    };
    let theta = params.pack(&model);
    let y = vec![dvector![3.0, 1.0, 4.0, 2.0, 0.0, 5.0], dvector![0.2, 0.6, 0.5, 0.9, 0.1, 0.4]];
    let c_of = |t: &DVector<f64>| -> DMatrix<f64> {
        let p = Params::unpack(&model, t).unwrap();
        let sig: Vec<DMatrix<f64>> = model
            .responses()
            .iter()
            .enumerate()
            .map(|(r, s)| {
                let mu = s.link.inverse_vec(&(&s.x * &p.beta[r])).unwrap();
                build_sigma_r(s, &model.predictors()[r], &mu, &p.tau[r], p.power[r]).unwrap()
            })
            .collect();
        build_joint_c(&sig, &sigma_b(2, &p.rho).unwrap()).unwrap().c
    };
    let cd = covariance_derivatives(&model, &theta, &y).map_err(|e| e.to_string())?;
    let k = model.layout().n_beta();
    let mut worst: f64 = 0.0;
    let mut kinds = HashMap::new();
    for idx in k..model.layout().len() {
        let h = 1e-5 * theta[idx].abs().max(1e-2);
        let (mut up, mut dn) = (theta.clone(), theta.clone());
        up[idx] += h;
        dn[idx] -= h;
        let fd = (c_of(&up) - c_of(&dn)) / (2.0 * h);
        let rel = (&cd.d_lambda[idx - k] - &fd).amax() / fd.amax().max(1e-12);
        worst = worst.max(rel);
        let name = &model.layout().params()[idx].name;
        let kind = if name.starts_with("rho") { "rho" } else if name.ends_with("power") { "power" } else { "tau" };
        *kinds.entry(kind).or_insert(0) += 1;
        ensure(rel < 1e-5, || format!("{name}: relative gap {rel:.2e}"))?;
    }
    ensure(kinds.len() == 3, || format!("parameter kinds covered: {kinds:?}"))?;
    Ok(format!("{} covariance parameters (tau, power, rho), max relative gap {worst:.2e}", model.layout().n_lambda()))
}

fn table_dfs(f: &McglmFit) -> std::result::Result<Vec<Vec<usize>>, String> {
    let e = |e: mcglm::McglmError| e.to_string();
    let design = f.model.responses()[0].design.clone().ok_or("no design")?;
    let moment = build_k1(&build_k0(&design, &["moment"]).map_err(e)?).map_err(e)?;
    let cells = build_k1(&build_k0(&design, &["moment", "group"]).map_err(e)?).map_err(e)?;
    let dfs = |rows: Vec<mcglm::anova::TestRow>| rows.iter().map(|r| r.df).collect::<Vec<_>>();
    Ok(vec![
        dfs(manova_table(f, AnovaType::II).map_err(e)?.rows),
        dfs(anova_table(f, 0, AnovaType::II).map_err(e)?.rows),
        dfs(pairwise_tests(f, &moment, &ContrastSelection::All, ComparisonScope::Joint, BonferroniCount::AllPairs).map_err(e)?.rows),
        dfs(pairwise_tests(f, &cells, &ContrastSelection::WithinFactor("moment".into()), ComparisonScope::Joint, BonferroniCount::AllPairs)
            .map_err(e)?
            .rows),
        dfs(dispersion_anova(f, None).map_err(e)?.rows),
    ])
}

const EXPECTED_DFS: [&[usize]; 5] = [&[2, 8, 6, 4], &[1, 4, 3, 2], &[2, 2, 2], &[2, 2, 2], &[2, 2]];
const MANOVA_CHI2: [f64; 4] = [53.1581, 139.0161, 8.4928, 6.9923];

fn load_probiotic(path: &str) -> std::result::Result<(McglmModel, Vec<DVector<f64>>), String> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| e.to_string())?;
    let headers = reader.headers().map_err(|e| e.to_string())?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).ok_or(format!("missing column {name}"));
    let (id, mo, gr, yf, be) = (col("id")?, col("moment")?, col("group")?, col("YFAS")?, col("BES")?);
    let (mut ids, mut moments, mut groups, mut y1, mut y2) = (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for rec in reader.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        let num = |i: usize| rec[i].trim().parse::<f64>().ok();
        if let (Some(a), Some(b)) = (num(yf), num(be)) {
            ids.push(rec[id].to_string());
            moments.push(rec[mo].to_string());
            groups.push(rec[gr].to_string());
            y1.push(a);
            y2.push(b);
        }
    }
    let mut frame = Frame::new();
    frame.push("moment", Variable::factor(&moments)).map_err(|e| e.to_string())?;
    frame.push("group", Variable::factor(&groups)).map_err(|e| e.to_string())?;
    let (x, design) = build_design(&frame, &Formula::parse(true, &["moment*group"]).unwrap()).map_err(|e| e.to_string())?;
    let n = ids.len();
    let mp = MatrixPredictor::new(vec![ZMatrix::Identity(n), ZMatrix::group_blocks(&ids)]).map_err(|e| e.to_string())?;
    let specs = ["YFAS", "BES"]
        .iter()
        .map(|name| {
            ResponseSpec::new(*name, LinkFunction::Logit, VarianceFunction::binomial(), x.clone(), PowerPolicy::Estimated(1.0))
                .with_design(design.clone())
        })
        .collect();
    let model = McglmModel::with_shared_predictor(specs, mp, CorrelationStructure::Unstructured).map_err(|e| e.to_string())?;
    Ok((model, vec![DVector::from_vec(y1), DVector::from_vec(y2)]))
}

fn criterion_12() -> Outcome {
    let synthetic = repeated_scores(12);
    let layout = fit(&synthetic.model, &synthetic.y, &FitOptions::default())
        .map_err(|e| e.to_string())
        .and_then(|f| table_dfs(&f));
    match layout {
        Ok(d) if d.iter().zip(EXPECTED_DFS).all(|(a, b)| a == b) => {}
        Ok(d) => return Outcome::Fail(format!("simulated design gives df {d:?}")),
        Err(e) => return Outcome::Fail(e),
    }
    let Ok(path) = std::env::var("MCGLM_PROBIOTIC_CSV") else {
        return Outcome::Skip("study data not available; df layout verified on a simulated 184-row design".into());
    };
    let run = || -> Check {
        let (model, y) = load_probiotic(&path)?;
        ensure(model.n_obs() == 184, || format!("{} complete rows, expected 184", model.n_obs()))?;
        let f = fit(&model, &y, &FitOptions::default()).map_err(|e| e.to_string())?;
        let d = table_dfs(&f)?;
        ensure(d.iter().zip(EXPECTED_DFS).all(|(a, b)| a == b), || format!("df {d:?}"))?;
        let manova = manova_table(&f, AnovaType::II).map_err(|e| e.to_string())?;
        for (row, want) in manova.rows.iter().zip(MANOVA_CHI2) {
            ensure((row.statistic - want).abs() / want <= 0.05, || format!("{}: {} vs {want}", row.label, row.statistic))?;
        }
        Ok("df columns exact, MANOVA chi-square within 5%".into())
    };
    match run() {
        Ok(m) => Outcome::Pass(m),
        Err(m) => Outcome::Fail(m),
    }
}

fn wrap(c: Check) -> Outcome {
    match c {
        Ok(m) => Outcome::Pass(m),
        Err(m) => Outcome::Fail(m),
    }
}

fn main() {
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("Gaussian fits equal OLS", Box::new(|| wrap(criterion_1()))),
        ("single-row W equals squared z", Box::new(|| wrap(criterion_2()))),
        ("null rejection rate calibrated", Box::new(|| wrap(criterion_3()))),
        ("power nondecreasing in distance", Box::new(|| wrap(criterion_4()))),
        ("dispersion null calibration", Box::new(|| wrap(criterion_5()))),
        ("type II equals type III without interactions", Box::new(|| wrap(criterion_6()))),
        ("Kronecker L equals stacked L", Box::new(|| wrap(criterion_7()))),
        ("K0 and K1 for a four-level factor", Box::new(|| wrap(criterion_8()))),
        ("hypothesis grids verbatim", Box::new(|| wrap(criterion_9()))),
        ("chi-square tail accuracy", Box::new(|| wrap(criterion_10()))),
        ("covariance derivatives vs finite differences", Box::new(|| wrap(criterion_11()))),
        ("application tables", Box::new(criterion_12)),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let (tag, detail) = match run() {
            Outcome::Pass(m) => ("PASS", m),
            Outcome::Fail(m) => {
                failed += 1;
                ("FAIL", m)
            }
            Outcome::Skip(m) => ("SKIP", m),
        };
        println!("criterion {:>2} {tag}: {name} ({detail})", i + 1);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
