mod common;

use std::collections::HashMap;

use approx::assert_relative_eq;
use common::repeated_scores;
use mcglm::design::VarValue;
use mcglm::estimation::{fit, FitOptions};
use mcglm::multcomp::{
    bonferroni, build_k0, build_k1, pairwise_tests, BonferroniCount, ComparisonScope, ContrastSelection,
};
use mcglm::wald::chi2_sf;

#[test]
fn cell_means_reproduce_the_linear_predictor() {
    let data = repeated_scores(11);
    let f = fit(&data.model, &data.y, &FitOptions::default()).unwrap();
    let k0 = build_k0(&data.design, &["moment", "group"]).unwrap();
    assert_eq!(k0.labels[0], "T0:placebo");
    assert_eq!(k0.labels[5], "T2:probiotic");
    for r in 0..2 {
        let beta = f.theta.rows(f.layout().beta_range(r).start, 6).into_owned();
        let cells = &k0.k0 * &beta;
        for (i, cell) in k0.cells.iter().enumerate() {
            let values: HashMap<String, VarValue> = [
                ("moment".to_string(), VarValue::Level(cell[0])),
                ("group".to_string(), VarValue::Level(cell[1])),
            ]
            .into();
            let row = data.design.encode(&values).unwrap();
            let eta: f64 = row.iter().zip(beta.iter()).map(|(a, b)| a * b).sum();
            assert_relative_eq!(cells[i], eta, epsilon = 1e-12);
        }
    }
}

#[test]
fn moment_comparisons_are_joint_with_two_df() {
    let data = repeated_scores(11);
    let f = fit(&data.model, &data.y, &FitOptions::default()).unwrap();
    let k1 = build_k1(&build_k0(&data.design, &["moment"]).unwrap()).unwrap();
    assert_eq!(k1.labels, vec!["T0-T1", "T0-T2", "T1-T2"]);
    let t = pairwise_tests(&f, &k1, &ContrastSelection::All, ComparisonScope::Joint, BonferroniCount::Selected).unwrap();
    for row in &t.rows {
        assert_eq!(row.df, 2);
        assert_relative_eq!(row.adjusted_p.unwrap(), (3.0 * row.p_value).min(1.0), epsilon = 1e-15);
    }
    let single =
        pairwise_tests(&f, &k1, &ContrastSelection::All, ComparisonScope::Response(0), BonferroniCount::Selected)
            .unwrap();
    assert!(single.rows.iter().all(|r| r.df == 1));
}

#[test]
fn within_moment_group_comparisons() {
    let data = repeated_scores(11);
    let f = fit(&data.model, &data.y, &FitOptions::default()).unwrap();
    let k1 = build_k1(&build_k0(&data.design, &["moment", "group"]).unwrap()).unwrap();
    assert_eq!(k1.k1.nrows(), 15);
    let sel = ContrastSelection::WithinFactor("moment".into());
    let t = pairwise_tests(&f, &k1, &sel, ComparisonScope::Joint, BonferroniCount::AllPairs).unwrap();
    let labels: Vec<&str> = t.rows.iter().map(|r| r.label.as_str()).collect();
    assert_eq!(labels, vec!["T0:placebo-T0:probiotic", "T1:placebo-T1:probiotic", "T2:placebo-T2:probiotic"]);
    for row in &t.rows {
        assert_eq!(row.df, 2);
        assert_relative_eq!(row.adjusted_p.unwrap(), (15.0 * row.p_value).min(1.0), epsilon = 1e-15);
    }
    let sel_count = pairwise_tests(&f, &k1, &sel, ComparisonScope::Joint, BonferroniCount::Selected).unwrap();
    assert_relative_eq!(sel_count.rows[0].adjusted_p.unwrap(), (3.0 * t.rows[0].p_value).min(1.0), epsilon = 1e-15);
}

#[test]
fn published_adjusted_values() {
    // two-df joint statistics and their adjusted p-values as reported
    let p = chi2_sf(2.4730, 2).unwrap();
    assert!((p - 0.2904).abs() < 1e-4);
    assert!((bonferroni(p, 3) - 0.8712).abs() < 2e-4);
    let p = chi2_sf(5.5819, 2).unwrap();
    assert!((bonferroni(p, 15) - 0.9204).abs() < 2e-4);
    assert_eq!(bonferroni(0.2, 15), 1.0);
}
