mod common;

use common::{main_effects_fit, repeated_scores};
use mcglm::anova::{anova_table, dispersion_anova, manova_table, AnovaType};
use mcglm::estimation::{fit, FitOptions};
use mcglm::wald::wald_test;

#[test]
fn type_two_equals_type_three_without_interactions() {
    for seed in 0..20 {
        let f = main_effects_fit(seed);
        let two = anova_table(&f, 0, AnovaType::II).unwrap();
        let three = anova_table(&f, 0, AnovaType::III).unwrap();
        assert_eq!(two.rows.len(), three.rows.len());
        for (a, b) in two.rows.iter().zip(&three.rows) {
            assert_eq!(a.label, b.label);
            assert_eq!(a.df, b.df);
            assert_eq!(a.statistic.to_bits(), b.statistic.to_bits());
            assert_eq!(a.p_value.to_bits(), b.p_value.to_bits());
        }
    }
}

#[test]
fn rows_recompute_exactly_from_their_hypotheses() {
    let f = main_effects_fit(3);
    for kind in [AnovaType::I, AnovaType::II, AnovaType::III] {
        for row in anova_table(&f, 0, kind).unwrap().rows {
            let again = wald_test(&f, &row.hypothesis).unwrap();
            assert_eq!(again.statistic.to_bits(), row.statistic.to_bits());
            assert_eq!(again.df, row.df);
        }
    }
}

#[test]
fn sequential_degrees_of_freedom() {
    let f = main_effects_fit(4);
    // seed 4: a has 3 levels, b has 3 levels
    let t = anova_table(&f, 0, AnovaType::I).unwrap();
    let labels: Vec<&str> = t.rows.iter().map(|r| r.label.as_str()).collect();
    assert_eq!(labels, vec!["Intercept", "a", "x1", "b"]);
    let df: Vec<usize> = t.rows.iter().map(|r| r.df).collect();
    assert_eq!(df, vec![6, 5, 3, 2]);
    let p: Vec<f64> = t.rows.iter().map(|r| r.statistic).collect();
    // nested constraint sets give non-increasing statistics
    assert!(p.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn single_response_manova_matches_anova() {
    let f = main_effects_fit(7);
    for kind in [AnovaType::I, AnovaType::II, AnovaType::III] {
        let a = anova_table(&f, 0, kind).unwrap();
        let m = manova_table(&f, kind).unwrap();
        for (x, y) in a.rows.iter().zip(&m.rows) {
            assert_eq!(x.df, y.df);
            assert!((x.statistic - y.statistic).abs() <= 1e-12 * x.statistic.max(1.0));
        }
    }
}

#[test]
fn repeated_measures_tables() {
    let data = repeated_scores(2024);
    assert_eq!(data.model.n_obs(), 184);
    let f = fit(&data.model, &data.y, &FitOptions::default()).unwrap();
    assert!(f.converged, "norm history {:?}", f.norm_history);

    let manova = manova_table(&f, AnovaType::II).unwrap();
    let got: Vec<(&str, usize)> = manova.rows.iter().map(|r| (r.label.as_str(), r.df)).collect();
    assert_eq!(got, vec![("Intercept", 2), ("moment", 8), ("group", 6), ("moment*group", 4)]);

    for r in 0..2 {
        let t = anova_table(&f, r, AnovaType::II).unwrap();
        let df: Vec<usize> = t.rows.iter().map(|r| r.df).collect();
        assert_eq!(df, vec![1, 4, 3, 2]);
    }

    let disp = dispersion_anova(&f, None).unwrap();
    let got: Vec<(&str, usize)> = disp.rows.iter().map(|r| (r.label.as_str(), r.df)).collect();
    assert_eq!(got, vec![("tau0", 2), ("tau1", 2)]);
    let single = dispersion_anova(&f, Some(1)).unwrap();
    assert!(single.rows.iter().all(|r| r.df == 1));
    assert!(dispersion_anova(&f, Some(2)).is_err());
}
