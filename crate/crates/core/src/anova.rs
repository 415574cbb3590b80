//! ANOVA and MANOVA tables built from sequences of Wald tests.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::TermMap;
use crate::error::{McglmError, Result};
use crate::estimation::McglmFit;
use crate::wald::{kronecker_hypothesis, wald_test, Hypothesis, ParamBlock};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnovaType {
    I,
    II,
    III,
}

impl fmt::Display for AnovaType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AnovaType::I => "I",
            AnovaType::II => "II",
            AnovaType::III => "III",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for AnovaType {
    type Err = McglmError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "1" | "I" => Ok(AnovaType::I),
            "2" | "II" => Ok(AnovaType::II),
            "3" | "III" => Ok(AnovaType::III),
            other => Err(McglmError::InvalidArgument(format!("unknown ANOVA type '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TableKind {
    Anova { response: usize },
    Manova,
    Dispersion { response: Option<usize> },
    Comparisons { response: Option<usize> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestRow {
    pub label: String,
    pub df: usize,
    pub statistic: f64,
    pub p_value: f64,
    /// Bonferroni-adjusted p-value, for multiple-comparison tables.
    pub adjusted_p: Option<f64>,
    pub hypothesis: Hypothesis,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestTable {
    pub kind: TableKind,
    pub anova_type: Option<AnovaType>,
    pub rows: Vec<TestRow>,
}

/// Term structure of response r; one term per column when the design has
/// no formula metadata.
pub fn term_map(fit: &McglmFit, response: usize) -> Result<TermMap> {
    let spec = fit
        .model
        .responses()
        .get(response)
        .ok_or_else(|| McglmError::Index(format!("response {response} of {}", fit.model.n_responses())))?;
    Ok(match &spec.design {
        Some(d) => d.term_map.clone(),
        None => TermMap::per_column(&spec.column_names()),
    })
}

/// For each row: label and the local β columns constrained to zero.
fn row_columns(terms: &TermMap, kind: AnovaType) -> Vec<(String, Vec<usize>)> {
    let t = terms.len();
    (0..t)
        .map(|k| {
            let mut cols: Vec<usize> = match kind {
                AnovaType::I => (k..t).flat_map(|u| terms.terms[u].columns.clone()).collect(),
                AnovaType::II => (0..t)
                    .filter(|&u| u == k || terms.contains(u, k))
                    .flat_map(|u| terms.terms[u].columns.clone())
                    .collect(),
                AnovaType::III => terms.terms[k].columns.clone(),
            };
            cols.sort_unstable();
            (terms.terms[k].label.clone(), cols)
        })
        .collect()
}

fn selector(cols: &[usize], width: usize) -> DMatrix<f64> {
    let mut f = DMatrix::zeros(cols.len(), width);
    for (row, &c) in cols.iter().enumerate() {
        f[(row, c)] = 1.0;
    }
    f
}

fn run(fit: &McglmFit, label: String, hyp: Hypothesis) -> Result<TestRow> {
    let res = wald_test(fit, &hyp)?;
    Ok(TestRow { label, df: res.df, statistic: res.statistic, p_value: res.p_value, adjusted_p: None, hypothesis: hyp })
}

/// Per-response ANOVA table of the regression parameters.
pub fn anova_table(fit: &McglmFit, response: usize, kind: AnovaType) -> Result<TestTable> {
    let terms = term_map(fit, response)?;
    let range = fit.layout().beta_range(response);
    let scope: Vec<usize> = range.clone().collect();
    let rows = row_columns(&terms, kind)
        .into_iter()
        .map(|(label, cols)| {
            let hyp = Hypothesis::new(scope.clone(), selector(&cols, range.len()), DVector::zeros(cols.len()))?;
            run(fit, label, hyp)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TestTable { kind: TableKind::Anova { response }, anova_type: Some(kind), rows })
}

/// Joint table over all responses, each row testing I_R ⊗ F.
pub fn manova_table(fit: &McglmFit, kind: AnovaType) -> Result<TestTable> {
    let model = &fit.model;
    crate::wald::check_shared_predictor(model, ParamBlock::Beta)?;
    let terms = term_map(fit, 0)?;
    let width = fit.layout().beta_range(0).len();
    let g = DMatrix::identity(model.n_responses(), model.n_responses());
    let rows = row_columns(&terms, kind)
        .into_iter()
        .map(|(label, cols)| {
            let hyp = kronecker_hypothesis(model, ParamBlock::Beta, &g, &selector(&cols, width), None)?;
            run(fit, label, hyp)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TestTable { kind: TableKind::Manova, anova_type: Some(kind), rows })
}

/// Type III tests of each dispersion parameter τ_d = 0, for one response or
/// jointly across responses.
pub fn dispersion_anova(fit: &McglmFit, response: Option<usize>) -> Result<TestTable> {
    let model = &fit.model;
    let rows = match response {
        Some(r) => {
            if r >= model.n_responses() {
                return Err(McglmError::Index(format!("response {r} of {}", model.n_responses())));
            }
            let scope: Vec<usize> = fit.layout().tau_range(r).collect();
            (0..scope.len())
                .map(|d| {
                    let hyp = Hypothesis::new(scope.clone(), selector(&[d], scope.len()), DVector::zeros(1))?;
                    run(fit, format!("tau{d}"), hyp)
                })
                .collect::<Result<Vec<_>>>()?
        }
        None => {
            let width = fit.layout().tau_range(0).len();
            let g = DMatrix::identity(model.n_responses(), model.n_responses());
            (0..width)
                .map(|d| {
                    let hyp = kronecker_hypothesis(model, ParamBlock::Tau, &g, &selector(&[d], width), None)?;
                    run(fit, format!("tau{d}"), hyp)
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    Ok(TestTable { kind: TableKind::Dispersion { response }, anova_type: Some(AnovaType::III), rows })
}
