//! Cell-mean combination matrices, pairwise contrasts and Bonferroni-adjusted
//! Wald tests.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::anova::{TableKind, TestRow, TestTable};
use crate::design::{DesignInfo, VarValue, VariableMeta};
use crate::error::{McglmError, Result};
use crate::estimation::McglmFit;
use crate::wald::{kronecker_hypothesis, wald_test, Hypothesis, ParamBlock};

/// K₀: one row per cell of the selected factors' level grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinationMatrix {
    pub k0: DMatrix<f64>,
    pub labels: Vec<String>,
    pub factors: Vec<String>,
    /// Level index of each selected factor, per row.
    pub cells: Vec<Vec<usize>>,
}

/// K₁: differences of every pair of K₀ rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastMatrix {
    pub k1: DMatrix<f64>,
    pub labels: Vec<String>,
    /// Rows of K₀ behind each contrast.
    pub pairs: Vec<(usize, usize)>,
    pub factors: Vec<String>,
    pub cells: Vec<Vec<usize>>,
}

fn factor_levels<'a>(design: &'a DesignInfo, name: &str) -> Result<&'a [String]> {
    match design.variable(name) {
        Some(VariableMeta::Factor { levels }) => Ok(levels),
        Some(VariableMeta::Numeric { .. }) => Err(McglmError::Term(format!("'{name}' is not categorical"))),
        None => Err(McglmError::Term(format!("'{name}' is not in the model"))),
    }
}

/// All level combinations, first entry varying slowest.
fn grid(sizes: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for &s in sizes {
        out = out.into_iter().flat_map(|prefix| (0..s).map(move |l| [prefix.clone(), vec![l]].concat())).collect();
    }
    out
}

/// Builds K₀ for the named factors. Factors left out are averaged with equal
/// weights over their levels; numeric variables sit at their sample mean.
pub fn build_k0(design: &DesignInfo, factors: &[&str]) -> Result<CombinationMatrix> {
    if factors.is_empty() {
        return Err(McglmError::Term("no factor selected".into()));
    }
    let selected: Vec<&[String]> = factors.iter().map(|f| factor_levels(design, f)).collect::<Result<_>>()?;
    let others: Vec<(String, Vec<String>)> = design
        .variables
        .iter()
        .filter_map(|(n, m)| match m {
            VariableMeta::Factor { levels } if !factors.contains(&n.as_str()) => Some((n.clone(), levels.clone())),
            _ => None,
        })
        .collect();
    let other_grid = grid(&others.iter().map(|(_, l)| l.len()).collect::<Vec<_>>());
    let cells = grid(&selected.iter().map(|l| l.len()).collect::<Vec<_>>());
    let k = design.column_names.len();
    let mut k0 = DMatrix::zeros(cells.len(), k);
    let mut labels = Vec::with_capacity(cells.len());
    let mut values: HashMap<String, VarValue> = HashMap::new();
    for (name, meta) in &design.variables {
        if let VariableMeta::Numeric { mean } = meta {
            values.insert(name.clone(), VarValue::Numeric(*mean));
        }
    }
    for (row, cell) in cells.iter().enumerate() {
        for (f, &l) in factors.iter().zip(cell) {
            values.insert(f.to_string(), VarValue::Level(l));
        }
        let mut acc = vec![0.0; k];
        for combo in &other_grid {
            for ((name, _), &l) in others.iter().zip(combo) {
                values.insert(name.clone(), VarValue::Level(l));
            }
            for (a, v) in acc.iter_mut().zip(design.encode(&values)?) {
                *a += v;
            }
        }
        for (j, a) in acc.into_iter().enumerate() {
            k0[(row, j)] = a / other_grid.len() as f64;
        }
        labels.push(cell.iter().zip(&selected).map(|(&l, lv)| lv[l].clone()).collect::<Vec<_>>().join(":"));
    }
    Ok(CombinationMatrix { k0, labels, factors: factors.iter().map(|s| s.to_string()).collect(), cells })
}

/// K₀ from a plain matrix, with labels given directly.
pub fn combination_matrix(k0: DMatrix<f64>, labels: Vec<String>) -> Result<CombinationMatrix> {
    if labels.len() != k0.nrows() {
        return Err(McglmError::Shape("one label per row of K0 is required".into()));
    }
    let cells = (0..k0.nrows()).map(|i| vec![i]).collect();
    Ok(CombinationMatrix { k0, labels, factors: vec![String::new()], cells })
}

/// K₁ with rows ordered by (i, j), i < j, each row_i − row_j.
pub fn build_k1(k0: &CombinationMatrix) -> Result<ContrastMatrix> {
    let q = k0.k0.nrows();
    if q < 2 {
        return Err(McglmError::Selection("at least two cells are needed for contrasts".into()));
    }
    let mut pairs = Vec::new();
    for i in 0..q {
        for j in (i + 1)..q {
            pairs.push((i, j));
        }
    }
    let k1 = DMatrix::from_fn(pairs.len(), k0.k0.ncols(), |r, c| {
        let (i, j) = pairs[r];
        k0.k0[(i, c)] - k0.k0[(j, c)]
    });
    let labels = pairs.iter().map(|&(i, j)| format!("{}-{}", k0.labels[i], k0.labels[j])).collect();
    Ok(ContrastMatrix { k1, labels, pairs, factors: k0.factors.clone(), cells: k0.cells.clone() })
}

#[derive(Debug, Clone, PartialEq)]
pub enum ContrastSelection {
    All,
    Labels(Vec<String>),
    /// Pairs of cells sharing the same level of this factor.
    WithinFactor(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComparisonScope {
    Response(usize),
    Joint,
}

/// Multiplier m in min(1, m·p).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BonferroniCount {
    /// Number of selected contrasts.
    #[default]
    Selected,
    /// Number of rows of K₁.
    AllPairs,
}

pub fn select_contrasts(k1: &ContrastMatrix, selection: &ContrastSelection) -> Result<Vec<usize>> {
    let rows: Vec<usize> = match selection {
        ContrastSelection::All => (0..k1.labels.len()).collect(),
        ContrastSelection::Labels(wanted) => wanted
            .iter()
            .map(|w| {
                k1.labels
                    .iter()
                    .position(|l| l == w)
                    .ok_or_else(|| McglmError::Selection(format!("no contrast labeled '{w}'")))
            })
            .collect::<Result<_>>()?,
        ContrastSelection::WithinFactor(f) => {
            let pos = k1
                .factors
                .iter()
                .position(|x| x == f)
                .ok_or_else(|| McglmError::Selection(format!("'{f}' is not one of the compared factors")))?;
            (0..k1.pairs.len())
                .filter(|&r| {
                    let (i, j) = k1.pairs[r];
                    k1.cells[i][pos] == k1.cells[j][pos]
                })
                .collect()
        }
    };
    if rows.is_empty() {
        return Err(McglmError::Selection("no contrasts selected".into()));
    }
    Ok(rows)
}

pub fn bonferroni(p: f64, m: usize) -> f64 {
    (p * m as f64).min(1.0)
}

/// One Wald test per selected contrast, with c = 0.
pub fn pairwise_tests(
    fit: &McglmFit,
    k1: &ContrastMatrix,
    selection: &ContrastSelection,
    scope: ComparisonScope,
    count: BonferroniCount,
) -> Result<TestTable> {
    let rows = select_contrasts(k1, selection)?;
    let m = match count {
        BonferroniCount::Selected => rows.len(),
        BonferroniCount::AllPairs => k1.k1.nrows(),
    };
    let model = &fit.model;
    let out = rows
        .iter()
        .map(|&r| {
            let f = k1.k1.rows(r, 1).into_owned();
            let hyp = match scope {
                ComparisonScope::Response(resp) => {
                    if resp >= model.n_responses() {
                        return Err(McglmError::Index(format!("response {resp} of {}", model.n_responses())));
                    }
                    let scope: Vec<usize> = fit.layout().beta_range(resp).collect();
                    if f.ncols() != scope.len() {
                        return Err(McglmError::Shape("contrast width does not match the response".into()));
                    }
                    Hypothesis::new(scope, f, DVector::zeros(1))?
                }
                ComparisonScope::Joint => {
                    let g = DMatrix::identity(model.n_responses(), model.n_responses());
                    kronecker_hypothesis(model, ParamBlock::Beta, &g, &f, None)?
                }
            };
            let res = wald_test(fit, &hyp)?;
            Ok(TestRow {
                label: k1.labels[r].clone(),
                df: res.df,
                statistic: res.statistic,
                p_value: res.p_value,
                adjusted_p: Some(bonferroni(res.p_value, m)),
                hypothesis: hyp,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let response = match scope {
        ComparisonScope::Response(r) => Some(r),
        ComparisonScope::Joint => None,
    };
    Ok(TestTable { kind: TableKind::Comparisons { response }, anova_type: None, rows: out })
}
