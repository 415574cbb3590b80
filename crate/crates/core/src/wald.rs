//! Generalized Wald tests of H₀: Lθ* = c.

use nalgebra::{DMatrix, DVector};

use crate::error::{McglmError, Result};
use crate::estimation::McglmFit;
use crate::model::McglmModel;
use crate::special::gamma_q;

/// Survival function of χ²_df at w.
pub fn chi2_sf(w: f64, df: usize) -> Result<f64> {
    if df == 0 {
        return Err(McglmError::Domain { index: 0, message: "chi-square df must be at least 1".into() });
    }
    if !(w >= 0.0) {
        return Err(McglmError::Domain { index: 0, message: format!("chi-square statistic {w} is negative") });
    }
    if w.is_infinite() {
        return Ok(0.0);
    }
    Ok(gamma_q(df as f64 / 2.0, w / 2.0))
}

/// Constraints L (s × h) and null values c over the parameters `scope`,
/// given as indices into the fit's θ.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub scope: Vec<usize>,
    pub l: DMatrix<f64>,
    pub c: DVector<f64>,
}

impl Hypothesis {
    pub fn new(scope: Vec<usize>, l: DMatrix<f64>, c: DVector<f64>) -> Result<Self> {
        if l.ncols() != scope.len() {
            return Err(McglmError::Shape(format!(
                "L has {} columns but the scope has {} parameters",
                l.ncols(),
                scope.len()
            )));
        }
        if c.len() != l.nrows() {
            return Err(McglmError::Shape(format!("c has {} entries, L has {} rows", c.len(), l.nrows())));
        }
        if l.nrows() == 0 {
            return Err(McglmError::NonTestable("hypothesis has no constraints".into()));
        }
        Ok(Hypothesis { scope, l, c })
    }

    pub fn df(&self) -> usize {
        self.l.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaldResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub hypothesis: Hypothesis,
}

/// Numerical rank of L from a column-pivoted QR of Lᵀ.
pub fn row_rank(l: &DMatrix<f64>) -> usize {
    let norm = l.norm();
    if norm == 0.0 {
        return 0;
    }
    let r = l.transpose().col_piv_qr().r();
    let tol = 1e-10 * norm;
    (0..r.nrows().min(r.ncols())).filter(|&i| r[(i, i)].abs() > tol).count()
}

/// W = (Lθ − c)ᵀ(L J Lᵀ)⁻¹(Lθ − c) for a scope-restricted θ and J.
pub fn wald_statistic(
    theta: &DVector<f64>,
    j: &DMatrix<f64>,
    l: &DMatrix<f64>,
    c: &DVector<f64>,
) -> Result<f64> {
    if row_rank(l) < l.nrows() {
        return Err(McglmError::NonTestable("L has linearly dependent rows".into()));
    }
    let d = l * theta - c;
    let m = l * j * l.transpose();
    let chol = crate::model::cholesky(&m)
        .ok_or_else(|| McglmError::NonTestable("L J Lᵀ is not positive definite".into()))?;
    Ok(d.dot(&chol.solve(&d)).max(0.0))
}

pub fn wald_test(fit: &McglmFit, hyp: &Hypothesis) -> Result<WaldResult> {
    let layout = fit.layout();
    for &i in &hyp.scope {
        if i >= layout.len() {
            return Err(McglmError::Index(format!("parameter index {i} of {}", layout.len())));
        }
        if layout.rho_range().contains(&i) {
            return Err(McglmError::Index(format!(
                "parameter '{}' is a correlation and cannot be tested",
                layout.params()[i].name
            )));
        }
    }
    let theta = DVector::from_iterator(hyp.scope.len(), hyp.scope.iter().map(|&i| fit.theta[i]));
    let j = fit.covariance_of(&hyp.scope);
    let statistic = wald_statistic(&theta, &j, &hyp.l, &hyp.c)?;
    let df = hyp.df();
    Ok(WaldResult { statistic, df, p_value: chi2_sf(statistic, df)?, hypothesis: hyp.clone() })
}

fn check_in_scope(scope: &[usize], index: usize) -> Result<()> {
    if index >= scope.len() {
        return Err(McglmError::Index(format!("position {index} outside a scope of {}", scope.len())));
    }
    Ok(())
}

/// H₀: θ*_index = 0.
pub fn build_l_single(scope: &[usize], index: usize) -> Result<Hypothesis> {
    build_l_subset(scope, &[index], DVector::zeros(1))
}

/// H₀: θ*_{indices[k]} = c_k for every k.
pub fn build_l_subset(scope: &[usize], indices: &[usize], c: DVector<f64>) -> Result<Hypothesis> {
    let mut l = DMatrix::zeros(indices.len(), scope.len());
    for (row, &i) in indices.iter().enumerate() {
        check_in_scope(scope, i)?;
        l[(row, i)] = 1.0;
    }
    Hypothesis::new(scope.to_vec(), l, c)
}

/// H₀: θ*_i − θ*_j = 0.
pub fn build_l_equality(scope: &[usize], i: usize, j: usize) -> Result<Hypothesis> {
    check_in_scope(scope, i)?;
    check_in_scope(scope, j)?;
    if i == j {
        return Err(McglmError::NonTestable("equality of a parameter with itself".into()));
    }
    let mut l = DMatrix::zeros(1, scope.len());
    l[(0, i)] = 1.0;
    l[(0, j)] = -1.0;
    Hypothesis::new(scope.to_vec(), l, DVector::zeros(1))
}

/// L = G ⊗ F.
pub fn build_l_kronecker(g: &DMatrix<f64>, f: &DMatrix<f64>) -> DMatrix<f64> {
    g.kronecker(f)
}

/// Which per-response parameter block a Kronecker hypothesis acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamBlock {
    Beta,
    Tau,
}

/// Scope covering `block` of every response, response by response.
pub fn block_scope(model: &McglmModel, block: ParamBlock) -> Vec<usize> {
    let layout = model.layout();
    (0..model.n_responses())
        .flat_map(|r| match block {
            ParamBlock::Beta => layout.beta_range(r),
            ParamBlock::Tau => layout.tau_range(r),
        })
        .collect()
}

/// Checks that every response has the same linear (or matrix) predictor.
pub fn check_shared_predictor(model: &McglmModel, block: ParamBlock) -> Result<()> {
    let first = &model.responses()[0];
    for (r, spec) in model.responses().iter().enumerate().skip(1) {
        match block {
            ParamBlock::Beta => {
                if spec.column_names() != first.column_names() || spec.x != first.x {
                    return Err(McglmError::IncompatiblePredictors(format!(
                        "response '{}' has a different linear predictor from '{}'",
                        spec.name, first.name
                    )));
                }
            }
            ParamBlock::Tau => {
                if model.predictors()[r] != model.predictors()[0] {
                    return Err(McglmError::IncompatiblePredictors(format!(
                        "response '{}' has a different matrix predictor from '{}'",
                        spec.name, first.name
                    )));
                }
            }
        }
    }
    Ok(())
}

/// H₀: (G ⊗ F)θ*_block = c, with θ*_block stacking `block` over responses.
/// G is usually the identity; other rows contrast responses.
pub fn kronecker_hypothesis(
    model: &McglmModel,
    block: ParamBlock,
    g: &DMatrix<f64>,
    f: &DMatrix<f64>,
    c: Option<DVector<f64>>,
) -> Result<Hypothesis> {
    let n_resp = model.n_responses();
    if g.ncols() != n_resp || g.nrows() == 0 {
        return Err(McglmError::Shape(format!("G needs {n_resp} columns, one per response")));
    }
    check_shared_predictor(model, block)?;
    let per = match block {
        ParamBlock::Beta => model.layout().beta_range(0).len(),
        ParamBlock::Tau => model.layout().tau_range(0).len(),
    };
    if f.ncols() != per {
        return Err(McglmError::Shape(format!("F has {} columns, each response has {per} parameters", f.ncols())));
    }
    let l = build_l_kronecker(g, f);
    let c = c.unwrap_or_else(|| DVector::zeros(l.nrows()));
    Hypothesis::new(block_scope(model, block), l, c)
}
