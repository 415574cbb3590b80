//! Multivariate covariance generalized linear models fitted by estimating
//! functions, with Wald-based hypothesis tests, ANOVA/MANOVA tables,
//! multiple comparisons and NORTA power simulations.

pub mod anova;
pub mod design;
pub mod error;
pub mod estimation;
pub mod model;
pub mod multcomp;
pub mod simulate;
mod special;
pub mod wald;

pub use error::{McglmError, Result};
