//! Mean link functions.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{McglmError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkFunction {
    Identity,
    Log,
    Logit,
}

impl LinkFunction {
    /// g(μ) for a single value.
    pub fn link(self, mu: f64) -> Option<f64> {
        match self {
            LinkFunction::Identity => mu.is_finite().then_some(mu),
            LinkFunction::Log => (mu > 0.0 && mu.is_finite()).then(|| mu.ln()),
            LinkFunction::Logit => (mu > 0.0 && mu < 1.0).then(|| (mu / (1.0 - mu)).ln()),
        }
    }

    /// g⁻¹(η).
    pub fn inverse(self, eta: f64) -> f64 {
        match self {
            LinkFunction::Identity => eta,
            LinkFunction::Log => eta.exp(),
            LinkFunction::Logit => {
                if eta >= 0.0 {
                    1.0 / (1.0 + (-eta).exp())
                } else {
                    let e = eta.exp();
                    e / (1.0 + e)
                }
            }
        }
    }

    /// dμ/dη evaluated at η.
    pub fn mu_eta(self, eta: f64) -> f64 {
        match self {
            LinkFunction::Identity => 1.0,
            LinkFunction::Log => eta.exp(),
            LinkFunction::Logit => {
                let mu = self.inverse(eta);
                mu * (1.0 - mu)
            }
        }
    }

    /// Elementwise g(μ), failing on the first value outside the link's domain.
    pub fn link_vec(self, mu: &DVector<f64>) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(mu.len());
        for (i, &m) in mu.iter().enumerate() {
            out[i] = self.link(m).ok_or_else(|| McglmError::Domain {
                index: i,
                message: format!("mu = {m} is outside the domain of the {self:?} link"),
            })?;
        }
        Ok(out)
    }

    pub fn inverse_vec(self, eta: &DVector<f64>) -> Result<DVector<f64>> {
        check_finite(eta)?;
        Ok(eta.map(|e| self.inverse(e)))
    }

    pub fn mu_eta_vec(self, eta: &DVector<f64>) -> Result<DVector<f64>> {
        check_finite(eta)?;
        Ok(eta.map(|e| self.mu_eta(e)))
    }
}

fn check_finite(eta: &DVector<f64>) -> Result<()> {
    match eta.iter().position(|e| !e.is_finite()) {
        Some(index) => Err(McglmError::Domain {
            index,
            message: "linear predictor is not finite".into(),
        }),
        None => Ok(()),
    }
}
