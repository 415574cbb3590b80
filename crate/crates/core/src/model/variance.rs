//! Variance and dispersion functions ϑ(μ; p).

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{McglmError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceFunction {
    /// ϑ(μ; p) = μ^p, the Tweedie family.
    Power,
    /// Count responses: Σ = diag(μ) + V^{1/2} Ω V^{1/2} with V = diag(μ^p).
    /// The scalar dispersion function is μ + τ μ^p.
    PoissonTweedie,
    /// ϑ(μ) = μ^{p₁} (1 − μ)^{p₂}. With `second_power: None` both exponents
    /// follow the response's power parameter.
    Binomial { second_power: Option<f64> },
}

impl Default for VarianceFunction {
    fn default() -> Self {
        VarianceFunction::Power
    }
}

impl VarianceFunction {
    pub fn binomial() -> Self {
        VarianceFunction::Binomial { second_power: None }
    }

    pub fn is_count(&self) -> bool {
        matches!(self, VarianceFunction::PoissonTweedie)
    }

    /// The diagonal entry of V(μ; p) used inside Σ_r.
    pub fn value(&self, mu: f64, p: f64) -> f64 {
        match *self {
            VarianceFunction::Power | VarianceFunction::PoissonTweedie => pow(mu, p),
            VarianceFunction::Binomial { second_power } => {
                pow(mu, p) * pow(1.0 - mu, second_power.unwrap_or(p))
            }
        }
    }

    /// ∂ϑ/∂μ.
    pub fn derivative_mu(&self, mu: f64, p: f64) -> f64 {
        match *self {
            VarianceFunction::Power | VarianceFunction::PoissonTweedie => {
                if p == 0.0 {
                    0.0
                } else {
                    p * pow(mu, p - 1.0)
                }
            }
            VarianceFunction::Binomial { second_power } => {
                let q = second_power.unwrap_or(p);
                let a = if p == 0.0 { 0.0 } else { p * pow(mu, p - 1.0) * pow(1.0 - mu, q) };
                let b = if q == 0.0 { 0.0 } else { q * pow(mu, p) * pow(1.0 - mu, q - 1.0) };
                a - b
            }
        }
    }

    /// ∂ ln ϑ / ∂p, the quantity driving the power-parameter derivative.
    pub fn dlog_dp(&self, mu: f64) -> f64 {
        match *self {
            VarianceFunction::Power | VarianceFunction::PoissonTweedie => mu.ln(),
            VarianceFunction::Binomial { second_power } => match second_power {
                Some(_) => mu.ln(),
                None => mu.ln() + (1.0 - mu).ln(),
            },
        }
    }

    /// Checks that μ lies in the function's domain for power `p`.
    pub fn check_domain(&self, mu: f64, p: f64) -> std::result::Result<(), String> {
        if !mu.is_finite() {
            return Err(format!("mu = {mu} is not finite"));
        }
        match *self {
            VarianceFunction::Power => {
                if p != 0.0 && mu <= 0.0 && p.fract() != 0.0 {
                    return Err(format!("power variance with p = {p} requires mu > 0, got {mu}"));
                }
            }
            VarianceFunction::PoissonTweedie => {
                if mu <= 0.0 {
                    return Err(format!("Poisson-Tweedie requires mu > 0, got {mu}"));
                }
            }
            VarianceFunction::Binomial { .. } => {
                if mu <= 0.0 || mu >= 1.0 {
                    return Err(format!("binomial variance requires 0 < mu < 1, got {mu}"));
                }
            }
        }
        Ok(())
    }
}

/// x^p with the convention x^0 = 1 for every x.
fn pow(x: f64, p: f64) -> f64 {
    if p == 0.0 {
        1.0
    } else if p.fract() == 0.0 && p.abs() < 64.0 {
        x.powi(p as i32)
    } else {
        x.powf(p)
    }
}

/// Evaluates the variance function elementwise. For `PoissonTweedie` the
/// dispersion function μ + τ μ^p is returned and `tau` is required.
pub fn variance_eval(
    varfun: &VarianceFunction,
    mu: &DVector<f64>,
    p: f64,
    tau: Option<f64>,
) -> Result<DVector<f64>> {
    let mut out = DVector::zeros(mu.len());
    for (i, &m) in mu.iter().enumerate() {
        varfun
            .check_domain(m, p)
            .map_err(|message| McglmError::Domain { index: i, message })?;
        let v = match varfun {
            VarianceFunction::PoissonTweedie => {
                let tau = tau.ok_or_else(|| {
                    McglmError::InvalidArgument("Poisson-Tweedie dispersion needs tau".into())
                })?;
                m + tau * pow(m, p)
            }
            _ => varfun.value(m, p),
        };
        if !(v > 0.0) || !v.is_finite() {
            return Err(McglmError::InvalidDispersion(format!(
                "variance function value {v} at index {i} is not positive"
            )));
        }
        out[i] = v;
    }
    Ok(out)
}
