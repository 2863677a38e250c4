use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Square-exponential kernel hyperparameters: output scale `sigma2` and
/// input length scale `ell2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub sigma2: f64,
    pub ell2: f64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self { sigma2: 1.0, ell2: 1.0 }
    }
}

impl Hyperparameters {
    pub fn new(sigma2: f64, ell2: f64) -> Result<Self> {
        let h = Self { sigma2, ell2 };
        h.validate()?;
        Ok(h)
    }

    pub fn from_log(log_sigma2: f64, log_ell2: f64) -> Self {
        Self {
            sigma2: log_sigma2.exp(),
            ell2: log_ell2.exp(),
        }
    }

    pub fn log_sigma2(&self) -> f64 {
        self.sigma2.ln()
    }

    pub fn log_ell2(&self) -> f64 {
        self.ell2.ln()
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if ok(self.sigma2) && ok(self.ell2) {
            Ok(())
        } else {
            Err(Error::ParameterDomain(format!(
                "hyperparameters must be finite and positive, got sigma2={} ell2={}",
                self.sigma2, self.ell2
            )))
        }
    }
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Isotropic square-exponential covariance `sigma2 * exp(-|x - x'|^2 / (2 ell2))`.
pub fn kernel_eval(theta: &Hyperparameters, x: &[f64], x_prime: &[f64]) -> f64 {
    theta.sigma2 * (-squared_distance(x, x_prime) / (2.0 * theta.ell2)).exp()
}
