use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Offset of the cosine schedule; keeps the first step's noise level nonzero.
const COSINE_OFFSET: f64 = 0.008;

/// Variance-preserving noise schedule: `alpha[t]^2 + sigma[t]^2 = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub alpha: Vec<f64>,
    pub sigma: Vec<f64>,
    pub weight: Vec<f64>,
}

impl NoiseSchedule {
    /// Cosine schedule; step `t` sits at angle `((t+1)/T + s)/(1 + s) · π/2`,
    /// with unit loss weights.
    pub fn cosine(steps: usize) -> Self {
        let (alpha, sigma) = (0..steps)
            .map(|t| {
                let u = (t + 1) as f64 / steps as f64;
                let angle = (u + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * std::f64::consts::FRAC_PI_2;
                (angle.cos(), angle.sin())
            })
            .unzip();
        Self {
            alpha,
            sigma,
            weight: vec![1.0; steps],
        }
    }

    pub fn steps(&self) -> usize {
        self.alpha.len()
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t >= self.steps() {
            return Err(Error::Schedule { t, steps: self.steps() });
        }
        Ok(())
    }

    /// Mean and variance coefficients of `q(x_{t-1} | x_t, x̂)`:
    /// returns `(coef_xt, coef_x0, variance)` for `t >= 1`.
    pub fn posterior(&self, t: usize) -> (f64, f64, f64) {
        let (at, st) = (self.alpha[t], self.sigma[t]);
        let (as_, ss) = (self.alpha[t - 1], self.sigma[t - 1]);
        let a_ts = at / as_;
        let var_ts = st * st - a_ts * a_ts * ss * ss;
        let coef_xt = a_ts * ss * ss / (st * st);
        let coef_x0 = as_ * var_ts / (st * st);
        let variance = var_ts * ss * ss / (st * st);
        (coef_xt, coef_x0, variance)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variance_preserving_and_monotone() {
        let s = NoiseSchedule::cosine(100);
        for t in 0..100 {
            assert!((s.alpha[t].powi(2) + s.sigma[t].powi(2) - 1.0).abs() < 1e-12);
        }
        for t in 1..100 {
            assert!(s.alpha[t] < s.alpha[t - 1]);
            assert!(s.sigma[t] > s.sigma[t - 1]);
        }
        assert!(s.alpha[99] > 0.0);
    }

    #[test]
    fn posterior_is_a_proper_distribution() {
        let s = NoiseSchedule::cosine(100);
        for t in 1..100 {
            let (a, b, v) = s.posterior(t);
            assert!(a >= 0.0 && b > 0.0 && v > 0.0, "t={t}");
        }
        assert!(matches!(s.check_step(100), Err(Error::Schedule { .. })));
    }
}
