//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;

use super::rng::RngState;
use super::tensor::Parameter;
use crate::error::{Error, Result};

/// A scalar loss over a set of named parameters.
pub trait GradObjective {
    fn parameters(&self) -> &[Parameter];
    fn parameters_mut(&mut self) -> &mut [Parameter];
    /// Loss at the current parameter values. Must not touch gradients.
    fn loss(&mut self) -> Result<f64>;
    /// Loss at the current values, with every trainable parameter's `grad`
    /// overwritten by the analytic gradient and frozen ones left at zero.
    fn loss_and_grad(&mut self) -> Result<f64>;
}

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Finite-difference step.
    pub perturbation: f64,
    /// Entries per parameter above which a fixed-seed subsample is checked.
    pub max_entries_per_param: usize,
    /// Relative errors use `max(|analytic|, |numeric|, floor)` as denominator,
    /// so entries with gradients far below roundoff are judged absolutely.
    pub floor: f64,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            perturbation: 1e-4,
            max_entries_per_param: 200,
            floor: 1e-6,
            threshold: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EntryError {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub trainable: bool,
    pub checked: usize,
    pub max_rel_err: f64,
    /// For frozen parameters, the largest reported gradient magnitude (must be 0).
    pub frozen_grad_max: f64,
    pub exceeding: Vec<EntryError>,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub loss: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().fold(0.0, |m, p| m.max(p.max_rel_err))
    }

    pub fn passed(&self) -> bool {
        self.params
            .iter()
            .all(|p| p.exceeding.is_empty() && p.frozen_grad_max == 0.0)
    }

    pub fn entries_checked(&self) -> usize {
        self.params.iter().map(|p| p.checked).sum()
    }
}

pub fn check_gradients<O: GradObjective + ?Sized>(
    objective: &mut O,
    config: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let first = objective.loss()?;
    let second = objective.loss()?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::Determinism(format!(
            "loss evaluated twice gave {first:e} and {second:e}"
        )));
    }
    let loss = objective.loss_and_grad()?;
    if !loss.is_finite() {
        return Err(Error::Numeric("gradient check loss"));
    }

    let grads: Vec<Vec<f64>> = objective
        .parameters()
        .iter()
        .map(|p| p.grad.data().to_vec())
        .collect();
    let h = config.perturbation;
    let mut params = Vec::with_capacity(grads.len());

    for (pi, analytic) in grads.iter().enumerate() {
        let (name, trainable, len) = {
            let p = &objective.parameters()[pi];
            (p.name.clone(), p.trainable, p.value.len())
        };
        if !trainable {
            params.push(ParamCheck {
                name,
                trainable,
                checked: 0,
                max_rel_err: 0.0,
                frozen_grad_max: analytic.iter().fold(0.0, |m: f64, g| m.max(g.abs())),
                exceeding: Vec::new(),
            });
            continue;
        }
        let indices: Vec<usize> = if len <= config.max_entries_per_param {
            (0..len).collect()
        } else {
            let mut rng = RngState::at(config.seed, pi as u64).rng();
            let mut idx = sample(&mut rng, len, config.max_entries_per_param).into_vec();
            idx.sort_unstable();
            idx
        };

        let mut check = ParamCheck {
            name,
            trainable,
            checked: indices.len(),
            max_rel_err: 0.0,
            frozen_grad_max: 0.0,
            exceeding: Vec::new(),
        };
        for &i in &indices {
            let original = objective.parameters()[pi].value.data()[i];
            objective.parameters_mut()[pi].value.data_mut()[i] = original + h;
            let plus = objective.loss()?;
            objective.parameters_mut()[pi].value.data_mut()[i] = original - h;
            let minus = objective.loss()?;
            objective.parameters_mut()[pi].value.data_mut()[i] = original;

            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[i];
            let denom = a.abs().max(numeric.abs()).max(config.floor);
            let rel = (a - numeric).abs() / denom;
            check.max_rel_err = check.max_rel_err.max(rel);
            if rel > config.threshold || !rel.is_finite() {
                check.exceeding.push(EntryError {
                    index: i,
                    analytic: a,
                    numeric,
                    rel_err: rel,
                });
            }
        }
        params.push(check);
    }
    Ok(GradCheckReport { loss, params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    struct HalfSquaredNorm {
        params: Vec<Parameter>,
    }

    impl GradObjective for HalfSquaredNorm {
        fn parameters(&self) -> &[Parameter] {
            &self.params
        }
        fn parameters_mut(&mut self) -> &mut [Parameter] {
            &mut self.params
        }
        fn loss(&mut self) -> Result<f64> {
            Ok(self.params.iter().map(|p| 0.5 * p.value.sum_squares()).sum())
        }
        fn loss_and_grad(&mut self) -> Result<f64> {
            for p in &mut self.params {
                if p.trainable {
                    p.grad = p.value.clone();
                } else {
                    p.zero_grad();
                }
            }
            self.loss()
        }
    }

    fn quadratic() -> HalfSquaredNorm {
        let w = Tensor::new(&[3, 4], (0..12).map(|i| (i as f64 - 5.5) * 0.37).collect()).unwrap();
        let mut frozen = Parameter::new("frozen", Tensor::full(&[2], 3.0));
        frozen.trainable = false;
        HalfSquaredNorm {
            params: vec![Parameter::new("w", w), frozen],
        }
    }

    #[test]
    fn quadratic_matches_exactly() {
        let mut obj = quadratic();
        let cfg = GradCheckConfig {
            threshold: 1e-9,
            ..Default::default()
        };
        let report = check_gradients(&mut obj, &cfg).unwrap();
        assert!(report.passed(), "{report:?}");
        assert!(report.max_rel_err() < 1e-9);
        assert_eq!(report.params[1].frozen_grad_max, 0.0);
        assert_eq!(report.params[1].checked, 0);
    }

    #[test]
    fn wrong_gradient_is_reported() {
        struct Wrong(HalfSquaredNorm);
        impl GradObjective for Wrong {
            fn parameters(&self) -> &[Parameter] {
                &self.0.params
            }
            fn parameters_mut(&mut self) -> &mut [Parameter] {
                &mut self.0.params
            }
            fn loss(&mut self) -> Result<f64> {
                self.0.loss()
            }
            fn loss_and_grad(&mut self) -> Result<f64> {
                let l = self.0.loss_and_grad()?;
                self.0.params[0].grad.data_mut()[5] += 1.0;
                Ok(l)
            }
        }
        let report = check_gradients(&mut Wrong(quadratic()), &GradCheckConfig::default()).unwrap();
        assert!(!report.passed());
        assert_eq!(report.params[0].exceeding.len(), 1);
        assert_eq!(report.params[0].exceeding[0].index, 5);
    }

    #[test]
    fn nondeterministic_loss_is_rejected() {
        struct Flaky(u64, Vec<Parameter>);
        impl GradObjective for Flaky {
            fn parameters(&self) -> &[Parameter] {
                &self.1
            }
            fn parameters_mut(&mut self) -> &mut [Parameter] {
                &mut self.1
            }
            fn loss(&mut self) -> Result<f64> {
                self.0 += 1;
                Ok(self.0 as f64)
            }
            fn loss_and_grad(&mut self) -> Result<f64> {
                self.loss()
            }
        }
        let err = check_gradients(&mut Flaky(0, vec![]), &GradCheckConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Determinism(_)));
    }
}
