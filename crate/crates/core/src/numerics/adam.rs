use serde::{Deserialize, Serialize};

use super::tensor::{Parameter, Tensor};

/// Adam moment coefficients and step size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamSettings {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamSettings {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Update for one scalar; `step` is 1-based.
    #[inline]
    pub fn update(&self, step: u64, grad: f64, m: &mut f64, v: &mut f64) -> f64 {
        *m = self.beta1 * *m + (1.0 - self.beta1) * grad;
        *v = self.beta2 * *v + (1.0 - self.beta2) * grad * grad;
        let mhat = *m / (1.0 - self.beta1.powi(step as i32));
        let vhat = *v / (1.0 - self.beta2.powi(step as i32));
        self.lr * mhat / (vhat.sqrt() + self.eps)
    }
}

/// Dense Adam over every trainable parameter of a list.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub settings: AdamSettings,
    pub step: u64,
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
}

impl Adam {
    pub fn new(settings: AdamSettings, params: &[Parameter]) -> Self {
        Self {
            settings,
            step: 0,
            first: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            second: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
        }
    }

    pub fn step(&mut self, params: &mut [Parameter]) {
        self.step += 1;
        for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            if !p.trainable {
                continue;
            }
            let (vals, grads) = (p.value.data_mut(), p.grad.data());
            for i in 0..vals.len() {
                let delta = self.settings.update(
                    self.step,
                    grads[i],
                    &mut m.data_mut()[i],
                    &mut v.data_mut()[i],
                );
                vals[i] -= delta;
            }
        }
    }
}
