use rayon::prelude::*;

use super::model::{forward_patches, patchify, unpatchify, TextEmbedding};
use super::schedule::NoiseSchedule;
use super::weights::ModelWeights;
use crate::numerics::{standard_normals, RngState, Tensor};

/// Ancestral sampling from pure noise.
///
/// At each step the clean-image prediction (clipped to `[-1, 1]`) is turned
/// into the mean of `q(x_{t-1} | x_t, x̂)`; the final step returns `x̂`.
/// Draws come from `(seed, 0)` for the initial noise and `(seed, t)` for step `t`.
pub fn sample(text: &TextEmbedding, weights: &ModelWeights, schedule: &NoiseSchedule, seed: u64) -> Tensor {
    let cfg = &weights.config;
    let n = cfg.image_len();
    let steps = schedule.steps();
    let mut x = patchify(cfg, &standard_normals(&mut RngState::at(seed, 0).rng(), n));
    for t in (0..steps).rev() {
        let (mut x0, _) = forward_patches(&x, t, text, weights);
        x0.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
        if t == 0 {
            x = x0;
            break;
        }
        let (cx, c0, var) = schedule.posterior(t);
        let z = patchify(cfg, &standard_normals(&mut RngState::at(seed, t as u64).rng(), n));
        let sd = var.sqrt();
        for i in 0..x.len() {
            x[i] = cx * x[i] + c0 * x0[i] + sd * z[i];
        }
    }
    Tensor::new(&cfg.image_shape(), unpatchify(cfg, &x)).expect("image shape")
}

/// Samples for several `(text, seed)` jobs, evaluated in parallel; output
/// order follows input order.
pub fn sample_many(jobs: &[(TextEmbedding, u64)], weights: &ModelWeights, schedule: &NoiseSchedule) -> Vec<Tensor> {
    jobs.par_iter()
        .map(|(text, seed)| sample(text, weights, schedule, *seed))
        .collect()
}
