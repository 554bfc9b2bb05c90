use rand::Rng;

use super::model::{backward_patches, encode_text, forward_patches, patchify};
use super::schedule::NoiseSchedule;
use super::weights::ModelWeights;
use crate::data::Caption;
use crate::error::{Error, Result};
use crate::numerics::{standard_normals, RngState, Tensor};

/// One training pair: a clean image and its caption.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub image: &'a Tensor,
    pub caption: &'a Caption,
}

/// Timestep and Gaussian noise for one example.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw {
    pub t: usize,
    pub eps: Vec<f64>,
}

/// `n` draws with `t ~ U[0, T)` and `ε ~ N(0, I)`, one counter stream per draw.
pub fn draw_noise(rng: &mut RngState, n: usize, steps: usize, image_len: usize) -> Vec<NoiseDraw> {
    (0..n)
        .map(|_| {
            let mut r = rng.next_stream();
            let t = r.gen_range(0..steps);
            NoiseDraw {
                t,
                eps: standard_normals(&mut r, image_len),
            }
        })
        .collect()
}

/// `w · ‖pred − target‖²`.
pub fn weighted_residual(pred: &[f64], target: &[f64], weight: f64) -> f64 {
    weight * pred.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
}

fn check_batch(examples: &[Example<'_>], draws: &[NoiseDraw]) -> Result<()> {
    if examples.is_empty() {
        return Err(Error::Usage("diffusion loss needs a non-empty batch".into()));
    }
    if examples.len() != draws.len() {
        return Err(Error::Usage(format!(
            "{} examples but {} noise draws",
            examples.len(),
            draws.len()
        )));
    }
    Ok(())
}

fn noisy_patches(
    weights: &ModelWeights,
    schedule: &NoiseSchedule,
    ex: &Example<'_>,
    draw: &NoiseDraw,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let cfg = &weights.config;
    schedule.check_step(draw.t)?;
    if ex.image.len() != cfg.image_len() || draw.eps.len() != cfg.image_len() {
        return Err(Error::Dimension {
            op: "diffusion_loss",
            left: cfg.image_shape().to_vec(),
            right: ex.image.shape().to_vec(),
        });
    }
    let (a, s) = (schedule.alpha[draw.t], schedule.sigma[draw.t]);
    let noisy: Vec<f64> = ex.image.data().iter().zip(&draw.eps).map(|(x, e)| a * x + s * e).collect();
    Ok((patchify(cfg, &noisy), patchify(cfg, ex.image.data())))
}

/// Batch mean of `w_t ‖x̂_θ(α_t x + σ_t ε, c) − x‖²`.
pub fn diffusion_loss(
    examples: &[Example<'_>],
    draws: &[NoiseDraw],
    schedule: &NoiseSchedule,
    weights: &ModelWeights,
) -> Result<f64> {
    check_batch(examples, draws)?;
    let mut total = 0.0;
    for (ex, draw) in examples.iter().zip(draws) {
        let (noisy, target) = noisy_patches(weights, schedule, ex, draw)?;
        let text = encode_text(ex.caption, weights)?;
        let (pred, _) = forward_patches(&noisy, draw.t, &text, weights);
        total += weighted_residual(&pred, &target, schedule.weight[draw.t]);
    }
    let loss = total / examples.len() as f64;
    if !loss.is_finite() {
        return Err(Error::Numeric("diffusion_loss"));
    }
    Ok(loss)
}

/// Same value as [`diffusion_loss`]; additionally accumulates
/// `coef · ∂loss/∂θ` into the trainable parameters' gradients.
pub fn diffusion_loss_and_grad(
    examples: &[Example<'_>],
    draws: &[NoiseDraw],
    schedule: &NoiseSchedule,
    weights: &mut ModelWeights,
    coef: f64,
) -> Result<f64> {
    check_batch(examples, draws)?;
    let n = examples.len() as f64;
    let mut total = 0.0;
    for (ex, draw) in examples.iter().zip(draws) {
        let (noisy, target) = noisy_patches(weights, schedule, ex, draw)?;
        let text = encode_text(ex.caption, weights)?;
        let (pred, cache) = forward_patches(&noisy, draw.t, &text, weights);
        let w = schedule.weight[draw.t];
        total += weighted_residual(&pred, &target, w);
        let dy: Vec<f64> = pred
            .iter()
            .zip(&target)
            .map(|(p, x)| coef * 2.0 * w * (p - x) / n)
            .collect();
        backward_patches(&cache, &dy, weights);
    }
    let loss = total / n;
    if !loss.is_finite() {
        return Err(Error::Numeric("diffusion_loss"));
    }
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{check_gradients, GradCheckConfig, GradObjective, Parameter};

    struct Objective<'a> {
        weights: ModelWeights,
        examples: Vec<Example<'a>>,
        draws: Vec<NoiseDraw>,
        schedule: NoiseSchedule,
    }

    impl GradObjective for Objective<'_> {
        fn parameters(&self) -> &[Parameter] {
            &self.weights.params
        }
        fn parameters_mut(&mut self) -> &mut [Parameter] {
            &mut self.weights.params
        }
        fn loss(&mut self) -> Result<f64> {
            diffusion_loss(&self.examples, &self.draws, &self.schedule, &self.weights)
        }
        fn loss_and_grad(&mut self) -> Result<f64> {
            self.weights.zero_grads();
            diffusion_loss_and_grad(&self.examples, &self.draws, &self.schedule, &mut self.weights, 1.0)
        }
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let samples: Vec<_> = held_in_specs().iter().step_by(97).take(2).map(|s| render_concept(s, 5)).collect();
        let mut weights = ModelWeights::init(ModelConfig::default(), 11).unwrap();
        weights.set_all_trainable(true);
        let mut obj = Objective {
            weights,
            examples: samples.iter().map(|s| Example { image: &s.pixels, caption: &s.caption }).collect(),
            draws: draw_noise(&mut RngState::new(2), 2, 100, 768),
            schedule: NoiseSchedule::cosine(100),
        };
        let config = GradCheckConfig { max_entries_per_param: 40, ..Default::default() };
        let report = check_gradients(&mut obj, &config).unwrap();
        assert!(report.passed(), "max rel err {:e}: {:?}", report.max_rel_err(),
            report.params.iter().filter(|p| !p.exceeding.is_empty()).map(|p| (&p.name, &p.exceeding)).collect::<Vec<_>>());
    }
    use crate::data::{held_in_specs, render_concept};
    use crate::diffusion::ModelConfig;

    #[test]
    fn residual_cases() {
        let x = [0.3, -0.2, 1.0];
        assert_eq!(weighted_residual(&x, &x, 1.0), 0.0);
        let zeros = [0.0; 3];
        assert!((weighted_residual(&zeros, &x, 1.0) - 1.13).abs() < 1e-12);
    }

    #[test]
    fn zero_output_model_gives_mean_squared_norm() {
        let mut w = ModelWeights::init(ModelConfig::default(), 3).unwrap();
        let (uw, ub) = (w.index.unpatch_weight, w.index.unpatch_bias);
        w.params[uw].value.fill(0.0);
        w.params[ub].value.fill(0.0);
        let schedule = NoiseSchedule::cosine(100);
        let samples: Vec<_> = held_in_specs().iter().take(3).map(|s| render_concept(s, 1)).collect();
        let examples: Vec<Example> = samples
            .iter()
            .map(|s| Example {
                image: &s.pixels,
                caption: &s.caption,
            })
            .collect();
        let draws = draw_noise(&mut RngState::new(1), 3, 100, 768);
        let loss = diffusion_loss(&examples, &draws, &schedule, &w).unwrap();
        let expected = samples.iter().map(|s| s.pixels.sum_squares()).sum::<f64>() / 3.0;
        assert!((loss - expected).abs() < 1e-9 * expected);
    }

    #[test]
    fn empty_batch_is_a_usage_error() {
        let w = ModelWeights::init(ModelConfig::default(), 3).unwrap();
        let err = diffusion_loss(&[], &[], &NoiseSchedule::cosine(100), &w).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }
}
