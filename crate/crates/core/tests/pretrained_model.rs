//! Behavioral checks on the cached pretrained model.

mod common;

use common::pretrained;
use concept_neurons::continual::{train_concept, ConceptRegistry, TrainConfig};
use concept_neurons::data::{classify_image, special_token, Caption, Color, Shape};
use concept_neurons::diffusion::{denoise_forward, encode_text, sample};
use concept_neurons::eval::{chain_trend, default_concepts, record_fidelity, token_samples, SPEARMAN_CRITICAL_N11};
use concept_neurons::numerics::Tensor;
use concept_neurons::select::SelectionConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn median3(mut v: [f64; 3]) -> f64 {
    v.sort_by(f64::total_cmp);
    v[1]
}

fn mean_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

#[test]
fn red_circle_caption_is_classified_correctly() {
    let p = pretrained();
    let caption = Caption::parse("a solid red circle on blue background").unwrap();
    let text = encode_text(&caption, &p.w0).unwrap();
    let c = classify_image(&sample(&text, &p.w0, &p.schedule, 0));
    assert_eq!((c.shape, c.fill_color, c.background_color), (Shape::Circle, Color::Red, Color::Blue), "{c:?}");
}

#[test]
fn different_seeds_give_different_images() {
    let p = pretrained();
    let caption = Caption::parse("a solid red circle on blue background").unwrap();
    let text = encode_text(&caption, &p.w0).unwrap();
    let a = sample(&text, &p.w0, &p.schedule, 0);
    let b = sample(&text, &p.w0, &p.schedule, 1);
    let mse = a.sub(&b).unwrap().sum_squares() / a.len() as f64;
    assert!(mse > 0.0);
}

#[test]
fn output_depends_on_the_caption() {
    let p = pretrained();
    let cfg = p.w0.config;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let noisy = Tensor::new(
        &cfg.image_shape(),
        (0..cfg.image_len()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let red = encode_text(&Caption::parse("a solid red circle on blue background").unwrap(), &p.w0).unwrap();
    let green = encode_text(&Caption::parse("a striped green square on white background").unwrap(), &p.w0).unwrap();
    for t in [10, 50, 90] {
        let a = denoise_forward(&noisy, t, &red, &p.w0).unwrap();
        let same = denoise_forward(&noisy, t, &red, &p.w0).unwrap();
        let other = denoise_forward(&noisy, t, &green, &p.w0).unwrap();
        assert_eq!(mean_abs_diff(&a, &same), 0.0);
        assert!(mean_abs_diff(&a, &other) > 0.0, "t = {t}");
    }
}

#[test]
fn similarity_falls_along_edit_chain() {
    let p = pretrained();
    for seed in 0..3 {
        let trend = chain_trend(&p.w0, &SelectionConfig::default(), seed).unwrap();
        assert_eq!(trend.similarity.len(), 11);
        assert!(
            trend.rho <= -SPEARMAN_CRITICAL_N11,
            "seed {seed}: rho {} similarity {:?}",
            trend.rho,
            trend.similarity
        );
    }
}

#[test]
fn concept_fidelity_improves_over_training() {
    let p = pretrained();
    let spec = default_concepts(1).remove(0);
    let token = special_token(1).unwrap();
    let mut before = [0.0; 3];
    let mut after = [0.0; 3];
    for seed in 0..3u64 {
        let dir = tempfile::tempdir().unwrap();
        let mut reg =
            ConceptRegistry::create(dir.path(), &p.w0, &p.schedule, SelectionConfig::default(), 20, seed).unwrap();
        before[seed as usize] = token_samples(&p.w0, &p.schedule, token, &spec, 8, seed).unwrap().1.mean;
        let (rec, _) = train_concept(&mut reg, &spec, &TrainConfig::default(), seed).unwrap();
        assert_eq!(rec.special_token, token);
        let (w, _) = reg.load_current().unwrap();
        after[seed as usize] = record_fidelity(&w, &p.schedule, &rec, 8, seed).unwrap().mean;
    }
    println!("fidelity before {before:?} after {after:?}");
    assert!(median3(after) > median3(before), "before {before:?} after {after:?}");
}
