#![allow(dead_code)]

use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use concept_neurons::data::pretraining_corpus;
use concept_neurons::diffusion::{
    checkpoint_hash, load_checkpoint, pretrain, save_checkpoint, Dtype, ModelConfig, ModelWeights, NoiseSchedule,
    PretrainConfig,
};
use concept_neurons::numerics::Tensor;
use concept_neurons::select::{MaskSet, NeuronMask};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Scalar double-loop importance scores, written independently of the library.
pub fn brute_force_scores(w: &Tensor, c: &Tensor) -> Vec<f64> {
    let (d, dk) = (w.shape()[0], w.shape()[1]);
    let s = c.shape()[0];
    let mut out = vec![0.0; d * dk];
    for i in 0..d {
        let mut sq = 0.0;
        for t in 0..s {
            let v = c.data()[t * d + i];
            sq += v * v;
        }
        let norm = sq.sqrt();
        for j in 0..dk {
            out[i * dk + j] = w.data()[i * dk + j].abs() * norm;
        }
    }
    out
}

/// Random `(W, c)` pair with random shapes and occasional zero columns in `c`.
pub fn random_pair(seed: u64) -> (Tensor, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = rng.gen_range(1..48);
    let dk = rng.gen_range(1..48);
    let s = rng.gen_range(1..16);
    let w: Vec<f64> = (0..d * dk).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let dead = rng.gen_range(0..d);
    let c: Vec<f64> = (0..s * d)
        .map(|k| if k % d == dead { 0.0 } else { rng.gen_range(-2.0..2.0) })
        .collect();
    (Tensor::new(&[d, dk], w).unwrap(), Tensor::new(&[s, d], c).unwrap())
}

/// Layer shapes that exercise word-boundary padding.
pub const LAW_SHAPES: [(usize, usize); 3] = [(5, 7), (32, 32), (3, 70)];

pub fn mask_set_from_bits(bits: &[bool]) -> MaskSet {
    let mut offset = 0;
    let masks = LAW_SHAPES
        .iter()
        .enumerate()
        .map(|(k, &(r, c))| {
            let m = NeuronMask::from_fn(format!("layer{k}"), r, c, |i, j| bits[offset + i * c + j]);
            offset += r * c;
            m
        })
        .collect();
    MaskSet { masks }
}

pub fn law_bits() -> usize {
    LAW_SHAPES.iter().map(|(r, c)| r * c).sum()
}

/// Bump when a code change invalidates the cached pretrained model.
pub const FIXTURE_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
pub struct PretrainTiming {
    pub fixture_version: u32,
    pub config: PretrainConfig,
    pub corpus_images: usize,
    pub seconds: f64,
    pub checkpoint_hash: String,
}

pub struct Pretrained {
    pub w0: ModelWeights,
    pub schedule: NoiseSchedule,
    pub timing: PretrainTiming,
}

/// The default pretrained model, cached under `CARGO_TARGET_TMPDIR/acceptance`
/// with a timing sidecar. Pretrains on a cache miss.
pub fn pretrained() -> Pretrained {
    let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let ckpt = root.join("w0");
    let sidecar = root.join("pretrain_timing.json");
    let config = PretrainConfig::default();
    if let (Ok(bytes), Ok((w0, schedule))) = (fs::read(&sidecar), load_checkpoint(&ckpt)) {
        if let Ok(timing) = serde_json::from_slice::<PretrainTiming>(&bytes) {
            if timing.fixture_version == FIXTURE_VERSION
                && timing.config == config
                && checkpoint_hash(&ckpt).ok().as_ref() == Some(&timing.checkpoint_hash)
            {
                println!("using cached pretrained model at {}", ckpt.display());
                return Pretrained { w0, schedule, timing };
            }
        }
    }
    println!("pretraining the toy model ({} steps); cached afterwards", config.steps);
    let corpus = pretraining_corpus(8, config.seed);
    let start = Instant::now();
    let run = pretrain(&corpus, ModelConfig::default(), config).unwrap();
    let seconds = start.elapsed().as_secs_f64();
    let mut w0 = run.weights;
    w0.set_all_trainable(false);
    let hash = save_checkpoint(&ckpt, &w0, &run.schedule, Dtype::F64).unwrap();
    let timing = PretrainTiming {
        fixture_version: FIXTURE_VERSION,
        config,
        corpus_images: corpus.len(),
        seconds,
        checkpoint_hash: hash,
    };
    fs::write(&sidecar, serde_json::to_vec_pretty(&timing).unwrap()).unwrap();
    Pretrained {
        w0,
        schedule: run.schedule,
        timing,
    }
}
