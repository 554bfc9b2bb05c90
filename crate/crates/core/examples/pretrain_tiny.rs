//! Pretrains the toy denoiser on held-in concepts and reports oracle
//! attribute accuracy on 64 held-in prompts.
//!
//! ```text
//! cargo run --release --example pretrain_tiny -- [out_dir] [steps] [batch] [lr]
//! ```

use std::path::PathBuf;
use std::time::Instant;

use concept_neurons::data::pretraining_corpus;
use concept_neurons::diffusion::{attribute_accuracy, ModelConfig, PretrainConfig, PretrainRun};

fn main() -> concept_neurons::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = PathBuf::from(args.first().cloned().unwrap_or_else(|| "target/pretrain_tiny".into()));
    let mut config = PretrainConfig::default();
    if let Some(s) = args.get(1) {
        config.steps = s.parse().expect("steps");
    }
    if let Some(b) = args.get(2) {
        config.batch_size = b.parse().expect("batch");
    }
    if let Some(lr) = args.get(3) {
        config.lr = lr.parse().expect("lr");
    }
    let corpus = pretraining_corpus(8, config.seed);
    println!("corpus: {} images, config: {config:?}", corpus.len());

    let start = Instant::now();
    let mut run = PretrainRun::new(ModelConfig::default(), config)?;
    let report_every = (config.steps / 8).max(1);
    while !run.is_complete() {
        let until = run.step + report_every;
        run.train_until(&corpus, until)?;
        let recent = &run.curve[run.curve.len().saturating_sub(report_every)..];
        let mean = recent.iter().map(|p| p.loss).sum::<f64>() / recent.len() as f64;
        let (acc, _) = attribute_accuracy(&run.weights, &run.schedule, 64, 1)?;
        println!(
            "step {:>6}  mean loss {mean:.3}  attribute accuracy {acc:.3}  elapsed {:.0?}",
            run.step,
            start.elapsed()
        );
    }
    run.save(&out)?;
    println!("saved checkpoint to {}", out.display());
    Ok(())
}
