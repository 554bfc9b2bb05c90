//! Mask-mIoU similarity along an 11-query chain where each query changes one
//! more word, with a Spearman trend per seed.
//!
//! ```text
//! cargo run --release --example prompt_similarity -- [checkpoint_dir]
//! ```

use std::path::Path;

use concept_neurons::diffusion::{load_checkpoint, ModelConfig, ModelWeights};
use concept_neurons::eval::{chain_trend, edit_chain, prompt_similarity_matrix, SPEARMAN_CRITICAL_N11};
use concept_neurons::select::SelectionConfig;

fn main() -> concept_neurons::Result<()> {
    let weights = match std::env::args().nth(1) {
        Some(dir) => load_checkpoint(Path::new(&dir))?.0,
        None => ModelWeights::init(ModelConfig::default(), 0)?,
    };
    let cfg = SelectionConfig::default();
    let chain = edit_chain(0)?;
    for (i, q) in chain.iter().enumerate() {
        println!("q{i:<2} {}", q.text());
    }
    let m = prompt_similarity_matrix(&chain, &weights, &cfg)?;
    println!();
    for row in &m {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.2}")).collect();
        println!("{}", cells.join(" "));
    }
    println!();
    for seed in 0..3 {
        let t = chain_trend(&weights, &cfg, seed)?;
        println!(
            "seed {seed}: rho {:+.3} ({})",
            t.rho,
            if t.rho <= -SPEARMAN_CRITICAL_N11 { "significant decrease" } else { "no significant trend" }
        );
    }
    Ok(())
}
