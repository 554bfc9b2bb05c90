//! Single-concept mask ablations from one pretrained model: concept neurons,
//! random masks of equal per-layer size, and every key/value entry.
//!
//! ```text
//! cargo run --release --example ablations -- <w0_dir> [steps]
//! ```

use std::path::Path;

use concept_neurons::continual::{train_concept, ConceptRegistry, MaskStrategy, TrainConfig};
use concept_neurons::diffusion::load_checkpoint;
use concept_neurons::eval::{default_concepts, record_fidelity};
use concept_neurons::select::SelectionConfig;

fn main() -> concept_neurons::Result<()> {
    let mut args = std::env::args().skip(1);
    let w0 = args.next().expect("usage: ablations <w0_dir> [steps]");
    let steps: usize = args.next().map_or(500, |s| s.parse().expect("steps"));
    let (weights, schedule) = load_checkpoint(Path::new(&w0))?;
    let spec = default_concepts(1)[0];
    let tmp = tempdir();

    for strategy in [MaskStrategy::Concept, MaskStrategy::Random, MaskStrategy::All] {
        let root = tmp.join(format!("{strategy:?}"));
        let mut reg = ConceptRegistry::create(&root, &weights, &schedule, SelectionConfig::default(), 20, 0)?;
        let config = TrainConfig { steps, strategy, ..Default::default() };
        let (rec, _) = train_concept(&mut reg, &spec, &config, 0)?;
        let (w, s) = reg.load_current()?;
        let fid = record_fidelity(&w, &s, &rec, 8, 0)?;
        println!(
            "{strategy:?}: trained {} of {} key/value entries, fidelity mean {:.3} best {:.3}",
            rec.counts.trained,
            reg.concept_masks(1)?.total_bits(),
            fid.mean,
            fid.best
        );
    }
    let _ = std::fs::remove_dir_all(&tmp);
    Ok(())
}

fn tempdir() -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("cns-ablations-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}
