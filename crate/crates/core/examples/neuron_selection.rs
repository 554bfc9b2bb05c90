//! Scores one concept's captions, builds base, general and concept masks and
//! prints their sizes and overlap.
//!
//! ```text
//! cargo run --release --example neuron_selection -- [checkpoint_dir]
//! ```

use std::path::Path;

use concept_neurons::data::{caption_for, make_calibration_prompts, special_token};
use concept_neurons::diffusion::{load_checkpoint, ModelConfig, ModelWeights};
use concept_neurons::eval::{default_concepts, parameter_update_fraction};
use concept_neurons::select::{base_mask, concept_mask, general_mask, mask_miou, SelectionAxis, SelectionConfig};

fn main() -> concept_neurons::Result<()> {
    let weights = match std::env::args().nth(1) {
        Some(dir) => load_checkpoint(Path::new(&dir))?.0,
        None => {
            println!("no checkpoint given, using randomly initialized weights");
            ModelWeights::init(ModelConfig::default(), 0)?
        }
    };
    let spec = default_concepts(1)[0];
    let token = special_token(1).expect("slot");
    let captions: Vec<_> = (0..4).map(|k| caption_for(&spec, k, Some(token))).collect::<Result<_, _>>()?;
    let calibration = make_calibration_prompts(20, 0)?;

    for axis in [SelectionAxis::Column, SelectionAxis::Row] {
        let cfg = SelectionConfig { axis, ..Default::default() };
        let base = base_mask(&captions, &weights, &cfg)?;
        let general = general_mask(&calibration, &weights, &cfg)?;
        let concept = concept_mask(&base, &general)?;
        let frac = parameter_update_fraction(&concept, &weights.config)?;
        println!("{axis:?} selection for {}:", spec.label());
        println!(
            "  base {} bits, general {} bits, concept {} bits of {}",
            base.popcount(),
            general.popcount(),
            concept.popcount(),
            base.total_bits()
        );
        println!("  mIoU(base, general) = {:.4}", mask_miou(&base, &general)?);
        println!(
            "  concept neurons are {:.2}% of key/value and {:.3}% of all parameters",
            100.0 * frac.key_value_fraction,
            100.0 * frac.total_fraction
        );
        for m in &concept.masks {
            println!("    {:<24} {:>4}", m.layer_path, m.popcount());
        }
    }
    Ok(())
}
