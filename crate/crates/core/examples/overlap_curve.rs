//! Fraction of neurons selected by all of the first K calibration prompts,
//! for K = 1..20, written as `overlap_curve.csv`.
//!
//! ```text
//! cargo run --release --example overlap_curve -- <checkpoint_dir> [out_csv]
//! ```

use std::path::{Path, PathBuf};

use concept_neurons::data::make_calibration_prompts;
use concept_neurons::diffusion::load_checkpoint;
use concept_neurons::select::{overlap_fraction_curve, write_overlap_csv, SelectionConfig};

fn main() -> concept_neurons::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = args.next().expect("usage: overlap_curve <checkpoint_dir> [out_csv]");
    let out = PathBuf::from(args.next().unwrap_or_else(|| "overlap_curve.csv".into()));
    let (weights, _) = load_checkpoint(Path::new(&dir))?;
    let prompts = make_calibration_prompts(20, 0)?;
    let curve = overlap_fraction_curve(&prompts, &weights, &SelectionConfig::default())?;
    for (k, f) in curve.iter().enumerate() {
        println!("K = {:>2}  fraction {f:.4}  {}", k + 1, "#".repeat((f * 60.0).round() as usize));
    }
    write_overlap_csv(&out, &curve)?;
    println!("wrote {}", out.display());
    Ok(())
}
