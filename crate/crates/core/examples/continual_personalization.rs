//! Learns a sequence of novel concepts one at a time, keeping a checkpoint
//! per stage, then writes the full report bundle.
//!
//! ```text
//! cargo run --release --example continual_personalization -- <w0_dir> [run_dir] [concepts] [steps]
//! ```

use std::path::{Path, PathBuf};

use concept_neurons::diffusion::load_checkpoint;
use concept_neurons::eval::{build_report, default_concepts, run_manifest, write_report, RunLayout, RunManifest};
use concept_neurons::data::ConceptSpec;

fn main() -> concept_neurons::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let w0 = args.first().expect("usage: continual_personalization <w0_dir> [run_dir] [concepts] [steps]");
    let run = PathBuf::from(args.get(1).cloned().unwrap_or_else(|| "target/continual_run".into()));
    let n: usize = args.get(2).map_or(5, |s| s.parse().expect("concepts"));
    let mut manifest = RunManifest {
        concepts: default_concepts(n).iter().map(ConceptSpec::label).collect(),
        ..Default::default()
    };
    if let Some(s) = args.get(3) {
        manifest.train.steps = s.parse().expect("steps");
    }

    let (weights, schedule) = load_checkpoint(Path::new(w0))?;
    let layout = if run.join("manifest.json").exists() {
        println!("reusing run at {}", run.display());
        RunLayout::new(&run)
    } else {
        println!("learning {n} concepts, {} steps each", manifest.train.steps);
        run_manifest(&manifest, &weights, &schedule, &run)?
    };
    let (report, images) = build_report(&layout)?;
    for c in &report.concepts {
        println!(
            "concept {} {:<28} pretrained {:.3}  learned {:.3}  after all stages {:.3}",
            c.concept_id, c.spec, c.pretrained.score.mean, c.learned.score.mean, c.final_stage.score.mean
        );
    }
    for curve in &report.forgetting {
        let means: Vec<String> = curve.points.iter().map(|p| format!("{:.3}", p.mean)).collect();
        println!("forgetting of concept {}: {}", curve.concept_id, means.join(" -> "));
    }
    let out = run.join("report");
    write_report(&out, &report, &images)?;
    println!("report written to {}", out.display());
    Ok(())
}
