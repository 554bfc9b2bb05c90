//! Renders the synthetic concept corpus, exports it to disk and checks the
//! oracle against its own renders.
//!
//! ```text
//! cargo run --release --example render_corpus -- [out_dir] [renders_per_spec]
//! ```

use std::path::PathBuf;

use concept_neurons::data::{
    classify_image, export_corpus, held_in_specs, load_corpus, novel_specs, ppm_grid, pretraining_corpus, write_ppm,
};

fn main() -> concept_neurons::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = PathBuf::from(args.first().cloned().unwrap_or_else(|| "target/corpus".into()));
    let renders: usize = args.get(1).map_or(2, |s| s.parse().expect("renders_per_spec"));

    println!("{} held-in specs, {} novel specs", held_in_specs().len(), novel_specs().len());
    let corpus = pretraining_corpus(renders, 0);
    let index = export_corpus(&corpus, &out)?;
    let reloaded = load_corpus(&out)?;
    assert_eq!(reloaded.len(), corpus.len());
    println!("exported {} images to {}", index.len(), out.display());

    let agree = corpus
        .iter()
        .filter(|s| classify_image(&s.pixels).agreement(&s.spec) == 3)
        .count();
    println!("oracle recovers all three attributes on {agree}/{} renders", corpus.len());

    let images: Vec<_> = corpus.iter().take(32).map(|s| s.pixels.clone()).collect();
    write_ppm(&out.join("preview.ppm"), &ppm_grid(&images, 8, 4))?;
    for s in corpus.iter().take(4) {
        println!("  {}", s.caption.text());
    }
    Ok(())
}
