use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::fidelity::{composition_hits, token_samples, CompositionHits, FidelityScore};
use super::forgetting::{forgetting_curve, ForgettingCurve};
use super::manifest::{RunLayout, RunManifest};
use super::params::{parameter_update_fraction, params_csv, ParameterFractions};
use super::similarity::matrix_csv;
use super::svg::{line_plot, Series};
use crate::continual::{MaskCounts, TrainConfig};
use crate::data::{ppm_grid, write_ppm};
use crate::diffusion::{attribute_accuracy, checkpoint_hash, load_checkpoint, ModelWeights, NoiseSchedule};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::select::mask_miou;

/// Where a number came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub checkpoint: String,
    pub checkpoint_hash: String,
    pub seed: u64,
    pub prompt_set: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub score: FidelityScore,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptMetrics {
    pub concept_id: usize,
    pub spec: String,
    pub special_token: usize,
    /// Right after the concept was learned.
    pub learned: Scored,
    /// After the last concept of the run.
    pub final_stage: Scored,
    /// The pretrained model on the same prompt.
    pub pretrained: Scored,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskStats {
    pub counts: Vec<MaskCounts>,
    /// Trained-mask popcount over all key/value entries, per concept.
    pub densities: Vec<f64>,
    pub miou_matrix: Vec<Vec<f64>>,
    pub update_fractions: Vec<ParameterFractions>,
}

/// Oracle attribute agreement between held-in prompts and samples.
///
/// A stand-in for text-alignment scoring, not a CLIP measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentProxy {
    pub label: String,
    pub accuracy: f64,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub run_id: String,
    pub config: TrainConfig,
    pub manifest_seed: u64,
    pub concept_seeds: Vec<u64>,
    pub eval_seeds: Vec<u64>,
    pub concepts: Vec<ConceptMetrics>,
    pub forgetting: Vec<ForgettingCurve>,
    pub masks: MaskStats,
    pub alignment_proxy: AlignmentProxy,
    /// `a <new_1> next to a <new_2>` on the last checkpoint; no quality claim is attached.
    pub composition: Option<CompositionHits>,
}

struct Checkpoint {
    label: String,
    hash: String,
    weights: ModelWeights,
    schedule: NoiseSchedule,
}

fn open_checkpoint(dir: &Path, label: String) -> Result<Checkpoint> {
    let hash = checkpoint_hash(dir)?;
    let (weights, schedule) = load_checkpoint(dir)?;
    Ok(Checkpoint {
        label,
        hash,
        weights,
        schedule,
    })
}

fn scored(
    ck: &Checkpoint,
    token: usize,
    spec: &crate::data::ConceptSpec,
    n: usize,
    seed: u64,
) -> Result<(Scored, Vec<Tensor>)> {
    let (images, score) = token_samples(&ck.weights, &ck.schedule, token, spec, n, seed)?;
    let prompt_set = format!("a <new_k> on {} background, {n} samples", spec.background_color.word());
    Ok((
        Scored {
            score,
            provenance: Provenance {
                checkpoint: ck.label.clone(),
                checkpoint_hash: ck.hash.clone(),
                seed,
                prompt_set,
            },
        },
        images,
    ))
}

/// Images kept for the report's sample grids.
pub struct ReportImages {
    pub pretrained: Vec<Tensor>,
    pub final_stage: Vec<Tensor>,
    pub columns: usize,
}

/// Computes every metric of a finished manifest run.
pub fn build_report(layout: &RunLayout) -> Result<(MetricsReport, ReportImages)> {
    let manifest: RunManifest = layout.load_manifest()?;
    let registry = layout.open_registry()?;
    let m = registry.len();
    if m == 0 {
        return Err(Error::Manifest("run has no learned concepts".into()));
    }
    let eval = &manifest.eval;
    let seed = *eval.seeds.first().ok_or_else(|| Error::Manifest("no evaluation seeds".into()))?;
    let w0 = open_checkpoint(&registry.w0_dir(), "registry/w0".into())?;
    let last = open_checkpoint(&layout.stage_dir(m), format!("stages/stage_{m:02}"))?;

    let mut concepts = Vec::with_capacity(m);
    let mut images = ReportImages {
        pretrained: Vec::new(),
        final_stage: Vec::new(),
        columns: eval.n_samples,
    };
    for rec in registry.records() {
        let at_stage = open_checkpoint(
            &layout.stage_dir(rec.concept_id),
            format!("stages/stage_{:02}", rec.concept_id),
        )?;
        let (learned, _) = scored(&at_stage, rec.special_token, &rec.spec, eval.n_samples, seed)?;
        let (final_stage, fi) = scored(&last, rec.special_token, &rec.spec, eval.n_samples, seed)?;
        let (pretrained, pi) = scored(&w0, rec.special_token, &rec.spec, eval.n_samples, seed)?;
        images.final_stage.extend(fi);
        images.pretrained.extend(pi);
        concepts.push(ConceptMetrics {
            concept_id: rec.concept_id,
            spec: rec.spec.label(),
            special_token: rec.special_token,
            learned,
            final_stage,
            pretrained,
        });
    }

    let forgetting = (1..=m)
        .map(|j| forgetting_curve(layout, &registry, j, &eval.seeds, eval.n_samples))
        .collect::<Result<Vec<_>>>()?;

    let sets = registry.all_masks()?;
    let mut miou = vec![vec![0.0; m]; m];
    for a in 0..m {
        for b in a..m {
            let v = mask_miou(&sets[a], &sets[b])?;
            miou[a][b] = v;
            miou[b][a] = v;
        }
    }
    let cfg = &w0.weights.config;
    let update_fractions = sets
        .iter()
        .map(|s| parameter_update_fraction(s, cfg))
        .collect::<Result<Vec<_>>>()?;
    let masks = MaskStats {
        counts: registry.records().iter().map(|r| r.counts).collect(),
        densities: update_fractions.iter().map(|f| f.key_value_fraction).collect(),
        miou_matrix: miou,
        update_fractions,
    };

    let (accuracy, _) = attribute_accuracy(&last.weights, &last.schedule, eval.alignment_prompts, seed)?;
    let alignment_proxy = AlignmentProxy {
        label: "oracle attribute agreement (text-alignment proxy)".into(),
        accuracy,
        provenance: Provenance {
            checkpoint: last.label.clone(),
            checkpoint_hash: last.hash.clone(),
            seed,
            prompt_set: format!("{} held-in prompts", eval.alignment_prompts),
        },
    };

    let composition = match registry.records() {
        [a, b, ..] => Some(composition_hits(&last.weights, &last.schedule, a, b, eval.n_samples, seed)?),
        _ => None,
    };

    let report = MetricsReport {
        run_id: manifest.name.clone(),
        config: manifest.train,
        manifest_seed: manifest.seed,
        concept_seeds: (1..=m).map(|k| manifest.concept_seed(k)).collect(),
        eval_seeds: eval.seeds.clone(),
        concepts,
        forgetting,
        masks,
        alignment_proxy,
        composition,
    };
    Ok((report, images))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Files written by [`write_report`].
pub const REPORT_FILES: [&str; 8] = [
    "report.json",
    "forgetting.csv",
    "forgetting.svg",
    "miou_matrix.csv",
    "params.csv",
    "fidelity.csv",
    "samples_final.ppm",
    "samples_pretrained.ppm",
];

/// Writes the report bundle (JSON, CSVs, SVG plot, PPM grids) into `dir`.
pub fn write_report(dir: &Path, report: &MetricsReport, images: &ReportImages) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut json = serde_json::to_vec_pretty(report)?;
    json.push(b'\n');
    write(&dir.join("report.json"), json)?;

    let mut csv = String::from("concept_id,stage,mean");
    let seeds = &report.eval_seeds;
    for s in seeds {
        csv.push_str(&format!(",seed_{s}"));
    }
    csv.push('\n');
    for c in &report.forgetting {
        for line in c.csv().lines().skip(1) {
            csv.push_str(&format!("{},{line}\n", c.concept_id));
        }
    }
    write(&dir.join("forgetting.csv"), csv)?;

    let series: Vec<Series> = report
        .forgetting
        .iter()
        .map(|c| Series {
            name: format!("concept {}", c.concept_id),
            points: c.points.iter().map(|p| (p.stage as f64, p.mean)).collect(),
        })
        .collect();
    write(
        &dir.join("forgetting.svg"),
        line_plot("Fidelity after each stage", "stage", "fidelity", &series, (0.0, 1.0)),
    )?;

    let labels: Vec<String> = report.concepts.iter().map(|c| format!("concept_{}", c.concept_id)).collect();
    write(&dir.join("miou_matrix.csv"), matrix_csv(&labels, &report.masks.miou_matrix))?;
    let rows: Vec<(usize, ParameterFractions)> = report
        .concepts
        .iter()
        .map(|c| c.concept_id)
        .zip(report.masks.update_fractions.iter().copied())
        .collect();
    write(&dir.join("params.csv"), params_csv(&rows))?;

    let mut fid = String::from("concept_id,spec,learned_mean,learned_best,final_mean,final_best,pretrained_mean,pretrained_best\n");
    for c in &report.concepts {
        fid.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            c.concept_id,
            c.spec,
            c.learned.score.mean,
            c.learned.score.best,
            c.final_stage.score.mean,
            c.final_stage.score.best,
            c.pretrained.score.mean,
            c.pretrained.score.best
        ));
    }
    write(&dir.join("fidelity.csv"), fid)?;

    write_ppm(&dir.join("samples_final.ppm"), &ppm_grid(&images.final_stage, images.columns, 4))?;
    write_ppm(&dir.join("samples_pretrained.ppm"), &ppm_grid(&images.pretrained, images.columns, 4))?;
    Ok(())
}
