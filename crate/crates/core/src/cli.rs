//! `cns` command-line surface.
//!
//! Exit codes: 0 success, 2 usage-class errors (bad flags, bad specs,
//! unknown concepts, capacity), 3 integrity errors (hash mismatch, corrupt
//! files), 1 anything else (I/O, numeric failure).

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::continual::{train_concept, ConceptRegistry, TrainConfig};
use crate::data::{make_calibration_prompts, ppm_grid, pretraining_corpus, write_ppm, Caption, ConceptSpec};
use crate::diffusion::{
    attribute_accuracy, checkpoint_hash, encode_text, load_checkpoint, sample_many, ModelConfig, ModelWeights,
    NoiseSchedule, PretrainConfig, PretrainRun,
};
use crate::error::{Error, Result};
use crate::eval::{
    build_report, chain_trend, concept_fidelity, edit_chain, forgetting_curve, matrix_csv, parameter_update_fraction,
    params_csv, prompt_similarity_matrix, run_manifest, write_report, EvalConfig, RunLayout, RunManifest,
};
use crate::numerics::derive_seed;
use crate::select::{overlap_fraction_curve, write_overlap_csv, SelectionConfig};

/// Settings read from `--config`, a TOML file of `key = value` lines in optional sections:
///
/// ```toml
/// renders_per_spec = 8
/// calibration_prompts = 20
/// [pretrain]
/// steps = 18000
/// [train]
/// steps = 500
/// lr_neurons = 3e-4
/// [train.loss_weights]
/// lambda1 = 1.0
/// [selection]
/// fraction = 0.3
/// axis = "column"
/// [eval]
/// n_samples = 8
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub renders_per_spec: usize,
    pub calibration_prompts: usize,
    pub pretrain: PretrainConfig,
    pub train: TrainConfig,
    pub selection: SelectionConfig,
    pub eval: EvalConfig,
}

impl Default for CliConfig {
    fn default() -> Self {
        Self {
            renders_per_spec: 8,
            calibration_prompts: 20,
            pretrain: PretrainConfig::default(),
            train: TrainConfig::default(),
            selection: SelectionConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl CliConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Usage(format!("config {}: {e}", path.display())))
    }
}

#[derive(Debug, Parser)]
#[command(name = "cns", version, about = "Concept-neuron continual personalization lab")]
struct Cli {
    /// Master seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// TOML settings file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "cns-out")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Print errors as one JSON object on standard error.
    #[arg(long, global = true)]
    json_errors: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train W_0 on the held-in corpus and write the checkpoint to --out.
    Pretrain,
    /// Learn one novel concept `texture:color:shape:background` into a registry.
    Learn {
        spec: String,
        #[arg(long)]
        registry: PathBuf,
        /// Pretrained checkpoint used to create the registry if it does not exist.
        #[arg(long)]
        w0: Option<PathBuf>,
    },
    /// Sample images for a caption such as "a <new_1> on blue background".
    Generate {
        #[arg(long)]
        prompt: String,
        #[command(flatten)]
        weights: WeightsArg,
        #[arg(long, default_value_t = 1)]
        samples: usize,
    },
    /// Evaluation metrics.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Run a manifest (if given) and write the report bundle to --out.
    Report {
        /// Existing run directory; created from --manifest when absent.
        #[arg(long)]
        run: PathBuf,
        /// TOML run manifest.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Pretrained checkpoint for a new run.
        #[arg(long)]
        w0: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
struct WeightsArg {
    /// Checkpoint directory.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Registry whose current checkpoint is used.
    #[arg(long)]
    registry: Option<PathBuf>,
}

impl WeightsArg {
    fn load(&self) -> Result<(ModelWeights, NoiseSchedule, String)> {
        let dir = match (&self.checkpoint, &self.registry) {
            (Some(c), _) => c.clone(),
            (None, Some(r)) => ConceptRegistry::open(r)?.current_dir(),
            (None, None) => return Err(Error::Usage("pass --checkpoint or --registry".into())),
        };
        let hash = checkpoint_hash(&dir)?;
        let (w, s) = load_checkpoint(&dir)?;
        Ok((w, s, hash))
    }
}

#[derive(Debug, Subcommand)]
enum EvalCommand {
    /// Oracle fidelity of a learned concept on the current checkpoint.
    Fidelity {
        #[arg(long)]
        registry: PathBuf,
        #[arg(long)]
        concept: usize,
    },
    /// Fidelity of a concept across the stage checkpoints of a manifest run.
    Forgetting {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value_t = 1)]
        concept: usize,
    },
    /// Fraction of jointly selected neurons among the first K calibration prompts.
    Overlap {
        #[command(flatten)]
        weights: WeightsArg,
        #[arg(long, default_value_t = 20)]
        prompts: usize,
    },
    /// Mask-mIoU matrix of queries (default: the 11-query edit chain).
    Similarity {
        #[command(flatten)]
        weights: WeightsArg,
        /// Captions separated by `;`.
        #[arg(long)]
        queries: Option<String>,
    },
    /// Share of key/value and total parameters each concept may update.
    Params {
        #[arg(long)]
        registry: PathBuf,
    },
}

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Integrity { .. } | Error::Determinism(_) => 3,
        Error::Io { .. } | Error::Numeric(_) | Error::Json(_) => 1,
        _ => 2,
    }
}

fn report_error(kind: &str, message: &str, code: i32, json: bool) {
    if json {
        let rec = serde_json::json!({ "error": kind, "message": message, "exit_code": code });
        eprintln!("{rec}");
    } else {
        eprintln!("error: {message}");
    }
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let json = argv.iter().any(|a| a == "--json-errors");
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            if json {
                report_error("usage", e.to_string().trim(), 2, true);
            } else {
                eprint!("{e}");
            }
            return 2;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            let code = exit_code(&e);
            report_error(e.kind(), &e.to_string(), code, cli.json_errors);
            code
        }
    }
}

fn execute(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Usage("--threads must be at least 1".into()));
        }
        // Fails only if a pool already exists, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let config = match &cli.config {
        Some(p) => CliConfig::load(p)?,
        None => CliConfig::default(),
    };
    match &cli.command {
        Command::Pretrain => pretrain(cli, &config),
        Command::Learn { spec, registry, w0 } => learn(cli, &config, spec, registry, w0.as_deref()),
        Command::Generate { prompt, weights, samples } => generate(cli, prompt, weights, *samples),
        Command::Eval(e) => eval(cli, &config, e),
        Command::Report { run, manifest, w0 } => report(cli, run, manifest.as_deref(), w0.as_deref()),
    }
}

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `value` to stdout. A closed pipe (e.g. `cns ... | head`) is not an error.
fn print_json(value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}").and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::io("<stdout>", e)),
        _ => Ok(()),
    }
}

#[derive(Serialize)]
struct PretrainSummary {
    steps: usize,
    corpus_images: usize,
    final_loss: f64,
    attribute_accuracy: f64,
    seconds: f64,
    checkpoint_hash: String,
}

fn pretrain(cli: &Cli, config: &CliConfig) -> Result<()> {
    let mut pc = config.pretrain;
    pc.seed = cli.seed;
    let corpus = pretraining_corpus(config.renders_per_spec, pc.seed);
    let start = Instant::now();
    let mut run = PretrainRun::new(ModelConfig::default(), pc)?;
    run.train_until(&corpus, pc.steps)?;
    let seconds = start.elapsed().as_secs_f64();
    run.save(&cli.out)?;
    let (acc, _) = attribute_accuracy(&run.weights, &run.schedule, config.eval.alignment_prompts, cli.seed)?;
    let summary = PretrainSummary {
        steps: run.step,
        corpus_images: corpus.len(),
        final_loss: run.curve.last().map_or(f64::NAN, |p| p.loss),
        attribute_accuracy: acc,
        seconds,
        checkpoint_hash: checkpoint_hash(&cli.out)?,
    };
    print_json(&summary)
}

fn learn(cli: &Cli, config: &CliConfig, spec: &str, registry: &Path, w0: Option<&Path>) -> Result<()> {
    let spec = ConceptSpec::parse(spec)?;
    let mut reg = if registry.join(crate::continual::REGISTRY_FILE).exists() {
        ConceptRegistry::open(registry)?
    } else {
        let w0 = w0.ok_or_else(|| Error::Usage(format!("{} holds no registry; pass --w0", registry.display())))?;
        let (w, s) = load_checkpoint(w0)?;
        ConceptRegistry::create(
            registry,
            &w,
            &s,
            config.selection,
            config.calibration_prompts,
            derive_seed(cli.seed, &[0xCA1B]),
        )?
    };
    let (record, _) = train_concept(&mut reg, &spec, &config.train, cli.seed)?;
    print_json(&record)
}

fn generate(cli: &Cli, prompt: &str, weights: &WeightsArg, samples: usize) -> Result<()> {
    if samples == 0 {
        return Err(Error::Usage("--samples must be at least 1".into()));
    }
    let caption = Caption::parse(prompt)?;
    let (w, s, hash) = weights.load()?;
    let text = encode_text(&caption, &w)?;
    let jobs: Vec<_> = (0..samples).map(|k| (text.clone(), derive_seed(cli.seed, &[k as u64]))).collect();
    let images = sample_many(&jobs, &w, &s);
    create_out(&cli.out)?;
    let path = cli.out.join(format!("generate_seed{}.ppm", cli.seed));
    write_ppm(&path, &ppm_grid(&images, samples.min(8), 4))?;
    print_json(&serde_json::json!({
        "prompt": caption.text(),
        "seed": cli.seed,
        "samples": samples,
        "checkpoint_hash": hash,
        "image": path.display().to_string(),
    }))
}

fn eval(cli: &Cli, config: &CliConfig, cmd: &EvalCommand) -> Result<()> {
    match cmd {
        EvalCommand::Fidelity { registry, concept } => {
            let reg = ConceptRegistry::open(registry)?;
            let (w, s) = reg.load_current()?;
            let score = concept_fidelity(&w, &s, &reg, *concept, config.eval.n_samples, cli.seed)?;
            print_json(&serde_json::json!({
                "concept_id": concept,
                "checkpoint_hash": reg.current_ref().hash,
                "seed": cli.seed,
                "mean": score.mean,
                "best": score.best,
                "per_sample": score.per_sample,
            }))
        }
        EvalCommand::Forgetting { run, concept } => {
            let layout = RunLayout::new(run);
            let reg = layout.open_registry()?;
            let curve = forgetting_curve(&layout, &reg, *concept, &config.eval.seeds, config.eval.n_samples)?;
            create_out(&cli.out)?;
            let path = cli.out.join(format!("forgetting_concept_{concept}.csv"));
            write_text(&path, &curve.csv())?;
            print_json(&curve)
        }
        EvalCommand::Overlap { weights, prompts } => {
            let (w, _, hash) = weights.load()?;
            let calib = make_calibration_prompts(*prompts, cli.seed)?;
            let curve = overlap_fraction_curve(&calib, &w, &config.selection)?;
            create_out(&cli.out)?;
            let path = cli.out.join("overlap_curve.csv");
            write_overlap_csv(&path, &curve)?;
            print_json(&serde_json::json!({ "checkpoint_hash": hash, "seed": cli.seed, "fraction": curve }))
        }
        EvalCommand::Similarity { weights, queries } => {
            let (w, _, hash) = weights.load()?;
            let qs = match queries {
                Some(q) => q.split(';').map(|t| Caption::parse(t.trim())).collect::<Result<Vec<_>>>()?,
                None => edit_chain(cli.seed)?,
            };
            let m = prompt_similarity_matrix(&qs, &w, &config.selection)?;
            let labels: Vec<String> = (0..qs.len()).map(|i| format!("q{i}")).collect();
            create_out(&cli.out)?;
            write_text(&cli.out.join("similarity.csv"), &matrix_csv(&labels, &m))?;
            let trend = if queries.is_none() {
                Some(chain_trend(&w, &config.selection, cli.seed)?.rho)
            } else {
                None
            };
            print_json(&serde_json::json!({
                "checkpoint_hash": hash,
                "seed": cli.seed,
                "queries": qs.iter().map(Caption::text).collect::<Vec<_>>(),
                "matrix": m,
                "spearman_rho": trend,
            }))
        }
        EvalCommand::Params { registry } => {
            let reg = ConceptRegistry::open(registry)?;
            let (w, _) = reg.load_w0()?;
            let rows = reg
                .records()
                .iter()
                .map(|r| Ok((r.concept_id, parameter_update_fraction(&reg.concept_masks(r.concept_id)?, &w.config)?)))
                .collect::<Result<Vec<_>>>()?;
            create_out(&cli.out)?;
            write_text(&cli.out.join("params.csv"), &params_csv(&rows))?;
            print_json(&rows)
        }
    }
}

fn report(cli: &Cli, run: &Path, manifest: Option<&Path>, w0: Option<&Path>) -> Result<()> {
    let layout = RunLayout::new(run);
    if !layout.manifest_path().exists() {
        let (Some(mpath), Some(w0)) = (manifest, w0) else {
            return Err(Error::Usage(format!(
                "{} holds no run; pass --manifest and --w0 to create one",
                run.display()
            )));
        };
        let text = fs::read_to_string(mpath).map_err(|e| Error::io(mpath, e))?;
        let m: RunManifest =
            toml::from_str(&text).map_err(|e| Error::Usage(format!("manifest {}: {e}", mpath.display())))?;
        let (w, s) = load_checkpoint(w0)?;
        run_manifest(&m, &w, &s, run)?;
    }
    let (report, images) = build_report(&layout)?;
    write_report(&cli.out, &report, &images)?;
    print_json(&serde_json::json!({
        "run_id": report.run_id,
        "out": cli.out.display().to_string(),
        "concepts": report.concepts.len(),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run_cli(["cns", "--bogus"]), 2);
        assert_eq!(run_cli(["cns", "eval", "nope"]), 2);
        assert_eq!(run_cli(["cns", "--help"]), 0);
        let dir = tempfile::tempdir().unwrap();
        let reg = dir.path().join("r");
        let code = run_cli(["cns", "learn", "bad-spec", "--registry", reg.to_str().unwrap()]);
        assert_eq!(code, 2);
    }

    #[test]
    fn integrity_errors_exit_three() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(crate::continual::REGISTRY_FILE), b"{ not json").unwrap();
        let code = run_cli(["cns", "eval", "params", "--registry", dir.path().to_str().unwrap()]);
        assert_eq!(code, 3);
    }

    #[test]
    fn overlap_and_similarity_write_csv() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = dir.path().join("w");
        let w = crate::diffusion::ModelWeights::init(crate::diffusion::ModelConfig::default(), 2).unwrap();
        crate::diffusion::save_checkpoint(&ckpt, &w, &crate::diffusion::NoiseSchedule::cosine(100), crate::diffusion::Dtype::F64)
            .unwrap();
        let out = dir.path().join("out");
        let (c, o) = (ckpt.to_str().unwrap(), out.to_str().unwrap());
        assert_eq!(run_cli(["cns", "--out", o, "eval", "overlap", "--checkpoint", c, "--prompts", "5"]), 0);
        let csv = fs::read_to_string(out.join("overlap_curve.csv")).unwrap();
        assert_eq!(csv.lines().next(), Some("k,fraction"));
        assert_eq!(csv.lines().count(), 6);
        assert_eq!(run_cli(["cns", "--out", o, "eval", "overlap", "--checkpoint", c, "--prompts", "0"]), 2);
        let queries = "a solid red circle on blue background;a solid red square on blue background";
        assert_eq!(run_cli(["cns", "--out", o, "eval", "similarity", "--checkpoint", c, "--queries", queries]), 0);
        assert_eq!(fs::read_to_string(out.join("similarity.csv")).unwrap().lines().count(), 3);
    }

    #[test]
    fn config_file_overrides_and_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        fs::write(&p, "renders_per_spec = 2\n[train]\nsteps = 9\n[selection]\naxis = \"row\"\n").unwrap();
        let c = CliConfig::load(&p).unwrap();
        assert_eq!((c.renders_per_spec, c.train.steps), (2, 9));
        assert_eq!(c.selection.axis, crate::select::SelectionAxis::Row);
        fs::write(&p, "[train]\nstep = 9\n").unwrap();
        assert!(matches!(CliConfig::load(&p), Err(Error::Usage(_))));
    }
}
