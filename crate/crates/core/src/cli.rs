//! The `asem` command line: `generate`, `validate`, `train`, `eval` and
//! `compare`.
//!
//! Configs are JSON files. `--set key.path=value` overrides any field after
//! the file is read (values parse as JSON, falling back to a plain string),
//! and unknown keys are rejected by name. Exit codes: 0 success, 1 I/O,
//! 2 configuration, 3 data, 4 numeric failure.
//!
//! Outputs are written atomically. Apart from `asem.log`, which records
//! wall-clock timestamps, every output is byte-identical across reruns with
//! the same inputs.

use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{generate_synthetic, load_dataset, save_dataset, Dataset, Split, SyntheticSpec};
use crate::encoder::DualEncoder;
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::report;
use crate::trainer::{
    evaluate_model, run_comparison, train_one, Comparison, DatasetSource, ObjectiveKind, RunReport,
    SeedRun, TrainConfig,
};

#[derive(Debug, Parser)]
#[command(
    name = "asem",
    version,
    about = "Metric-learning objectives for audio-text retrieval"
)]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// JSON config file.
    #[arg(long)]
    pub config: PathBuf,

    /// Override a config field, e.g. `--set epochs=0` or `--set dataset.synthetic.seed=3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,

    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,

    /// Overrides the seed (generation seed, or the single training seed).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset from a spec file.
    Generate(Common),
    /// Validate a dataset manifest and its feature files.
    Validate {
        /// Dataset manifest.
        #[arg(long)]
        config: PathBuf,
    },
    /// Train one objective for every configured seed.
    Train(Common),
    /// Score a checkpoint on a dataset split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset manifest.
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Train and compare several objectives (and batch sizes) over seeds.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Maximum number of runs trained concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

/// Config of `asem compare`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "all_objectives")]
    pub objectives: Vec<ObjectiveKind>,
    /// Defaults to `train.batch_size`.
    #[serde(default)]
    pub batch_sizes: Option<Vec<usize>>,
}

fn all_objectives() -> Vec<ObjectiveKind> {
    ObjectiveKind::ALL.to_vec()
}

impl CompareConfig {
    pub fn comparison(&self) -> Comparison {
        Comparison {
            base: self.train.clone(),
            objectives: self.objectives.clone(),
            batch_sizes: self
                .batch_sizes
                .clone()
                .unwrap_or_else(|| vec![self.train.batch_size]),
        }
    }
}

/// Sets `path` (dot separated) inside a JSON object, creating intermediate
/// objects as needed.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not KEY=VALUE")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::Config(format!("bad override key `{key}`")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node.as_object_mut().ok_or_else(|| {
            Error::Config(format!(
                "cannot set `{key}`: `{}` is not an object",
                parts[..i].join(".")
            ))
        })?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("loop returns on the last key")
}

/// Reads a JSON config, applies overrides in order, and deserializes it.
pub fn load_config<T: DeserializeOwned>(path: &Path, overrides: &[String]) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => {
            Error::Config(format!("config file {} not found", path.display()))
        }
        _ => Error::Io(e),
    })?;
    let mut value: Value = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    serde_json::from_value(value).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn resolve_dataset(source: &DatasetSource, config_path: &Path) -> Result<Dataset> {
    match source {
        DatasetSource::Manifest(p) => {
            let p = if p.is_relative() {
                config_path.parent().unwrap_or(Path::new(".")).join(p)
            } else {
                p.clone()
            };
            load_dataset(&p)
        }
        DatasetSource::Synthetic(spec) => generate_synthetic(spec),
    }
}

fn check_dims(config: &TrainConfig, dataset: &Dataset) -> Result<()> {
    for split in Split::ALL {
        if let Ok(s) = dataset.split(split) {
            if s.n_pairs() > 0
                && (s.audio_dim() != dataset.audio_dim || s.text_dim() != dataset.text_dim)
            {
                return Err(Error::DimMismatch(format!(
                    "split `{split}` disagrees with the manifest dims"
                )));
            }
        }
    }
    let _ = config;
    Ok(())
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

/// Appends a timestamped line to `<out>/asem.log`.
fn log_line(out: &Path, msg: &str) -> Result<()> {
    fs::create_dir_all(out)?;
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(out.join("asem.log"))?;
    writeln!(f, "[{}] {msg}", unix_now())?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_text(path, &s)
}

/// Writes a synthetic dataset; returns the manifest path.
pub fn cmd_generate(args: &Common) -> Result<PathBuf> {
    let mut spec: SyntheticSpec = load_config(&args.config, &args.overrides)?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let dataset = generate_synthetic(&spec)?;
    let manifest = save_dataset(&dataset, &args.out)?;
    log_line(
        &args.out,
        &format!("generate: wrote {}", manifest.display()),
    )?;
    Ok(manifest)
}

/// Loads a manifest and returns a one-line-per-split summary.
pub fn cmd_validate(manifest: &Path) -> Result<String> {
    let ds = load_dataset(manifest)?;
    let mut out = format!(
        "dataset `{}`: audio dim {}, text dim {}\n",
        ds.name, ds.audio_dim, ds.text_dim
    );
    for (split, s) in &ds.splits {
        let (audios, _) = s.retrieval_view();
        out.push_str(&format!(
            "  {split}: {} audios ({} paired), {} captions\n",
            s.audio_features().rows(),
            audios.len(),
            s.n_pairs()
        ));
    }
    Ok(out)
}

/// Trains every configured seed; writes per-seed checkpoints, epoch CSVs and
/// test reports plus an aggregate report.
pub fn cmd_train(args: &Common) -> Result<RunReport> {
    let mut config: TrainConfig = load_config(&args.config, &args.overrides)?;
    if let Some(seed) = args.seed {
        config.seeds = vec![seed];
    }
    config.validate()?;
    let dataset = resolve_dataset(&config.dataset, &args.config)?;
    check_dims(&config, &dataset)?;
    log_line(
        &args.out,
        &format!(
            "train: {} seeds {:?}",
            config.objective.as_str(),
            config.seeds
        ),
    )?;
    write_json(&args.out.join("config.json"), &config)?;

    let mut runs = Vec::new();
    for &seed in &config.seeds {
        let outcome = train_one(&config, &dataset, seed)?;
        let dir = args.out.join(format!("seed-{seed}"));
        outcome
            .best
            .save(&dir.join("checkpoint.asem"), Some(seed))?;
        write_text(
            &dir.join("epochs.csv"),
            &report::epochs_csv(&outcome.epochs),
        )?;
        let test = evaluate_model(&outcome.best, dataset.split(Split::Test)?)?;
        write_text(&dir.join("report.csv"), &test.to_csv())?;
        write_text(&dir.join("report.txt"), &test.to_table())?;
        runs.push(SeedRun {
            seed,
            test: Some(test),
            best_epoch: outcome.best_epoch,
            epochs: outcome.epochs,
            error: None,
        });
    }
    let run = RunReport::from_runs(config.objective, config.batch_size, runs);
    write_json(&args.out.join("report.json"), &run)?;
    write_text(
        &args.out.join("report.md"),
        &report::results_markdown(std::slice::from_ref(&run)),
    )?;
    log_line(&args.out, "train: done")?;
    Ok(run)
}

/// Scores a checkpoint on one split of a dataset.
pub fn cmd_eval(
    checkpoint: &Path,
    manifest: &Path,
    split: &str,
    out: &Path,
) -> Result<crate::eval::RecallReport> {
    let split: Split = serde_json::from_value(Value::String(split.to_string()))
        .map_err(|_| Error::Config(format!("unknown split `{split}` (train, val or test)")))?;
    let model = DualEncoder::load(checkpoint)?;
    let dataset = load_dataset(manifest)?;
    let report = evaluate_model(&model, dataset.split(split)?)?;
    write_text(&out.join("report.csv"), &report.to_csv())?;
    write_text(&out.join("report.txt"), &report.to_table())?;
    log_line(out, &format!("eval: {} on {split}", checkpoint.display()))?;
    Ok(report)
}

/// Runs a comparison grid and writes `results.csv`, `results.md`,
/// `runs.csv` and `curves.csv`. Fails only when every run failed.
pub fn cmd_compare(args: &Common, jobs: usize) -> Result<Vec<RunReport>> {
    let mut config: CompareConfig = load_config(&args.config, &args.overrides)?;
    if let Some(seed) = args.seed {
        config.train.seeds = vec![seed];
    }
    let dataset = resolve_dataset(&config.train.dataset, &args.config)?;
    check_dims(&config.train, &dataset)?;
    let cmp = config.comparison();
    log_line(
        &args.out,
        &format!(
            "compare: {} objectives x {} batch sizes x {} seeds, {jobs} jobs",
            cmp.objectives.len(),
            cmp.batch_sizes.len(),
            cmp.base.seeds.len()
        ),
    )?;
    let reports = run_comparison(&cmp, &dataset, jobs)?;
    write_text(
        &args.out.join("results.csv"),
        &report::results_csv(&reports),
    )?;
    write_text(&args.out.join("runs.csv"), &report::runs_csv(&reports))?;
    write_text(&args.out.join("curves.csv"), &report::curves_csv(&reports))?;
    write_text(
        &args.out.join("results.md"),
        &report::results_markdown(&reports),
    )?;
    log_line(&args.out, "compare: done")?;
    let total: usize = reports.iter().map(|r| r.runs.len()).sum();
    if reports.iter().all(|r| r.aggregate.is_none()) {
        return Err(Error::AllRunsFailed(total));
    }
    Ok(reports)
}

/// Dispatches a parsed command line; returns what to print on stdout.
pub fn run(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Generate(args) => Ok(format!("{}\n", cmd_generate(args)?.display())),
        Command::Validate { config } => cmd_validate(config),
        Command::Train(args) => Ok(report::results_markdown(&[cmd_train(args)?])),
        Command::Eval {
            checkpoint,
            config,
            split,
            out,
        } => Ok(cmd_eval(checkpoint, config, split, out)?.to_table()),
        Command::Compare { common, jobs } => {
            Ok(report::results_markdown(&cmd_compare(common, *jobs)?))
        }
    }
}
