//! Command-line front end.
//!
//! Exit codes: 0 success, 2 invalid arguments or input, 3 IO failure,
//! 4 numerical abort. Reports go to stdout, diagnostics to stderr.

use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use pim_core::dataset::{self, SynthSpec, Tail};
use pim_core::pim::{self as driver, PimConfig};
use pim_core::{eval, AblationFlags, Constraint, InitStrategy, MarginalScope, ScoreKind};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::format::{self, Truth};
use crate::report::{self, Clock, Manifest, PartitionReport};
use crate::runner::Threaded;

#[derive(Debug, Parser)]
#[command(name = "pim", version, about = "Partition partially labeled feature sets into known and novel classes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic feature set with ground truth.
    Synth(SynthArgs),
    /// Partition a feature set into K clusters.
    Partition(PartitionArgs),
    /// Score a hard-label file against ground truth.
    Eval(EvalArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

/// A reproducible command together with its arguments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", content = "args", rename_all = "snake_case")]
pub enum Invocation {
    Synth(SynthArgs),
    Partition(PartitionArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailArg {
    Uniform,
    Power,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileFormat {
    Fmat,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    /// Total number of classes.
    #[arg(long, default_value_t = 6)]
    pub k: usize,
    /// Number of known classes (the first `k_old` classes).
    #[arg(long, default_value_t = 3)]
    pub k_old: usize,
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    #[arg(long, value_enum, default_value_t = TailArg::Uniform)]
    pub tail: TailArg,
    /// Power-law exponent for `--tail power`.
    #[arg(long, default_value_t = 1.5)]
    pub alpha: f64,
    /// Samples of the largest class.
    #[arg(long, default_value_t = 100)]
    pub samples_per_class: usize,
    /// Distance scale of the class means.
    #[arg(long, default_value_t = 6.0)]
    pub separation: f64,
    /// Per-coordinate standard deviation around each mean.
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0.5)]
    pub labeled_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = FileFormat::Fmat)]
    pub format: FileFormat,
    /// Output directory.
    #[arg(short, long)]
    #[serde(skip)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitArg {
    #[value(name = "ssrdm")]
    SsRdm,
    #[value(name = "sskmpp")]
    SsKmpp,
    #[value(name = "sskm")]
    SsKm,
}

impl From<InitArg> for InitStrategy {
    fn from(a: InitArg) -> Self {
        match a {
            InitArg::SsRdm => InitStrategy::SsRdm,
            InitArg::SsKmpp => InitStrategy::SsKmpp,
            InitArg::SsKm => InitStrategy::SsKm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreArg {
    Dot,
    #[value(name = "neg_sqdist")]
    NegSqdist,
}

impl From<ScoreArg> for ScoreKind {
    fn from(a: ScoreArg) -> Self {
        match a {
            ScoreArg::Dot => ScoreKind::Dot,
            ScoreArg::NegSqdist => ScoreKind::NegSqdist,
        }
    }
}

/// Loss-term ablations; the default is the full-Z marginal with the constraint on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Drop the cross-entropy constraint on labeled rows.
    #[value(name = "ce_off")]
    CeOff,
    /// Marginal entropy over the unlabeled rows only.
    #[value(name = "marginal_zu")]
    MarginalZu,
    /// Drop the marginal entropy term.
    #[value(name = "marginal_off")]
    MarginalOff,
}

pub fn ablation_flags(list: &[Ablation]) -> Result<AblationFlags> {
    let mut flags = AblationFlags::default();
    let mut marginal_set = false;
    for a in list {
        match a {
            Ablation::CeOff => flags.constraint = Constraint::Off,
            Ablation::MarginalZu | Ablation::MarginalOff => {
                if marginal_set {
                    return Err(CliError::Usage("--ablate accepts at most one marginal_* entry".into()));
                }
                marginal_set = true;
                flags.marginal = if *a == Ablation::MarginalZu {
                    MarginalScope::Unlabeled
                } else {
                    MarginalScope::Off
                };
            }
        }
    }
    Ok(flags)
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct PartitionArgs {
    /// Feature file (`.csv` or `.fmat`).
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory.
    #[arg(short, long)]
    #[serde(skip)]
    pub output: PathBuf,
    /// Number of clusters.
    #[arg(long, conflicts_with = "estimate_k")]
    pub k: Option<usize>,
    /// Expected number of known classes; checked against the input file.
    #[arg(long)]
    pub k_old: Option<usize>,
    /// Estimate the number of clusters before partitioning.
    #[arg(long)]
    pub estimate_k: bool,
    /// Exclusive upper bound of the class-count search (default 4·K_old).
    #[arg(long)]
    pub k_max: Option<usize>,
    /// Use a single λ instead of a grid.
    #[arg(long, conflicts_with = "lambda_grid")]
    pub lambda: Option<f64>,
    /// Comma-separated λ values (default: 19 values from 0.05 to 1).
    #[arg(long, value_delimiter = ',')]
    pub lambda_grid: Option<Vec<f64>>,
    /// Adam epochs for the λ trials and the final fit.
    #[arg(long, default_value_t = 1000)]
    pub epochs: usize,
    /// Adam epochs per candidate during class-count estimation.
    #[arg(long, default_value_t = 500)]
    pub epochs_ksearch: usize,
    #[arg(long, value_enum, default_value_t = InitArg::SsKm)]
    pub init: InitArg,
    /// Comma-separated loss-term ablations.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub ablate: Vec<Ablation>,
    #[arg(long, value_enum, default_value_t = ScoreArg::Dot)]
    pub score: ScoreArg,
    /// Keep features as loaded instead of L2-normalizing each row.
    #[arg(long)]
    pub no_normalize: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for the λ search (default: available CPUs).
    #[arg(long, env = "PIM_THREADS")]
    #[serde(skip)]
    pub threads: Option<NonZeroUsize>,
    /// Also write the per-epoch loss of the final fit.
    #[arg(long)]
    pub trace: bool,
    /// Ground-truth sidecar; adds accuracy on the unlabeled rows to the report.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Also write the trained prototypes.
    #[arg(long)]
    pub save_model: bool,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Hard-label CSV written by `partition`.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth sidecar.
    #[arg(long)]
    pub truth: PathBuf,
    /// JSON with a `k_hat` field, or a partition report with a class-count estimate.
    #[arg(long)]
    pub khat: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    /// `manifest.json` or `report.json` of an earlier run.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory.
    #[arg(short, long)]
    pub output: PathBuf,
    /// Worker threads for the λ search.
    #[arg(long, env = "PIM_THREADS")]
    pub threads: Option<NonZeroUsize>,
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn path_string(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let mut clock = Clock::start();
    let spec = SynthSpec {
        k_total: args.k,
        k_old: args.k_old,
        dim: args.dim,
        samples_per_class_base: args.samples_per_class,
        tail: match args.tail {
            TailArg::Uniform => Tail::Uniform,
            TailArg::Power => Tail::Power { alpha: args.alpha },
        },
        separation: args.separation,
        noise_sigma: args.noise,
        labeled_fraction: args.labeled_fraction,
        seed: args.seed,
    };
    spec.validate()?;
    let (fs, classes) = clock.time("generate", || dataset::generate_synthetic(&spec))?;
    let truth = Truth {
        k_total: args.k,
        k_old: args.k_old,
        labeled: (0..fs.len()).map(|i| fs.is_labeled(i)).collect(),
        labels: classes,
    };
    create_dir(&args.output)?;
    let features = match args.format {
        FileFormat::Fmat => "features.fmat",
        FileFormat::Csv => "features.csv",
    };
    format::save_features(&args.output.join(features), &fs)?;
    format::write_json(&args.output.join(report::TRUTH_FILE), &truth)?;
    let mut manifest = Manifest::new(Invocation::Synth(args.clone()), args.seed);
    manifest.outputs = vec![features.into(), report::TRUTH_FILE.into()];
    format::write_json(&args.output.join(report::MANIFEST_FILE), &manifest)?;
    format::write_json(&args.output.join(report::TIMINGS_FILE), &clock.finish())?;
    eprintln!("wrote {} rows to {}", fs.len(), args.output.display());
    Ok(())
}

fn pim_config(args: &PartitionArgs) -> Result<PimConfig> {
    let mut config = PimConfig {
        epochs_partition: args.epochs,
        epochs_ksearch: args.epochs_ksearch,
        init_strategy: args.init.into(),
        flags: ablation_flags(&args.ablate)?,
        k_max: args.k_max,
        score: args.score.into(),
        seed: args.seed,
        ..PimConfig::default()
    };
    if let Some(l) = args.lambda {
        config.lambda_grid = vec![l];
    } else if let Some(g) = &args.lambda_grid {
        config.lambda_grid = g.clone();
    }
    config.validate()?;
    Ok(config)
}

pub fn partition(args: &PartitionArgs) -> Result<PartitionReport> {
    let mut clock = Clock::start();
    let config = pim_config(args)?;
    if args.k.is_none() && !args.estimate_k {
        return Err(CliError::Usage("either --k or --estimate-k is required".into()));
    }
    let mut fs = clock.time("load", || format::load_features(&args.input))?;
    if let Some(k_old) = args.k_old {
        if k_old != fs.k_old() {
            return Err(CliError::Usage(format!(
                "--k-old {k_old} does not match the input file (k_old={})",
                fs.k_old()
            )));
        }
    }
    if !args.no_normalize {
        fs = fs.l2_normalized()?;
    }
    let truth = args.truth.as_deref().map(format::load_truth).transpose()?;
    if let Some(t) = &truth {
        if t.labels.len() != fs.len() {
            return Err(CliError::Usage(format!(
                "truth has {} rows, features have {}",
                t.labels.len(),
                fs.len()
            )));
        }
    }
    let runner = match args.threads {
        Some(t) => Threaded::new(t),
        None => Threaded::available(),
    };

    let k_estimate = if args.estimate_k {
        let est = clock.time("estimate_k", || driver::estimate_k(&fs, &config))?;
        eprintln!("estimated K = {} from {} fits", est.k_hat, est.fits);
        Some(est)
    } else {
        None
    };
    let k = k_estimate.as_ref().map_or_else(|| args.k.expect("checked above"), |e| e.k_hat);
    let run = clock.time("partition", || {
        driver::partition(&fs, k, &config, truth.as_ref().map(|t| t.labels.as_slice()), &runner)
    })?;
    let mut eval_report = run.report.clone();
    if let (Some(r), Some(est), Some(t)) = (eval_report.as_mut(), &k_estimate, &truth) {
        r.k_hat = Some(est.k_hat);
        r.err = Some(eval::class_count_error(est.k_hat, t.k_total)?);
    }
    let mut cluster_sizes = vec![0usize; k];
    for &l in &run.labels {
        cluster_sizes[l] += 1;
    }

    create_dir(&args.output)?;
    let mut outputs = vec![report::REPORT_FILE.to_owned(), report::LABELS_FILE.to_owned()];
    format::save_labels(&args.output.join(report::LABELS_FILE), &run.labels)?;
    if args.trace {
        format::save_trace(&args.output.join(report::TRACE_FILE), &run.trace)?;
        outputs.push(report::TRACE_FILE.into());
    }
    if args.save_model {
        format::save_model(&args.output.join(report::MODEL_FILE), &run.model)?;
        outputs.push(report::MODEL_FILE.into());
    }
    let mut manifest = Manifest::new(Invocation::Partition(args.clone()), args.seed);
    manifest.inputs = std::iter::once(&args.input)
        .chain(args.truth.as_ref())
        .map(|p| path_string(p))
        .collect();
    manifest.outputs = outputs;
    manifest.config = Some(config);
    let report = PartitionReport {
        manifest: manifest.clone(),
        n: fs.len(),
        dim: fs.dim(),
        k_old: fs.k_old(),
        k,
        k_estimate,
        per_lambda: run.search.per_lambda,
        lambda_opt: run.search.lambda_opt,
        labeled_acc: run.labeled_acc,
        final_loss: run.final_loss,
        cluster_sizes,
        eval: eval_report,
    };
    format::write_json(&args.output.join(report::REPORT_FILE), &report)?;
    format::write_json(&args.output.join(report::MANIFEST_FILE), &manifest)?;
    format::write_json(&args.output.join(report::TIMINGS_FILE), &clock.finish())?;
    Ok(report)
}

fn k_hat_from(path: &Path) -> Result<usize> {
    let v: serde_json::Value = format::read_json(path)?;
    v.get("k_hat")
        .or_else(|| v.get("k_estimate").and_then(|e| e.get("k_hat")))
        .and_then(serde_json::Value::as_u64)
        .map(|k| k as usize)
        .ok_or_else(|| CliError::parse(path, "no integer `k_hat` or `k_estimate.k_hat` field"))
}

pub fn eval(args: &EvalArgs) -> Result<pim_core::EvalReport> {
    let pred = format::load_labels(&args.pred)?;
    let truth = format::load_truth(&args.truth)?;
    if pred.len() != truth.labels.len() {
        return Err(CliError::Usage(format!(
            "{} predictions but {} truth rows",
            pred.len(),
            truth.labels.len()
        )));
    }
    let rows: Vec<usize> = (0..pred.len()).filter(|&i| !truth.labeled[i]).collect();
    let p: Vec<usize> = rows.iter().map(|&i| pred[i]).collect();
    let t: Vec<usize> = rows.iter().map(|&i| truth.labels[i]).collect();
    let mut r = eval::acc_partition(&p, &t, truth.k_old)?;
    if let Some(path) = &args.khat {
        let k_hat = k_hat_from(path)?;
        r.k_hat = Some(k_hat);
        r.err = Some(eval::class_count_error(k_hat, truth.k_total)?);
    }
    Ok(r)
}

/// Reads the manifest of an earlier run from `manifest.json` or a report.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let v: serde_json::Value = format::read_json(path)?;
    let m = v.get("manifest").cloned().unwrap_or(v);
    serde_json::from_value(m).map_err(|e| CliError::parse(path, format!("not a run manifest: {e}")))
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(value).map_err(|e| CliError::Usage(e.to_string()))?;
    println!("{s}");
    Ok(())
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth(&a),
        Command::Partition(a) => print_json(&partition(&a)?),
        Command::Eval(a) => print_json(&eval(&a)?),
        Command::Replay(a) => {
            let manifest = load_manifest(&a.manifest)?;
            match manifest.invocation {
                Invocation::Synth(mut s) => {
                    s.output = a.output;
                    synth(&s)
                }
                Invocation::Partition(mut p) => {
                    p.output = a.output;
                    p.threads = a.threads;
                    print_json(&partition(&p)?)
                }
            }
        }
    }
}

/// Parses `std::env::args`, runs the command and returns the process exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
