//! Argument definitions and `--config` file expansion.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{ArgAction, CommandFactory, Parser, Subcommand};
use evidra_core::baselines::UncertaintyMethod;
use evidra_core::datagen::OodKind;
use evidra_core::trainer::Objective;

use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "evidra", version, about = "Evidential open-set classification workbench")]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic benchmark: train/val/test splits, OOD sets and a manifest.
    GenData(GenDataArgs),
    /// Train a model and write a checkpoint plus a line-delimited training log.
    Train(TrainArgs),
    /// Select the uncertainty threshold on a validation file and store it in the checkpoint.
    Calibrate(CalibrateArgs),
    /// Evaluate classification metrics, optionally after referring uncertain samples.
    Eval(EvalArgs),
    /// Detection rates and uncertainty histograms on out-of-distribution files.
    OodEval(OodEvalArgs),
    /// Side-by-side table across uncertainty methods.
    Compare(CompareArgs),
}

#[derive(Debug, clap::Args)]
#[command(args_override_self = true)]
pub struct GenDataArgs {
    /// key=value file supplying defaults for any flag of this command.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "data")]
    pub out_dir: PathBuf,
    /// Number of classes.
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    #[arg(long, default_value_t = 500)]
    pub n_per_class: usize,
    /// Radius of the circle the class centres sit on.
    #[arg(long, default_value_t = 4.0)]
    pub radius: f64,
    #[arg(long, default_value_t = 0.9)]
    pub sigma: f64,
    /// Rows per OOD file.
    #[arg(long, default_value_t = 500)]
    pub n_ood: usize,
    #[arg(long, value_delimiter = ',', default_value = "far_cluster,ring")]
    pub ood_kinds: Vec<OodKind>,
    /// Also write `test_unseen.csv`: same centres, wider clusters.
    #[arg(long)]
    pub unseen: bool,
    #[arg(long, default_value_t = 1.5)]
    pub unseen_sigma: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Debug, clap::Args)]
#[command(args_override_self = true)]
pub struct TrainArgs {
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub train: PathBuf,
    /// Tracks per-epoch validation accuracy in the log.
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Training log path; defaults to the checkpoint path with `.log.jsonl`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, default_value = "tun")]
    pub objective: Objective,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub anneal_epochs: Option<usize>,
    /// Parameter snapshots kept for the ensemble baseline.
    #[arg(long)]
    pub snapshots: Option<usize>,
    #[arg(long, value_delimiter = ',', default_value = "32,32")]
    pub hidden: Vec<usize>,
    /// Train-time dropout; needed by the mc_drop method.
    #[arg(long, default_value_t = 0.0)]
    pub dropout: f64,
    /// Class count; defaults to the largest label plus one.
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

/// Scorer parameters shared by the evaluating commands.
#[derive(Debug, Clone, clap::Args)]
pub struct ScorerArgs {
    /// Uncertainty method; defaults to uios for evidential models, entropy otherwise.
    #[arg(long)]
    pub method: Option<UncertaintyMethod>,
    /// Passes for mc_drop and tta.
    #[arg(long)]
    pub passes: Option<usize>,
    /// Overrides the checkpoint's dropout rate for mc_drop.
    #[arg(long)]
    pub mc_dropout: Option<f64>,
    #[arg(long)]
    pub jitter_sigma: Option<f64>,
    #[arg(long)]
    pub scorer_seed: Option<u64>,
}

#[derive(Debug, clap::Args)]
#[command(args_override_self = true)]
pub struct CalibrateArgs {
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub val: PathBuf,
    #[command(flatten)]
    pub scorer: ScorerArgs,
    /// Weight on TPR in the selection objective.
    #[arg(long, default_value_t = 2.0)]
    pub tpr_weight: f64,
    /// Write the updated checkpoint here instead of in place.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Report with the full objective curve.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
#[command(args_override_self = true)]
pub struct EvalArgs {
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[command(flatten)]
    pub scorer: ScorerArgs,
    /// Also report metrics after referring samples with u >= theta.
    #[arg(long)]
    pub thresholded: bool,
    /// Report path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
#[command(args_override_self = true)]
pub struct OodEvalArgs {
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// OOD file; repeat for several.
    #[arg(long, required = true)]
    pub ood: Vec<PathBuf>,
    #[command(flatten)]
    pub scorer: ScorerArgs,
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
#[command(args_override_self = true)]
pub struct CompareArgs {
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// `method=path` of a checkpoint calibrated for that method; repeat per method.
    #[arg(long = "checkpoint", required = true, value_name = "METHOD=PATH")]
    pub checkpoints: Vec<String>,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub ood: Vec<PathBuf>,
    /// Measure wall-clock inference time per sample.
    #[arg(long)]
    pub timing: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_config_file(text: &str) -> CliResult<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| CliError::Usage(format!("config line {}: expected key=value, got {line:?}", i + 1)))?;
        pairs.push((k.trim().replace('_', "-"), v.trim().to_string()));
    }
    Ok(pairs)
}

fn read_config(path: &Path) -> CliResult<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_config_file(&text).map_err(|e| e.context(path.display()))
}

/// Inserts the flags from a `--config` file ahead of the command-line flags,
/// so that flags given on the command line win.
pub fn expand_config(argv: Vec<OsString>) -> CliResult<Vec<OsString>> {
    let Some(sub_pos) = argv.iter().skip(1).position(|a| !a.to_string_lossy().starts_with('-')).map(|p| p + 1) else {
        return Ok(argv);
    };
    let mut config_path = None;
    for (i, a) in argv.iter().enumerate().skip(sub_pos + 1) {
        let s = a.to_string_lossy();
        if s == "--config" {
            config_path = argv.get(i + 1).map(PathBuf::from);
        } else if let Some(p) = s.strip_prefix("--config=") {
            config_path = Some(PathBuf::from(p));
        }
    }
    let Some(path) = config_path else {
        return Ok(argv);
    };

    let command = Cli::command();
    let sub_name = argv[sub_pos].to_string_lossy().into_owned();
    let Some(sub) = command.find_subcommand(&sub_name) else {
        return Ok(argv);
    };
    let mut injected: Vec<OsString> = Vec::new();
    for (key, value) in read_config(&path)? {
        if key == "config" {
            return Err(CliError::Usage(format!("{}: nested config files are not supported", path.display())));
        }
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()))
            .ok_or_else(|| CliError::Usage(format!("{}: unknown key {key:?} for `{sub_name}`", path.display())))?;
        if arg.get_action().takes_values() {
            injected.push(format!("--{key}").into());
            injected.push(value.into());
        } else {
            let on: bool = value.parse().map_err(|_| CliError::Usage(format!("{}: {key} expects true or false, got {value:?}", path.display())))?;
            if on {
                injected.push(format!("--{key}").into());
            }
        }
    }
    let mut out = argv[..=sub_pos].to_vec();
    out.extend(injected);
    out.extend_from_slice(&argv[sub_pos + 1..]);
    Ok(out)
}
