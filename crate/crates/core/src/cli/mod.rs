//! Command-line surface. Every command writes `<out>/<command>.config.json`
//! with its resolved settings.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::error::{Error, Result};

mod commands;

pub use commands::{cmd_eval, cmd_preprocess, cmd_synth, cmd_train, cmd_triage};

pub const THREADS_ENV: &str = "CARP3D_THREADS";

#[derive(Debug, Parser)]
#[command(name = "carp3d", version, about = "2.5D slice risk scoring for 3D pathology volumes")]
pub struct Cli {
    /// Worker threads; falls back to $CARP3D_THREADS, then to all cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tile, normalize and toy-encode raw slices into a feature store.
    Preprocess(PreprocessArgs),
    /// Generate a planted-signal synthetic dataset.
    Synth(SynthArgs),
    /// Leave-one-patient-out training and out-of-fold predictions.
    Train(TrainArgs),
    /// AUC, best F2 and bootstrap intervals from a predictions TSV.
    Eval(EvalArgs),
    /// Depth risk profiles, top-k slices and their attention heatmaps.
    Triage(TriageArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct PreprocessArgs {
    /// Directory laid out as <patient>/<biopsy>/<slice_index>.craw.
    #[arg(long)]
    pub raw_dir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// TSV with columns patient_id, biopsy_id, slice_index, label.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, default_value_t = 128)]
    pub feature_dim: usize,
    #[arg(long, default_value_t = crate::preprocess::DEFAULT_PATCH_PX)]
    pub patch_px: usize,
    #[arg(long, default_value_t = crate::preprocess::DEFAULT_MIN_FOREGROUND)]
    pub min_foreground: f64,
    /// Axial distance between consecutive slice indices.
    #[arg(long, default_value_t = 1.0)]
    pub slice_pitch_um: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub patients: usize,
    #[arg(long, default_value_t = 1)]
    pub biopsies: usize,
    #[arg(long, default_value_t = 161)]
    pub slices: usize,
    #[arg(long, default_value_t = 1.0)]
    pub pitch_um: f64,
    #[arg(long, default_value_t = 16)]
    pub patches: usize,
    #[arg(long, default_value_t = 32)]
    pub feature_dim: usize,
    #[arg(long, default_value_t = 0.25)]
    pub signal_fraction: f64,
    #[arg(long, default_value_t = 3.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0.5)]
    pub positive_rate: f64,
    /// soi-signal or neighbor-only.
    #[arg(long, default_value = "soi-signal")]
    pub context: String,
    #[arg(long, default_value_t = 80.0)]
    pub band_half_width_um: f64,
    #[arg(long, default_value_t = 20.0)]
    pub soi_gap_um: f64,
    #[arg(long, default_value_t = 0.0)]
    pub soi_residual: f64,
    /// Write one unlabeled volume with signal between these depths instead
    /// of a cohort. Requires --planted-hi-um.
    #[arg(long, requires = "planted_hi_um")]
    pub planted_lo_um: Option<f64>,
    #[arg(long, requires = "planted_lo_um")]
    pub planted_hi_um: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// none, naive, average, rnn or weighted.
    #[arg(long, default_value = "weighted")]
    pub pooling: String,
    /// Neighbors per side; defaults to 0 for none and 2 otherwise.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long, default_value_t = crate::model::DEFAULT_HALF_RANGE_UM)]
    pub half_range_um: f64,
    #[arg(long, default_value_t = crate::model::DEFAULT_PITCH_UM)]
    pub pitch_um: f64,
    #[arg(long, default_value_t = crate::model::DEFAULT_EMBED_DIM)]
    pub embed_dim: usize,
    #[arg(long, default_value_t = crate::model::DEFAULT_ATTN_DIM)]
    pub attn_dim: usize,
    #[arg(long, default_value_t = crate::train::DEFAULT_EPOCHS)]
    pub epochs: usize,
    #[arg(long, default_value_t = crate::train::DEFAULT_LEARNING_RATE)]
    pub lr: f64,
    #[arg(long, default_value_t = crate::train::DEFAULT_BATCH_SIZE)]
    pub batch_size: usize,
    /// Also train one model on every labeled slice and save it as model.ckpt.
    #[arg(long)]
    pub fit_all: bool,
    /// Skip cross-validation (use with --fit-all).
    #[arg(long, requires = "fit_all")]
    pub no_loocv: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = crate::eval::DEFAULT_N_BOOT)]
    pub n_boot: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct TriageArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    #[arg(long, default_value_t = 5)]
    pub top_k: usize,
    /// Restrict to one volume, given as <patient>/<biopsy>.
    #[arg(long)]
    pub volume: Option<String>,
}

/// Thread count from the flag, then the environment, then rayon's default.
pub fn resolve_threads(flag: Option<usize>) -> Result<Option<usize>> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{THREADS_ENV}={v:?} is not a thread count"))),
        _ => Ok(None),
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let threads = resolve_threads(cli.threads)?;
    if threads == Some(0) {
        return Err(Error::Config("--threads must be >= 1".into()));
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Preprocess(a) => cmd_preprocess(a).map(|_| ()),
        Command::Synth(a) => cmd_synth(a).map(|_| ()),
        Command::Train(a) => cmd_train(a).map(|_| ()),
        Command::Eval(a) => cmd_eval(a).map(|_| ()),
        Command::Triage(a) => cmd_triage(a).map(|_| ()),
    })
}

/// Writes `<out>/<command>.config.json`. The thread count is left out: it
/// never changes any output.
pub(crate) fn write_config_echo(out: &Path, command: &str, value: &impl Serialize) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let path = out.join(format!("{command}.config.json"));
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}
