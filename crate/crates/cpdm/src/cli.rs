//! The `cpdm` command line. [`run`] returns the process exit code:
//! 0 on success, 1 on runtime failure, 2 on usage errors.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, CommandFactory, Parser, Subcommand};
use cpdm_core::NoiseSchedule;

use crate::checkpoint::{resolve_checkpoint, Checkpoint};
use crate::config::RunConfig;
use crate::data::{self, DatasetManifest};
use crate::{enhance, eval, train};

#[derive(Debug, Parser)]
#[command(
    name = "cpdm",
    version,
    about = "Conditional diffusion for underwater image enhancement"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a procedural paired dataset (raw/, ref/, manifest.json).
    MakeSynthetic(MakeSyntheticArgs),
    /// Train a noise-prediction model on a paired dataset.
    Train(TrainArgs),
    /// Enhance raw images with a trained checkpoint.
    Enhance(EnhanceArgs),
    /// Score enhanced images against references (PSNR, SSIM, MSE).
    Eval(EvalArgs),
    /// Print the noise schedule as CSV: t,beta,alpha_bar,sigma.
    InspectSchedule(ScheduleArgs),
}

#[derive(Debug, Args)]
pub struct MakeSyntheticArgs {
    /// Output dataset root.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Number of pairs.
    #[arg(long)]
    pub n: Option<usize>,
    /// Image side length in pixels.
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Put the last N pairs in the `test` split.
    #[arg(long)]
    pub holdout: Option<usize>,
    /// Relative per-image spread of the degradation parameters, in [0, 1).
    #[arg(long)]
    pub jitter: Option<f64>,
    /// Replace an existing dataset at --out.
    #[arg(long)]
    pub force: bool,
    /// JSON file of dotted keys (`synth.*`, `paths.out`); flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset root containing manifest.json.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Directory for checkpoints, train_log.csv and run_config.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Dataset split to train on.
    #[arg(long, default_value = "train")]
    pub split: String,
    /// Total optimization steps (0 writes the initial parameters).
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Diffusion length T.
    #[arg(long)]
    pub timesteps: Option<usize>,
    #[arg(long)]
    pub beta_start: Option<f64>,
    #[arg(long)]
    pub beta_end: Option<f64>,
    #[arg(long)]
    pub base_channels: Option<usize>,
    /// Comma-separated channel multipliers, one per resolution level.
    #[arg(long, value_delimiter = ',')]
    pub channel_mult: Option<Vec<usize>>,
    #[arg(long)]
    pub blocks_per_level: Option<usize>,
    #[arg(long)]
    pub time_embed_dim: Option<usize>,
    /// Drop the y0 - x_t input (model A/B).
    #[arg(long)]
    pub no_diff_cond: bool,
    /// Drop the content compensation module (model A/C).
    #[arg(long)]
    pub no_ccm: bool,
    /// Continue from a checkpoint (a step-* directory or a run directory).
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// JSON file of dotted keys (`model.*`, `train.*`, `paths.*`); flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EnhanceArgs {
    /// Checkpoint directory, or a training output directory (newest step).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Directory of PNGs, or a dataset root (its raw images are used).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// With a dataset root as input: only this split.
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Sampling length; must equal the checkpoint's T (default: the checkpoint's).
    #[arg(long)]
    pub timesteps: Option<usize>,
    /// Also save every K-th intermediate under <out>/trajectory/<id>/.
    #[arg(long, value_name = "K")]
    pub trajectory_every: Option<usize>,
    /// Resize inputs to SIZE x SIZE (default: the training image size).
    #[arg(long)]
    pub size: Option<usize>,
    /// JSON file of dotted keys (`sample.*`, `paths.*`); flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of enhanced PNGs named <id>.png.
    #[arg(long)]
    pub enhanced: Option<PathBuf>,
    /// Directory of reference PNGs with matching names.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Dataset root whose manifest supplies ids and reference paths.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// With --manifest: only this split.
    #[arg(long)]
    pub split: Option<String>,
    /// Label for the report.
    #[arg(long, default_value = "dataset")]
    pub dataset_name: String,
    /// Also write the CSV to this file.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// JSON file of dotted keys (`paths.enhanced`, `paths.reference`); flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    #[arg(long)]
    pub timesteps: Option<usize>,
    #[arg(long)]
    pub beta_start: Option<f64>,
    #[arg(long)]
    pub beta_end: Option<f64>,
    /// JSON file of dotted keys (`train.timesteps`, `train.beta_*`); flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Bad invocation (exit 2) or failure while running (exit 1).
#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<crate::Error> for Failure {
    fn from(e: crate::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

type Outcome = std::result::Result<(), Failure>;

fn usage(sub: &str, msg: impl std::fmt::Display) -> Failure {
    let mut cmd = Cli::command();
    cmd.build();
    let usage = cmd
        .find_subcommand_mut(sub)
        .map(|c| c.render_usage().to_string())
        .unwrap_or_default();
    Failure::Usage(format!(
        "{msg}\n\n{usage}\n\nFor more information, try '--help'."
    ))
}

fn require<T: Clone>(sub: &str, flag: &str, v: &Option<T>) -> Result<T, Failure> {
    v.clone()
        .ok_or_else(|| usage(sub, format!("error: the argument '--{flag}' is required")))
}

fn base_config(sub: &str, path: &Option<PathBuf>) -> Result<RunConfig, Failure> {
    Ok(base_config_keys(sub, path)?.0)
}

/// The merged config and the keys the file set explicitly.
fn base_config_keys(
    sub: &str,
    path: &Option<PathBuf>,
) -> Result<(RunConfig, Vec<String>), Failure> {
    match path {
        Some(p) => {
            let flat = RunConfig::load_flat(p).map_err(|e| usage(sub, format!("error: {e}")))?;
            let cfg = RunConfig::from_flat(&flat).map_err(|e| usage(sub, format!("error: {e}")))?;
            Ok((cfg, flat.keys().cloned().collect()))
        }
        None => Ok((RunConfig::default(), Vec::new())),
    }
}

fn set<T: Clone>(slot: &mut T, v: &Option<T>) {
    if let Some(v) = v {
        *slot = v.clone();
    }
}

/// Parse `args` (including the program name) and run the subcommand.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match &cli.command {
        Command::MakeSynthetic(a) => cmd_make_synthetic(a),
        Command::Train(a) => cmd_train(a),
        Command::Enhance(a) => cmd_enhance(a),
        Command::Eval(a) => cmd_eval(a),
        Command::InspectSchedule(a) => cmd_inspect_schedule(a),
    };
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("{msg}");
            2
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn log_config(cfg: &RunConfig) {
    log::info!("resolved configuration: {}", cfg.to_json_compact());
}

fn cmd_make_synthetic(a: &MakeSyntheticArgs) -> Outcome {
    const SUB: &str = "make-synthetic";
    let mut cfg = base_config(SUB, &a.config)?;
    set(&mut cfg.paths.out, &a.out.clone().map(Some));
    set(&mut cfg.synth.n, &a.n);
    set(&mut cfg.synth.size, &a.size);
    set(&mut cfg.synth.seed, &a.seed);
    set(&mut cfg.synth.holdout, &a.holdout);
    set(&mut cfg.synth.jitter, &a.jitter);
    let out = require(SUB, "out", &cfg.paths.out)?;
    cfg.synth
        .validate()
        .map_err(|e| usage(SUB, format!("error: {e}")))?;
    log_config(&cfg);
    let m = data::make_synthetic_dataset(&out, &cfg.synth, a.force)?;
    cfg.save_into(&out)?;
    println!("{}", out.join(data::MANIFEST_FILE).display());
    log::info!("{} pairs", m.pairs.len());
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Outcome {
    const SUB: &str = "train";
    let mut cfg = base_config(SUB, &a.config)?;
    set(&mut cfg.paths.data, &a.data.clone().map(Some));
    set(&mut cfg.paths.out, &a.out.clone().map(Some));
    set(&mut cfg.paths.resume, &a.resume.clone().map(Some));
    let t = &mut cfg.train;
    set(&mut t.total_steps, &a.steps);
    set(&mut t.batch_size, &a.batch_size);
    set(&mut t.learning_rate, &a.lr);
    set(&mut t.seed, &a.seed);
    set(&mut t.checkpoint_every, &a.checkpoint_every);
    set(&mut t.timesteps, &a.timesteps);
    set(&mut t.beta_start, &a.beta_start);
    set(&mut t.beta_end, &a.beta_end);
    let m = &mut cfg.model;
    set(&mut m.base_channels, &a.base_channels);
    set(&mut m.channel_multipliers, &a.channel_mult);
    set(&mut m.blocks_per_level, &a.blocks_per_level);
    set(&mut m.time_embed_dim, &a.time_embed_dim);
    if a.no_diff_cond {
        m.use_difference_condition = false;
    }
    if a.no_ccm {
        m.use_ccm = false;
    }
    cfg.sample.timesteps = cfg.train.timesteps;
    let data_root = require(SUB, "data", &cfg.paths.data)?;
    let out = require(SUB, "out", &cfg.paths.out)?;
    let bad = |e: cpdm_core::Error| usage(SUB, format!("error: {e}"));
    cfg.model.validate().map_err(bad)?;
    cfg.train.validate().map_err(bad)?;
    cfg.train.schedule().map_err(bad)?;
    log_config(&cfg);

    let manifest = DatasetManifest::load(&data_root)?;
    let dataset = data::load_dataset(&manifest, Some(&a.split))?;
    log::info!(
        "training variant {:?} on {} pairs of {}",
        cfg.model.variant(),
        dataset.len(),
        data_root.display()
    );
    let resume = cfg
        .paths
        .resume
        .as_deref()
        .map(resolve_checkpoint)
        .transpose()?;
    cfg.save_into(&out)?;
    let outcome = train::train_loop(&dataset, &cfg.model, &cfg.train, &out, resume.as_deref())?;
    if let Some(r) = outcome.reports.last() {
        log::info!("final loss {:.5} at step {}", r.loss, r.step);
    }
    println!("{}", outcome.final_checkpoint.display());
    Ok(())
}

fn cmd_enhance(a: &EnhanceArgs) -> Outcome {
    const SUB: &str = "enhance";
    let (mut cfg, file_keys) = base_config_keys(SUB, &a.config)?;
    set(&mut cfg.paths.checkpoint, &a.checkpoint.clone().map(Some));
    set(&mut cfg.paths.input, &a.input.clone().map(Some));
    set(&mut cfg.paths.out, &a.out.clone().map(Some));
    set(&mut cfg.sample.seed, &a.seed);
    if let Some(k) = a.trajectory_every {
        if k == 0 {
            return Err(usage(SUB, "error: --trajectory-every must be at least 1"));
        }
        cfg.sample.record_trajectory = true;
        cfg.sample.trajectory_every = k;
    }
    let ck_path = require(SUB, "checkpoint", &cfg.paths.checkpoint)?;
    let input = require(SUB, "input", &cfg.paths.input)?;
    let out = require(SUB, "out", &cfg.paths.out)?;

    let ck_path = resolve_checkpoint(&ck_path)?;
    let ck = Checkpoint::load(&ck_path)?;
    // Sampling length follows the checkpoint unless set explicitly.
    if !file_keys.iter().any(|k| k == "sample.timesteps") {
        cfg.sample.timesteps = ck.manifest.train.timesteps;
    }
    set(&mut cfg.sample.timesteps, &a.timesteps);
    cfg.model = ck.manifest.model.clone();
    cfg.train = ck.manifest.train.clone();
    log_config(&cfg);

    let inputs = enhance::collect_inputs(&input, a.split.as_deref())?;
    let size = a.size.map(|s| (s, s));
    let written = enhance::enhance(&ck, &inputs, &out, &cfg.sample, size)
        .with_context(|| format!("enhancing with checkpoint {}", ck_path.display()))?;
    cfg.save_into(&out)?;
    println!("{} images -> {}", written.len(), out.display());
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Outcome {
    const SUB: &str = "eval";
    let mut cfg = base_config(SUB, &a.config)?;
    set(&mut cfg.paths.enhanced, &a.enhanced.clone().map(Some));
    set(&mut cfg.paths.reference, &a.reference.clone().map(Some));
    set(&mut cfg.paths.data, &a.manifest.clone().map(Some));
    let enhanced = require(SUB, "enhanced", &cfg.paths.enhanced)?;
    let manifest = match (
        &cfg.paths.data,
        a.manifest.is_some() || cfg.paths.reference.is_none(),
    ) {
        (Some(root), true) => Some(DatasetManifest::load(root)?),
        _ => None,
    };
    if manifest.is_none() && cfg.paths.reference.is_none() {
        return Err(usage(
            SUB,
            "error: one of '--reference' or '--manifest' is required",
        ));
    }
    log_config(&cfg);
    let report = eval::evaluate_dirs(
        &a.dataset_name,
        &enhanced,
        cfg.paths.reference.as_deref(),
        manifest.as_ref().map(|m| (m, a.split.as_deref())),
    )?;
    let csv = eval::to_csv(&report);
    if let Some(path) = &a.csv {
        write_file(path, &csv)?;
    }
    let mut stdout = std::io::stdout().lock();
    write!(stdout, "{csv}\n{}", eval::to_table(&report)).context("writing to stdout")?;
    Ok(())
}

fn cmd_inspect_schedule(a: &ScheduleArgs) -> Outcome {
    const SUB: &str = "inspect-schedule";
    let mut cfg = base_config(SUB, &a.config)?;
    set(&mut cfg.train.timesteps, &a.timesteps);
    set(&mut cfg.train.beta_start, &a.beta_start);
    set(&mut cfg.train.beta_end, &a.beta_end);
    let s = cfg
        .train
        .schedule()
        .map_err(|e| usage(SUB, format!("error: {e}")))?;
    let mut stdout = std::io::stdout().lock();
    write!(stdout, "{}", schedule_csv(&s)).context("writing to stdout")?;
    Ok(())
}

/// `t,beta,alpha_bar,sigma` for `t = 1..=T`, where `sigma` is the posterior
/// variance used by the sampler.
pub fn schedule_csv(s: &NoiseSchedule) -> String {
    let mut out = String::from("t,beta,alpha_bar,sigma\n");
    for (i, ((b, ab), v)) in s
        .betas()
        .iter()
        .zip(s.alpha_bars())
        .zip(s.posterior_variances())
        .enumerate()
    {
        out.push_str(&format!("{},{},{},{}\n", i + 1, b, ab, v));
    }
    out
}

fn write_file(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| dir.display().to_string())?;
    }
    std::fs::write(path, text).with_context(|| path.display().to_string())
}
