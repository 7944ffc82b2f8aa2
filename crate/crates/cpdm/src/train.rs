//! The training loop: repeated [`Trainer::step`]s with a CSV log and
//! periodic checkpoints, resumable from any checkpoint that kept optimizer
//! state.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use cpdm_core::trainer::{PairedSample, TrainConfig, TrainStepReport, Trainer};
use cpdm_core::{ModelConfig, ModelParameters, Network};

use crate::checkpoint::{step_dir_name, Checkpoint};
use crate::error::{Error, Result};

pub const LOG_FILE: &str = "train_log.csv";
pub const LOG_HEADER: &str = "step,loss,grad_norm,wall_time_ms";

#[derive(Debug)]
pub struct TrainOutcome {
    pub params: ModelParameters<f32>,
    pub reports: Vec<TrainStepReport>,
    pub final_checkpoint: PathBuf,
}

/// Train on `dataset` until `cfg.total_steps` updates have been taken,
/// writing `step-XXXXXXXX` checkpoints and `train_log.csv` into `out_dir`.
///
/// With `resume`, parameters and optimizer state come from that checkpoint,
/// whose model and training settings (other than `total_steps` and
/// `checkpoint_every`) must match.
pub fn train_loop(
    dataset: &[PairedSample<f32>],
    model: &ModelConfig,
    cfg: &TrainConfig,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<TrainOutcome> {
    let first = dataset
        .first()
        .ok_or_else(|| Error::Dataset("training set is empty".into()))?;
    let image_size = Some([first.x0.height(), first.x0.width()]);
    let net = Network::new(model)?;
    let mut trainer = Trainer::new(
        net.clone(),
        cfg.clone(),
        net.init_parameters::<f32>(cfg.seed),
    )?;
    if let Some(path) = resume {
        let ck = Checkpoint::load(path)?;
        check_resumable(path, &ck, model, cfg)?;
        trainer.params = ck.params;
        trainer.opt = ck.opt.expect("checked above");
    }
    std::fs::create_dir_all(out_dir).map_err(Error::io(out_dir))?;
    let mut log = open_log(&out_dir.join(LOG_FILE), trainer.step_count())?;

    let save = |t: &Trainer<f32>| -> Result<PathBuf> {
        let dir = out_dir.join(step_dir_name(t.step_count()));
        if !dir.exists() {
            Checkpoint::new(
                model,
                cfg,
                image_size,
                t.params.clone(),
                Some(t.opt.clone()),
                t.step_count(),
            )?
            .save(&dir)?;
            log::info!("wrote {}", dir.display());
        }
        Ok(dir)
    };

    let mut reports = Vec::new();
    let mut last = None;
    let log_every = (cfg.total_steps / 20).max(1);
    while trainer.step_count() < cfg.total_steps {
        let start = Instant::now();
        let mut report = trainer.step(dataset)?;
        report.wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
        writeln!(
            log,
            "{},{},{},{:.3}",
            report.step, report.loss, report.grad_norm, report.wall_time_ms
        )
        .map_err(Error::io(out_dir.join(LOG_FILE)))?;
        if report.step % log_every == 0 {
            log::info!(
                "step {}/{} loss {:.5} grad_norm {:.4}",
                report.step,
                cfg.total_steps,
                report.loss,
                report.grad_norm
            );
        }
        reports.push(report);
        if report.step % cfg.checkpoint_every == 0 {
            log.flush().map_err(Error::io(out_dir.join(LOG_FILE)))?;
            last = Some(save(&trainer)?);
        }
    }
    log.flush().map_err(Error::io(out_dir.join(LOG_FILE)))?;
    let final_checkpoint = match last {
        Some(dir) if trainer.step_count() % cfg.checkpoint_every == 0 => dir,
        _ => save(&trainer)?,
    };
    Ok(TrainOutcome {
        params: trainer.params,
        reports,
        final_checkpoint,
    })
}

fn check_resumable(
    path: &Path,
    ck: &Checkpoint,
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<()> {
    let bad = |reason: String| Error::Checkpoint {
        path: path.to_path_buf(),
        reason,
    };
    if ck.opt.is_none() {
        return Err(bad("no optimizer state to resume from".into()));
    }
    if &ck.manifest.model != model {
        return Err(bad("model configuration differs from this run".into()));
    }
    let same = TrainConfig {
        total_steps: cfg.total_steps,
        checkpoint_every: cfg.checkpoint_every,
        ..ck.manifest.train.clone()
    };
    if &same != cfg {
        return Err(bad(
            "training settings differ from this run (only total_steps and checkpoint_every may change)"
                .into(),
        ));
    }
    Ok(())
}

/// Append to an existing log, dropping rows past `resume_step` so a resumed
/// run does not duplicate steps; otherwise start a fresh file.
fn open_log(path: &Path, resume_step: u64) -> Result<BufWriter<File>> {
    if resume_step > 0 && path.exists() {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        let kept: Vec<&str> = text
            .lines()
            .filter(|l| {
                l.split(',')
                    .next()
                    .and_then(|s| s.parse::<u64>().ok())
                    .is_none_or(|s| s <= resume_step)
            })
            .collect();
        std::fs::write(path, kept.join("\n") + "\n").map_err(Error::io(path))?;
        let f = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(Error::io(path))?;
        return Ok(BufWriter::new(f));
    }
    let mut f = BufWriter::new(File::create(path).map_err(Error::io(path))?);
    writeln!(f, "{LOG_HEADER}").map_err(Error::io(path))?;
    Ok(f)
}
