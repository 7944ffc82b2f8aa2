//! Checkpoint directories: `manifest.json` plus one raw little-endian `f32`
//! file per parameter (and per Adam moment, when optimizer state is kept).

use std::path::{Path, PathBuf};

use cpdm_core::nn::Param;
use cpdm_core::optim::AdamState;
use cpdm_core::trainer::TrainConfig;
use cpdm_core::{ModelConfig, ModelParameters, Network};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT: &str = "cpdm-checkpoint/1";
const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Relative to the checkpoint directory.
    pub file: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerEntry {
    pub kind: String,
    pub step: u64,
    pub first_moment: Vec<TensorEntry>,
    pub second_moment: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format: String,
    pub model: ModelConfig,
    /// `A`..`D`, derived from the two conditioning flags.
    pub variant: String,
    pub in_channels: usize,
    pub has_ccm: bool,
    pub dtype: String,
    pub byte_order: String,
    /// Completed training steps.
    pub step: u64,
    pub seed: u64,
    pub train: TrainConfig,
    /// `[height, width]` of the training images, if known.
    pub image_size: Option<[usize; 2]>,
    pub parameters: Vec<TensorEntry>,
    pub optimizer: Option<OptimizerEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub params: ModelParameters<f32>,
    pub opt: Option<AdamState<f32>>,
}

impl Checkpoint {
    pub fn new(
        model: &ModelConfig,
        train: &TrainConfig,
        image_size: Option<[usize; 2]>,
        params: ModelParameters<f32>,
        opt: Option<AdamState<f32>>,
        step: u64,
    ) -> Result<Self> {
        let net = Network::new(model)?;
        let manifest = CheckpointManifest {
            format: FORMAT.into(),
            model: model.clone(),
            variant: format!("{:?}", model.variant()),
            in_channels: model.in_channels(),
            has_ccm: net.has_ccm_parameters(),
            dtype: "f32".into(),
            byte_order: "little".into(),
            step,
            seed: train.seed,
            train: train.clone(),
            image_size,
            parameters: entries(&params, "params"),
            optimizer: opt.as_ref().map(|o| OptimizerEntry {
                kind: "adam".into(),
                step: o.step,
                first_moment: entries(&o.m, "adam_m"),
                second_moment: entries(&o.v, "adam_v"),
            }),
        };
        let ck = Self {
            manifest,
            params,
            opt,
        };
        ck.check(Path::new("<memory>"), &net)?;
        Ok(ck)
    }

    /// Write into `dir`, which must not exist yet. Files land in a sibling
    /// temporary directory first so a crash never leaves a half checkpoint.
    pub fn save(&self, dir: &Path) -> Result<()> {
        if dir.exists() {
            return Err(Error::AlreadyExists(dir.to_path_buf()));
        }
        let tmp = dir.with_extension("partial");
        if tmp.exists() {
            std::fs::remove_dir_all(&tmp).map_err(Error::io(&tmp))?;
        }
        write_tensors(&tmp, &self.manifest.parameters, &self.params)?;
        if let (Some(o), Some(entry)) = (&self.opt, &self.manifest.optimizer) {
            write_tensors(&tmp, &entry.first_moment, &o.m)?;
            write_tensors(&tmp, &entry.second_moment, &o.v)?;
        }
        let file = tmp.join(MANIFEST);
        let text = serde_json::to_string_pretty(&self.manifest).map_err(Error::json(&file))?;
        std::fs::write(&file, text + "\n").map_err(Error::io(&file))?;
        std::fs::rename(&tmp, dir).map_err(Error::io(dir))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let file = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&file).map_err(Error::io(&file))?;
        let manifest: CheckpointManifest =
            serde_json::from_str(&text).map_err(Error::json(&file))?;
        let bad = |reason: String| Error::Checkpoint {
            path: dir.to_path_buf(),
            reason,
        };
        if manifest.format != FORMAT {
            return Err(bad(format!("unsupported format {:?}", manifest.format)));
        }
        if manifest.dtype != "f32" || manifest.byte_order != "little" {
            return Err(bad(format!(
                "unsupported encoding {} / {}",
                manifest.dtype, manifest.byte_order
            )));
        }
        let net = Network::new(&manifest.model)?;
        let params = read_tensors(dir, &manifest.parameters)?;
        let opt = match &manifest.optimizer {
            Some(o) => Some(AdamState {
                m: read_tensors(dir, &o.first_moment)?,
                v: read_tensors(dir, &o.second_moment)?,
                step: o.step,
            }),
            None => None,
        };
        let ck = Self {
            manifest,
            params,
            opt,
        };
        ck.check(dir, &net)?;
        Ok(ck)
    }

    fn check(&self, path: &Path, net: &Network) -> Result<()> {
        let bad = |reason: String| Error::Checkpoint {
            path: path.to_path_buf(),
            reason,
        };
        if !self.params.matches(net.param_specs()) {
            return Err(bad("parameters do not match the model configuration".into()));
        }
        if let Some(o) = &self.opt {
            if !o.m.matches(net.param_specs()) || !o.v.matches(net.param_specs()) {
                return Err(bad("optimizer state does not match the parameters".into()));
            }
        }
        if !self.params.all_finite() {
            return Err(bad("non-finite parameter values".into()));
        }
        Ok(())
    }

    pub fn network(&self) -> Result<Network> {
        Ok(Network::new(&self.manifest.model)?)
    }
}

fn entries(p: &ModelParameters<f32>, dir: &str) -> Vec<TensorEntry> {
    p.iter()
        .map(|p| TensorEntry {
            name: p.name.clone(),
            shape: p.shape.clone(),
            file: PathBuf::from(dir).join(format!("{}.bin", p.name)),
        })
        .collect()
}

fn write_tensors(root: &Path, entries: &[TensorEntry], p: &ModelParameters<f32>) -> Result<()> {
    for (e, param) in entries.iter().zip(p.iter()) {
        let path = root.join(&e.file);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(Error::io(parent))?;
        }
        let bytes: Vec<u8> = param.data.iter().flat_map(|v| v.to_le_bytes()).collect();
        std::fs::write(&path, bytes).map_err(Error::io(&path))?;
    }
    Ok(())
}

fn read_tensors(root: &Path, entries: &[TensorEntry]) -> Result<ModelParameters<f32>> {
    let mut params = Vec::with_capacity(entries.len());
    for e in entries {
        let path = root.join(&e.file);
        let bytes = std::fs::read(&path).map_err(Error::io(&path))?;
        let len: usize = e.shape.iter().product();
        if bytes.len() != 4 * len {
            return Err(Error::Checkpoint {
                path: path.clone(),
                reason: format!("expected {} bytes, found {}", 4 * len, bytes.len()),
            });
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        params.push(Param {
            name: e.name.clone(),
            shape: e.shape.clone(),
            data,
        });
    }
    Ok(ModelParameters::from_params(params))
}

pub fn step_dir_name(step: u64) -> String {
    format!("step-{step:08}")
}

/// `path` itself if it holds a manifest, otherwise its newest `step-*` child.
pub fn resolve_checkpoint(path: &Path) -> Result<PathBuf> {
    if path.join(MANIFEST).is_file() {
        return Ok(path.to_path_buf());
    }
    let mut best: Option<(u64, PathBuf)> = None;
    for entry in std::fs::read_dir(path).map_err(Error::io(path))? {
        let p = entry.map_err(Error::io(path))?.path();
        let step = p
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("step-"))
            .and_then(|n| n.parse::<u64>().ok());
        if let Some(step) = step {
            if p.join(MANIFEST).is_file() && best.as_ref().is_none_or(|(s, _)| step > *s) {
                best = Some((step, p));
            }
        }
    }
    best.map(|(_, p)| p).ok_or_else(|| Error::Checkpoint {
        path: path.to_path_buf(),
        reason: "no manifest.json and no step-* checkpoints inside".into(),
    })
}
