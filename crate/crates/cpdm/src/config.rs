//! Run configuration: every setting of every subcommand under one flat,
//! dotted-key JSON object such as `{"train.batch_size": 8}`.
//!
//! Files may set any subset of keys; unknown keys are rejected. Command-line
//! flags are applied on top by the CLI.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use cpdm_core::sampler::SampleConfig;
use cpdm_core::trainer::TrainConfig;
use cpdm_core::ModelConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::data::SynthConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub enhanced: Option<PathBuf>,
    pub reference: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sample: SampleConfig,
    pub synth: SynthConfig,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        Self {
            model: ModelConfig::default(),
            sample: SampleConfig {
                timesteps: train.timesteps,
                ..SampleConfig::default()
            },
            train,
            synth: SynthConfig::default(),
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    /// All settings as `"section.key" -> value`.
    pub fn to_flat(&self) -> BTreeMap<String, Value> {
        let mut out = BTreeMap::new();
        flatten(
            "",
            serde_json::to_value(self).expect("config serializes"),
            &mut out,
        );
        out
    }

    /// Defaults overridden by `flat`; unknown keys are an error.
    pub fn from_flat(flat: &Map<String, Value>) -> Result<Self> {
        let mut merged = Self::default().to_flat();
        for (k, v) in flat {
            match merged.get_mut(k) {
                Some(slot) => *slot = v.clone(),
                None => return Err(Error::Config(format!("unknown key {k:?}"))),
            }
        }
        let mut nested = Map::new();
        for (k, v) in merged {
            insert_dotted(&mut nested, &k, v);
        }
        serde_json::from_value(Value::Object(nested))
            .map_err(|e| Error::Config(format!("bad value: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_flat(&Self::load_flat(path)?)
    }

    /// The raw key/value pairs of a config file.
    pub fn load_flat(path: &Path) -> Result<Map<String, Value>> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        match serde_json::from_str(&text).map_err(Error::json(path))? {
            Value::Object(map) => Ok(map),
            _ => Err(Error::Config(format!(
                "{}: expected a JSON object of dotted keys",
                path.display()
            ))),
        }
    }

    pub fn to_json(&self) -> String {
        let map: Map<String, Value> = self.to_flat().into_iter().collect();
        serde_json::to_string_pretty(&Value::Object(map)).expect("config serializes")
    }

    pub fn to_json_compact(&self) -> String {
        let map: Map<String, Value> = self.to_flat().into_iter().collect();
        Value::Object(map).to_string()
    }

    /// Write `run_config.json` into `dir`.
    pub fn save_into(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
        let path = dir.join("run_config.json");
        std::fs::write(&path, self.to_json() + "\n").map_err(Error::io(&path))?;
        Ok(path)
    }
}

fn flatten(prefix: &str, v: Value, out: &mut BTreeMap<String, Value>) {
    match v {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() {
                    k
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, out);
            }
        }
        leaf => {
            out.insert(prefix.to_string(), leaf);
        }
    }
}

fn insert_dotted(map: &mut Map<String, Value>, key: &str, v: Value) {
    match key.split_once('.') {
        None => {
            map.insert(key.to_string(), v);
        }
        Some((head, rest)) => {
            let child = map
                .entry(head.to_string())
                .or_insert_with(|| Value::Object(Map::new()));
            if let Value::Object(child) = child {
                insert_dotted(child, rest, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn flat_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.train.batch_size = 3;
        cfg.model.channel_multipliers = vec![1, 2];
        cfg.synth.degradation.attenuation[2] = 0.5;
        cfg.paths.out = Some("x/y".into());
        let flat: Map<String, Value> = cfg.to_flat().into_iter().collect();
        assert!(flat.contains_key("synth.degradation.attenuation"));
        assert_eq!(flat["train.batch_size"], json!(3));
        assert_eq!(RunConfig::from_flat(&flat).unwrap(), cfg);
    }

    #[test]
    fn partial_files_keep_defaults() {
        let v = json!({"train.learning_rate": 0.001, "model.use_ccm": false});
        let cfg = RunConfig::from_flat(v.as_object().unwrap()).unwrap();
        assert_eq!(cfg.train.learning_rate, 0.001);
        assert!(!cfg.model.use_ccm);
        assert_eq!(cfg.train.batch_size, TrainConfig::default().batch_size);
    }

    #[test]
    fn unknown_keys_and_bad_types_are_rejected() {
        for v in [
            json!({"train.batchsize": 2}),
            json!({"train": {"batch_size": 2}}),
            json!({"train.batch_size": "two"}),
        ] {
            assert!(RunConfig::from_flat(v.as_object().unwrap()).is_err(), "{v}");
        }
    }

    #[test]
    fn saved_file_loads_back() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::default();
        cfg.sample.seed = 9;
        let path = cfg.save_into(dir.path()).unwrap();
        assert_eq!(RunConfig::load(&path).unwrap(), cfg);
    }
}
