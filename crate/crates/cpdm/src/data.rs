//! Paired datasets on disk: `<root>/raw/<id>.png`, `<root>/ref/<id>.png` and
//! `<root>/manifest.json`.

use std::path::{Path, PathBuf};

use cpdm_core::degrade::{procedural_reference, synth_degrade, DegradeParams};
use cpdm_core::rng::{stream, Role};
use cpdm_core::trainer::PairedSample;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image_io::{read_png, write_png};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairEntry {
    pub id: String,
    /// Relative to the dataset root.
    pub raw: PathBuf,
    #[serde(rename = "ref")]
    pub reference: PathBuf,
    #[serde(default = "default_split")]
    pub split: String,
}

fn default_split() -> String {
    "train".into()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    #[serde(skip)]
    pub root: PathBuf,
    /// `[height, width]` every image is resized to on load.
    pub image_size: [usize; 2],
    pub pairs: Vec<PairEntry>,
}

impl DatasetManifest {
    /// Reads `<root>/manifest.json`; `path` may name the file or its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let file = if path.is_dir() {
            path.join(MANIFEST_FILE)
        } else {
            path.to_path_buf()
        };
        let text = std::fs::read_to_string(&file).map_err(Error::io(&file))?;
        let mut m: Self = serde_json::from_str(&text).map_err(Error::json(&file))?;
        m.root = file.parent().unwrap_or(Path::new(".")).to_path_buf();
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self) -> Result<PathBuf> {
        let file = self.root.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).map_err(Error::json(&file))?;
        std::fs::write(&file, text + "\n").map_err(Error::io(&file))?;
        Ok(file)
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size.contains(&0) {
            return Err(Error::Dataset("image_size must be positive".into()));
        }
        let mut ids: Vec<&str> = self.pairs.iter().map(|p| p.id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Dataset(format!("duplicate id {:?}", w[0])));
        }
        Ok(())
    }

    /// Entries in manifest order, restricted to `split` when given.
    pub fn entries<'a>(&'a self, split: Option<&'a str>) -> impl Iterator<Item = &'a PairEntry> {
        self.pairs
            .iter()
            .filter(move |p| split.is_none_or(|s| p.split == s))
    }

    pub fn raw_path(&self, e: &PairEntry) -> PathBuf {
        self.root.join(&e.raw)
    }

    pub fn ref_path(&self, e: &PairEntry) -> PathBuf {
        self.root.join(&e.reference)
    }
}

/// Decode, resize and convert every pair of `split` (all pairs if `None`) to
/// model space, in manifest order.
pub fn load_dataset(m: &DatasetManifest, split: Option<&str>) -> Result<Vec<PairedSample<f32>>> {
    let size = Some((m.image_size[0], m.image_size[1]));
    let mut out = Vec::new();
    for e in m.entries(split) {
        let y0 = read_png(&m.raw_path(e), size)?;
        let x0 = read_png(&m.ref_path(e), size)?;
        assert_eq!(y0.shape(), x0.shape(), "resize yields equal shapes");
        out.push(PairedSample {
            id: e.id.clone(),
            y0: y0.to_model_space()?.cast(),
            x0: x0.to_model_space()?.cast(),
        });
    }
    if out.is_empty() {
        return Err(Error::Dataset(match split {
            Some(s) => format!("no pairs in split {s:?} of {}", m.root.display()),
            None => format!("no pairs in {}", m.root.display()),
        }));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n: usize,
    pub size: usize,
    pub seed: u64,
    /// The last `holdout` pairs go to the `test` split.
    pub holdout: usize,
    /// Relative per-image spread of the degradation parameters.
    pub jitter: f64,
    pub degradation: DegradeParams,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 100,
            size: 64,
            seed: 0,
            holdout: 0,
            jitter: 0.2,
            degradation: DegradeParams::underwater(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.size == 0 {
            return Err(Error::Config("n and size must be at least 1".into()));
        }
        if self.holdout > self.n {
            return Err(Error::Config(format!(
                "holdout {} exceeds n {}",
                self.holdout, self.n
            )));
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return Err(Error::Config("jitter must lie in [0, 1)".into()));
        }
        self.degradation.validate()?;
        Ok(())
    }
}

/// Write `n` procedural references and their degraded versions under `root`.
///
/// Refuses to touch an existing dataset unless `force` is set.
pub fn make_synthetic_dataset(
    root: &Path,
    cfg: &SynthConfig,
    force: bool,
) -> Result<DatasetManifest> {
    cfg.validate()?;
    let manifest_file = root.join(MANIFEST_FILE);
    if !force && (manifest_file.exists() || root.join("raw").exists() || root.join("ref").exists())
    {
        return Err(Error::AlreadyExists(root.to_path_buf()));
    }
    for sub in ["raw", "ref"] {
        let dir = root.join(sub);
        if force && dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(Error::io(&dir))?;
        }
        std::fs::create_dir_all(&dir).map_err(Error::io(&dir))?;
    }
    let width = cfg.n.saturating_sub(1).to_string().len().max(4);
    let mut pairs = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let id = format!("{i:0width$}");
        let mut rng = stream(cfg.seed, Role::Synthesis, i as u64);
        let image_seed = rng.next_u64();
        let noise_seed = rng.next_u64();
        let x0 = procedural_reference(cfg.size, cfg.size, image_seed);
        let p = cfg.degradation.jitter(cfg.jitter, noise_seed, &mut rng);
        let y0 = synth_degrade(&x0, &p)?;
        let entry = PairEntry {
            raw: PathBuf::from("raw").join(format!("{id}.png")),
            reference: PathBuf::from("ref").join(format!("{id}.png")),
            split: if i >= cfg.n - cfg.holdout {
                "test"
            } else {
                "train"
            }
            .into(),
            id,
        };
        write_png(&root.join(&entry.raw), &y0)?;
        write_png(&root.join(&entry.reference), &x0)?;
        pairs.push(entry);
    }
    let m = DatasetManifest {
        root: root.to_path_buf(),
        image_size: [cfg.size, cfg.size],
        pairs,
    };
    m.save()?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize) -> SynthConfig {
        SynthConfig {
            n,
            size: 12,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn writes_pairs_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let m = make_synthetic_dataset(dir.path(), &small(10), false).unwrap();
        assert_eq!(m.pairs.len(), 10);
        let pngs = |s: &str| std::fs::read_dir(dir.path().join(s)).unwrap().count();
        assert_eq!(pngs("raw") + pngs("ref"), 20);
        let back = DatasetManifest::load(dir.path()).unwrap();
        assert_eq!(back, m);
        let data = load_dataset(&back, None).unwrap();
        assert_eq!(data.len(), 10);
        for s in &data {
            assert_eq!(s.x0.shape(), [1, 3, 12, 12]);
            assert_eq!(s.y0.shape(), s.x0.shape());
            assert!(s.x0.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn identity_degradation_copies_the_reference() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            degradation: DegradeParams::identity(),
            ..small(1)
        };
        let m = make_synthetic_dataset(dir.path(), &cfg, false).unwrap();
        let e = &m.pairs[0];
        let raw = std::fs::read(m.raw_path(e)).unwrap();
        let reference = std::fs::read(m.ref_path(e)).unwrap();
        assert_eq!(raw, reference);
    }

    #[test]
    fn refuses_to_overwrite_without_force() {
        let dir = tempfile::tempdir().unwrap();
        make_synthetic_dataset(dir.path(), &small(2), false).unwrap();
        assert!(matches!(
            make_synthetic_dataset(dir.path(), &small(2), false),
            Err(Error::AlreadyExists(_))
        ));
        make_synthetic_dataset(dir.path(), &small(3), true).unwrap();
        assert_eq!(
            std::fs::read_dir(dir.path().join("raw")).unwrap().count(),
            3
        );
    }

    #[test]
    fn holdout_goes_to_test_split() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            holdout: 3,
            ..small(8)
        };
        let m = make_synthetic_dataset(dir.path(), &cfg, false).unwrap();
        assert_eq!(m.entries(Some("train")).count(), 5);
        let test: Vec<_> = m.entries(Some("test")).map(|e| e.id.as_str()).collect();
        assert_eq!(test, ["0005", "0006", "0007"]);
        assert_eq!(load_dataset(&m, Some("test")).unwrap().len(), 3);
        assert!(load_dataset(&m, Some("val")).is_err());
    }

    #[test]
    fn loading_twice_is_identical() {
        let dir = tempfile::tempdir().unwrap();
        let m = make_synthetic_dataset(dir.path(), &small(3), false).unwrap();
        assert_eq!(
            load_dataset(&m, None).unwrap(),
            load_dataset(&m, None).unwrap()
        );
    }

    #[test]
    fn missing_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let m = make_synthetic_dataset(dir.path(), &small(2), false).unwrap();
        std::fs::remove_file(m.ref_path(&m.pairs[1])).unwrap();
        assert!(matches!(load_dataset(&m, None), Err(Error::Image { .. })));
    }

    #[test]
    fn rejects_duplicate_ids() {
        let e = PairEntry {
            id: "a".into(),
            raw: "raw/a.png".into(),
            reference: "ref/a.png".into(),
            split: "train".into(),
        };
        let m = DatasetManifest {
            root: PathBuf::new(),
            image_size: [4, 4],
            pairs: vec![e.clone(), e],
        };
        assert!(m.validate().is_err());
    }
}
