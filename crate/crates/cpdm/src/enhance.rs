//! Raw PNGs -> enhanced PNGs by running the reverse chain of a checkpoint.

use std::path::{Path, PathBuf};

use cpdm_core::rng::{stream, Role};
use cpdm_core::sampler::{sample, Denoiser, SampleConfig};

use crate::checkpoint::Checkpoint;
use crate::data::{DatasetManifest, MANIFEST_FILE};
use crate::error::{Error, Result};
use crate::image_io::{list_pngs, read_png, write_png};

/// `(id, path)` of every raw image under `input`: the raw side of a dataset
/// (optionally one split) if `input` holds a manifest, else every PNG in it.
pub fn collect_inputs(input: &Path, split: Option<&str>) -> Result<Vec<(String, PathBuf)>> {
    let out: Vec<_> = if input.join(MANIFEST_FILE).is_file() {
        let m = DatasetManifest::load(input)?;
        m.entries(split)
            .map(|e| (e.id.clone(), m.raw_path(e)))
            .collect()
    } else {
        list_pngs(input)?
            .into_iter()
            .map(|p| {
                let id = p
                    .file_stem()
                    .unwrap_or_default()
                    .to_string_lossy()
                    .into_owned();
                (id, p)
            })
            .collect()
    };
    if out.is_empty() {
        return Err(Error::Dataset(format!(
            "no input images in {}",
            input.display()
        )));
    }
    Ok(out)
}

/// Enhance every input, writing `<out_dir>/<id>.png` (and, when recording,
/// `<out_dir>/trajectory/<id>/t<t>.png`). Image `i` samples from its own
/// stream of `cfg.seed`, so results do not depend on batching or order of
/// other files.
pub fn enhance(
    ck: &Checkpoint,
    inputs: &[(String, PathBuf)],
    out_dir: &Path,
    cfg: &SampleConfig,
    size: Option<(usize, usize)>,
) -> Result<Vec<PathBuf>> {
    let net = ck.network()?;
    let schedule = ck.manifest.train.schedule()?;
    if cfg.timesteps != schedule.timesteps() {
        return Err(Error::Config(format!(
            "sampling with T = {} but the checkpoint was trained with T = {}",
            cfg.timesteps,
            schedule.timesteps()
        )));
    }
    let size = size.or(ck.manifest.image_size.map(|[h, w]| (h, w)));
    let model = Denoiser {
        net: &net,
        params: &ck.params,
    };
    std::fs::create_dir_all(out_dir).map_err(Error::io(out_dir))?;
    let mut written = Vec::with_capacity(inputs.len());
    for (i, (id, path)) in inputs.iter().enumerate() {
        let y0 = read_png(path, size)?.to_model_space()?.cast::<f32>();
        let mut rng = stream(cfg.seed, Role::Sampling, i as u64);
        let out = sample(&model, &y0, &schedule, cfg, &mut rng)?;
        let dest = out_dir.join(format!("{id}.png"));
        write_png(&dest, &out.image.to_metric_space()?)?;
        for (t, x) in &out.trajectory {
            let p = out_dir
                .join("trajectory")
                .join(id)
                .join(format!("t{t:05}.png"));
            write_png(&p, &x.to_metric_space()?)?;
        }
        log::info!("{} -> {}", path.display(), dest.display());
        written.push(dest);
    }
    Ok(written)
}
