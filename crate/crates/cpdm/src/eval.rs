//! Full-reference metrics over directories of PNGs.

use std::fmt::Write as _;
use std::path::Path;

use cpdm_core::metrics::{ImageMetrics, MetricReport};

use crate::data::DatasetManifest;
use crate::error::{Error, Result};
use crate::image_io::{list_pngs, read_png};

pub const CSV_HEADER: &str = "id,psnr_db,ssim,mse";

/// Compare `<enhanced>/<id>.png` with the matching reference for each id.
///
/// References come from `reference/<id>.png`, or, when `manifest` is given,
/// from the manifest's reference paths (restricted to `split`). Ids are taken
/// from the manifest or else from the PNGs in `enhanced`.
pub fn evaluate_dirs(
    dataset_name: &str,
    enhanced: &Path,
    reference: Option<&Path>,
    manifest: Option<(&DatasetManifest, Option<&str>)>,
) -> Result<MetricReport> {
    let pairs: Vec<(String, std::path::PathBuf)> = match (manifest, reference) {
        (Some((m, split)), _) => m
            .entries(split)
            .map(|e| (e.id.clone(), m.ref_path(e)))
            .collect(),
        (None, Some(r)) => list_pngs(enhanced)?
            .into_iter()
            .map(|p| {
                let name = p.file_name().unwrap_or_default().to_owned();
                let id = p
                    .file_stem()
                    .unwrap_or_default()
                    .to_string_lossy()
                    .into_owned();
                (id, r.join(name))
            })
            .collect(),
        (None, None) => {
            return Err(Error::Config(
                "need a reference directory or a manifest".into(),
            ))
        }
    };
    if pairs.is_empty() {
        return Err(Error::Dataset(format!(
            "nothing to evaluate in {}",
            enhanced.display()
        )));
    }
    let mut per_image = Vec::with_capacity(pairs.len());
    for (id, ref_path) in pairs {
        let candidate = read_png(&enhanced.join(format!("{id}.png")), None)?;
        let target = read_png(&ref_path, Some((candidate.height(), candidate.width())))?;
        per_image.push(ImageMetrics::evaluate(id, &candidate, &target)?);
    }
    Ok(MetricReport::new(dataset_name, per_image))
}

/// Per-image rows followed by a `mean` row.
pub fn to_csv(r: &MetricReport) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for m in r.per_image.iter().chain(std::iter::once(&r.aggregate)) {
        let _ = writeln!(s, "{},{},{},{}", m.id, m.psnr_db, m.ssim, m.mse);
    }
    s
}

pub fn to_table(r: &MetricReport) -> String {
    let w = r
        .per_image
        .iter()
        .map(|m| m.id.len())
        .max()
        .unwrap_or(0)
        .max(4);
    let mut s = format!("{} ({} images)\n", r.dataset_name, r.per_image.len());
    let _ = writeln!(
        s,
        "{:<w$}  {:>9}  {:>7}  {:>10}",
        "id", "PSNR(dB)", "SSIM", "MSE"
    );
    let rule = "-".repeat(w + 34);
    let _ = writeln!(s, "{rule}");
    let row = |s: &mut String, m: &ImageMetrics| {
        let _ = writeln!(
            s,
            "{:<w$}  {:>9.3}  {:>7.4}  {:>10.6}",
            m.id, m.psnr_db, m.ssim, m.mse
        );
    };
    for m in &r.per_image {
        row(&mut s, m);
    }
    let _ = writeln!(s, "{rule}");
    row(&mut s, &r.aggregate);
    s
}
