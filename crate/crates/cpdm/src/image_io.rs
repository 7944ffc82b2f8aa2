//! 8-bit RGB PNG <-> metric-space tensors.

use std::path::Path;

use cpdm_core::{ImageTensor, Space};
use image::imageops::{self, FilterType};
use image::{ImageBuffer, Rgb, RgbImage};

use crate::error::{Error, Result};

/// Decode a PNG as a `1 x 3 x H x W` tensor in `[0, 1]`, optionally resized
/// to `size = (height, width)` with bilinear filtering.
pub fn read_png(path: &Path, size: Option<(usize, usize)>) -> Result<ImageTensor<f64>> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let rgb = img.to_rgb32f();
    let rgb = match size {
        Some((h, w)) if (rgb.height() as usize, rgb.width() as usize) != (h, w) => {
            imageops::resize(&rgb, w as u32, h as u32, FilterType::Triangle)
        }
        _ => rgb,
    };
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let plane = h * w;
    let mut data = vec![0.0f64; 3 * plane];
    for (x, y, px) in rgb.enumerate_pixels() {
        let i = y as usize * w + x as usize;
        for c in 0..3 {
            data[c * plane + i] = (px.0[c] as f64).clamp(0.0, 1.0);
        }
    }
    Ok(ImageTensor::new([1, 3, h, w], data, Space::Metric)?)
}

/// Round-to-nearest 8-bit encoding of a metric-space image (batch element 0).
pub fn to_rgb8<T: cpdm_core::Real>(img: &ImageTensor<T>) -> Result<RgbImage> {
    img.expect_space(Space::Metric)?;
    if img.channels() != 3 {
        return Err(Error::Config(format!(
            "expected 3 channels, got {}",
            img.channels()
        )));
    }
    let (h, w) = (img.height(), img.width());
    let plane = h * w;
    let px = img.sample(0);
    Ok(ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        let q = |c: usize| (px[c * plane + i].as_f64().clamp(0.0, 1.0) * 255.0).round() as u8;
        Rgb([q(0), q(1), q(2)])
    }))
}

pub fn write_png<T: cpdm_core::Real>(path: &Path, img: &ImageTensor<T>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    to_rgb8(img)?.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Sorted `*.png` files directly inside `dir`.
pub fn list_pngs(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(Error::io(dir))? {
        let path = entry.map_err(Error::io(dir))?.path();
        if path.is_file()
            && path
                .extension()
                .is_some_and(|e| e.eq_ignore_ascii_case("png"))
        {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}
