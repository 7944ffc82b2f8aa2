//! Full-reference quality metrics on `[0, 1]` images, in double precision.
//!
//! SSIM uses the common configuration: 11x11 Gaussian window with σ = 1.5,
//! `C1 = (0.01 L)^2`, `C2 = (0.03 L)^2` with `L = 1`, evaluated over the
//! valid (unpadded) window positions of each channel, then averaged over
//! channels and batch elements.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{ImageTensor, Space};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn check_pair<T: Real>(a: &ImageTensor<T>, b: &ImageTensor<T>) -> Result<()> {
    a.expect_space(Space::Metric)?;
    b.expect_space(Space::Metric)?;
    a.expect_shape(b, "metric inputs")
}

pub fn mse<T: Real>(a: &ImageTensor<T>, b: &ImageTensor<T>) -> Result<f64> {
    check_pair(a, b)?;
    let n = a.data().len().max(1) as f64;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum::<f64>()
        / n)
}

/// `10 log10(1 / mse)` with peak value 1; `+inf` for identical images.
pub fn psnr<T: Real>(a: &ImageTensor<T>, b: &ImageTensor<T>) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - c;
            (-(d * d) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of an `h x w` plane.
fn filter_valid(x: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for ox in 0..ow {
            rows[y * ow + ox] = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * x[y * w + ox + i])
                .sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for oy in 0..oh {
        for ox in 0..ow {
            out[oy * ow + ox] = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * rows[(oy + i) * ow + ox])
                .sum();
        }
    }
    out
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, taps: &[f64]) -> f64 {
    let sq = |v: &[f64]| v.iter().map(|x| x * x).collect::<Vec<_>>();
    let prod: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let mu_a = filter_valid(a, h, w, taps);
    let mu_b = filter_valid(b, h, w, taps);
    let e_aa = filter_valid(&sq(a), h, w, taps);
    let e_bb = filter_valid(&sq(b), h, w, taps);
    let e_ab = filter_valid(&prod, h, w, taps);
    let n = mu_a.len() as f64;
    (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2))
        })
        .sum::<f64>()
        / n
}

pub fn ssim<T: Real>(a: &ImageTensor<T>, b: &ImageTensor<T>) -> Result<f64> {
    check_pair(a, b)?;
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::ImageTooSmall {
            height: h,
            width: w,
            window: SSIM_WINDOW,
        });
    }
    let taps = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let plane = h * w;
    let planes = a.batch() * a.channels();
    let mut total = 0.0;
    for p in 0..planes {
        let pa: Vec<f64> = a.data()[p * plane..(p + 1) * plane]
            .iter()
            .map(|v| v.as_f64())
            .collect();
        let pb: Vec<f64> = b.data()[p * plane..(p + 1) * plane]
            .iter()
            .map(|v| v.as_f64())
            .collect();
        total += ssim_plane(&pa, &pb, h, w, &taps);
    }
    Ok(total / planes as f64)
}

/// Round to the nearest 8-bit level, as writing and re-reading a PNG would.
pub fn quantize_8bit<T: Real>(img: &ImageTensor<T>) -> Result<ImageTensor<T>> {
    img.expect_space(Space::Metric)?;
    let levels = T::of(255.0);
    Ok(ImageTensor::from_fn(img.shape(), Space::Metric, |i| {
        let v = img.data()[i].max(T::zero()).min(T::one());
        (v * levels).round() / levels
    }))
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ImageMetrics {
    pub id: String,
    pub psnr_db: f64,
    pub ssim: f64,
    pub mse: f64,
}

impl ImageMetrics {
    /// Metrics of `candidate` against `reference`.
    pub fn evaluate<T: Real>(
        id: impl Into<String>,
        candidate: &ImageTensor<T>,
        reference: &ImageTensor<T>,
    ) -> Result<Self> {
        let mse = mse(candidate, reference)?;
        Ok(Self {
            id: id.into(),
            psnr_db: psnr_from_mse(mse),
            ssim: ssim(candidate, reference)?,
            mse,
        })
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricReport {
    pub dataset_name: String,
    pub per_image: Vec<ImageMetrics>,
    /// Column means; the id is `"mean"`.
    pub aggregate: ImageMetrics,
}

impl MetricReport {
    pub fn new(dataset_name: impl Into<String>, per_image: Vec<ImageMetrics>) -> Self {
        let n = per_image.len().max(1) as f64;
        let mean = |f: fn(&ImageMetrics) -> f64| per_image.iter().map(f).sum::<f64>() / n;
        let aggregate = ImageMetrics {
            id: String::from("mean"),
            psnr_db: mean(|m| m.psnr_db),
            ssim: mean(|m| m.ssim),
            mse: mean(|m| m.mse),
        };
        Self {
            dataset_name: dataset_name.into(),
            per_image,
            aggregate,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::standard_normal;
    use crate::rng::{stream, Role};
    use rand::Rng;

    fn random_image(shape: [usize; 4], seed: u64) -> ImageTensor<f64> {
        let mut rng = stream(seed, Role::Synthesis, 0);
        ImageTensor::from_fn(shape, Space::Metric, |_| rng.random_range(0.0..1.0))
    }

    #[test]
    fn mse_and_psnr_closed_forms() {
        let a = ImageTensor::<f64>::from_fn([1, 3, 4, 4], Space::Metric, |i| {
            0.2 + 0.01 * (i % 50) as f64
        });
        let b = ImageTensor::from_fn([1, 3, 4, 4], Space::Metric, |i| a.data()[i] + 0.1);
        assert!((mse(&a, &b).unwrap() - 0.01).abs() < 1e-15);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        assert!((psnr_from_mse(1e-4) - 40.0).abs() < 1e-12);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
    }

    #[test]
    fn mse_matches_a_double_loop() {
        let a = random_image([2, 3, 5, 7], 1);
        let b = random_image([2, 3, 5, 7], 2);
        let mut acc = 0.0;
        let mut count = 0.0;
        for i in 0..a.data().len() {
            acc += (a.data()[i] - b.data()[i]).powi(2);
            count += 1.0;
        }
        assert!((mse(&a, &b).unwrap() - acc / count).abs() < 1e-9);
        let want = 10.0 * (1.0 / (acc / count)).log10();
        assert!((psnr(&a, &b).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn ssim_identity_and_constant_images() {
        let a = random_image([1, 3, 16, 16], 3);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let c = ImageTensor::<f64>::from_fn([1, 3, 16, 16], Space::Metric, |_| 0.5);
        assert!((ssim(&c, &c).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_is_symmetric_and_degrades_with_noise() {
        let a = random_image([1, 3, 24, 24], 4);
        let noise: ImageTensor<f64> =
            standard_normal([1, 3, 24, 24], &mut stream(5, Role::Noise, 0));
        let mut prev = 1.0;
        for k in [0.02, 0.05, 0.1] {
            let b = ImageTensor::from_fn(a.shape(), Space::Metric, |i| {
                a.data()[i] + k * noise.data()[i]
            });
            let s = ssim(&a, &b).unwrap();
            assert!((s - ssim(&b, &a).unwrap()).abs() < 1e-9);
            assert!(s < prev && s <= 1.0);
            prev = s;
        }
    }

    #[test]
    fn errors() {
        let small = random_image([1, 3, 10, 16], 1);
        assert!(matches!(
            ssim(&small, &small),
            Err(Error::ImageTooSmall { .. })
        ));
        let a = random_image([1, 3, 16, 16], 1);
        let b = random_image([1, 3, 16, 12], 1);
        assert!(matches!(mse(&a, &b), Err(Error::ShapeMismatch { .. })));
        let m = a.to_model_space().unwrap();
        assert!(matches!(psnr(&m, &m), Err(Error::WrongSpace { .. })));
    }

    #[test]
    fn report_aggregates_are_means() {
        let rows = vec![
            ImageMetrics {
                id: "a".into(),
                psnr_db: 20.0,
                ssim: 0.5,
                mse: 0.01,
            },
            ImageMetrics {
                id: "b".into(),
                psnr_db: 30.0,
                ssim: 0.9,
                mse: 0.001,
            },
        ];
        let r = MetricReport::new("toy", rows);
        assert_eq!(r.aggregate.psnr_db, 25.0);
        assert!((r.aggregate.ssim - 0.7).abs() < 1e-15);
        assert!((r.aggregate.mse - 0.0055).abs() < 1e-15);
    }

    #[test]
    fn quantization_rounds_to_nearest_level() {
        let img = ImageTensor::new([1, 1, 1, 3], vec![0.0f64, 0.5, 1.2], Space::Metric).unwrap();
        let q = quantize_8bit(&img).unwrap();
        assert_eq!(q.data(), &[0.0, 128.0 / 255.0, 1.0]);
    }
}
