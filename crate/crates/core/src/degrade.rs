//! Synthetic paired data: procedural clean images and a simple
//! attenuation + haze + sensor-noise degrader.
//!
//! This is a test fixture for hermetic end-to-end runs, not a physical model
//! of underwater light transport.

use alloc::format;
#[cfg(not(feature = "std"))]
use num_traits::Float;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{stream, Role};
use crate::tensor::{ImageTensor, Space};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegradeParams {
    /// Per-channel optical depth; the signal is scaled by `exp(-attenuation)`.
    pub attenuation: [f64; 3],
    pub haze_color: [f64; 3],
    pub haze_strength: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl DegradeParams {
    pub fn identity() -> Self {
        Self {
            attenuation: [0.0; 3],
            haze_color: [0.0; 3],
            haze_strength: 0.0,
            noise_sigma: 0.0,
            seed: 0,
        }
    }

    /// Red absorbed most, blue-green haze.
    pub fn underwater() -> Self {
        Self {
            attenuation: [1.2, 0.45, 0.15],
            haze_color: [0.05, 0.35, 0.45],
            haze_strength: 0.35,
            noise_sigma: 0.01,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidRange(format!("degradation {what}")));
        if self
            .attenuation
            .iter()
            .any(|a| !(a.is_finite() && *a >= 0.0))
        {
            return bad("attenuation must be finite and >= 0");
        }
        if self.haze_color.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return bad("haze_color must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.haze_strength) {
            return bad("haze_strength must lie in [0, 1)");
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be finite and >= 0");
        }
        Ok(())
    }

    /// Scale every magnitude by an independent factor in `1 ± amount`;
    /// zero parameters stay zero.
    pub fn jitter<R: Rng + ?Sized>(&self, amount: f64, seed: u64, rng: &mut R) -> Self {
        let mut f = || 1.0 + rng.random_range(-amount..=amount);
        let mut out = *self;
        for a in &mut out.attenuation {
            *a *= f();
        }
        for c in &mut out.haze_color {
            *c = (*c * f()).clamp(0.0, 1.0);
        }
        out.haze_strength = (out.haze_strength * f()).clamp(0.0, 0.95);
        out.noise_sigma *= f();
        out.seed = seed;
        out
    }
}

/// `clamp(x0 * exp(-att) * (1 - s) + haze * s + N(0, σ²), 0, 1)` per channel.
pub fn synth_degrade(x0: &ImageTensor<f64>, p: &DegradeParams) -> Result<ImageTensor<f64>> {
    p.validate()?;
    x0.expect_space(Space::Metric)?;
    if x0.channels() != 3 {
        return Err(Error::ShapeMismatch {
            context: "synth_degrade expects RGB",
            expected: alloc::vec![x0.batch(), 3, x0.height(), x0.width()],
            found: x0.shape().to_vec(),
        });
    }
    if x0.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidRange(
            "synth_degrade input must lie in [0, 1]".into(),
        ));
    }
    let plane = x0.height() * x0.width();
    let s = p.haze_strength;
    let mut rng = stream(p.seed, Role::Degradation, 0);
    let data = x0
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let c = (i / plane) % 3;
            let noise = if p.noise_sigma > 0.0 {
                let n: f64 = rng.sample(StandardNormal);
                p.noise_sigma * n
            } else {
                0.0
            };
            let y = v * (-p.attenuation[c]).exp() * (1.0 - s) + p.haze_color[c] * s + noise;
            y.clamp(0.0, 1.0)
        })
        .collect();
    ImageTensor::new(x0.shape(), data, Space::Metric)
}

fn random_color<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    [rng.random(), rng.random(), rng.random()]
}

/// A seeded `1 x 3 x h x w` clean image in metric space: a smooth colour
/// field from four random corner colours, a faint texture, and a few
/// circles and rectangles.
pub fn procedural_reference(height: usize, width: usize, seed: u64) -> ImageTensor<f64> {
    let mut rng = stream(seed, Role::Synthesis, 0);
    let corners = [
        random_color(&mut rng),
        random_color(&mut rng),
        random_color(&mut rng),
        random_color(&mut rng),
    ];
    let freq = rng.random_range(0.5..2.0);
    let phase = rng.random_range(0.0..core::f64::consts::TAU);
    let mut img = ImageTensor::<f64>::zeros([1, 3, height, width], Space::Metric);
    let plane = height * width;
    let (hd, wd) = ((height.max(2) - 1) as f64, (width.max(2) - 1) as f64);
    {
        let data = img.data_mut();
        for y in 0..height {
            for x in 0..width {
                let (u, v) = (x as f64 / wd, y as f64 / hd);
                let tex =
                    0.05 * (freq * core::f64::consts::TAU * (u + 0.7 * v) * 2.0 + phase).sin();
                for c in 0..3 {
                    let top = corners[0][c] * (1.0 - u) + corners[1][c] * u;
                    let bottom = corners[2][c] * (1.0 - u) + corners[3][c] * u;
                    data[c * plane + y * width + x] = top * (1.0 - v) + bottom * v + tex;
                }
            }
        }
        let shapes = rng.random_range(2..=4);
        for _ in 0..shapes {
            let color = random_color(&mut rng);
            let alpha = rng.random_range(0.6..1.0);
            let cx = rng.random_range(0.0..1.0) * wd;
            let cy = rng.random_range(0.0..1.0) * hd;
            let r = rng.random_range(0.1..0.35) * (height.min(width) as f64);
            let circle = rng.random_bool(0.5);
            for y in 0..height {
                for x in 0..width {
                    let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                    let inside = if circle {
                        dx * dx + dy * dy <= r * r
                    } else {
                        dx.abs() <= r && dy.abs() <= 0.6 * r
                    };
                    if inside {
                        for c in 0..3 {
                            let px = &mut data[c * plane + y * width + x];
                            *px = *px * (1.0 - alpha) + color[c] * alpha;
                        }
                    }
                }
            }
        }
        for v in data.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::psnr;

    #[test]
    fn identity_parameters_leave_the_image_unchanged() {
        let x = procedural_reference(16, 16, 1);
        assert_eq!(synth_degrade(&x, &DegradeParams::identity()).unwrap(), x);
    }

    #[test]
    fn strong_degradation_is_below_twenty_db() {
        let x = procedural_reference(32, 32, 2);
        let p = DegradeParams {
            attenuation: [2.0, 0.5, 0.1],
            haze_color: [0.0, 0.2, 0.3],
            haze_strength: 0.3,
            noise_sigma: 0.0,
            seed: 0,
        };
        let db = psnr(&synth_degrade(&x, &p).unwrap(), &x).unwrap();
        assert!(db.is_finite() && db < 20.0, "{db}");
    }

    #[test]
    fn more_haze_means_lower_psnr() {
        let x = procedural_reference(32, 32, 3);
        let mut last = f64::INFINITY;
        for s in [0.0, 0.3, 0.6] {
            let p = DegradeParams {
                haze_strength: s,
                ..DegradeParams::underwater()
            };
            let db = psnr(&synth_degrade(&x, &p).unwrap(), &x).unwrap();
            assert!(db < last, "{s}: {db} !< {last}");
            last = db;
        }
    }

    #[test]
    fn output_stays_in_range_and_is_seeded() {
        let x = procedural_reference(16, 16, 4);
        let p = DegradeParams {
            noise_sigma: 0.5,
            seed: 9,
            ..DegradeParams::underwater()
        };
        let y = synth_degrade(&x, &p).unwrap();
        assert!(y.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(y, synth_degrade(&x, &p).unwrap());
        assert_ne!(
            y,
            synth_degrade(&x, &DegradeParams { seed: 10, ..p }).unwrap()
        );
    }

    #[test]
    fn rejects_bad_parameters() {
        let x = procedural_reference(8, 8, 1);
        for p in [
            DegradeParams {
                haze_strength: 1.0,
                ..DegradeParams::identity()
            },
            DegradeParams {
                attenuation: [-0.1, 0.0, 0.0],
                ..DegradeParams::identity()
            },
            DegradeParams {
                haze_color: [1.5, 0.0, 0.0],
                ..DegradeParams::identity()
            },
            DegradeParams {
                noise_sigma: -1.0,
                ..DegradeParams::identity()
            },
        ] {
            assert!(matches!(synth_degrade(&x, &p), Err(Error::InvalidRange(_))));
        }
    }

    #[test]
    fn procedural_images_are_seeded() {
        assert_eq!(
            procedural_reference(16, 12, 5),
            procedural_reference(16, 12, 5)
        );
        assert_ne!(
            procedural_reference(16, 12, 5),
            procedural_reference(16, 12, 6)
        );
    }

    #[test]
    fn jitter_keeps_zeros() {
        let mut rng = stream(0, Role::Degradation, 1);
        let j = DegradeParams::identity().jitter(0.2, 3, &mut rng);
        assert_eq!(
            j,
            DegradeParams {
                seed: 3,
                ..DegradeParams::identity()
            }
        );
        let j = DegradeParams::underwater().jitter(0.2, 3, &mut rng);
        assert!(j.validate().is_ok());
    }
}
