use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{FeatureMap, Init, ModelParameters, ParamRegistry};
use crate::real::{matmul, matmul_a_bt, matmul_at_b, Real};

/// Square-kernel 2-D convolution with "same"-style padding `kernel / 2`.
///
/// Weight layout is `cout x cin x k x k`; the forward pass is an im2col
/// followed by one GEMM.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: usize,
    pub bias: Option<usize>,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone)]
pub struct ConvCache<T> {
    cols: Vec<T>,
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
}

pub struct ConvOptions {
    pub stride: usize,
    pub bias: bool,
    pub zero_init: bool,
}

impl Default for ConvOptions {
    fn default() -> Self {
        Self {
            stride: 1,
            bias: true,
            zero_init: false,
        }
    }
}

impl Conv2d {
    pub fn new(
        reg: &mut ParamRegistry,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        opts: ConvOptions,
    ) -> Self {
        let fan_in = cin * kernel * kernel;
        let init = if opts.zero_init {
            Init::Zeros
        } else {
            Init::FanIn(fan_in)
        };
        let weight = reg.add(
            format!("{name}.weight"),
            vec![cout, cin, kernel, kernel],
            init,
        );
        let bias = opts
            .bias
            .then(|| reg.add(format!("{name}.bias"), vec![cout], init));
        Self {
            weight,
            bias,
            cin,
            cout,
            kernel,
            stride: opts.stride,
        }
    }

    fn pad(&self) -> usize {
        self.kernel / 2
    }

    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        let p = self.pad();
        (
            (h + 2 * p - self.kernel) / self.stride + 1,
            (w + 2 * p - self.kernel) / self.stride + 1,
        )
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1
    }

    fn im2col<T: Real>(&self, x: &FeatureMap<T>, out_h: usize, out_w: usize) -> Vec<T> {
        if self.is_pointwise() {
            return x.data.clone();
        }
        let (k, s, p) = (self.kernel, self.stride, self.pad() as isize);
        let (h, w) = (x.height as isize, x.width as isize);
        let npix = out_h * out_w;
        let mut cols = vec![T::zero(); self.cin * k * k * npix];
        for ci in 0..self.cin {
            let src = &x.data[ci * x.plane()..(ci + 1) * x.plane()];
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((ci * k + ky) * k + kx) * npix;
                    let dst = &mut cols[row..row + npix];
                    for oy in 0..out_h {
                        let iy = (oy * s + ky) as isize - p;
                        if iy < 0 || iy >= h {
                            continue;
                        }
                        for ox in 0..out_w {
                            let ix = (ox * s + kx) as isize - p;
                            if ix >= 0 && ix < w {
                                dst[oy * out_w + ox] = src[(iy * w + ix) as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im<T: Real>(&self, cols: &[T], cache: &ConvCache<T>) -> FeatureMap<T> {
        if self.is_pointwise() {
            return FeatureMap::from_vec(self.cin, cache.in_h, cache.in_w, cols.to_vec());
        }
        let (k, s, p) = (self.kernel, self.stride, self.pad() as isize);
        let (h, w) = (cache.in_h as isize, cache.in_w as isize);
        let (out_h, out_w) = (cache.out_h, cache.out_w);
        let npix = out_h * out_w;
        let mut dx = FeatureMap::zeros(self.cin, cache.in_h, cache.in_w);
        let plane = cache.in_h * cache.in_w;
        for ci in 0..self.cin {
            let dst = &mut dx.data[ci * plane..(ci + 1) * plane];
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((ci * k + ky) * k + kx) * npix;
                    let src = &cols[row..row + npix];
                    for oy in 0..out_h {
                        let iy = (oy * s + ky) as isize - p;
                        if iy < 0 || iy >= h {
                            continue;
                        }
                        for ox in 0..out_w {
                            let ix = (ox * s + kx) as isize - p;
                            if ix >= 0 && ix < w {
                                dst[(iy * w + ix) as usize] += src[oy * out_w + ox];
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn forward<T: Real>(
        &self,
        p: &ModelParameters<T>,
        x: &FeatureMap<T>,
    ) -> (FeatureMap<T>, ConvCache<T>) {
        assert_eq!(x.channels, self.cin, "conv input channels");
        let (out_h, out_w) = self.out_dims(x.height, x.width);
        let npix = out_h * out_w;
        let kk = self.cin * self.kernel * self.kernel;
        let cols = self.im2col(x, out_h, out_w);
        let mut out = FeatureMap::zeros(self.cout, out_h, out_w);
        if let Some(b) = self.bias {
            for (co, &bv) in p.get(b).iter().enumerate() {
                out.data[co * npix..(co + 1) * npix].fill(bv);
            }
        }
        matmul(
            self.cout,
            kk,
            npix,
            p.get(self.weight),
            &cols,
            &mut out.data,
            self.bias.is_some(),
        );
        let cache = ConvCache {
            cols,
            in_h: x.height,
            in_w: x.width,
            out_h,
            out_w,
        };
        (out, cache)
    }

    /// Accumulates parameter gradients; returns the input gradient if requested.
    pub fn backward<T: Real>(
        &self,
        p: &ModelParameters<T>,
        g: &mut ModelParameters<T>,
        cache: &ConvCache<T>,
        dy: &FeatureMap<T>,
        want_dx: bool,
    ) -> Option<FeatureMap<T>> {
        let npix = cache.out_h * cache.out_w;
        let kk = self.cin * self.kernel * self.kernel;
        debug_assert_eq!(dy.data.len(), self.cout * npix);
        matmul_a_bt(
            self.cout,
            npix,
            kk,
            &dy.data,
            &cache.cols,
            g.get_mut(self.weight),
            true,
        );
        if let Some(b) = self.bias {
            for (co, gb) in g.get_mut(b).iter_mut().enumerate() {
                *gb += dy.data[co * npix..(co + 1) * npix]
                    .iter()
                    .copied()
                    .sum::<T>();
            }
        }
        if !want_dx {
            return None;
        }
        let mut dcols = vec![T::zero(); kk * npix];
        matmul_at_b(
            kk,
            self.cout,
            npix,
            p.get(self.weight),
            &dy.data,
            &mut dcols,
            false,
        );
        Some(self.col2im(&dcols, cache))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn direct_conv(
        x: &FeatureMap<f64>,
        w: &[f64],
        b: &[f64],
        cout: usize,
        k: usize,
        s: usize,
    ) -> FeatureMap<f64> {
        let p = (k / 2) as isize;
        let oh = (x.height + 2 * (k / 2) - k) / s + 1;
        let ow = (x.width + 2 * (k / 2) - k) / s + 1;
        let mut out = FeatureMap::zeros(cout, oh, ow);
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b[co];
                    for ci in 0..x.channels {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * s + ky) as isize - p;
                                let ix = (ox * s + kx) as isize - p;
                                if iy >= 0
                                    && ix >= 0
                                    && (iy as usize) < x.height
                                    && (ix as usize) < x.width
                                {
                                    acc += w[((co * x.channels + ci) * k + ky) * k + kx]
                                        * x.data
                                            [(ci * x.height + iy as usize) * x.width + ix as usize];
                                }
                            }
                        }
                    }
                    out.data[(co * oh + oy) * ow + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn matches_direct_convolution() {
        for (k, s) in [(3, 1), (3, 2), (1, 1)] {
            let mut reg = ParamRegistry::default();
            let conv = Conv2d::new(
                &mut reg,
                "c",
                2,
                3,
                k,
                ConvOptions {
                    stride: s,
                    ..Default::default()
                },
            );
            let mut params = ModelParameters::<f64>::zeros(&reg.into_specs());
            for (i, v) in params.get_mut(conv.weight).iter_mut().enumerate() {
                *v = (i as f64 * 0.7).sin();
            }
            params
                .get_mut(conv.bias.unwrap())
                .copy_from_slice(&[0.1, -0.2, 0.3]);
            let x =
                FeatureMap::from_vec(2, 5, 6, (0..60).map(|i| (i as f64 * 0.3).cos()).collect());
            let (y, _) = conv.forward(&params, &x);
            let want = direct_conv(
                &x,
                params.get(conv.weight),
                params.get(conv.bias.unwrap()),
                3,
                k,
                s,
            );
            assert_eq!((y.height, y.width), (want.height, want.width));
            for (a, b) in y.data.iter().zip(&want.data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
