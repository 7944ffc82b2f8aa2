//! Conditional noise predictor `eps_theta(x_t, t, y0, y0 - x_t)`.
//!
//! A UNet with residual conv blocks, a sinusoidal time embedding and an
//! optional content-compensation module (CCM). The network input is the
//! channel concatenation `[x_t, y0, y0 - x_t]` (the last part only when the
//! difference condition is enabled). The CCM is a bias-free strided conv
//! pyramid over `y0`; level `k` of it is added to the input of the last
//! residual block of encoder level `k`.
//!
//! Layout for `L` levels with channels `C_k = base * mult[k]`:
//!
//! ```text
//! conv_in -> [enc 0: blocks] -> down -> [enc 1: blocks] -> ... -> [enc L-1]
//!                  |  skip                   |  skip
//!            [dec 0: blocks] <- up <-  [dec 1: blocks] <- up <- ...
//!                  -> norm -> silu -> conv_out (zero-initialized)
//! ```

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    conv_options, silu, silu_backward, upsample_nearest2x, upsample_nearest2x_backward, Conv2d,
    ConvCache, ConvOptions, FeatureMap, GnCache, GroupNorm, Init, Linear, ParamRegistry, ParamSpec,
};
use crate::real::Real;
use crate::rng::{name_hash, stream, Role};
use crate::tensor::{ImageTensor, Space};

pub use crate::nn::ModelParameters;

const IMAGE_CHANNELS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub base_channels: usize,
    pub channel_multipliers: Vec<usize>,
    pub blocks_per_level: usize,
    pub time_embed_dim: usize,
    pub use_difference_condition: bool,
    pub use_ccm: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            base_channels: 32,
            channel_multipliers: vec![1, 2, 4],
            blocks_per_level: 4,
            time_embed_dim: 128,
            use_difference_condition: true,
            use_ccm: true,
        }
    }
}

/// The four ablation variants: which of the two conditioning additions are on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// `y0` only.
    A,
    /// `y0` and `y0 - x_t`.
    B,
    /// `y0` and the CCM.
    C,
    /// Everything.
    D,
}

impl Variant {
    pub fn from_flags(use_difference_condition: bool, use_ccm: bool) -> Self {
        match (use_difference_condition, use_ccm) {
            (false, false) => Variant::A,
            (true, false) => Variant::B,
            (false, true) => Variant::C,
            (true, true) => Variant::D,
        }
    }

    pub fn flags(self) -> (bool, bool) {
        match self {
            Variant::A => (false, false),
            Variant::B => (true, false),
            Variant::C => (false, true),
            Variant::D => (true, true),
        }
    }
}

impl ModelConfig {
    pub fn with_variant(mut self, v: Variant) -> Self {
        (self.use_difference_condition, self.use_ccm) = v.flags();
        self
    }

    pub fn variant(&self) -> Variant {
        Variant::from_flags(self.use_difference_condition, self.use_ccm)
    }

    /// `3 * (2 + use_difference_condition)`.
    pub fn in_channels(&self) -> usize {
        IMAGE_CHANNELS * (2 + self.use_difference_condition as usize)
    }

    pub fn out_channels(&self) -> usize {
        IMAGE_CHANNELS
    }

    pub fn levels(&self) -> usize {
        self.channel_multipliers.len()
    }

    pub fn level_channels(&self, k: usize) -> usize {
        self.base_channels * self.channel_multipliers[k]
    }

    /// Image height and width must be multiples of this.
    pub fn spatial_multiple(&self) -> usize {
        1 << (self.levels().saturating_sub(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 {
            return Err(Error::Config("base_channels must be positive".into()));
        }
        if self.channel_multipliers.is_empty() || self.channel_multipliers.contains(&0) {
            return Err(Error::Config(
                "channel_multipliers must be a non-empty list of positive integers".into(),
            ));
        }
        if self.blocks_per_level == 0 {
            return Err(Error::Config("blocks_per_level must be at least 1".into()));
        }
        if self.time_embed_dim < 2 || self.time_embed_dim % 2 != 0 {
            return Err(Error::Config(
                "time_embed_dim must be an even number >= 2".into(),
            ));
        }
        Ok(())
    }
}

/// Per-level CCM output for a batch: `levels[k][b]` feeds encoder level `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct CcmFeatures<T> {
    pub levels: Vec<Vec<FeatureMap<T>>>,
}

#[derive(Debug, Clone)]
struct ResBlock {
    conv1: Conv2d,
    norm1: GroupNorm,
    time: Linear,
    conv2: Conv2d,
    norm2: GroupNorm,
    skip: Option<Conv2d>,
}

struct ResCache<T> {
    conv1: ConvCache<T>,
    norm1: GnCache<T>,
    act1_in: Vec<T>,
    conv2: ConvCache<T>,
    norm2: GnCache<T>,
    act2_in: Vec<T>,
    skip: Option<ConvCache<T>>,
}

impl ResBlock {
    fn new(reg: &mut ParamRegistry, name: &str, cin: usize, cout: usize, temb: usize) -> Self {
        Self {
            conv1: Conv2d::new(
                reg,
                &format!("{name}.conv1"),
                cin,
                cout,
                3,
                conv_options(1, true),
            ),
            norm1: GroupNorm::new(reg, &format!("{name}.norm1"), cout),
            time: Linear::new(reg, &format!("{name}.time"), temb, cout),
            conv2: Conv2d::new(
                reg,
                &format!("{name}.conv2"),
                cout,
                cout,
                3,
                conv_options(1, true),
            ),
            norm2: GroupNorm::new(reg, &format!("{name}.norm2"), cout),
            skip: (cin != cout).then(|| {
                Conv2d::new(
                    reg,
                    &format!("{name}.skip"),
                    cin,
                    cout,
                    1,
                    conv_options(1, true),
                )
            }),
        }
    }

    /// `skip(x) + silu(norm2(conv2(silu(norm1(conv1(x))) + shift(t))))`.
    fn forward<T: Real>(
        &self,
        p: &ModelParameters<T>,
        x: &FeatureMap<T>,
        temb_act: &[T],
    ) -> (FeatureMap<T>, ResCache<T>) {
        let (h1, conv1) = self.conv1.forward(p, x);
        let (n1, norm1) = self.norm1.forward(p, &h1);
        let mut a1 = silu(&n1.data);
        let shift = self.time.forward(p, temb_act);
        let plane = h1.plane();
        for (c, &s) in shift.iter().enumerate() {
            for v in &mut a1[c * plane..(c + 1) * plane] {
                *v += s;
            }
        }
        let a1 = FeatureMap::from_vec(h1.channels, h1.height, h1.width, a1);
        let (h2, conv2) = self.conv2.forward(p, &a1);
        let (n2, norm2) = self.norm2.forward(p, &h2);
        let a2 = silu(&n2.data);
        let (mut out, skip) = match &self.skip {
            Some(conv) => {
                let (s, c) = conv.forward(p, x);
                (s, Some(c))
            }
            None => (x.clone(), None),
        };
        for (o, v) in out.data.iter_mut().zip(a2) {
            *o += v;
        }
        let cache = ResCache {
            conv1,
            norm1,
            act1_in: n1.data,
            conv2,
            norm2,
            act2_in: n2.data,
            skip,
        };
        (out, cache)
    }

    fn backward<T: Real>(
        &self,
        p: &ModelParameters<T>,
        g: &mut ModelParameters<T>,
        cache: &ResCache<T>,
        dout: &FeatureMap<T>,
        temb_act: &[T],
        dtemb_act: &mut [T],
    ) -> FeatureMap<T> {
        let (c, h, w) = (dout.channels, dout.height, dout.width);
        let plane = h * w;
        let da2 = FeatureMap::from_vec(c, h, w, silu_backward(&cache.act2_in, &dout.data));
        let dh2 = self.norm2.backward(p, g, &cache.norm2, &da2);
        let da1 = self
            .conv2
            .backward(p, g, &cache.conv2, &dh2, true)
            .expect("input gradient requested");
        let dshift: Vec<T> = (0..c)
            .map(|ch| da1.data[ch * plane..(ch + 1) * plane].iter().copied().sum())
            .collect();
        self.time.backward(p, g, temb_act, &dshift, Some(dtemb_act));
        let dn1 = FeatureMap::from_vec(c, h, w, silu_backward(&cache.act1_in, &da1.data));
        let dh1 = self.norm1.backward(p, g, &cache.norm1, &dn1);
        let mut dx = self
            .conv1
            .backward(p, g, &cache.conv1, &dh1, true)
            .expect("input gradient requested");
        match (&self.skip, &cache.skip) {
            (Some(conv), Some(sc)) => {
                let ds = conv
                    .backward(p, g, sc, dout, true)
                    .expect("input gradient requested");
                dx.add_assign(&ds);
            }
            _ => dx.add_assign(dout),
        }
        dx
    }
}

#[derive(Debug, Clone)]
struct EncoderLevel {
    down: Option<Conv2d>,
    blocks: Vec<ResBlock>,
}

#[derive(Debug, Clone)]
struct DecoderLevel {
    up: Conv2d,
    blocks: Vec<ResBlock>,
}

/// Everything one sample's forward pass needs to run backward.
struct Trace<T> {
    temb0: Vec<T>,
    time_h: Vec<T>,
    time_a: Vec<T>,
    temb: Vec<T>,
    temb_act: Vec<T>,
    conv_in: ConvCache<T>,
    ccm: Vec<(FeatureMap<T>, ConvCache<T>)>,
    down: Vec<Option<ConvCache<T>>>,
    enc: Vec<Vec<ResCache<T>>>,
    up: Vec<Option<ConvCache<T>>>,
    dec: Vec<Vec<ResCache<T>>>,
    head_norm: GnCache<T>,
    head_act_in: Vec<T>,
    head_conv: ConvCache<T>,
}

/// The network layout for one [`ModelConfig`]; holds no weights.
#[derive(Debug, Clone)]
pub struct Network {
    cfg: ModelConfig,
    specs: Vec<ParamSpec>,
    time1: Linear,
    time2: Linear,
    conv_in: Conv2d,
    encoder: Vec<EncoderLevel>,
    decoder: Vec<DecoderLevel>,
    head_norm: GroupNorm,
    head_conv: Conv2d,
    ccm: Vec<Conv2d>,
}

impl Network {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut reg = ParamRegistry::default();
        let d = cfg.time_embed_dim;
        let time1 = Linear::new(&mut reg, "time.0", d, d);
        let time2 = Linear::new(&mut reg, "time.1", d, d);
        let levels = cfg.levels();
        let c0 = cfg.level_channels(0);
        let conv_in = Conv2d::new(
            &mut reg,
            "conv_in",
            cfg.in_channels(),
            c0,
            3,
            conv_options(1, true),
        );

        let encoder = (0..levels)
            .map(|k| {
                let ck = cfg.level_channels(k);
                let down = (k > 0).then(|| {
                    let prev = cfg.level_channels(k - 1);
                    Conv2d::new(
                        &mut reg,
                        &format!("enc.{k}.down"),
                        prev,
                        ck,
                        3,
                        conv_options(2, true),
                    )
                });
                let blocks = (0..cfg.blocks_per_level)
                    .map(|b| ResBlock::new(&mut reg, &format!("enc.{k}.block.{b}"), ck, ck, d))
                    .collect();
                EncoderLevel { down, blocks }
            })
            .collect();

        let decoder = (0..levels.saturating_sub(1))
            .map(|k| {
                let ck = cfg.level_channels(k);
                let deeper = cfg.level_channels(k + 1);
                let up = Conv2d::new(
                    &mut reg,
                    &format!("dec.{k}.up"),
                    deeper,
                    ck,
                    3,
                    conv_options(1, true),
                );
                let blocks = (0..cfg.blocks_per_level)
                    .map(|b| {
                        let cin = if b == 0 { 2 * ck } else { ck };
                        ResBlock::new(&mut reg, &format!("dec.{k}.block.{b}"), cin, ck, d)
                    })
                    .collect();
                DecoderLevel { up, blocks }
            })
            .collect();

        let head_norm = GroupNorm::new(&mut reg, "head.norm", c0);
        let head_conv = Conv2d::new(
            &mut reg,
            "head.conv",
            c0,
            cfg.out_channels(),
            3,
            ConvOptions {
                stride: 1,
                bias: true,
                zero_init: true,
            },
        );

        let ccm = if cfg.use_ccm {
            (0..levels)
                .map(|k| {
                    let cin = if k == 0 {
                        IMAGE_CHANNELS
                    } else {
                        cfg.level_channels(k - 1)
                    };
                    let stride = if k == 0 { 1 } else { 2 };
                    Conv2d::new(
                        &mut reg,
                        &format!("ccm.{k}"),
                        cin,
                        cfg.level_channels(k),
                        3,
                        conv_options(stride, false),
                    )
                })
                .collect()
        } else {
            Vec::new()
        };

        Ok(Self {
            cfg: cfg.clone(),
            specs: reg.into_specs(),
            time1,
            time2,
            conv_in,
            encoder,
            decoder,
            head_norm,
            head_conv,
            ccm,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Names, shapes and init rules of every parameter, in storage order.
    pub fn param_specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn has_ccm_parameters(&self) -> bool {
        self.specs.iter().any(|s| s.name.starts_with("ccm."))
    }

    /// Deterministic in `seed`. Each parameter draws from its own stream keyed
    /// by its name, so toggling the CCM leaves every shared weight unchanged.
    pub fn init_parameters<T: Real>(&self, seed: u64) -> ModelParameters<T> {
        let mut params = ModelParameters::zeros(&self.specs);
        for (spec, param) in self.specs.iter().zip(params.iter_mut()) {
            match spec.init {
                Init::Zeros => {}
                Init::Ones => param.data.fill(T::one()),
                Init::FanIn(fan_in) => {
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    let mut rng = stream(seed, Role::Init, name_hash(&spec.name));
                    for v in &mut param.data {
                        *v = T::of(rng.random_range(-bound..bound));
                    }
                }
            }
        }
        params
    }

    fn check_params<T: Real>(&self, p: &ModelParameters<T>) -> Result<()> {
        if !p.matches(&self.specs) {
            return Err(Error::Config(
                "parameter set does not match the model configuration".into(),
            ));
        }
        Ok(())
    }

    fn check_image<T: Real>(&self, img: &ImageTensor<T>, what: &'static str) -> Result<()> {
        img.expect_space(Space::Model)?;
        let m = self.cfg.spatial_multiple();
        if img.channels() != IMAGE_CHANNELS
            || img.height() == 0
            || img.width() == 0
            || img.height() % m != 0
            || img.width() % m != 0
        {
            return Err(Error::ShapeMismatch {
                context: what,
                expected: vec![img.batch(), IMAGE_CHANNELS, m, m],
                found: img.shape().to_vec(),
            });
        }
        Ok(())
    }

    fn validate_inputs<T: Real>(
        &self,
        p: &ModelParameters<T>,
        xt: &ImageTensor<T>,
        t: &[usize],
        y0: &ImageTensor<T>,
        diff: Option<&ImageTensor<T>>,
    ) -> Result<()> {
        self.check_params(p)?;
        self.check_image(xt, "predict_noise x_t")?;
        xt.expect_shape(y0, "predict_noise y0")?;
        y0.expect_space(Space::Model)?;
        if self.cfg.use_difference_condition {
            let d = diff.ok_or(Error::MissingDifference)?;
            xt.expect_shape(d, "predict_noise y0 - x_t")?;
        }
        if t.len() != xt.batch() {
            return Err(Error::ShapeMismatch {
                context: "timesteps per batch element",
                expected: vec![xt.batch()],
                found: vec![t.len()],
            });
        }
        if let Some(&bad) = t.iter().find(|&&ti| ti == 0) {
            return Err(Error::TimestepOutOfRange {
                t: bad,
                max: usize::MAX,
            });
        }
        Ok(())
    }

    fn sample_input<T: Real>(
        &self,
        xt: &ImageTensor<T>,
        y0: &ImageTensor<T>,
        diff: Option<&ImageTensor<T>>,
        b: usize,
    ) -> (FeatureMap<T>, FeatureMap<T>) {
        let (h, w) = (xt.height(), xt.width());
        let mut data = Vec::with_capacity(self.cfg.in_channels() * h * w);
        data.extend_from_slice(xt.sample(b));
        data.extend_from_slice(y0.sample(b));
        if self.cfg.use_difference_condition {
            data.extend_from_slice(diff.expect("validated").sample(b));
        }
        let input = FeatureMap::from_vec(self.cfg.in_channels(), h, w, data);
        let y = FeatureMap::from_vec(IMAGE_CHANNELS, h, w, y0.sample(b).to_vec());
        (input, y)
    }

    /// ε̂ for a batch. `diff` must be `y0 - x_t` when the difference condition
    /// is on and is ignored otherwise. Timesteps must be at least 1; the upper
    /// bound belongs to the schedule and is checked by its callers.
    pub fn predict_noise<T: Real>(
        &self,
        p: &ModelParameters<T>,
        xt: &ImageTensor<T>,
        t: &[usize],
        y0: &ImageTensor<T>,
        diff: Option<&ImageTensor<T>>,
    ) -> Result<ImageTensor<T>> {
        self.validate_inputs(p, xt, t, y0, diff)?;
        let mut out = Vec::with_capacity(xt.data().len());
        for (b, &tb) in t.iter().enumerate() {
            let (input, y) = self.sample_input(xt, y0, diff, b);
            let (pred, _) = self.forward_sample(p, &input, tb, &y);
            out.extend_from_slice(&pred.data);
        }
        ImageTensor::new(xt.shape(), out, Space::Model)
            .map_err(|_| Error::NonFinite("noise prediction".into()))
    }

    /// Mean squared error against `eps` and its gradient for every parameter.
    #[allow(clippy::too_many_arguments)]
    pub fn loss_and_grad<T: Real>(
        &self,
        p: &ModelParameters<T>,
        xt: &ImageTensor<T>,
        t: &[usize],
        y0: &ImageTensor<T>,
        diff: Option<&ImageTensor<T>>,
        eps: &ImageTensor<T>,
    ) -> Result<(f64, ModelParameters<T>)> {
        self.validate_inputs(p, xt, t, y0, diff)?;
        xt.expect_shape(eps, "loss target")?;
        let total = xt.data().len() as f64;
        let scale = T::of(2.0 / total);
        let mut grads = p.zeros_like();
        let mut loss = 0.0f64;
        for (b, &tb) in t.iter().enumerate() {
            let (input, y) = self.sample_input(xt, y0, diff, b);
            let (pred, trace) = self.forward_sample(p, &input, tb, &y);
            let target = eps.sample(b);
            let mut dout = FeatureMap::zeros(pred.channels, pred.height, pred.width);
            for ((d, &o), &e) in dout.data.iter_mut().zip(&pred.data).zip(target) {
                let r = o - e;
                loss += r.as_f64() * r.as_f64();
                *d = scale * r;
            }
            self.backward_sample(p, &mut grads, &trace, &dout);
        }
        Ok((loss / total, grads))
    }

    /// CCM pyramid for a batch of `y0` images.
    pub fn ccm_extract<T: Real>(
        &self,
        p: &ModelParameters<T>,
        y0: &ImageTensor<T>,
    ) -> Result<CcmFeatures<T>> {
        if !self.cfg.use_ccm {
            return Err(Error::Config(
                "content compensation is disabled in this model configuration".into(),
            ));
        }
        self.check_params(p)?;
        self.check_image(y0, "ccm_extract y0")?;
        let mut levels = vec![Vec::with_capacity(y0.batch()); self.ccm.len()];
        for b in 0..y0.batch() {
            let y = FeatureMap::from_vec(
                IMAGE_CHANNELS,
                y0.height(),
                y0.width(),
                y0.sample(b).to_vec(),
            );
            for (k, (f, _)) in self.ccm_forward(p, &y).into_iter().enumerate() {
                levels[k].push(f);
            }
        }
        Ok(CcmFeatures { levels })
    }

    fn ccm_forward<T: Real>(
        &self,
        p: &ModelParameters<T>,
        y0: &FeatureMap<T>,
    ) -> Vec<(FeatureMap<T>, ConvCache<T>)> {
        let mut out = Vec::with_capacity(self.ccm.len());
        let mut a = y0.clone();
        for conv in &self.ccm {
            let (f, cache) = conv.forward(p, &a);
            a = FeatureMap::from_vec(f.channels, f.height, f.width, silu(&f.data));
            out.push((f, cache));
        }
        out
    }

    fn time_embedding<T: Real>(&self, t: usize) -> Vec<T> {
        let half = self.cfg.time_embed_dim / 2;
        let ln = Float::ln(10000.0f64);
        let tf = t as f64;
        let freqs = (0..half).map(|i| Float::exp(-ln * i as f64 / half as f64));
        let sin = freqs.clone().map(|f| T::of(Float::sin(tf * f)));
        let cos = freqs.map(|f| T::of(Float::cos(tf * f)));
        sin.chain(cos).collect()
    }

    fn forward_sample<T: Real>(
        &self,
        p: &ModelParameters<T>,
        input: &FeatureMap<T>,
        t: usize,
        y0: &FeatureMap<T>,
    ) -> (FeatureMap<T>, Trace<T>) {
        let temb0 = self.time_embedding::<T>(t);
        let time_h = self.time1.forward(p, &temb0);
        let time_a = silu(&time_h);
        let temb = self.time2.forward(p, &time_a);
        let temb_act = silu(&temb);

        let ccm = if self.cfg.use_ccm {
            self.ccm_forward(p, y0)
        } else {
            Vec::new()
        };

        let (mut h, conv_in) = self.conv_in.forward(p, input);
        let levels = self.encoder.len();
        let mut skips = Vec::with_capacity(levels);
        let mut down = Vec::with_capacity(levels);
        let mut enc = Vec::with_capacity(levels);
        for (k, level) in self.encoder.iter().enumerate() {
            down.push(level.down.as_ref().map(|conv| {
                let (o, c) = conv.forward(p, &h);
                h = o;
                c
            }));
            let last = level.blocks.len() - 1;
            let mut caches = Vec::with_capacity(level.blocks.len());
            for (b, block) in level.blocks.iter().enumerate() {
                if b == last {
                    if let Some((feat, _)) = ccm.get(k) {
                        h.add_assign(feat);
                    }
                }
                let (o, c) = block.forward(p, &h, &temb_act);
                h = o;
                caches.push(c);
            }
            enc.push(caches);
            if k + 1 < levels {
                skips.push(h.clone());
            }
        }

        let mut up: Vec<Option<ConvCache<T>>> = (0..self.decoder.len()).map(|_| None).collect();
        let mut dec: Vec<Vec<ResCache<T>>> = (0..self.decoder.len()).map(|_| Vec::new()).collect();
        for k in (0..self.decoder.len()).rev() {
            let level = &self.decoder[k];
            let (u, c) = level.up.forward(p, &upsample_nearest2x(&h));
            up[k] = Some(c);
            h = u.concat(&skips[k]);
            for block in &level.blocks {
                let (o, c) = block.forward(p, &h, &temb_act);
                h = o;
                dec[k].push(c);
            }
        }

        let (n, head_norm) = self.head_norm.forward(p, &h);
        let a = FeatureMap::from_vec(n.channels, n.height, n.width, silu(&n.data));
        let (out, head_conv) = self.head_conv.forward(p, &a);

        let trace = Trace {
            temb0,
            time_h,
            time_a,
            temb,
            temb_act,
            conv_in,
            ccm,
            down,
            enc,
            up,
            dec,
            head_norm,
            head_act_in: n.data,
            head_conv,
        };
        (out, trace)
    }

    fn backward_sample<T: Real>(
        &self,
        p: &ModelParameters<T>,
        g: &mut ModelParameters<T>,
        tr: &Trace<T>,
        dout: &FeatureMap<T>,
    ) {
        let mut dtemb_act = vec![T::zero(); self.cfg.time_embed_dim];

        let da = self
            .head_conv
            .backward(p, g, &tr.head_conv, dout, true)
            .expect("input gradient requested");
        let dn = FeatureMap::from_vec(
            da.channels,
            da.height,
            da.width,
            silu_backward(&tr.head_act_in, &da.data),
        );
        let mut dh = self.head_norm.backward(p, g, &tr.head_norm, &dn);

        let mut dskips: Vec<Option<FeatureMap<T>>> =
            (0..self.decoder.len()).map(|_| None).collect();
        for (k, level) in self.decoder.iter().enumerate() {
            for (block, cache) in level.blocks.iter().zip(&tr.dec[k]).rev() {
                dh = block.backward(p, g, cache, &dh, &tr.temb_act, &mut dtemb_act);
            }
            let (dup, dskip) = dh.split(self.cfg.level_channels(k));
            dskips[k] = Some(dskip);
            let cache = tr.up[k].as_ref().expect("decoder level ran");
            let du = level
                .up
                .backward(p, g, cache, &dup, true)
                .expect("input gradient requested");
            dh = upsample_nearest2x_backward(&du);
        }

        let mut dfeat: Vec<Option<FeatureMap<T>>> = (0..self.ccm.len()).map(|_| None).collect();
        for (k, level) in self.encoder.iter().enumerate().rev() {
            if let Some(ds) = dskips.get_mut(k).and_then(Option::take) {
                dh.add_assign(&ds);
            }
            let last = level.blocks.len() - 1;
            for (b, (block, cache)) in level.blocks.iter().zip(&tr.enc[k]).enumerate().rev() {
                dh = block.backward(p, g, cache, &dh, &tr.temb_act, &mut dtemb_act);
                if b == last && self.cfg.use_ccm {
                    dfeat[k] = Some(dh.clone());
                }
            }
            if let (Some(conv), Some(cache)) = (&level.down, &tr.down[k]) {
                dh = conv
                    .backward(p, g, cache, &dh, true)
                    .expect("input gradient requested");
            }
        }
        self.conv_in.backward(p, g, &tr.conv_in, &dh, false);

        let dtemb = silu_backward(&tr.temb, &dtemb_act);
        let mut dtime_a = vec![T::zero(); self.cfg.time_embed_dim];
        self.time2
            .backward(p, g, &tr.time_a, &dtemb, Some(&mut dtime_a));
        let dtime_h = silu_backward(&tr.time_h, &dtime_a);
        self.time1.backward(p, g, &tr.temb0, &dtime_h, None);

        let mut dnext: Option<FeatureMap<T>> = None;
        for (k, conv) in self.ccm.iter().enumerate().rev() {
            let (f, cache) = &tr.ccm[k];
            let mut df = dfeat[k]
                .take()
                .unwrap_or_else(|| FeatureMap::zeros(f.channels, f.height, f.width));
            if let Some(da) = dnext.take() {
                let through = silu_backward(&f.data, &da.data);
                for (d, v) in df.data.iter_mut().zip(through) {
                    *d += v;
                }
            }
            dnext = conv.backward(p, g, cache, &df, k > 0);
        }
    }
}

/// Convenience wrapper: build the layout for `cfg` and initialize it.
pub fn init_parameters<T: Real>(cfg: &ModelConfig, seed: u64) -> Result<ModelParameters<T>> {
    Ok(Network::new(cfg)?.init_parameters(seed))
}

/// Convenience wrapper around [`Network::predict_noise`].
pub fn predict_noise<T: Real>(
    params: &ModelParameters<T>,
    cfg: &ModelConfig,
    xt: &ImageTensor<T>,
    t: &[usize],
    y0: &ImageTensor<T>,
    diff: Option<&ImageTensor<T>>,
) -> Result<ImageTensor<T>> {
    Network::new(cfg)?.predict_noise(params, xt, t, y0, diff)
}

/// Convenience wrapper around [`Network::ccm_extract`].
pub fn ccm_extract<T: Real>(
    params: &ModelParameters<T>,
    cfg: &ModelConfig,
    y0: &ImageTensor<T>,
) -> Result<CcmFeatures<T>> {
    Network::new(cfg)?.ccm_extract(params, y0)
}
