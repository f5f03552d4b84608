//! Conditional 3D residual U-Net noise predictor.
//!
//! Input is a 2-channel volume (clean T1 concatenated with the noisy FA);
//! output is the 1-channel predicted noise. Three encoder stages with two
//! stride-2 downsamples between them, self-attention at the final encoder
//! stage and its mirror decoder stage, per-stage concatenative skips, and a
//! sinusoidal timestep embedding fed to every residual block.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    concat_channels, silu, silu_backward, split_channels, upsample_nearest2x,
    upsample_nearest2x_backward, AttnCache, Conv3d, GnCache, GroupNorm, Linear, SelfAttention,
    Tensor, Scalar, Visit,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserSpec {
    pub stages: usize,
    pub channel_widths: (usize, usize, usize),
    /// Divides every channel width; the paper-scale (128, 128, 256) is
    /// width_scale = 1.
    pub width_scale: usize,
    pub attention_at_final_encoder_stage: bool,
    pub in_channels: usize,
    pub out_channels: usize,
    pub residual_blocks_per_stage: usize,
    pub norm_groups: usize,
    /// Defaults to 4x the first (scaled) width when absent.
    pub time_embedding_dim: Option<usize>,
}

impl Default for DenoiserSpec {
    fn default() -> Self {
        Self {
            stages: 3,
            channel_widths: (128, 128, 256),
            width_scale: 1,
            attention_at_final_encoder_stage: true,
            in_channels: 2,
            out_channels: 1,
            residual_blocks_per_stage: 2,
            norm_groups: 8,
            time_embedding_dim: None,
        }
    }
}

impl DenoiserSpec {
    pub fn with_width_scale(width_scale: usize) -> Self {
        Self { width_scale, ..Default::default() }
    }

    /// Channel widths after applying the width scale.
    pub fn widths(&self) -> Result<[usize; 3]> {
        let (a, b, c) = self.channel_widths;
        let ws = self.width_scale;
        if ws == 0 {
            return Err(Error::InvalidConfig("width_scale must be positive".into()));
        }
        for w in [a, b, c] {
            if w % ws != 0 || w / ws == 0 {
                return Err(Error::InvalidConfig(format!(
                    "width {w} is not divisible by width_scale {ws}"
                )));
            }
        }
        Ok([a / ws, b / ws, c / ws])
    }

    pub fn temb_dim(&self) -> Result<usize> {
        let dim = match self.time_embedding_dim {
            Some(d) => d,
            None => 4 * self.widths()?[0],
        };
        if dim < 2 || dim % 2 != 0 {
            return Err(Error::InvalidConfig(format!(
                "time_embedding_dim must be even and >= 2, got {dim}"
            )));
        }
        Ok(dim)
    }

    pub fn validate(&self, dims: (usize, usize, usize)) -> Result<()> {
        if self.stages != 3 {
            return Err(Error::InvalidConfig("the denoiser is a 3-stage U-Net".into()));
        }
        if self.in_channels != 2 || self.out_channels != 1 {
            return Err(Error::InvalidConfig(
                "conditioning fixes in_channels = 2 (T1 + noisy FA) and out_channels = 1".into(),
            ));
        }
        if self.residual_blocks_per_stage == 0 {
            return Err(Error::InvalidConfig("need at least one residual block per stage".into()));
        }
        self.widths()?;
        self.temb_dim()?;
        for (axis, n) in [("x", dims.0), ("y", dims.1), ("z", dims.2)] {
            if n % 4 != 0 || n == 0 {
                return Err(Error::InvalidConfig(format!(
                    "spatial dim {axis} = {n} must be divisible by 2^(stages-1) = 4"
                )));
            }
        }
        Ok(())
    }
}

/// Sinusoidal embedding of integer timesteps.
fn sinusoidal_embedding<S: Scalar>(ts: &[usize], dim: usize) -> Tensor<S> {
    let half = dim / 2;
    let mut out = Tensor::zeros(&[ts.len(), dim]);
    for (bi, &t) in ts.iter().enumerate() {
        for i in 0..half {
            let freq = if half > 1 {
                (-(10000.0f64.ln()) * i as f64 / (half - 1) as f64).exp()
            } else {
                1.0
            };
            let arg = t as f64 * freq;
            out.data_mut()[bi * dim + i] = S::from_f64(arg.sin());
            out.data_mut()[bi * dim + half + i] = S::from_f64(arg.cos());
        }
    }
    out
}

/// Residual block: norm -> silu -> conv, add projected time embedding,
/// norm -> silu -> conv, plus a (possibly projected) shortcut.
struct ResBlock<S> {
    norm1: GroupNorm<S>,
    conv1: Conv3d<S>,
    temb_proj: Linear<S>,
    norm2: GroupNorm<S>,
    conv2: Conv3d<S>,
    shortcut: Option<Conv3d<S>>,
}

struct ResBlockCache<S> {
    x: Tensor<S>,
    gn1: GnCache,
    n1out: Tensor<S>,
    s1: Tensor<S>,
    h: Tensor<S>,
    gn2: GnCache,
    n2out: Tensor<S>,
    s2: Tensor<S>,
}

impl<S: Scalar> ResBlock<S> {
    fn new(in_ch: usize, out_ch: usize, temb_dim: usize, groups: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            norm1: GroupNorm::new(in_ch, groups),
            conv1: Conv3d::new(in_ch, out_ch, 3, 1, 1, rng),
            temb_proj: Linear::new(temb_dim, out_ch, rng),
            norm2: GroupNorm::new(out_ch, groups),
            conv2: Conv3d::new(out_ch, out_ch, 3, 1, 1, rng),
            shortcut: if in_ch != out_ch {
                Some(Conv3d::new(in_ch, out_ch, 1, 1, 0, rng))
            } else {
                None
            },
        }
    }

    /// `st` is silu(temb), shared across blocks: `[B, temb_dim]`.
    fn forward(&self, x: &Tensor<S>, st: &Tensor<S>) -> (Tensor<S>, ResBlockCache<S>) {
        let (n1out, gn1) = self.norm1.forward(x);
        let s1 = silu(&n1out);
        let mut h = self.conv1.forward(&s1);
        let t_add = self.temb_proj.forward(st); // [B, out_ch]
        let b = h.shape()[0];
        let c = h.shape()[1];
        let spatial: usize = h.shape()[2..].iter().product();
        for bi in 0..b {
            for ci in 0..c {
                let add = t_add.data()[bi * c + ci];
                for v in h.data_mut()[(bi * c + ci) * spatial..(bi * c + ci + 1) * spatial].iter_mut() {
                    *v = *v + add;
                }
            }
        }
        let (n2out, gn2) = self.norm2.forward(&h);
        let s2 = silu(&n2out);
        let mut y = self.conv2.forward(&s2);
        match &self.shortcut {
            Some(conv) => y.add_assign(&conv.forward(x)),
            None => y.add_assign(x),
        }
        (y, ResBlockCache { x: x.clone(), gn1, n1out, s1, h, gn2, n2out, s2 })
    }

    /// Returns the input gradient; accumulates the silu(temb) gradient into
    /// `g_st`.
    fn backward(&mut self, cache: &ResBlockCache<S>, st: &Tensor<S>, gy: &Tensor<S>, g_st: &mut Tensor<S>) -> Tensor<S> {
        let g_s2 = self.conv2.backward(&cache.s2, gy);
        let g_n2out = silu_backward(&cache.n2out, &g_s2);
        let g_h = self.norm2.backward(&cache.h, &cache.gn2, &g_n2out);

        // Time projection: the add broadcast per channel sums over space.
        let b = g_h.shape()[0];
        let c = g_h.shape()[1];
        let spatial: usize = g_h.shape()[2..].iter().product();
        let mut g_tadd = Tensor::zeros(&[b, c]);
        for bi in 0..b {
            for ci in 0..c {
                let sum: S = g_h.data()[(bi * c + ci) * spatial..(bi * c + ci + 1) * spatial]
                    .iter()
                    .copied()
                    .sum();
                g_tadd.data_mut()[bi * c + ci] = sum;
            }
        }
        g_st.add_assign(&self.temb_proj.backward(st, &g_tadd));

        let g_s1 = self.conv1.backward(&cache.s1, &g_h);
        let g_n1out = silu_backward(&cache.n1out, &g_s1);
        let mut gx = self.norm1.backward(&cache.x, &cache.gn1, &g_n1out);
        match &mut self.shortcut {
            Some(conv) => gx.add_assign(&conv.backward(&cache.x, gy)),
            None => gx.add_assign(gy),
        }
        gx
    }

    fn visit_params(&mut self, prefix: &str, f: Visit<S>) {
        self.norm1.visit_params(&format!("{prefix}.norm1"), f);
        self.conv1.visit_params(&format!("{prefix}.conv1"), f);
        self.temb_proj.visit_params(&format!("{prefix}.temb_proj"), f);
        self.norm2.visit_params(&format!("{prefix}.norm2"), f);
        self.conv2.visit_params(&format!("{prefix}.conv2"), f);
        if let Some(conv) = &mut self.shortcut {
            conv.visit_params(&format!("{prefix}.shortcut"), f);
        }
    }
}

pub struct UNet3d<S> {
    pub spec: DenoiserSpec,
    pub dims: (usize, usize, usize),
    temb_dim: usize,
    time_mlp1: Linear<S>,
    time_mlp2: Linear<S>,
    stem: Conv3d<S>,
    enc1: Vec<ResBlock<S>>,
    down1: Conv3d<S>,
    enc2: Vec<ResBlock<S>>,
    down2: Conv3d<S>,
    enc3: Vec<ResBlock<S>>,
    enc_attn: Option<SelfAttention<S>>,
    dec3: Vec<ResBlock<S>>,
    dec_attn: Option<SelfAttention<S>>,
    up2_conv: Conv3d<S>,
    dec2: Vec<ResBlock<S>>,
    up1_conv: Conv3d<S>,
    dec1: Vec<ResBlock<S>>,
    head_norm: GroupNorm<S>,
    head_conv: Conv3d<S>,
}

pub struct UNetTrace<S> {
    sin_emb: Tensor<S>,
    mlp1_out: Tensor<S>,
    mlp1_silu: Tensor<S>,
    temb: Tensor<S>,
    st: Tensor<S>,
    x: Tensor<S>,
    enc1_caches: Vec<ResBlockCache<S>>,
    skip1: Tensor<S>,
    enc2_caches: Vec<ResBlockCache<S>>,
    skip2: Tensor<S>,
    enc3_caches: Vec<ResBlockCache<S>>,
    enc3_out: Tensor<S>,
    enc_attn_cache: Option<AttnCache<S>>,
    dec3_caches: Vec<ResBlockCache<S>>,
    dec3_out: Tensor<S>,
    dec_attn_cache: Option<AttnCache<S>>,
    dec_attn_out: Tensor<S>,
    up2_ups: Tensor<S>,
    up2_out: Tensor<S>,
    dec2_caches: Vec<ResBlockCache<S>>,
    dec2_out: Tensor<S>,
    up1_ups: Tensor<S>,
    up1_out: Tensor<S>,
    dec1_caches: Vec<ResBlockCache<S>>,
    dec1_out: Tensor<S>,
    head_gn: GnCache,
    head_norm_out: Tensor<S>,
    head_silu: Tensor<S>,
}

impl<S: Scalar> UNet3d<S> {
    /// Builds a denoiser with seeded initialization; equal `(spec, dims,
    /// seed)` give bitwise-identical parameters.
    pub fn new(spec: &DenoiserSpec, dims: (usize, usize, usize), seed: u64) -> Result<Self> {
        spec.validate(dims)?;
        let [w1, w2, w3] = spec.widths()?;
        let temb_dim = spec.temb_dim()?;
        let groups = spec.norm_groups;
        let nb = spec.residual_blocks_per_stage;
        let rng = &mut ChaCha8Rng::seed_from_u64(seed);

        let blocks = |in_ch: usize, ch: usize, rng: &mut ChaCha8Rng| -> Vec<ResBlock<S>> {
            (0..nb)
                .map(|i| ResBlock::new(if i == 0 { in_ch } else { ch }, ch, temb_dim, groups, rng))
                .collect()
        };

        let time_mlp1 = Linear::new(temb_dim, temb_dim, rng);
        let time_mlp2 = Linear::new(temb_dim, temb_dim, rng);
        let stem = Conv3d::new(spec.in_channels, w1, 3, 1, 1, rng);
        let enc1 = blocks(w1, w1, rng);
        let down1 = Conv3d::new(w1, w2, 3, 2, 1, rng);
        let enc2 = blocks(w2, w2, rng);
        let down2 = Conv3d::new(w2, w3, 3, 2, 1, rng);
        let enc3 = blocks(w3, w3, rng);
        let enc_attn = spec
            .attention_at_final_encoder_stage
            .then(|| SelfAttention::new(w3, groups, rng));
        let dec3 = blocks(w3, w3, rng);
        let dec_attn = spec
            .attention_at_final_encoder_stage
            .then(|| SelfAttention::new(w3, groups, rng));
        let up2_conv = Conv3d::new(w3, w2, 3, 1, 1, rng);
        let dec2 = blocks(2 * w2, w2, rng);
        let up1_conv = Conv3d::new(w2, w1, 3, 1, 1, rng);
        let dec1 = blocks(2 * w1, w1, rng);
        let head_norm = GroupNorm::new(w1, groups);
        let mut head_conv = Conv3d::new(w1, spec.out_channels, 3, 1, 1, rng);
        // Zero-initialized head: an untrained model predicts zero noise.
        head_conv.zero_init();

        Ok(Self {
            spec: spec.clone(),
            dims,
            temb_dim,
            time_mlp1,
            time_mlp2,
            stem,
            enc1,
            down1,
            enc2,
            down2,
            enc3,
            enc_attn,
            dec3,
            dec_attn,
            up2_conv,
            dec2,
            up1_conv,
            dec1,
            head_norm,
            head_conv,
        })
    }

    /// Predicted noise for a batch of 2-channel inputs at the given
    /// timesteps. Returns the full trace needed by [`Self::backward`].
    pub fn forward(&self, x: &Tensor<S>, ts: &[usize]) -> (Tensor<S>, UNetTrace<S>) {
        assert_eq!(x.shape()[0], ts.len(), "batch/timestep count mismatch");
        assert_eq!(x.shape()[1], self.spec.in_channels, "input channels");
        for d in &x.shape()[2..] {
            assert_eq!(d % 4, 0, "spatial dims must be divisible by 4");
        }

        let sin_emb = sinusoidal_embedding::<S>(ts, self.temb_dim);
        let mlp1_out = self.time_mlp1.forward(&sin_emb);
        let mlp1_silu = silu(&mlp1_out);
        let temb = self.time_mlp2.forward(&mlp1_silu);
        let st = silu(&temb);

        let run_blocks = |blocks: &[ResBlock<S>], input: &Tensor<S>| {
            let mut caches = Vec::with_capacity(blocks.len());
            let mut h = input.clone();
            for b in blocks {
                let (out, cache) = b.forward(&h, &st);
                caches.push(cache);
                h = out;
            }
            (h, caches)
        };

        let stem_out = self.stem.forward(x);
        let (skip1, enc1_caches) = run_blocks(&self.enc1, &stem_out);
        let down1_out = self.down1.forward(&skip1);
        let (skip2, enc2_caches) = run_blocks(&self.enc2, &down1_out);
        let down2_out = self.down2.forward(&skip2);
        let (enc3_out, enc3_caches) = run_blocks(&self.enc3, &down2_out);
        let (enc_attn_out, enc_attn_cache) = match &self.enc_attn {
            Some(attn) => {
                let (y, c) = attn.forward(&enc3_out);
                (y, Some(c))
            }
            None => (enc3_out.clone(), None),
        };
        let (dec3_out, dec3_caches) = run_blocks(&self.dec3, &enc_attn_out);
        let (dec_attn_out, dec_attn_cache) = match &self.dec_attn {
            Some(attn) => {
                let (y, c) = attn.forward(&dec3_out);
                (y, Some(c))
            }
            None => (dec3_out.clone(), None),
        };
        let up2_ups = upsample_nearest2x(&dec_attn_out);
        let up2_out = self.up2_conv.forward(&up2_ups);
        let cat2 = concat_channels(&up2_out, &skip2);
        let (dec2_out, dec2_caches) = run_blocks(&self.dec2, &cat2);
        let up1_ups = upsample_nearest2x(&dec2_out);
        let up1_out = self.up1_conv.forward(&up1_ups);
        let cat1 = concat_channels(&up1_out, &skip1);
        let (dec1_out, dec1_caches) = run_blocks(&self.dec1, &cat1);
        let (head_norm_out, head_gn) = self.head_norm.forward(&dec1_out);
        let head_silu = silu(&head_norm_out);
        let eps_hat = self.head_conv.forward(&head_silu);

        let trace = UNetTrace {
            sin_emb,
            mlp1_out,
            mlp1_silu,
            temb,
            st,
            x: x.clone(),
            enc1_caches,
            skip1,
            enc2_caches,
            skip2,
            enc3_caches,
            enc3_out,
            enc_attn_cache,
            dec3_caches,
            dec3_out,
            dec_attn_cache,
            dec_attn_out,
            up2_ups,
            up2_out,
            dec2_caches,
            dec2_out,
            up1_ups,
            up1_out,
            dec1_caches,
            dec1_out,
            head_gn,
            head_norm_out,
            head_silu,
        };
        (eps_hat, trace)
    }

    /// Accumulates parameter gradients for `d loss / d eps_hat`.
    pub fn backward(&mut self, trace: &UNetTrace<S>, g_eps_hat: &Tensor<S>) {
        let mut g_st = Tensor::zeros(trace.st.shape());

        let g_head_silu = self.head_conv.backward(&trace.head_silu, g_eps_hat);
        let g_head_norm_out = silu_backward(&trace.head_norm_out, &g_head_silu);
        let g_dec1_out =
            self.head_norm.backward(&trace.dec1_out, &trace.head_gn, &g_head_norm_out);

        let back_blocks = |blocks: &mut [ResBlock<S>],
                           caches: &[ResBlockCache<S>],
                           st: &Tensor<S>,
                           gy: &Tensor<S>,
                           g_st: &mut Tensor<S>| {
            let mut g = gy.clone();
            for (b, cache) in blocks.iter_mut().zip(caches).rev() {
                g = b.backward(cache, st, &g, g_st);
            }
            g
        };

        let g_cat1 = back_blocks(&mut self.dec1, &trace.dec1_caches, &trace.st, &g_dec1_out, &mut g_st);
        let w1 = trace.up1_out.shape()[1];
        let (g_up1_out, mut g_skip1) = split_channels(&g_cat1, w1);
        let g_up1_ups = self.up1_conv.backward(&trace.up1_ups, &g_up1_out);
        let g_dec2_out = upsample_nearest2x_backward(trace.dec2_out.shape(), &g_up1_ups);

        let g_cat2 = back_blocks(&mut self.dec2, &trace.dec2_caches, &trace.st, &g_dec2_out, &mut g_st);
        let w2 = trace.up2_out.shape()[1];
        let (g_up2_out, mut g_skip2) = split_channels(&g_cat2, w2);
        let g_up2_ups = self.up2_conv.backward(&trace.up2_ups, &g_up2_out);
        let g_dec_attn_out = upsample_nearest2x_backward(trace.dec_attn_out.shape(), &g_up2_ups);

        let g_dec3_out = match (&mut self.dec_attn, &trace.dec_attn_cache) {
            (Some(attn), Some(cache)) => attn.backward(&trace.dec3_out, cache, &g_dec_attn_out),
            _ => g_dec_attn_out,
        };
        let g_enc_attn_out =
            back_blocks(&mut self.dec3, &trace.dec3_caches, &trace.st, &g_dec3_out, &mut g_st);
        let g_enc3_out = match (&mut self.enc_attn, &trace.enc_attn_cache) {
            (Some(attn), Some(cache)) => attn.backward(&trace.enc3_out, cache, &g_enc_attn_out),
            _ => g_enc_attn_out,
        };
        let g_down2_out =
            back_blocks(&mut self.enc3, &trace.enc3_caches, &trace.st, &g_enc3_out, &mut g_st);
        g_skip2.add_assign(&self.down2.backward(&trace.skip2, &g_down2_out));
        let g_down1_out =
            back_blocks(&mut self.enc2, &trace.enc2_caches, &trace.st, &g_skip2, &mut g_st);
        g_skip1.add_assign(&self.down1.backward(&trace.skip1, &g_down1_out));
        let g_stem_out =
            back_blocks(&mut self.enc1, &trace.enc1_caches, &trace.st, &g_skip1, &mut g_st);
        let _ = self.stem.backward(&trace.x, &g_stem_out);

        // Time-embedding path, shared by every residual block.
        let g_temb = silu_backward(&trace.temb, &g_st);
        let g_mlp1_silu = self.time_mlp2.backward(&trace.mlp1_silu, &g_temb);
        let g_mlp1_out = silu_backward(&trace.mlp1_out, &g_mlp1_silu);
        let _ = self.time_mlp1.backward(&trace.sin_emb, &g_mlp1_out);
    }

    pub fn visit_params(&mut self, f: Visit<S>) {
        self.time_mlp1.visit_params("time_mlp1", f);
        self.time_mlp2.visit_params("time_mlp2", f);
        self.stem.visit_params("stem", f);
        for (i, b) in self.enc1.iter_mut().enumerate() {
            b.visit_params(&format!("enc1.{i}"), f);
        }
        self.down1.visit_params("down1", f);
        for (i, b) in self.enc2.iter_mut().enumerate() {
            b.visit_params(&format!("enc2.{i}"), f);
        }
        self.down2.visit_params("down2", f);
        for (i, b) in self.enc3.iter_mut().enumerate() {
            b.visit_params(&format!("enc3.{i}"), f);
        }
        if let Some(attn) = &mut self.enc_attn {
            attn.visit_params("enc_attn", f);
        }
        for (i, b) in self.dec3.iter_mut().enumerate() {
            b.visit_params(&format!("dec3.{i}"), f);
        }
        if let Some(attn) = &mut self.dec_attn {
            attn.visit_params("dec_attn", f);
        }
        self.up2_conv.visit_params("up2_conv", f);
        for (i, b) in self.dec2.iter_mut().enumerate() {
            b.visit_params(&format!("dec2.{i}"), f);
        }
        self.up1_conv.visit_params("up1_conv", f);
        for (i, b) in self.dec1.iter_mut().enumerate() {
            b.visit_params(&format!("dec1.{i}"), f);
        }
        self.head_norm.visit_params("head_norm", f);
        self.head_conv.visit_params("head_conv", f);
    }

    pub fn param_count(&mut self) -> usize {
        crate::nn::param_count(|f| self.visit_params(f))
    }
}
