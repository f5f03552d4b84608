//! Unimodal and bimodal 3D CNN classifiers.
//!
//! Five convolutional blocks (conv -> group norm -> max pool -> ReLU) with
//! progressively wider filters, a 1x1x1 head convolution, global average
//! pooling, dropout and a single affine softmax classifier. The bimodal
//! variant runs two structurally identical trunks and fuses their pooled
//! features by concatenation just before the classifier.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    dropout, dropout_backward, global_avg_pool, global_avg_pool_backward, maxpool3d,
    maxpool3d_backward, relu, relu_backward, Conv3d, GnCache, GroupNorm, Linear, MaxPoolCache,
    Scalar, Tensor, Visit,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackboneSpec {
    pub block_widths: (usize, usize, usize, usize, usize),
    /// Divides every block width; (32, 64, 128, 256, 256) is width_scale = 1.
    pub width_scale: usize,
    pub head_width: usize,
    pub dropout_rate: f64,
    pub norm_groups: usize,
    pub num_classes: usize,
    pub conv_kernel: usize,
}

impl Default for BackboneSpec {
    fn default() -> Self {
        Self {
            block_widths: (32, 64, 128, 256, 256),
            width_scale: 1,
            head_width: 64,
            dropout_rate: 0.2,
            norm_groups: 8,
            num_classes: 3,
            conv_kernel: 3,
        }
    }
}

impl BackboneSpec {
    pub fn with_width_scale(width_scale: usize) -> Self {
        Self { width_scale, ..Default::default() }
    }

    pub fn widths(&self) -> Result<[usize; 5]> {
        let (a, b, c, d, e) = self.block_widths;
        let ws = self.width_scale;
        if ws == 0 {
            return Err(Error::InvalidConfig("width_scale must be positive".into()));
        }
        let mut out = [0usize; 5];
        for (i, w) in [a, b, c, d, e].into_iter().enumerate() {
            if w % ws != 0 || w / ws == 0 {
                return Err(Error::InvalidConfig(format!(
                    "block width {w} is not divisible by width_scale {ws}"
                )));
            }
            out[i] = w / ws;
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        self.widths()?;
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidConfig(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidConfig("need at least two classes".into()));
        }
        if self.conv_kernel % 2 == 0 || self.conv_kernel == 0 {
            return Err(Error::InvalidConfig("conv_kernel must be odd".into()));
        }
        if self.head_width == 0 {
            return Err(Error::InvalidConfig("head_width must be positive".into()));
        }
        Ok(())
    }
}

/// conv -> group norm -> max pool -> ReLU, with pooling skipped once any
/// axis would drop below 2 (the small-dims rule for desk-scale inputs).
struct Block<S> {
    conv: Conv3d<S>,
    norm: GroupNorm<S>,
}

struct BlockCache<S> {
    x: Tensor<S>,
    gn: GnCache,
    pool: Option<MaxPoolCache>,
    pre_relu: Tensor<S>,
}

fn should_pool(shape: &[usize]) -> bool {
    shape[2..].iter().all(|&d| d / 2 >= 2)
}

impl<S: Scalar> Block<S> {
    fn new(in_ch: usize, out_ch: usize, spec: &BackboneSpec, rng: &mut ChaCha8Rng) -> Self {
        let k = spec.conv_kernel;
        Self {
            conv: Conv3d::new(in_ch, out_ch, k, 1, k / 2, rng),
            norm: GroupNorm::new(out_ch, spec.norm_groups),
        }
    }

    fn forward(&self, x: &Tensor<S>) -> (Tensor<S>, BlockCache<S>) {
        let conv_out = self.conv.forward(x);
        let (norm_out, gn) = self.norm.forward(&conv_out);
        let (pre_relu, pool) = if should_pool(norm_out.shape()) {
            let (pooled, cache) = maxpool3d(&norm_out);
            (pooled, Some(cache))
        } else {
            (norm_out.clone(), None)
        };
        let y = relu(&pre_relu);
        (y, BlockCache { x: x.clone(), gn, pool, pre_relu })
    }

    fn backward(&mut self, cache: &BlockCache<S>, gy: &Tensor<S>) -> Tensor<S> {
        let g_pre_relu = relu_backward(&cache.pre_relu, gy);
        let g_norm_out = match &cache.pool {
            Some(pool) => maxpool3d_backward(pool, &g_pre_relu),
            None => g_pre_relu,
        };
        // norm.backward needs the conv output, recomputed cheaply from x.
        let conv_out = self.conv.forward(&cache.x);
        let g_conv_out = self.norm.backward(&conv_out, &cache.gn, &g_norm_out);
        self.conv.backward(&cache.x, &g_conv_out)
    }

    fn visit_params(&mut self, prefix: &str, f: Visit<S>) {
        self.conv.visit_params(&format!("{prefix}.conv"), f);
        self.norm.visit_params(&format!("{prefix}.norm"), f);
    }
}

/// Five blocks plus the 1x1x1 head and global average pooling; produces a
/// `[B, head_width]` feature vector.
struct Trunk<S> {
    blocks: Vec<Block<S>>,
    head_conv: Conv3d<S>,
    head_norm: GroupNorm<S>,
}

struct TrunkTrace<S> {
    block_caches: Vec<BlockCache<S>>,
    block_out: Tensor<S>,
    head_gn: GnCache,
    head_norm_out: Tensor<S>,
    head_pre_relu_shape: Vec<usize>,
}

impl<S: Scalar> Trunk<S> {
    fn new(spec: &BackboneSpec, rng: &mut ChaCha8Rng) -> Result<Self> {
        let widths = spec.widths()?;
        let mut blocks = Vec::with_capacity(5);
        let mut in_ch = 1;
        for &w in &widths {
            blocks.push(Block::new(in_ch, w, spec, rng));
            in_ch = w;
        }
        Ok(Self {
            blocks,
            head_conv: Conv3d::new(in_ch, spec.head_width, 1, 1, 0, rng),
            head_norm: GroupNorm::new(spec.head_width, spec.norm_groups),
        })
    }

    fn forward(&self, x: &Tensor<S>) -> (Tensor<S>, TrunkTrace<S>) {
        let mut h = x.clone();
        let mut block_caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (out, cache) = block.forward(&h);
            block_caches.push(cache);
            h = out;
        }
        let block_out = h;
        let head_conv_out = self.head_conv.forward(&block_out);
        let (head_norm_out, head_gn) = self.head_norm.forward(&head_conv_out);
        let head_relu_out = relu(&head_norm_out);
        let features = global_avg_pool(&head_relu_out);
        let trace = TrunkTrace {
            block_caches,
            block_out,
            head_gn,
            head_pre_relu_shape: head_norm_out.shape().to_vec(),
            head_norm_out,
        };
        (features, trace)
    }

    fn backward(&mut self, trace: &TrunkTrace<S>, g_features: &Tensor<S>) {
        let g_relu_out = global_avg_pool_backward(&trace.head_pre_relu_shape, g_features);
        let g_norm_out = relu_backward(&trace.head_norm_out, &g_relu_out);
        let head_conv_out = self.head_conv.forward(&trace.block_out);
        let g_head_conv_out =
            self.head_norm.backward(&head_conv_out, &trace.head_gn, &g_norm_out);
        let mut g = self.head_conv.backward(&trace.block_out, &g_head_conv_out);
        for (block, cache) in self.blocks.iter_mut().zip(&trace.block_caches).rev() {
            g = block.backward(cache, &g);
        }
    }

    fn visit_params(&mut self, prefix: &str, f: Visit<S>) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_params(&format!("{prefix}.block{i}"), f);
        }
        self.head_conv.visit_params(&format!("{prefix}.head_conv"), f);
        self.head_norm.visit_params(&format!("{prefix}.head_norm"), f);
    }
}

pub struct UnimodalCnn<S> {
    pub spec: BackboneSpec,
    pub dims: (usize, usize, usize),
    trunk: Trunk<S>,
    classifier: Linear<S>,
}

pub struct UnimodalTrace<S> {
    trunk: TrunkTrace<S>,
    dropout_mask: Option<Vec<bool>>,
    dropped: Tensor<S>,
}

impl<S: Scalar> UnimodalCnn<S> {
    pub fn new(spec: &BackboneSpec, dims: (usize, usize, usize), seed: u64) -> Result<Self> {
        spec.validate()?;
        check_dims(dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trunk = Trunk::new(spec, &mut rng)?;
        let classifier = Linear::new(spec.head_width, spec.num_classes, &mut rng);
        Ok(Self { spec: spec.clone(), dims, trunk, classifier })
    }

    /// Logits for a `[B, 1, X, Y, Z]` batch. Dropout is active only when
    /// `training` is true.
    pub fn forward<R: rand::Rng>(
        &self,
        x: &Tensor<S>,
        training: bool,
        rng: &mut R,
    ) -> (Tensor<S>, UnimodalTrace<S>) {
        let (features, trunk) = self.trunk.forward(x);
        let (dropped, dropout_mask) = dropout(&features, self.spec.dropout_rate, training, rng);
        let logits = self.classifier.forward(&dropped);
        (logits, UnimodalTrace { trunk, dropout_mask, dropped })
    }

    pub fn backward(&mut self, trace: &UnimodalTrace<S>, g_logits: &Tensor<S>) {
        let g_dropped = self.classifier.backward(&trace.dropped, g_logits);
        let g_features =
            dropout_backward(&trace.dropout_mask, self.spec.dropout_rate, &g_dropped);
        self.trunk.backward(&trace.trunk, &g_features);
    }

    pub fn visit_params(&mut self, f: Visit<S>) {
        self.trunk.visit_params("trunk", f);
        self.classifier.visit_params("classifier", f);
    }
}

pub struct BimodalCnn<S> {
    pub spec: BackboneSpec,
    pub dims: (usize, usize, usize),
    trunk_t1: Trunk<S>,
    trunk_dwi: Trunk<S>,
    classifier: Linear<S>,
}

pub struct BimodalTrace<S> {
    trunk_t1: TrunkTrace<S>,
    trunk_dwi: TrunkTrace<S>,
    dropout_mask: Option<Vec<bool>>,
    dropped: Tensor<S>,
}

impl<S: Scalar> BimodalCnn<S> {
    pub fn new(spec: &BackboneSpec, dims: (usize, usize, usize), seed: u64) -> Result<Self> {
        spec.validate()?;
        check_dims(dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trunk_t1 = Trunk::new(spec, &mut rng)?;
        let trunk_dwi = Trunk::new(spec, &mut rng)?;
        let classifier = Linear::new(2 * spec.head_width, spec.num_classes, &mut rng);
        Ok(Self { spec: spec.clone(), dims, trunk_t1, trunk_dwi, classifier })
    }

    /// Logits for paired `[B, 1, X, Y, Z]` batches (T1, DWI); features from
    /// the two branches are concatenated in a late-fusion manner.
    pub fn forward<R: rand::Rng>(
        &self,
        t1: &Tensor<S>,
        dwi: &Tensor<S>,
        training: bool,
        rng: &mut R,
    ) -> (Tensor<S>, BimodalTrace<S>) {
        let (f1, trunk_t1) = self.trunk_t1.forward(t1);
        let (f2, trunk_dwi) = self.trunk_dwi.forward(dwi);
        let b = f1.shape()[0];
        let d = f1.shape()[1];
        let mut fused = Tensor::zeros(&[b, 2 * d]);
        for bi in 0..b {
            fused.data_mut()[bi * 2 * d..bi * 2 * d + d]
                .copy_from_slice(&f1.data()[bi * d..(bi + 1) * d]);
            fused.data_mut()[bi * 2 * d + d..(bi + 1) * 2 * d]
                .copy_from_slice(&f2.data()[bi * d..(bi + 1) * d]);
        }
        let (dropped, dropout_mask) = dropout(&fused, self.spec.dropout_rate, training, rng);
        let logits = self.classifier.forward(&dropped);
        (logits, BimodalTrace { trunk_t1, trunk_dwi, dropout_mask, dropped })
    }

    pub fn backward(&mut self, trace: &BimodalTrace<S>, g_logits: &Tensor<S>) {
        let g_dropped = self.classifier.backward(&trace.dropped, g_logits);
        let g_fused = dropout_backward(&trace.dropout_mask, self.spec.dropout_rate, &g_dropped);
        let b = g_fused.shape()[0];
        let d = g_fused.shape()[1] / 2;
        let mut g1 = Tensor::zeros(&[b, d]);
        let mut g2 = Tensor::zeros(&[b, d]);
        for bi in 0..b {
            g1.data_mut()[bi * d..(bi + 1) * d]
                .copy_from_slice(&g_fused.data()[bi * 2 * d..bi * 2 * d + d]);
            g2.data_mut()[bi * d..(bi + 1) * d]
                .copy_from_slice(&g_fused.data()[bi * 2 * d + d..(bi + 1) * 2 * d]);
        }
        self.trunk_t1.backward(&trace.trunk_t1, &g1);
        self.trunk_dwi.backward(&trace.trunk_dwi, &g2);
    }

    pub fn visit_params(&mut self, f: Visit<S>) {
        self.trunk_t1.visit_params("trunk_t1", f);
        self.trunk_dwi.visit_params("trunk_dwi", f);
        self.classifier.visit_params("classifier", f);
    }
}

fn check_dims(dims: (usize, usize, usize)) -> Result<()> {
    if dims.0 < 4 || dims.1 < 4 || dims.2 < 4 {
        return Err(Error::InvalidConfig(format!(
            "input dims {dims:?} too small for the pooling stack; every axis must be >= 4"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::softmax_rows;
    use rand::Rng;

    fn tiny_spec() -> BackboneSpec {
        BackboneSpec { block_widths: (4, 4, 8, 8, 8), norm_groups: 4, head_width: 8, ..Default::default() }
    }

    #[test]
    fn unimodal_probability_rows_sum_to_one() {
        let model = UnimodalCnn::<f32>::new(&tiny_spec(), (8, 8, 8), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::<f32>::randn(&[2, 1, 8, 8, 8], &mut rng);
        let (logits, _) = model.forward(&x, false, &mut rng);
        assert_eq!(logits.shape(), &[2, 3]);
        let probs = softmax_rows(&logits);
        for bi in 0..2 {
            let sum: f64 = probs.data()[bi * 3..(bi + 1) * 3].iter().map(|v| *v as f64).sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn bimodal_accepts_zero_dwi_branch() {
        let model = BimodalCnn::<f32>::new(&tiny_spec(), (8, 8, 8), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t1 = Tensor::<f32>::randn(&[2, 1, 8, 8, 8], &mut rng);
        let dwi = Tensor::<f32>::zeros(&[2, 1, 8, 8, 8]);
        let (logits, _) = model.forward(&t1, &dwi, false, &mut rng);
        let probs = softmax_rows(&logits);
        for bi in 0..2 {
            let sum: f64 = probs.data()[bi * 3..(bi + 1) * 3].iter().map(|v| *v as f64).sum();
            assert!((sum - 1.0).abs() < 1e-6);
            assert!(probs.data()[bi * 3..(bi + 1) * 3].iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let mut a = UnimodalCnn::<f64>::new(&tiny_spec(), (8, 8, 8), 7).unwrap();
        let mut b = UnimodalCnn::<f64>::new(&tiny_spec(), (8, 8, 8), 7).unwrap();
        let flatten = |m: &mut UnimodalCnn<f64>| {
            let mut v = Vec::new();
            m.visit_params(&mut |_, p, _| v.extend(p.data().to_vec()));
            v
        };
        assert_eq!(flatten(&mut a), flatten(&mut b));
    }

    #[test]
    fn too_small_dims_rejected_at_construction() {
        assert!(UnimodalCnn::<f32>::new(&tiny_spec(), (2, 8, 8), 1).is_err());
    }

    /// Analytic parameter tally at width_scale = 8 (widths 4, 8, 16, 32, 32)
    /// with the default head width of 64.
    #[test]
    fn parameter_counts_match_analytic_tally() {
        let spec = BackboneSpec::with_width_scale(8);
        let conv = |cin: usize, cout: usize, k: usize| cout * cin * k * k * k + cout;
        let gn = |c: usize| 2 * c;
        let lin = |din: usize, dout: usize| dout * din + dout;
        let block = |cin: usize, cout: usize| conv(cin, cout, 3) + gn(cout);
        let trunk = block(1, 4)
            + block(4, 8)
            + block(8, 16)
            + block(16, 32)
            + block(32, 32)
            + conv(32, 64, 1)
            + gn(64);

        let mut uni = UnimodalCnn::<f64>::new(&spec, (16, 16, 16), 1).unwrap();
        let expected_uni = trunk + lin(64, 3);
        assert_eq!(crate::nn::param_count(|f| uni.visit_params(f)), expected_uni);

        let mut bi = BimodalCnn::<f64>::new(&spec, (16, 16, 16), 1).unwrap();
        let expected_bi = 2 * trunk + lin(128, 3);
        assert_eq!(crate::nn::param_count(|f| bi.visit_params(f)), expected_bi);
    }

    #[test]
    fn pooling_skips_once_axes_get_small() {
        // 8^3 input: blocks pool at 8 and 4, then skip at 2.
        assert!(should_pool(&[1, 1, 8, 8, 8]));
        assert!(should_pool(&[1, 1, 4, 4, 4]));
        assert!(!should_pool(&[1, 1, 2, 2, 2]));
        assert!(!should_pool(&[1, 1, 8, 8, 2]));
        let model = UnimodalCnn::<f32>::new(&tiny_spec(), (8, 8, 8), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::<f32>::randn(&[1, 1, 8, 8, 8], &mut rng);
        let (logits, _) = model.forward(&x, false, &mut rng);
        assert_eq!(logits.shape(), &[1, 3]);
    }

    #[test]
    fn argmax_invariant_under_monotone_rescaling() {
        let model = UnimodalCnn::<f64>::new(&tiny_spec(), (8, 8, 8), 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..5 {
            let x = Tensor::<f64>::randn(&[3, 1, 8, 8, 8], &mut rng);
            let (logits, _) = model.forward(&x, false, &mut rng);
            let rescaled = Tensor::<f64>::from_data(
                logits.shape(),
                logits.data().iter().map(|&v| 2.5 * v + 1.0).collect(),
            );
            let argmax = |t: &Tensor<f64>, bi: usize| {
                let row = &t.data()[bi * 3..(bi + 1) * 3];
                (0..3).max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap()).unwrap()
            };
            for bi in 0..3 {
                assert_eq!(argmax(&logits, bi), argmax(&rescaled, bi));
            }
        }
    }

    /// Finite-difference check of the cross-entropy loss gradient through
    /// the full unimodal model in f64 (dropout off).
    #[test]
    fn classifier_loss_gradients_match_finite_differences() {
        use crate::nn::{cross_entropy_from_probs, grad_get, param_add, param_count, zero_grads};
        let spec = BackboneSpec {
            dropout_rate: 0.0,
            ..tiny_spec()
        };
        let mut model = UnimodalCnn::<f64>::new(&spec, (8, 8, 8), 20).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = Tensor::<f64>::randn(&[3, 1, 8, 8, 8], &mut rng);
        let labels = vec![0usize, 1, 2];

        let loss = |m: &UnimodalCnn<f64>| {
            let mut r = ChaCha8Rng::seed_from_u64(0);
            let (logits, _) = m.forward(&x, false, &mut r);
            cross_entropy_from_probs(&softmax_rows(&logits), &labels).0
        };

        zero_grads(|f| model.visit_params(f));
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let (logits, trace) = model.forward(&x, false, &mut r);
        let (_, glogits) = cross_entropy_from_probs(&softmax_rows(&logits), &labels);
        model.backward(&trace, &glogits);

        let n = param_count(|f| model.visit_params(f));
        let h = 1e-5;
        let mut checked = 0;
        let mut trial = 0;
        while checked < 10 && trial < 300 {
            trial += 1;
            let idx = rng.gen_range(0..n);
            let analytic = grad_get(|f| model.visit_params(f), idx);
            if analytic.abs() < 1e-7 {
                continue;
            }
            param_add(|f| model.visit_params(f), idx, h);
            let lp = loss(&model);
            param_add(|f| model.visit_params(f), idx, -2.0 * h);
            let lm = loss(&model);
            param_add(|f| model.visit_params(f), idx, h);
            let numeric = (lp - lm) / (2.0 * h);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs());
            assert!(rel <= 1e-2, "param {idx}: {analytic} vs {numeric} (rel {rel})");
            checked += 1;
        }
        assert!(checked >= 10, "only checked {checked}");
    }
}
