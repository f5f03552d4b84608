//! Supervised training with AdamW, early stopping on validation accuracy,
//! and deterministic inference.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::canonical_json_hash;
use crate::manifest::Diagnosis;
use crate::nn::{
    cross_entropy_from_probs, load_params, save_params, softmax_rows, zero_grads, Adam, Scalar,
    Tensor, TensorEntry, Visit,
};
use crate::rng::seeded;
use crate::volume::{RangeTag, Volume3D};

use super::model::{BackboneSpec, BimodalCnn, BimodalTrace, UnimodalCnn, UnimodalTrace};

pub const MODEL_SCHEMA_VERSION: u32 = 1;

/// Which volumes a classifier consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "t1")]
    T1,
    #[serde(rename = "dwi")]
    Dwi,
    #[serde(rename = "both")]
    Bimodal,
}

impl Modality {
    pub fn name(self) -> &'static str {
        match self {
            Modality::T1 => "T1",
            Modality::Dwi => "DWI",
            Modality::Bimodal => "T1+DWI",
        }
    }
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One labeled sample; either volume may be absent depending on modality.
#[derive(Debug, Clone)]
pub struct LabeledSample {
    pub t1: Option<Volume3D>,
    pub dwi: Option<Volume3D>,
    pub label: Diagnosis,
}

#[derive(Debug, Clone, Default)]
pub struct ClassifierDataset {
    pub samples: Vec<LabeledSample>,
}

impl ClassifierDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label.index()).collect()
    }

    /// Checks every sample carries the modality's volumes at equal dims.
    pub fn validate(&self, modality: Modality) -> Result<(usize, usize, usize)> {
        if self.samples.is_empty() {
            return Err(Error::EmptyDataset("classifier dataset is empty".into()));
        }
        let mut dims = None;
        for (i, s) in self.samples.iter().enumerate() {
            let need: Vec<(&str, &Option<Volume3D>)> = match modality {
                Modality::T1 => vec![("t1", &s.t1)],
                Modality::Dwi => vec![("dwi", &s.dwi)],
                Modality::Bimodal => vec![("t1", &s.t1), ("dwi", &s.dwi)],
            };
            for (name, vol) in need {
                let Some(v) = vol else {
                    return Err(Error::ModalityMismatch {
                        expected: modality.name().into(),
                        actual: format!("sample {i} lacks {name}"),
                    });
                };
                if v.range_tag() != RangeTag::Unit {
                    return Err(Error::InvalidVolume(format!(
                        "sample {i} {name} is not unit-range"
                    )));
                }
                match dims {
                    None => dims = Some(v.dims()),
                    Some(d) if d != v.dims() => {
                        return Err(Error::DimMismatch { a: d, b: v.dims() })
                    }
                    _ => {}
                }
            }
        }
        Ok(dims.expect("nonempty dataset has dims"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_epochs: 100,
            patience: 10,
            learning_rate: 1e-4,
            weight_decay: 1e-5,
            batch_size: 8,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience >= self.max_epochs {
            return Err(Error::InvalidConfig(format!(
                "patience {} must be smaller than max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if self.learning_rate <= 0.0 || self.weight_decay < 0.0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "learning_rate must be positive, weight_decay nonnegative, batch_size positive"
                    .into(),
            ));
        }
        Ok(())
    }
}

/// Strict-improvement early stopping: training halts once `patience`
/// consecutive epochs fail to beat the best validation accuracy.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best_epoch: usize,
    best_value: f64,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best_epoch: 0, best_value: f64::NEG_INFINITY }
    }

    /// Observes a 1-based epoch's validation accuracy; returns
    /// `(improved, stop)`.
    pub fn observe(&mut self, epoch: usize, value: f64) -> (bool, bool) {
        let improved = value > self.best_value;
        if improved {
            self.best_value = value;
            self.best_epoch = epoch;
        }
        (improved, epoch >= self.best_epoch + self.patience)
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_value(&self) -> f64 {
        self.best_value
    }
}

pub enum ClassifierModel<S> {
    Unimodal(UnimodalCnn<S>),
    Bimodal(BimodalCnn<S>),
}

enum BatchTrace<S> {
    Unimodal(UnimodalTrace<S>),
    Bimodal(BimodalTrace<S>),
}

impl<S: Scalar> ClassifierModel<S> {
    pub fn build(
        spec: &BackboneSpec,
        modality: Modality,
        dims: (usize, usize, usize),
        seed: u64,
    ) -> Result<Self> {
        Ok(match modality {
            Modality::Bimodal => ClassifierModel::Bimodal(BimodalCnn::new(spec, dims, seed)?),
            _ => ClassifierModel::Unimodal(UnimodalCnn::new(spec, dims, seed)?),
        })
    }

    pub fn visit_params(&mut self, f: Visit<S>) {
        match self {
            ClassifierModel::Unimodal(m) => m.visit_params(f),
            ClassifierModel::Bimodal(m) => m.visit_params(f),
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        match self {
            ClassifierModel::Unimodal(m) => m.dims,
            ClassifierModel::Bimodal(m) => m.dims,
        }
    }

    pub fn spec(&self) -> &BackboneSpec {
        match self {
            ClassifierModel::Unimodal(m) => &m.spec,
            ClassifierModel::Bimodal(m) => &m.spec,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifierMeta {
    pub schema_version: u32,
    pub spec: BackboneSpec,
    pub modality: Modality,
    pub dims: [usize; 3],
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub val_accuracy_history: Vec<f64>,
    pub epochs_trained: usize,
    pub config_hash: String,
    pub tensors: Vec<TensorEntry>,
}

/// A fitted model holding the best-validation-epoch weights.
pub struct TrainedClassifier<S> {
    pub model: ClassifierModel<S>,
    pub meta: ClassifierMeta,
}

#[derive(Debug, Clone, Default)]
pub struct FitStats {
    pub epoch_losses: Vec<f64>,
    pub val_accuracy_history: Vec<f64>,
}

fn batch_inputs<S: Scalar>(
    dataset: &ClassifierDataset,
    indices: &[usize],
    pick: fn(&LabeledSample) -> &Volume3D,
) -> Tensor<S> {
    let first = pick(&dataset.samples[indices[0]]);
    let (nx, ny, nz) = first.dims();
    let mut data = Vec::with_capacity(indices.len() * nx * ny * nz);
    for &i in indices {
        data.extend(pick(&dataset.samples[i]).voxels().iter().map(|&v| S::from_f64(v as f64)));
    }
    Tensor::from_data(&[indices.len(), 1, nx, ny, nz], data)
}

fn forward_batch<S: Scalar, R: rand::Rng>(
    model: &ClassifierModel<S>,
    modality: Modality,
    dataset: &ClassifierDataset,
    indices: &[usize],
    training: bool,
    rng: &mut R,
) -> (Tensor<S>, BatchTrace<S>) {
    match model {
        ClassifierModel::Unimodal(m) => {
            let pick: fn(&LabeledSample) -> &Volume3D = match modality {
                Modality::T1 => |s| s.t1.as_ref().expect("validated t1"),
                _ => |s| s.dwi.as_ref().expect("validated dwi"),
            };
            let x = batch_inputs::<S>(dataset, indices, pick);
            let (logits, trace) = m.forward(&x, training, rng);
            (logits, BatchTrace::Unimodal(trace))
        }
        ClassifierModel::Bimodal(m) => {
            let t1 = batch_inputs::<S>(dataset, indices, |s| s.t1.as_ref().expect("validated t1"));
            let dwi =
                batch_inputs::<S>(dataset, indices, |s| s.dwi.as_ref().expect("validated dwi"));
            let (logits, trace) = m.forward(&t1, &dwi, training, rng);
            (logits, BatchTrace::Bimodal(trace))
        }
    }
}

fn backward_batch<S: Scalar>(
    model: &mut ClassifierModel<S>,
    trace: &BatchTrace<S>,
    g_logits: &Tensor<S>,
) {
    match (model, trace) {
        (ClassifierModel::Unimodal(m), BatchTrace::Unimodal(t)) => m.backward(t, g_logits),
        (ClassifierModel::Bimodal(m), BatchTrace::Bimodal(t)) => m.backward(t, g_logits),
        _ => unreachable!("trace kind matches model kind"),
    }
}

fn snapshot_params<S: Scalar>(model: &mut ClassifierModel<S>) -> Vec<f64> {
    let mut flat = Vec::new();
    model.visit_params(&mut |_, p, _| flat.extend(p.data().iter().map(|v| v.to_f64())));
    flat
}

fn restore_params<S: Scalar>(model: &mut ClassifierModel<S>, snapshot: &[f64]) {
    let mut cursor = 0usize;
    model.visit_params(&mut |_, p, _| {
        for v in p.data_mut() {
            *v = S::from_f64(snapshot[cursor]);
            cursor += 1;
        }
    });
}

fn fit_config_hash(spec: &BackboneSpec, modality: Modality, cfg: &FitConfig) -> String {
    canonical_json_hash(&serde_json::json!({
        "backbone": spec,
        "modality": modality,
        "fit": cfg,
    }))
}

/// Trains with categorical cross-entropy and AdamW, evaluating validation
/// accuracy after every epoch; returns the weights from the best epoch.
pub fn fit<S: Scalar>(
    spec: &BackboneSpec,
    modality: Modality,
    train_set: &ClassifierDataset,
    val_set: &ClassifierDataset,
    cfg: &FitConfig,
) -> Result<(TrainedClassifier<S>, FitStats)> {
    cfg.validate()?;
    let dims = train_set.validate(modality)?;
    let val_dims = val_set.validate(modality)?;
    if dims != val_dims {
        return Err(Error::DimMismatch { a: dims, b: val_dims });
    }

    let mut model = ClassifierModel::<S>::build(spec, modality, dims, cfg.seed)?;
    let mut adam = Adam::adamw(cfg.learning_rate, cfg.weight_decay);
    let mut rng = seeded(cfg.seed, 0x66_69_74); // fit stream
    let labels = train_set.labels();

    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best_snapshot = snapshot_params(&mut model);
    let mut stats = FitStats::default();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epochs_trained = 0;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut steps = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            zero_grads(|f| model.visit_params(f));
            let (logits, trace) = forward_batch(&model, modality, train_set, chunk, true, &mut rng);
            let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let probs = softmax_rows(&logits);
            let (loss, g_logits) = cross_entropy_from_probs(&probs, &batch_labels);
            backward_batch(&mut model, &trace, &g_logits);
            adam.step(|f| model.visit_params(f));
            loss_sum += loss;
            steps += 1;
        }
        stats.epoch_losses.push(loss_sum / steps as f64);
        epochs_trained = epoch;

        let (rows, predicted) = predict_model(&model, modality, val_set)?;
        debug_assert_eq!(rows.len(), val_set.len());
        let val_labels = val_set.labels();
        let correct = predicted.iter().zip(&val_labels).filter(|(p, l)| p == l).count();
        let val_acc = correct as f64 / val_set.len() as f64;
        stats.val_accuracy_history.push(val_acc);

        let (improved, stop) = stopper.observe(epoch, val_acc);
        if improved {
            best_snapshot = snapshot_params(&mut model);
        }
        if stop {
            break;
        }
    }

    restore_params(&mut model, &best_snapshot);
    let meta = ClassifierMeta {
        schema_version: MODEL_SCHEMA_VERSION,
        spec: spec.clone(),
        modality,
        dims: [dims.0, dims.1, dims.2],
        best_epoch: stopper.best_epoch(),
        best_val_accuracy: stopper.best_value(),
        val_accuracy_history: stats.val_accuracy_history.clone(),
        epochs_trained,
        config_hash: fit_config_hash(spec, modality, cfg),
        tensors: Vec::new(),
    };
    Ok((TrainedClassifier { model, meta }, stats))
}

fn predict_model<S: Scalar>(
    model: &ClassifierModel<S>,
    modality: Modality,
    dataset: &ClassifierDataset,
) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let dims = dataset.validate(modality)?;
    if dims != model.dims() {
        return Err(Error::DimMismatch { a: model.dims(), b: dims });
    }
    let k = model.spec().num_classes;
    let mut rows = Vec::with_capacity(dataset.len());
    let mut predicted = Vec::with_capacity(dataset.len());
    // Inference is deterministic: dropout is disabled and the RNG unused.
    let mut rng = seeded(0, 0);
    let indices: Vec<usize> = (0..dataset.len()).collect();
    for chunk in indices.chunks(16) {
        let (logits, _) = forward_batch(model, modality, dataset, chunk, false, &mut rng);
        let probs = softmax_rows(&logits);
        for bi in 0..chunk.len() {
            let row: Vec<f64> =
                probs.data()[bi * k..(bi + 1) * k].iter().map(|v| v.to_f64()).collect();
            let argmax = (0..k)
                .max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap())
                .unwrap();
            // Ties resolve to the lowest index, matching the metrics module.
            let argmax = (0..k).find(|&c| row[c] == row[argmax]).unwrap();
            rows.push(row);
            predicted.push(argmax);
        }
    }
    Ok((rows, predicted))
}

/// Probability rows plus argmax labels; dropout disabled, deterministic.
pub fn predict_proba<S: Scalar>(
    trained: &TrainedClassifier<S>,
    dataset: &ClassifierDataset,
) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    predict_model(&trained.model, trained.meta.modality, dataset)
}

impl<S: Scalar> TrainedClassifier<S> {
    /// Writes `weights.bin` + `meta.json` into `dir`.
    pub fn save(&mut self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let entries = save_params(dir.join("weights.bin"), |f| self.model.visit_params(f))?;
        self.meta.tensors = entries;
        let meta_path = dir.join("meta.json");
        let text = serde_json::to_string_pretty(&self.meta).expect("meta serializes");
        fs::write(&meta_path, text).map_err(|e| Error::io(&meta_path, e))?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta_path = dir.join("meta.json");
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: ClassifierMeta =
            serde_json::from_str(&text).map_err(|e| Error::json(&meta_path, e))?;
        let dims = (meta.dims[0], meta.dims[1], meta.dims[2]);
        let mut model = ClassifierModel::<S>::build(&meta.spec, meta.modality, dims, 0)?;
        load_params(dir.join("weights.bin"), &meta.tensors, |f| model.visit_params(f))?;
        Ok(Self { model, meta })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::DEFAULT_SPACING_MM;

    fn constant_volume(dims: (usize, usize, usize), value: f32) -> Volume3D {
        let n = dims.0 * dims.1 * dims.2;
        Volume3D::new(dims, DEFAULT_SPACING_MM, vec![value; n], RangeTag::Unit).unwrap()
    }

    /// Near-constant volumes at well-separated per-class levels: trivially
    /// separable. The small voxel noise matters: group normalization maps an
    /// exactly constant field to its bias regardless of the level, so a
    /// literally constant volume carries no signal through this backbone.
    fn toy_dataset(n_per_class: usize, noise: f32) -> ClassifierDataset {
        use rand::{Rng, SeedableRng};
        let dims = (8, 8, 8);
        let n = dims.0 * dims.1 * dims.2;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1234);
        let mut samples = Vec::new();
        for (ci, base) in [(Diagnosis::Cn, 0.1f32), (Diagnosis::Mci, 0.5), (Diagnosis::Ad, 0.9)] {
            for _ in 0..n_per_class {
                let voxels: Vec<f32> = (0..n)
                    .map(|_| (base + rng.gen_range(-noise..noise)).clamp(0.0, 1.0))
                    .collect();
                let v = Volume3D::new(dims, DEFAULT_SPACING_MM, voxels, RangeTag::Unit).unwrap();
                samples.push(LabeledSample { t1: Some(v.clone()), dwi: Some(v), label: ci });
            }
        }
        ClassifierDataset { samples }
    }

    fn tiny_spec() -> BackboneSpec {
        BackboneSpec {
            block_widths: (4, 4, 8, 8, 8),
            norm_groups: 4,
            head_width: 8,
            dropout_rate: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn separable_toy_set_reaches_full_training_accuracy() {
        let train = toy_dataset(4, 0.05);
        let cfg = FitConfig {
            max_epochs: 20,
            patience: 19,
            learning_rate: 3e-3,
            weight_decay: 0.0,
            batch_size: 4,
            seed: 1,
        };
        let (trained, _) = fit::<f32>(&tiny_spec(), Modality::T1, &train, &train, &cfg).unwrap();
        let (_, predicted) = predict_proba(&trained, &train).unwrap();
        let labels = train.labels();
        let acc = predicted.iter().zip(&labels).filter(|(p, l)| p == l).count() as f64
            / labels.len() as f64;
        assert_eq!(acc, 1.0, "history: {:?}", trained.meta.val_accuracy_history);
    }

    #[test]
    fn plateaued_validation_stops_at_best_epoch_plus_patience() {
        let mut stopper = EarlyStopping::new(10);
        let mut stopped_at = None;
        for epoch in 1..=100 {
            // Scripted plateau: every epoch reports the same accuracy.
            let (_, stop) = stopper.observe(epoch, 0.5);
            if stop {
                stopped_at = Some(epoch);
                break;
            }
        }
        assert_eq!(stopper.best_epoch(), 1);
        assert_eq!(stopped_at, Some(11), "stop at best_epoch + patience");
    }

    #[test]
    fn early_stopping_keeps_best_weights_semantics() {
        let mut stopper = EarlyStopping::new(3);
        assert_eq!(stopper.observe(1, 0.4), (true, false));
        assert_eq!(stopper.observe(2, 0.6), (true, false));
        // Equal accuracy is not an improvement.
        assert_eq!(stopper.observe(3, 0.6), (false, false));
        assert_eq!(stopper.observe(4, 0.5), (false, false));
        assert_eq!(stopper.observe(5, 0.6), (false, true));
        assert_eq!(stopper.best_epoch(), 2);
        assert_eq!(stopper.best_value(), 0.6);
    }

    #[test]
    fn constant_model_stops_after_patience_epochs() {
        let train = toy_dataset(2, 0.02);
        // A learning rate of ~0 freezes the model, so validation accuracy
        // plateaus from epoch 1.
        let cfg = FitConfig {
            max_epochs: 50,
            patience: 5,
            learning_rate: 1e-30,
            weight_decay: 0.0,
            batch_size: 6,
            seed: 2,
        };
        let (trained, stats) = fit::<f32>(&tiny_spec(), Modality::T1, &train, &train, &cfg).unwrap();
        assert_eq!(trained.meta.best_epoch, 1);
        assert_eq!(trained.meta.epochs_trained, 6, "1 + patience");
        assert_eq!(stats.val_accuracy_history.len(), 6);
    }

    #[test]
    fn fixed_seed_reproduces_the_loss_trace() {
        let train = toy_dataset(3, 0.02);
        let cfg = FitConfig {
            max_epochs: 4,
            patience: 3,
            learning_rate: 1e-3,
            weight_decay: 1e-5,
            batch_size: 4,
            seed: 7,
        };
        let (_, a) = fit::<f32>(&tiny_spec(), Modality::T1, &train, &train, &cfg).unwrap();
        let (_, b) = fit::<f32>(&tiny_spec(), Modality::T1, &train, &train, &cfg).unwrap();
        assert_eq!(a.epoch_losses, b.epoch_losses);
        assert_eq!(a.val_accuracy_history, b.val_accuracy_history);
    }

    #[test]
    fn prediction_is_deterministic_and_distributional() {
        let train = toy_dataset(2, 0.02);
        let cfg = FitConfig {
            max_epochs: 3,
            patience: 2,
            learning_rate: 1e-3,
            weight_decay: 0.0,
            batch_size: 4,
            seed: 3,
        };
        let spec = BackboneSpec { dropout_rate: 0.2, ..tiny_spec() };
        let (trained, _) = fit::<f32>(&spec, Modality::Bimodal, &train, &train, &cfg).unwrap();
        let (rows_a, pred_a) = predict_proba(&trained, &train).unwrap();
        let (rows_b, pred_b) = predict_proba(&trained, &train).unwrap();
        assert_eq!(rows_a, rows_b);
        assert_eq!(pred_a, pred_b);
        for row in &rows_a {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn modality_mismatch_is_an_error() {
        let mut train = toy_dataset(2, 0.02);
        for s in &mut train.samples {
            s.dwi = None;
        }
        let cfg = FitConfig { max_epochs: 2, patience: 1, ..Default::default() };
        assert!(matches!(
            fit::<f32>(&tiny_spec(), Modality::Dwi, &train, &train, &cfg),
            Err(Error::ModalityMismatch { .. })
        ));
    }

    #[test]
    fn trained_classifier_roundtrips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let train = toy_dataset(2, 0.02);
        let cfg = FitConfig {
            max_epochs: 2,
            patience: 1,
            learning_rate: 1e-3,
            weight_decay: 0.0,
            batch_size: 4,
            seed: 5,
        };
        let (mut trained, _) = fit::<f32>(&tiny_spec(), Modality::T1, &train, &train, &cfg).unwrap();
        trained.save(dir.path()).unwrap();
        let loaded = TrainedClassifier::<f32>::load(dir.path()).unwrap();
        let (rows_a, _) = predict_proba(&trained, &train).unwrap();
        let (rows_b, _) = predict_proba(&loaded, &train).unwrap();
        assert_eq!(rows_a, rows_b);
        assert_eq!(loaded.meta.config_hash, trained.meta.config_hash);
    }

    #[test]
    fn bimodal_with_blank_dwi_still_learns_on_toy_data() {
        let mut train = toy_dataset(3, 0.02);
        for s in &mut train.samples {
            s.dwi = Some(constant_volume((8, 8, 8), 0.0));
        }
        let cfg = FitConfig {
            max_epochs: 8,
            patience: 7,
            learning_rate: 2e-3,
            weight_decay: 0.0,
            batch_size: 4,
            seed: 6,
        };
        let (_, stats) = fit::<f32>(&tiny_spec(), Modality::Bimodal, &train, &train, &cfg).unwrap();
        let first = stats.epoch_losses[0];
        let last = *stats.epoch_losses.last().unwrap();
        assert!(last < first, "loss did not decrease: {first} -> {last}");
    }
}
