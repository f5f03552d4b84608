//! DDPM training loop and the self-describing checkpoint directory.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::canonical_json_hash;
use crate::nn::{concat_channels, load_params, save_params, zero_grads, Adam, Scalar, Tensor, TensorEntry};
use crate::rng::seeded;
use crate::volume::{RangeTag, Volume3D};

use super::schedule::NoiseSchedule;
use super::unet::{DenoiserSpec, UNet3d};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DdpmTrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for DdpmTrainConfig {
    fn default() -> Self {
        Self { epochs: 300, learning_rate: 5e-5, batch_size: 8, seed: 0 }
    }
}

impl DdpmTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.learning_rate <= 0.0 {
            return Err(Error::InvalidConfig(
                "epochs, batch_size and learning_rate must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Trained denoiser plus everything needed to reuse it.
pub struct DdpmCheckpoint<S> {
    pub model: UNet3d<S>,
    pub schedule: NoiseSchedule,
    pub meta: CheckpointMeta,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub schema_version: u32,
    pub spec: DenoiserSpec,
    pub dims: [usize; 3],
    /// The full beta array; alphas and cumulative products are rebuilt
    /// deterministically on load.
    pub betas: Vec<f64>,
    pub seed: u64,
    pub config_hash: String,
    pub epochs_completed: usize,
    pub final_loss: f64,
    /// Mean training loss per epoch.
    pub loss_history: Vec<f64>,
    pub tensors: Vec<TensorEntry>,
}

/// Per-step and per-epoch training losses.
#[derive(Debug, Clone, Default)]
pub struct TrainStats {
    pub step_losses: Vec<f64>,
    pub epoch_losses: Vec<f64>,
}

/// Stacks volumes into a `[B, 1, X, Y, Z]` batch.
fn batch_tensor<S: Scalar>(volumes: &[&Volume3D]) -> Tensor<S> {
    let (nx, ny, nz) = volumes[0].dims();
    let mut data = Vec::with_capacity(volumes.len() * nx * ny * nz);
    for v in volumes {
        data.extend(v.voxels().iter().map(|&x| S::from_f64(x as f64)));
    }
    Tensor::from_data(&[volumes.len(), 1, nx, ny, nz], data)
}

fn config_hash(cfg: &DdpmTrainConfig, spec: &DenoiserSpec, schedule: &NoiseSchedule) -> String {
    let value = serde_json::json!({
        "train": cfg,
        "denoiser": spec,
        "schedule_betas": schedule.betas(),
    });
    canonical_json_hash(&value)
}

/// Trains the conditional denoiser on paired (T1, FA) volumes.
///
/// Each step samples a timestep and per-voxel Gaussian noise for every batch
/// item, noises the FA channel with the closed form, concatenates the clean
/// T1, and minimizes the MSE between predicted and true noise with Adam.
pub fn train_ddpm<S: Scalar>(
    paired: &[(Volume3D, Volume3D)],
    cfg: &DdpmTrainConfig,
    spec: &DenoiserSpec,
    schedule: &NoiseSchedule,
) -> Result<(DdpmCheckpoint<S>, TrainStats)> {
    cfg.validate()?;
    if paired.is_empty() {
        return Err(Error::EmptyDataset("ddpm training needs at least one pair".into()));
    }
    let dims = paired[0].0.dims();
    for (t1, fa) in paired {
        if t1.dims() != dims || fa.dims() != dims {
            return Err(Error::DimMismatch { a: dims, b: fa.dims() });
        }
        if t1.range_tag() != RangeTag::Unit || fa.range_tag() != RangeTag::Unit {
            return Err(Error::InvalidVolume("training volumes must be unit-range".into()));
        }
    }

    let mut model = UNet3d::<S>::new(spec, dims, cfg.seed)?;
    let mut adam = Adam::new(cfg.learning_rate);
    let mut rng = seeded(cfg.seed, 0x7261_696e); // train stream
    let t_max = schedule.len();

    let mut stats = TrainStats::default();
    let mut order: Vec<usize> = (0..paired.len()).collect();
    for _epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_sum = 0.0f64;
        let mut epoch_steps = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let t1s: Vec<&Volume3D> = chunk.iter().map(|&i| &paired[i].0).collect();
            let fas: Vec<&Volume3D> = chunk.iter().map(|&i| &paired[i].1).collect();
            let cond = batch_tensor::<S>(&t1s);
            let x0 = batch_tensor::<S>(&fas);
            let ts: Vec<usize> = (0..chunk.len()).map(|_| rng.gen_range(0..t_max)).collect();
            let eps = Tensor::<S>::randn(x0.shape(), &mut rng);

            // x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, per batch item.
            let mut xt = x0.clone();
            let per_item = xt.numel() / chunk.len();
            for (bi, &t) in ts.iter().enumerate() {
                let ab = schedule.alpha_bar(t);
                let signal = S::from_f64(ab.sqrt());
                let noise = S::from_f64((1.0 - ab).sqrt());
                let range = bi * per_item..(bi + 1) * per_item;
                for (x, e) in xt.data_mut()[range.clone()].iter_mut().zip(&eps.data()[range]) {
                    *x = signal * *x + noise * *e;
                }
            }

            let input = concat_channels(&cond, &xt);
            zero_grads(|f| model.visit_params(f));
            let (eps_hat, trace) = model.forward(&input, &ts);
            let loss = eps_hat.mse(&eps);
            let mut gy = eps_hat.sub(&eps);
            gy.scale(S::from_f64(2.0 / eps.numel() as f64));
            model.backward(&trace, &gy);
            adam.step(|f| model.visit_params(f));

            stats.step_losses.push(loss);
            epoch_sum += loss;
            epoch_steps += 1;
        }
        stats.epoch_losses.push(epoch_sum / epoch_steps as f64);
    }

    let meta = CheckpointMeta {
        schema_version: CHECKPOINT_SCHEMA_VERSION,
        spec: spec.clone(),
        dims: [dims.0, dims.1, dims.2],
        betas: schedule.betas().to_vec(),
        seed: cfg.seed,
        config_hash: config_hash(cfg, spec, schedule),
        epochs_completed: cfg.epochs,
        final_loss: *stats.epoch_losses.last().unwrap(),
        loss_history: stats.epoch_losses.clone(),
        tensors: Vec::new(),
    };
    Ok((DdpmCheckpoint { model, schedule: schedule.clone(), meta }, stats))
}

impl<S: Scalar> DdpmCheckpoint<S> {
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.meta.dims[0], self.meta.dims[1], self.meta.dims[2])
    }

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

    /// Loads a checkpoint directory written by [`Self::save`].
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta_path = dir.join("meta.json");
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: CheckpointMeta =
            serde_json::from_str(&text).map_err(|e| Error::json(&meta_path, e))?;
        let schedule = NoiseSchedule::from_betas(meta.betas.clone())?;
        let dims = (meta.dims[0], meta.dims[1], meta.dims[2]);
        let mut model = UNet3d::<S>::new(&meta.spec, dims, meta.seed)?;
        load_params(dir.join("weights.bin"), &meta.tensors, |f| model.visit_params(f))?;
        Ok(Self { model, schedule, meta })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::schedule::scaled_linear_schedule;
    use crate::manifest::Diagnosis;
    use crate::phantom::{generate_subject, PhantomSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_pairs(n: usize, dim: usize) -> Vec<(Volume3D, Volume3D)> {
        let spec = PhantomSpec::desk(dim, 33);
        (0..n)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(100 + i as u64);
                let dx = Diagnosis::ALL[i % 3];
                let (t1, fa, _) = generate_subject(&spec, dx, &mut rng).unwrap();
                (t1, fa)
            })
            .collect()
    }

    fn tiny_spec() -> DenoiserSpec {
        DenoiserSpec {
            channel_widths: (8, 8, 16),
            residual_blocks_per_stage: 1,
            norm_groups: 4,
            ..Default::default()
        }
    }

    #[test]
    fn untrained_loss_is_near_unit_mse() {
        // The head is zero-initialized, so the first-step prediction is 0 and
        // the loss is the mean square of unit-variance noise.
        let pairs = tiny_pairs(2, 8);
        let cfg = DdpmTrainConfig { epochs: 1, learning_rate: 1e-9, batch_size: 2, seed: 5 };
        let schedule = scaled_linear_schedule(20, 1e-3, 0.2).unwrap();
        let (_, stats) = train_ddpm::<f32>(&pairs, &cfg, &tiny_spec(), &schedule).unwrap();
        let first = stats.step_losses[0];
        assert!((0.7..=1.3).contains(&first), "first-step loss {first}");
    }

    #[test]
    fn fixed_seed_gives_bitwise_identical_loss_sequence() {
        let pairs = tiny_pairs(3, 8);
        let cfg = DdpmTrainConfig { epochs: 2, learning_rate: 1e-3, batch_size: 2, seed: 9 };
        let schedule = scaled_linear_schedule(10, 1e-3, 0.2).unwrap();
        let (_, a) = train_ddpm::<f32>(&pairs, &cfg, &tiny_spec(), &schedule).unwrap();
        let (_, b) = train_ddpm::<f32>(&pairs, &cfg, &tiny_spec(), &schedule).unwrap();
        assert_eq!(a.step_losses, b.step_losses);
    }

    #[test]
    fn empty_dataset_and_dim_mismatch_are_errors() {
        let cfg = DdpmTrainConfig::default();
        let schedule = scaled_linear_schedule(10, 1e-3, 0.2).unwrap();
        assert!(matches!(
            train_ddpm::<f32>(&[], &cfg, &tiny_spec(), &schedule),
            Err(Error::EmptyDataset(_))
        ));
        let mut pairs = tiny_pairs(2, 8);
        let bigger = tiny_pairs(1, 12);
        pairs.push(bigger.into_iter().next().unwrap());
        assert!(matches!(
            train_ddpm::<f32>(&pairs, &cfg, &tiny_spec(), &schedule),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn checkpoint_roundtrips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let pairs = tiny_pairs(2, 8);
        let cfg = DdpmTrainConfig { epochs: 1, learning_rate: 1e-3, batch_size: 2, seed: 1 };
        let schedule = scaled_linear_schedule(10, 1e-3, 0.2).unwrap();
        let (mut ckpt, _) = train_ddpm::<f32>(&pairs, &cfg, &tiny_spec(), &schedule).unwrap();
        ckpt.save(dir.path()).unwrap();
        let mut loaded = DdpmCheckpoint::<f32>::load(dir.path()).unwrap();
        assert_eq!(loaded.meta.config_hash, ckpt.meta.config_hash);
        assert_eq!(loaded.schedule, ckpt.schedule);
        // Weights restored bitwise.
        let mut a = Vec::new();
        ckpt.model.visit_params(&mut |_, p, _| a.extend(p.data().to_vec()));
        let mut b = Vec::new();
        loaded.model.visit_params(&mut |_, p, _| b.extend(p.data().to_vec()));
        assert_eq!(a, b);
    }
}
