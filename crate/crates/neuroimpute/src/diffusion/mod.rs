//! Conditional denoising diffusion for T1 -> FA translation: the noise
//! schedule, the 3D residual U-Net noise predictor, the training loop, and
//! the ancestral sampler.

mod sample;
mod schedule;
mod train;
mod unet;

pub use sample::{
    evaluate_translation, evaluate_translation_with, reverse_step, sample_conditional,
    sample_conditional_with, SampleOptions, TranslationReport,
};
pub use schedule::{forward_noise, scaled_linear_schedule, NoiseSchedule};
pub use train::{
    train_ddpm, CheckpointMeta, DdpmCheckpoint, DdpmTrainConfig, TrainStats,
    CHECKPOINT_SCHEMA_VERSION,
};
pub use unet::{DenoiserSpec, UNet3d, UNetTrace};
