//! Imputation of a missing imaging modality with a conditional 3D denoising
//! diffusion model, plus the downstream 3-way classification harness that
//! measures what the imputation buys.
//!
//! The crate is organized around the pipeline's stages:
//!
//! - [`volume`] / [`manifest`]: volume files, dataset manifests, split rules
//! - [`phantom`]: synthetic paired T1/FA subjects with class-dependent geometry
//! - [`nn`]: a small deterministic tensor/layer engine (f32 or f64)
//! - [`diffusion`]: noise schedule, conditional 3D U-Net, training, sampling
//! - [`classifier`]: unimodal and bimodal 3D CNNs with early stopping
//! - [`imputation`]: DDPM / blank / diagnosis-average imputation strategies
//! - [`metrics`]: classification and image-quality metrics
//! - [`harness`]: seeded experiment runner and results tables
//!
//! Runnable entry points live in `examples/`; the `neuroimpute` binary exposes
//! the same operations as subcommands.

pub mod classifier;
pub mod cli;
pub mod diffusion;
pub mod error;
pub mod harness;
pub mod hash;
pub mod imputation;
pub mod manifest;
pub mod metrics;
pub mod nn;
pub mod phantom;
pub mod rng;
pub mod volume;

pub use error::{Error, Result};
