//! Noise schedule and the closed-form forward (noising) process.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{RangeTag, Volume3D};

/// Length-T arrays of beta, alpha and cumulative alpha defining the
/// diffusion process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Builds the derived arrays from betas, checking every invariant.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.len() < 2 {
            return Err(Error::InvalidConfig("schedule needs at least two timesteps".into()));
        }
        for (t, &b) in betas.iter().enumerate() {
            if !(0.0 < b && b < 1.0) {
                return Err(Error::InvalidConfig(format!("beta[{t}] = {b} outside (0, 1)")));
            }
            if t > 0 && b <= betas[t - 1] {
                return Err(Error::InvalidConfig(format!(
                    "betas must be strictly increasing; beta[{t}] = {b} <= beta[{}] = {}",
                    t - 1,
                    betas[t - 1]
                )));
            }
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut prod = 1.0f64;
        for &a in &alphas {
            prod *= a;
            alpha_bars.push(prod);
        }
        Ok(Self { betas, alphas, alpha_bars })
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }
}

/// Scaled-linear beta schedule: linear interpolation in sqrt(beta), squared.
/// The endpoints reproduce `beta_start` and `beta_end` exactly.
pub fn scaled_linear_schedule(t: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if t < 2 {
        return Err(Error::InvalidConfig("schedule needs T >= 2".into()));
    }
    if !(0.0 < beta_start && beta_start < beta_end && beta_end < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "need 0 < beta_start < beta_end < 1, got {beta_start}, {beta_end}"
        )));
    }
    let s0 = beta_start.sqrt();
    let s1 = beta_end.sqrt();
    let betas: Vec<f64> = (0..t)
        .map(|i| {
            // Assign the endpoints directly: sqrt followed by squaring can
            // drift by an ulp, and the contract pins them to full precision.
            if i == 0 {
                beta_start
            } else if i == t - 1 {
                beta_end
            } else {
                let u = i as f64 / (t - 1) as f64;
                let s = s0 + u * (s1 - s0);
                s * s
            }
        })
        .collect();
    NoiseSchedule::from_betas(betas)
}

/// Closed-form forward noising: sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
pub fn forward_noise(
    x0: &Volume3D,
    t: usize,
    epsilon: &Volume3D,
    schedule: &NoiseSchedule,
) -> Result<Volume3D> {
    if t >= schedule.len() {
        return Err(Error::InvalidConfig(format!(
            "timestep {t} out of range for T = {}",
            schedule.len()
        )));
    }
    if x0.dims() != epsilon.dims() {
        return Err(Error::DimMismatch { a: x0.dims(), b: epsilon.dims() });
    }
    let ab = schedule.alpha_bar(t);
    let signal = ab.sqrt();
    let noise = (1.0 - ab).sqrt();
    let voxels: Vec<f32> = x0
        .voxels()
        .iter()
        .zip(epsilon.voxels())
        .map(|(&x, &e)| (signal * x as f64 + noise * e as f64) as f32)
        .collect();
    Volume3D::new(x0.dims(), x0.spacing_mm(), voxels, RangeTag::Raw)
}
