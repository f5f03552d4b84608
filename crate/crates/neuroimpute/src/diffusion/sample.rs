//! Ancestral DDPM sampling conditioned on a T1 volume, and translation
//! quality evaluation.

use rand::Rng;

use crate::error::{Error, Result};
use crate::metrics::{l1, mse, psnr, ssim3d};
use crate::nn::{concat_channels, Scalar, Tensor};
use crate::rng::seeded;
use crate::volume::{RangeTag, Volume3D};

use super::schedule::NoiseSchedule;
use super::train::DdpmCheckpoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SampleOptions {
    /// Clip the implied x0 estimate to [0, 1] at every reverse step. Off by
    /// default; the final sample is clipped either way.
    pub clip_denoised: bool,
}

/// One reverse ancestral step in the epsilon parameterization:
/// x_{t-1} = (x_t - (beta_t / sqrt(1-abar_t)) eps_hat) / sqrt(alpha_t) + sigma_t z
/// with sigma_t = sqrt(beta_t) and z = 0 at t = 0.
pub fn reverse_step<S: Scalar>(
    xt: &Tensor<S>,
    eps_hat: &Tensor<S>,
    t: usize,
    schedule: &NoiseSchedule,
    z: Option<&Tensor<S>>,
) -> Tensor<S> {
    let beta = schedule.beta(t);
    let alpha = schedule.alpha(t);
    let ab = schedule.alpha_bar(t);
    let coeff = S::from_f64(beta / (1.0 - ab).sqrt());
    let inv_sqrt_alpha = S::from_f64(1.0 / alpha.sqrt());
    let sigma = S::from_f64(beta.sqrt());
    let mut out = xt.clone();
    for (i, o) in out.data_mut().iter_mut().enumerate() {
        let mean = (*o - coeff * eps_hat.data()[i]) * inv_sqrt_alpha;
        *o = match z {
            Some(z) if t > 0 => mean + sigma * z.data()[i],
            _ => mean,
        };
    }
    out
}

/// Reverse step through the clipped-x0 parameterization; used when
/// `clip_denoised` is on.
fn reverse_step_clipped<S: Scalar>(
    xt: &Tensor<S>,
    eps_hat: &Tensor<S>,
    t: usize,
    schedule: &NoiseSchedule,
    z: Option<&Tensor<S>>,
) -> Tensor<S> {
    let beta = schedule.beta(t);
    let alpha = schedule.alpha(t);
    let ab = schedule.alpha_bar(t);
    let ab_prev = if t > 0 { schedule.alpha_bar(t - 1) } else { 1.0 };
    let sigma = S::from_f64(beta.sqrt());
    let c0 = ab_prev.sqrt() * beta / (1.0 - ab);
    let ct = alpha.sqrt() * (1.0 - ab_prev) / (1.0 - ab);
    let mut out = xt.clone();
    for (i, o) in out.data_mut().iter_mut().enumerate() {
        let xtv = o.to_f64();
        let x0 = ((xtv - (1.0 - ab).sqrt() * eps_hat.data()[i].to_f64()) / ab.sqrt())
            .clamp(0.0, 1.0);
        let mean = c0 * x0 + ct * xtv;
        *o = match z {
            Some(z) if t > 0 => S::from_f64(mean) + sigma * z.data()[i],
            _ => S::from_f64(mean),
        };
    }
    out
}

/// Generates one FA volume conditioned on a T1 volume by ancestral sampling
/// from pure noise; the final output is clipped to [0, 1].
pub fn sample_conditional<S: Scalar, R: Rng>(
    t1: &Volume3D,
    ckpt: &DdpmCheckpoint<S>,
    rng: &mut R,
) -> Result<Volume3D> {
    sample_conditional_with(t1, ckpt, rng, SampleOptions::default())
}

pub fn sample_conditional_with<S: Scalar, R: Rng>(
    t1: &Volume3D,
    ckpt: &DdpmCheckpoint<S>,
    rng: &mut R,
    options: SampleOptions,
) -> Result<Volume3D> {
    if t1.dims() != ckpt.dims() {
        return Err(Error::DimMismatch { a: t1.dims(), b: ckpt.dims() });
    }
    if t1.range_tag() != RangeTag::Unit {
        return Err(Error::InvalidVolume("conditioning T1 must be unit-range".into()));
    }
    let (nx, ny, nz) = t1.dims();
    let shape = [1usize, 1, nx, ny, nz];
    let cond = Tensor::<S>::from_data(
        &shape,
        t1.voxels().iter().map(|&v| S::from_f64(v as f64)).collect(),
    );
    let mut x = Tensor::<S>::randn(&shape, rng);
    let t_max = ckpt.schedule.len();
    for t in (0..t_max).rev() {
        let input = concat_channels(&cond, &x);
        let (eps_hat, _) = ckpt.model.forward(&input, &[t]);
        let z = if t > 0 { Some(Tensor::<S>::randn(&shape, rng)) } else { None };
        x = if options.clip_denoised {
            reverse_step_clipped(&x, &eps_hat, t, &ckpt.schedule, z.as_ref())
        } else {
            reverse_step(&x, &eps_hat, t, &ckpt.schedule, z.as_ref())
        };
    }
    let voxels: Vec<f32> = x.data().iter().map(|v| v.to_f64().clamp(0.0, 1.0) as f32).collect();
    Volume3D::new(t1.dims(), t1.spacing_mm(), voxels, RangeTag::Unit)
}

/// Mean image-quality metrics of generated-vs-real FA over a test set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TranslationReport {
    pub ssim3d: f64,
    pub psnr_db: f64,
    pub l1: f64,
    pub mse: f64,
    pub n_pairs: usize,
}

/// Evaluates an arbitrary imputation function (real FA never seen by it).
pub fn evaluate_translation_with<F>(
    mut sampler: F,
    test_pairs: &[(Volume3D, Volume3D)],
) -> Result<TranslationReport>
where
    F: FnMut(&Volume3D, usize) -> Result<Volume3D>,
{
    if test_pairs.is_empty() {
        return Err(Error::EmptyDataset("translation evaluation needs test pairs".into()));
    }
    let (mut s_ssim, mut s_psnr, mut s_l1, mut s_mse) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for (i, (t1, fa)) in test_pairs.iter().enumerate() {
        let generated = sampler(t1, i)?;
        s_ssim += ssim3d(&generated, fa)?.value;
        s_psnr += psnr(&generated, fa)?;
        s_l1 += l1(&generated, fa)?;
        s_mse += mse(&generated, fa)?;
    }
    let n = test_pairs.len() as f64;
    Ok(TranslationReport {
        ssim3d: s_ssim / n,
        psnr_db: s_psnr / n,
        l1: s_l1 / n,
        mse: s_mse / n,
        n_pairs: test_pairs.len(),
    })
}

/// Samples one FA per test T1 (per-pair derived seeds) and reports the mean
/// SSIM-3D, PSNR, L1 and MSE against the real FA volumes.
pub fn evaluate_translation<S: Scalar>(
    ckpt: &DdpmCheckpoint<S>,
    test_pairs: &[(Volume3D, Volume3D)],
    seed: u64,
) -> Result<TranslationReport> {
    evaluate_translation_with(
        |t1, index| {
            let mut rng = seeded(seed, index as u64);
            sample_conditional(t1, ckpt, &mut rng)
        },
        test_pairs,
    )
}
