//! Image-quality metrics on unit-range volumes.

use crate::error::{Error, Result};
use crate::volume::Volume3D;

const SSIM_WINDOW: usize = 7;
const SSIM_C1: f64 = 0.01 * 0.01; // (0.01 * L)^2, L = 1
const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimResult {
    pub value: f64,
    /// True when an axis was smaller than the 7^3 window and a single
    /// global window was used instead.
    pub global_fallback: bool,
}

fn check_dims(a: &Volume3D, b: &Volume3D) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::DimMismatch { a: a.dims(), b: b.dims() });
    }
    Ok(())
}

/// Cumulative-sum volume supporting O(1) box sums via inclusion-exclusion.
struct Integral {
    dims: (usize, usize, usize),
    // (nx+1)(ny+1)(nz+1) prefix sums, index (x*(ny+1)+y)*(nz+1)+z.
    table: Vec<f64>,
}

impl Integral {
    fn build<F: Fn(usize) -> f64>(dims: (usize, usize, usize), value: F) -> Self {
        let (nx, ny, nz) = dims;
        let (sy, sz) = (ny + 1, nz + 1);
        let mut table = vec![0.0f64; (nx + 1) * sy * sz];
        for x in 0..nx {
            for y in 0..ny {
                let mut run = 0.0;
                for z in 0..nz {
                    run += value((x * ny + y) * nz + z);
                    let idx = |xx: usize, yy: usize, zz: usize| (xx * sy + yy) * sz + zz;
                    table[idx(x + 1, y + 1, z + 1)] = run + table[idx(x, y + 1, z + 1)]
                        + table[idx(x + 1, y, z + 1)]
                        - table[idx(x, y, z + 1)];
                }
            }
        }
        Self { dims, table }
    }

    /// Sum over the half-open box [x0, x1) x [y0, y1) x [z0, z1).
    fn box_sum(&self, x0: usize, x1: usize, y0: usize, y1: usize, z0: usize, z1: usize) -> f64 {
        let (_, ny, nz) = self.dims;
        let (sy, sz) = (ny + 1, nz + 1);
        let idx = |x: usize, y: usize, z: usize| (x * sy + y) * sz + z;
        let t = &self.table;
        t[idx(x1, y1, z1)] - t[idx(x0, y1, z1)] - t[idx(x1, y0, z1)] - t[idx(x1, y1, z0)]
            + t[idx(x0, y0, z1)]
            + t[idx(x0, y1, z0)]
            + t[idx(x1, y0, z0)]
            - t[idx(x0, y0, z0)]
    }
}

fn ssim_term(sa: f64, sb: f64, saa: f64, sbb: f64, sab: f64, n: f64) -> f64 {
    let mu_a = sa / n;
    let mu_b = sb / n;
    let var_a = saa / n - mu_a * mu_a;
    let var_b = sbb / n - mu_b * mu_b;
    let cov = sab / n - mu_a * mu_b;
    ((2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2))
        / ((mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2))
}

/// Windowed SSIM over 7^3 uniform neighborhoods, averaged over all window
/// positions fully inside the volume. Volumes smaller than the window fall
/// back to one global window and flag it.
pub fn ssim3d(a: &Volume3D, b: &Volume3D) -> Result<SsimResult> {
    check_dims(a, b)?;
    let (nx, ny, nz) = a.dims();
    let av = a.voxels();
    let bv = b.voxels();

    if nx < SSIM_WINDOW || ny < SSIM_WINDOW || nz < SSIM_WINDOW {
        let n = av.len() as f64;
        let sa: f64 = av.iter().map(|&x| x as f64).sum();
        let sb: f64 = bv.iter().map(|&x| x as f64).sum();
        let saa: f64 = av.iter().map(|&x| (x as f64) * (x as f64)).sum();
        let sbb: f64 = bv.iter().map(|&x| (x as f64) * (x as f64)).sum();
        let sab: f64 = av.iter().zip(bv).map(|(&x, &y)| (x as f64) * (y as f64)).sum();
        return Ok(SsimResult { value: ssim_term(sa, sb, saa, sbb, sab, n), global_fallback: true });
    }

    let dims = a.dims();
    let ia = Integral::build(dims, |i| av[i] as f64);
    let ib = Integral::build(dims, |i| bv[i] as f64);
    let iaa = Integral::build(dims, |i| (av[i] as f64) * (av[i] as f64));
    let ibb = Integral::build(dims, |i| (bv[i] as f64) * (bv[i] as f64));
    let iab = Integral::build(dims, |i| (av[i] as f64) * (bv[i] as f64));

    let n = (SSIM_WINDOW * SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0.0f64;
    let mut count = 0usize;
    for x in 0..=nx - SSIM_WINDOW {
        for y in 0..=ny - SSIM_WINDOW {
            for z in 0..=nz - SSIM_WINDOW {
                let (x1, y1, z1) = (x + SSIM_WINDOW, y + SSIM_WINDOW, z + SSIM_WINDOW);
                total += ssim_term(
                    ia.box_sum(x, x1, y, y1, z, z1),
                    ib.box_sum(x, x1, y, y1, z, z1),
                    iaa.box_sum(x, x1, y, y1, z, z1),
                    ibb.box_sum(x, x1, y, y1, z, z1),
                    iab.box_sum(x, x1, y, y1, z, z1),
                    n,
                );
                count += 1;
            }
        }
    }
    Ok(SsimResult { value: total / count as f64, global_fallback: false })
}

/// Mean squared voxel difference, accumulated in f64.
pub fn mse(a: &Volume3D, b: &Volume3D) -> Result<f64> {
    check_dims(a, b)?;
    let sum: f64 = a
        .voxels()
        .iter()
        .zip(b.voxels())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.len() as f64)
}

/// Mean absolute voxel difference.
pub fn l1(a: &Volume3D, b: &Volume3D) -> Result<f64> {
    check_dims(a, b)?;
    let sum: f64 = a
        .voxels()
        .iter()
        .zip(b.voxels())
        .map(|(&x, &y)| (x as f64 - y as f64).abs())
        .sum();
    Ok(sum / a.len() as f64)
}

/// PSNR in dB for unit-range volumes (peak = 1); identical volumes give the
/// +infinity sentinel.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

pub fn psnr(a: &Volume3D, b: &Volume3D) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}
