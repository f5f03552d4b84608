//! Synthetic paired T1/FA phantom generation.
//!
//! Each subject is an ellipsoidal "head": a dark central ventricle whose
//! radius grows with diagnostic severity, a bright white-matter shell, and a
//! cortical band. The T1 intensity and the diffusion-tensor anisotropy are
//! both deterministic functions of the same geometry, so the T1->FA
//! translation is learnable and the geometry carries the class signal.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, Diagnosis, Provenance, ScanRecord, Split};
use crate::rng::mix_seed;
use crate::volume::{minmax_normalize, write_volume, RangeTag, Volume3D, DEFAULT_SPACING_MM};

/// Principal diffusivities of one voxel's diffusion tensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenTriple {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl EigenTriple {
    pub fn new(lambda1: f64, lambda2: f64, lambda3: f64) -> Self {
        Self { lambda1, lambda2, lambda3 }
    }

    pub const ZERO: EigenTriple = EigenTriple { lambda1: 0.0, lambda2: 0.0, lambda3: 0.0 };
}

/// Fractional anisotropy of a diffusion tensor with the given eigenvalues.
///
/// FA = sqrt(1/2) * sqrt((l1-l2)^2 + (l2-l3)^2 + (l3-l1)^2) / sqrt(l1^2+l2^2+l3^2)
///
/// The all-zero tensor maps to 0 (the isotropic limit), keeping the map
/// total. Eigenvalues are sorted before summation so the result is exactly
/// permutation invariant.
pub fn fractional_anisotropy(e: EigenTriple) -> f64 {
    let mut l = [e.lambda1, e.lambda2, e.lambda3];
    l.sort_by(|a, b| b.partial_cmp(a).expect("eigenvalues must not be NaN"));
    let num = (l[0] - l[1]).powi(2) + (l[1] - l[2]).powi(2) + (l[2] - l[0]).powi(2);
    let den = l[0] * l[0] + l[1] * l[1] + l[2] * l[2];
    if den == 0.0 {
        return 0.0;
    }
    (0.5 * num / den).sqrt().clamp(0.0, 1.0)
}

/// A per-voxel field of diffusion-tensor eigenvalues.
#[derive(Debug, Clone)]
pub struct TensorField {
    pub dims: (usize, usize, usize),
    pub triples: Vec<EigenTriple>,
}

impl TensorField {
    pub fn new(dims: (usize, usize, usize), triples: Vec<EigenTriple>) -> Result<Self> {
        let n = dims.0 * dims.1 * dims.2;
        if triples.len() != n {
            return Err(Error::InvalidVolume(format!(
                "tensor field has {} triples for dims {dims:?} ({n} expected)",
                triples.len()
            )));
        }
        Ok(Self { dims, triples })
    }
}

/// Voxelwise FA map of a tensor field; output is unit-range by construction.
pub fn fa_map(field: &TensorField) -> Volume3D {
    let voxels: Vec<f32> = field
        .triples
        .iter()
        .map(|&t| fractional_anisotropy(t) as f32)
        .collect();
    Volume3D::new(field.dims, DEFAULT_SPACING_MM, voxels, RangeTag::Unit)
        .expect("fa values lie in [0,1]")
}

/// Ventricle size and cortical-band thickness for one diagnostic class,
/// as fractions of the brain's radial extent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassGeometry {
    pub ventricle_radius_frac: f64,
    pub cortical_thickness_frac: f64,
}

/// Generator parameters for one synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub dims: (usize, usize, usize),
    pub cn: ClassGeometry,
    pub mci: ClassGeometry,
    pub ad: ClassGeometry,
    pub t1_noise_sigma: f64,
    pub fa_noise_sigma: f64,
    pub seed: u64,
    #[serde(default = "default_scans_per_subject")]
    pub scans_per_subject: usize,
}

fn default_scans_per_subject() -> usize {
    1
}

impl PhantomSpec {
    /// Desk-scale defaults at the given cubic dimension.
    pub fn desk(dim: usize, seed: u64) -> Self {
        Self {
            dims: (dim, dim, dim),
            cn: ClassGeometry { ventricle_radius_frac: 0.16, cortical_thickness_frac: 0.16 },
            mci: ClassGeometry { ventricle_radius_frac: 0.28, cortical_thickness_frac: 0.13 },
            ad: ClassGeometry { ventricle_radius_frac: 0.40, cortical_thickness_frac: 0.10 },
            t1_noise_sigma: 0.03,
            fa_noise_sigma: 0.05,
            seed,
            scans_per_subject: 1,
        }
    }

    pub fn geometry(&self, diagnosis: Diagnosis) -> ClassGeometry {
        match diagnosis {
            Diagnosis::Cn => self.cn,
            Diagnosis::Mci => self.mci,
            Diagnosis::Ad => self.ad,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (nx, ny, nz) = self.dims;
        if nx < 8 || ny < 8 || nz < 8 {
            return Err(Error::DimsTooSmall { dims: self.dims, min: 8 });
        }
        if !(self.cn.ventricle_radius_frac < self.mci.ventricle_radius_frac
            && self.mci.ventricle_radius_frac < self.ad.ventricle_radius_frac)
        {
            return Err(Error::InvalidConfig(
                "ventricle radius fractions must be strictly increasing CN -> MCI -> AD".into(),
            ));
        }
        if self.t1_noise_sigma < 0.0 || self.fa_noise_sigma < 0.0 {
            return Err(Error::InvalidConfig("noise sigmas must be >= 0".into()));
        }
        if self.scans_per_subject == 0 {
            return Err(Error::InvalidConfig("scans_per_subject must be >= 1".into()));
        }
        for g in [self.cn, self.mci, self.ad] {
            if g.ventricle_radius_frac <= 0.0
                || g.ventricle_radius_frac + g.cortical_thickness_frac >= 1.0
            {
                return Err(Error::InvalidConfig(format!(
                    "class geometry {g:?} leaves no white-matter shell"
                )));
            }
        }
        Ok(())
    }
}

/// Clamped cubic smoothstep rising from 0 at `a` to 1 at `b`.
fn smoothstep(x: f64, a: f64, b: f64) -> f64 {
    let t = ((x - a) / (b - a)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// One subject's sampled anatomy: shared by every modality and scan.
#[derive(Debug, Clone)]
struct SubjectAnatomy {
    semi_axes: (f64, f64, f64),
    ventricle_radius: f64,
    cortex_inner: f64,
    shading: (f64, f64, f64),
}

const T1_CSF: f64 = 0.15;
const T1_WM: f64 = 0.80;
const T1_GM: f64 = 0.55;
const T1_BG: f64 = 0.05;
const EDGE: f64 = 0.06;
const WM_ANISOTROPY: f64 = 0.55;
const CTX_ANISOTROPY: f64 = 0.10;

fn sample_anatomy(geometry: ClassGeometry, rng: &mut ChaCha8Rng) -> SubjectAnatomy {
    // Small enough that the class geometry stays the dominant signal.
    let jitter = |rng: &mut ChaCha8Rng| 1.0 + rng.gen_range(-0.03..0.03);
    let semi_axes = (0.78 * jitter(rng), 0.88 * jitter(rng), 0.72 * jitter(rng));
    let ventricle_radius = geometry.ventricle_radius_frac * jitter(rng);
    let cortex_inner = 1.0 - geometry.cortical_thickness_frac * jitter(rng);
    let shading = (
        rng.gen_range(-0.04..0.04),
        rng.gen_range(-0.04..0.04),
        rng.gen_range(-0.04..0.04),
    );
    SubjectAnatomy { semi_axes, ventricle_radius, cortex_inner, shading }
}

/// Elliptical radial coordinate of a voxel center: 0 at the brain center,
/// 1 on the brain surface.
fn radial(anatomy: &SubjectAnatomy, dims: (usize, usize, usize), x: usize, y: usize, z: usize) -> f64 {
    let u = ((x as f64 + 0.5) / dims.0 as f64) * 2.0 - 1.0;
    let v = ((y as f64 + 0.5) / dims.1 as f64) * 2.0 - 1.0;
    let w = ((z as f64 + 0.5) / dims.2 as f64) * 2.0 - 1.0;
    let (ax, ay, az) = anatomy.semi_axes;
    ((u / ax).powi(2) + (v / ay).powi(2) + (w / az).powi(2)).sqrt()
}

fn render_t1(spec: &PhantomSpec, anatomy: &SubjectAnatomy, rng: &mut ChaCha8Rng) -> Volume3D {
    let (nx, ny, nz) = spec.dims;
    let noise = Normal::new(0.0, spec.t1_noise_sigma.max(f64::MIN_POSITIVE)).unwrap();
    let mut voxels = Vec::with_capacity(nx * ny * nz);
    for x in 0..nx {
        for y in 0..ny {
            for z in 0..nz {
                let rho = radial(anatomy, spec.dims, x, y, z);
                let mut t1 = T1_CSF;
                t1 += (T1_WM - T1_CSF) * smoothstep(rho, anatomy.ventricle_radius, anatomy.ventricle_radius + EDGE);
                t1 += (T1_GM - T1_WM) * smoothstep(rho, anatomy.cortex_inner, anatomy.cortex_inner + EDGE);
                t1 += (T1_BG - T1_GM) * smoothstep(rho, 1.0, 1.0 + EDGE);
                let u = ((x as f64 + 0.5) / nx as f64) * 2.0 - 1.0;
                let v = ((y as f64 + 0.5) / ny as f64) * 2.0 - 1.0;
                let w = ((z as f64 + 0.5) / nz as f64) * 2.0 - 1.0;
                let shade =
                    1.0 + anatomy.shading.0 * u + anatomy.shading.1 * v + anatomy.shading.2 * w;
                let value = if spec.t1_noise_sigma > 0.0 {
                    t1 * shade + noise.sample(rng)
                } else {
                    t1 * shade
                };
                voxels.push(value as f32);
            }
        }
    }
    let raw = Volume3D::new(spec.dims, DEFAULT_SPACING_MM, voxels, RangeTag::Raw)
        .expect("generator dims validated");
    minmax_normalize(&raw)
}

fn render_tensor_field(
    spec: &PhantomSpec,
    anatomy: &SubjectAnatomy,
    rng: &mut ChaCha8Rng,
) -> TensorField {
    let (nx, ny, nz) = spec.dims;
    let noise = Normal::new(0.0, spec.fa_noise_sigma.max(f64::MIN_POSITIVE)).unwrap();
    let mut triples = Vec::with_capacity(nx * ny * nz);
    for x in 0..nx {
        for y in 0..ny {
            for z in 0..nz {
                let rho = radial(anatomy, spec.dims, x, y, z);
                // Anisotropy peaks inside the white-matter shell and tapers
                // into the cortical band; the background tensor is zero.
                let wm_window = smoothstep(rho, anatomy.ventricle_radius, anatomy.ventricle_radius + EDGE)
                    * (1.0 - smoothstep(rho, anatomy.cortex_inner - EDGE, anatomy.cortex_inner));
                let ctx_window = smoothstep(rho, anatomy.cortex_inner - EDGE, anatomy.cortex_inner)
                    * (1.0 - smoothstep(rho, 1.0 - EDGE, 1.0));
                let anis = WM_ANISOTROPY * wm_window + CTX_ANISOTROPY * ctx_window;
                let inside = 1.0 - smoothstep(rho, 1.0, 1.0 + EDGE);
                if inside == 0.0 {
                    triples.push(EigenTriple::ZERO);
                    continue;
                }
                let mut l1 = 1.0 + 2.0 * anis;
                let mut l2 = 1.0 - anis;
                let mut l3 = 1.0 - anis;
                if spec.fa_noise_sigma > 0.0 {
                    l1 += inside * noise.sample(rng);
                    l2 += inside * noise.sample(rng);
                    l3 += inside * noise.sample(rng);
                }
                triples.push(EigenTriple::new(l1.max(0.0), l2.max(0.0), l3.max(0.0)));
            }
        }
    }
    TensorField { dims: spec.dims, triples }
}

/// Generates one subject's paired scan from its own RNG.
///
/// The returned record carries flags and diagnosis but no file paths; the
/// dataset writer fills those in.
pub fn generate_subject(
    spec: &PhantomSpec,
    diagnosis: Diagnosis,
    rng: &mut ChaCha8Rng,
) -> Result<(Volume3D, Volume3D, ScanRecord)> {
    spec.validate()?;
    let anatomy = sample_anatomy(spec.geometry(diagnosis), rng);
    let t1 = render_t1(spec, &anatomy, rng);
    let fa = fa_map(&render_tensor_field(spec, &anatomy, rng));
    let record = ScanRecord {
        subject_id: String::new(),
        scan_id: String::new(),
        diagnosis,
        has_t1: true,
        has_dwi: true,
        t1_path: None,
        dwi_path: None,
        split: Split::Train,
        provenance: Provenance::Real,
    };
    Ok((t1, fa, record))
}

/// Generates every scan of one subject: the anatomy is sampled once from
/// the subject seed, repeated scans re-render it with fresh noise.
fn generate_subject_scans(
    spec: &PhantomSpec,
    diagnosis: Diagnosis,
    subject_seed: u64,
) -> Result<Vec<(Volume3D, Volume3D)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(subject_seed);
    let anatomy = sample_anatomy(spec.geometry(diagnosis), &mut rng);
    (0..spec.scans_per_subject)
        .map(|scan_idx| {
            let mut scan_rng =
                ChaCha8Rng::seed_from_u64(mix_seed(subject_seed, 1 + scan_idx as u64));
            let t1 = render_t1(spec, &anatomy, &mut scan_rng);
            let fa = fa_map(&render_tensor_field(spec, &anatomy, &mut scan_rng));
            Ok((t1, fa))
        })
        .collect()
}

/// Subjects requested per diagnosis within one split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SplitCounts {
    pub cn: usize,
    pub mci: usize,
    pub ad: usize,
}

impl SplitCounts {
    pub fn total(&self) -> usize {
        self.cn + self.mci + self.ad
    }

    pub fn get(&self, d: Diagnosis) -> usize {
        match d {
            Diagnosis::Cn => self.cn,
            Diagnosis::Mci => self.mci,
            Diagnosis::Ad => self.ad,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DatasetCounts {
    pub train: SplitCounts,
    pub val: SplitCounts,
    pub test: SplitCounts,
}

impl DatasetCounts {
    pub fn get(&self, split: Split) -> SplitCounts {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }
}

/// Generates a dataset on disk: volume files plus `manifest.json`.
///
/// Per split, exactly `ceil(paired_fraction * n)` subjects keep their DWI
/// volume; the rest are T1-only. Paired subjects are picked round-robin
/// across diagnoses so every class contributes to the paired set. Subject
/// RNGs derive from `(spec.seed, split, class, index)`, so adding subjects
/// to any cell never perturbs existing ones.
pub fn generate_dataset(
    spec: &PhantomSpec,
    counts: &DatasetCounts,
    paired_fraction: f64,
    out_dir: impl AsRef<Path>,
) -> Result<DatasetManifest> {
    spec.validate()?;
    if !(0.0..=1.0).contains(&paired_fraction) {
        return Err(Error::InvalidConfig(format!(
            "paired_fraction must lie in [0, 1], got {paired_fraction}"
        )));
    }
    let out_dir = out_dir.as_ref();
    let vol_dir = out_dir.join("vols");
    std::fs::create_dir_all(&vol_dir).map_err(|e| Error::io(&vol_dir, e))?;

    let mut records = Vec::new();
    for (split_idx, split) in Split::ALL.iter().enumerate() {
        let split_counts = counts.get(*split);
        // Round-robin across classes: cn0, mci0, ad0, cn1, ... so that the
        // paired prefix stays class-balanced.
        let mut order: Vec<(Diagnosis, usize)> = Vec::with_capacity(split_counts.total());
        let max_count = Diagnosis::ALL.iter().map(|&d| split_counts.get(d)).max().unwrap_or(0);
        for i in 0..max_count {
            for &d in &Diagnosis::ALL {
                if i < split_counts.get(d) {
                    order.push((d, i));
                }
            }
        }
        let n = order.len();
        let n_paired = (paired_fraction * n as f64).ceil() as usize;

        for (pos, (diagnosis, local_idx)) in order.into_iter().enumerate() {
            let class_idx = diagnosis.index();
            let salt = ((split_idx as u64) << 40) | ((class_idx as u64) << 32) | local_idx as u64;
            let subject_seed = mix_seed(spec.seed, salt);
            let subject_id = format!(
                "{}_{}_{:03}",
                split.name(),
                diagnosis.name().to_lowercase(),
                local_idx
            );
            let paired = pos < n_paired;
            for (scan_idx, (t1, fa)) in
                generate_subject_scans(spec, diagnosis, subject_seed)?.into_iter().enumerate()
            {
                let scan_id = format!("{subject_id}_s{scan_idx}");
                let t1_rel = format!("vols/{scan_id}_t1.vol");
                write_volume(&t1, out_dir.join(&t1_rel))?;
                let dwi_rel = if paired {
                    let rel = format!("vols/{scan_id}_dwi.vol");
                    write_volume(&fa, out_dir.join(&rel))?;
                    Some(rel)
                } else {
                    None
                };
                records.push(ScanRecord {
                    subject_id: subject_id.clone(),
                    scan_id,
                    diagnosis,
                    has_t1: true,
                    has_dwi: paired,
                    t1_path: Some(t1_rel.into()),
                    dwi_path: dwi_rel.map(Into::into),
                    split: *split,
                    provenance: Provenance::Real,
                });
            }
        }
    }

    let manifest = DatasetManifest::new(records);
    let violations = crate::manifest::validate_manifest(&manifest);
    if !violations.is_empty() {
        return Err(Error::InvalidManifest(violations.len()));
    }
    manifest.write(out_dir.join("manifest.json"))?;
    Ok(manifest)
}
