//! 3D scalar volumes: the unit of all imaging I/O.
//!
//! Voxels are stored row-major with z varying fastest (linear index
//! `(x * ny + y) * nz + z`), as little-endian `f32` on disk. Each `.vol`
//! payload is accompanied by a human-readable `.vol.json` sidecar holding
//! dims, spacing, dtype, endianness and the range tag, so files round-trip
//! bit-exactly without any medical-imaging container format.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const VOLUME_SCHEMA_VERSION: u32 = 1;

/// Whether voxel values have been normalized to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RangeTag {
    /// Arbitrary acquisition-scale values.
    Raw,
    /// Every voxel lies in `[0, 1]`.
    Unit,
}

/// A dense 3D scalar field with voxel spacing metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    dims: (usize, usize, usize),
    spacing_mm: (f32, f32, f32),
    voxels: Vec<f32>,
    range_tag: RangeTag,
}

impl Volume3D {
    /// Builds a volume, checking the dims/spacing/length invariants.
    pub fn new(
        dims: (usize, usize, usize),
        spacing_mm: (f32, f32, f32),
        voxels: Vec<f32>,
        range_tag: RangeTag,
    ) -> Result<Self> {
        if dims.0 == 0 || dims.1 == 0 || dims.2 == 0 {
            return Err(Error::NonPositiveDims { dims });
        }
        if !(spacing_mm.0 > 0.0 && spacing_mm.1 > 0.0 && spacing_mm.2 > 0.0) {
            return Err(Error::InvalidVolume(format!(
                "spacing must be strictly positive, got {spacing_mm:?}"
            )));
        }
        let n = dims.0 * dims.1 * dims.2;
        if voxels.len() != n {
            return Err(Error::InvalidVolume(format!(
                "voxel count {} does not match dims {:?} ({} expected)",
                voxels.len(),
                dims,
                n
            )));
        }
        if range_tag == RangeTag::Unit {
            if let Some(v) = voxels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::InvalidVolume(format!(
                    "range_tag is unit but voxel value {v} lies outside [0, 1]"
                )));
            }
        }
        Ok(Self { dims, spacing_mm, voxels, range_tag })
    }

    /// All-zero unit-range volume with the default 2 mm isotropic spacing.
    pub fn zeros(dims: (usize, usize, usize)) -> Result<Self> {
        let n = dims
            .0
            .checked_mul(dims.1)
            .and_then(|v| v.checked_mul(dims.2))
            .ok_or(Error::NonPositiveDims { dims })?;
        Self::new(dims, DEFAULT_SPACING_MM, vec![0.0; n], RangeTag::Unit)
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn spacing_mm(&self) -> (f32, f32, f32) {
        self.spacing_mm
    }

    pub fn range_tag(&self) -> RangeTag {
        self.range_tag
    }

    pub fn voxels(&self) -> &[f32] {
        &self.voxels
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    /// Linear index of `(x, y, z)` in the canonical z-fastest order.
    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (x * self.dims.1 + y) * self.dims.2 + z
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.voxels[self.index(x, y, z)]
    }

    pub fn min_max(&self) -> (f32, f32) {
        let mut min = f32::INFINITY;
        let mut max = f32::NEG_INFINITY;
        for &v in &self.voxels {
            min = min.min(v);
            max = max.max(v);
        }
        (min, max)
    }

    /// Replaces the voxel payload, keeping dims/spacing. Used by generators.
    pub fn with_voxels(&self, voxels: Vec<f32>, range_tag: RangeTag) -> Result<Self> {
        Self::new(self.dims, self.spacing_mm, voxels, range_tag)
    }
}

pub const DEFAULT_SPACING_MM: (f32, f32, f32) = (2.0, 2.0, 2.0);

/// Min–max scales a raw volume to `[0, 1]`.
///
/// A constant input maps to the all-zero volume: there is nothing to scale
/// and zero matches the blank-imputation convention for empty content.
pub fn minmax_normalize(v: &Volume3D) -> Volume3D {
    let (min, max) = v.min_max();
    let span = max - min;
    let voxels = if span > 0.0 {
        v.voxels.iter().map(|&x| (x - min) / span).collect()
    } else {
        vec![0.0; v.voxels.len()]
    };
    // Clamp last-ulp excursions so the unit invariant holds exactly.
    let voxels = voxels.into_iter().map(|x: f32| x.clamp(0.0, 1.0)).collect();
    Volume3D {
        dims: v.dims,
        spacing_mm: v.spacing_mm,
        voxels,
        range_tag: RangeTag::Unit,
    }
}

/// Sidecar header written next to every `.vol` payload.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub spacing_mm: [f32; 3],
    pub range_tag: RangeTag,
    pub dtype: String,
    pub endianness: String,
    pub voxel_order: String,
    pub schema_version: u32,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes `<path>` (raw little-endian f32 voxels) and `<path>.json` (header).
pub fn write_volume(v: &Volume3D, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let header = VolumeHeader {
        dims: [v.dims.0, v.dims.1, v.dims.2],
        spacing_mm: [v.spacing_mm.0, v.spacing_mm.1, v.spacing_mm.2],
        range_tag: v.range_tag,
        dtype: "f32".into(),
        endianness: "little".into(),
        voxel_order: "row-major-z-fastest".into(),
        schema_version: VOLUME_SCHEMA_VERSION,
    };
    let mut payload = Vec::with_capacity(v.voxels.len() * 4);
    for &x in &v.voxels {
        payload.extend_from_slice(&x.to_le_bytes());
    }
    fs::write(path, payload).map_err(|e| Error::io(path, e))?;
    let sidecar = sidecar_path(path);
    let json = serde_json::to_string_pretty(&header).expect("header serializes");
    fs::write(&sidecar, json).map_err(|e| Error::io(&sidecar, e))?;
    Ok(())
}

/// Reads a volume written by [`write_volume`]; the round-trip is bit-exact.
pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume3D> {
    let path = path.as_ref();
    let sidecar = sidecar_path(path);
    let header_text = fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
    let header: VolumeHeader =
        serde_json::from_str(&header_text).map_err(|e| Error::json(&sidecar, e))?;
    let dims = (header.dims[0], header.dims[1], header.dims[2]);
    if dims.0 == 0 || dims.1 == 0 || dims.2 == 0 {
        return Err(Error::NonPositiveDims { dims });
    }
    let payload = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = dims.0 * dims.1 * dims.2;
    if payload.len() != expected * 4 {
        return Err(Error::PayloadSizeMismatch {
            path: path.to_path_buf(),
            expected,
            actual: payload.len() / 4,
        });
    }
    let voxels: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Volume3D::new(
        dims,
        (header.spacing_mm[0], header.spacing_mm[1], header.spacing_mm[2]),
        voxels,
        header.range_tag,
    )
}
