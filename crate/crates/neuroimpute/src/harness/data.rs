//! Loading manifest-described datasets into memory.

use std::path::{Path, PathBuf};

use crate::classifier::{ClassifierDataset, LabeledSample, Modality};
use crate::error::{Error, Result};
use crate::imputation::{PairedScan, PoolScan};
use crate::manifest::{validate_manifest, DatasetManifest, ScanRecord, Split};
use crate::volume::{read_volume, Volume3D};

/// One scan's record plus whichever volumes its manifest entry names.
#[derive(Debug, Clone)]
pub struct ScanVolumes {
    pub record: ScanRecord,
    pub t1: Option<Volume3D>,
    pub dwi: Option<Volume3D>,
}

/// A fully loaded dataset; volume paths resolve relative to the manifest.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub base_dir: PathBuf,
    pub scans: Vec<ScanVolumes>,
}

impl LoadedDataset {
    pub fn load(manifest_path: impl AsRef<Path>) -> Result<Self> {
        let manifest_path = manifest_path.as_ref();
        let manifest = DatasetManifest::read(manifest_path)?;
        let violations = validate_manifest(&manifest);
        if !violations.is_empty() {
            return Err(Error::InvalidManifest(violations.len()));
        }
        let base_dir = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let mut scans = Vec::with_capacity(manifest.records.len());
        for record in manifest.records {
            let resolve = |rel: &PathBuf| {
                if rel.is_absolute() {
                    rel.clone()
                } else {
                    base_dir.join(rel)
                }
            };
            let t1 = record.t1_path.as_ref().map(resolve).map(read_volume).transpose()?;
            let dwi = record.dwi_path.as_ref().map(resolve).map(read_volume).transpose()?;
            scans.push(ScanVolumes { record, t1, dwi });
        }
        Ok(Self { base_dir, scans })
    }

    /// Real paired (T1 + FA) training scans.
    pub fn paired_train(&self) -> Vec<PairedScan> {
        self.scans
            .iter()
            .filter(|s| s.record.split == Split::Train && s.t1.is_some() && s.dwi.is_some())
            .map(|s| PairedScan {
                record: s.record.clone(),
                t1: s.t1.clone().expect("filtered"),
                fa: s.dwi.clone().expect("filtered"),
            })
            .collect()
    }

    /// T1-only training scans eligible for augmentation.
    pub fn t1_only_train_pool(&self) -> Vec<PoolScan> {
        self.scans
            .iter()
            .filter(|s| s.record.split == Split::Train && s.t1.is_some() && s.dwi.is_none())
            .map(|s| PoolScan { record: s.record.clone(), t1: s.t1.clone().expect("filtered") })
            .collect()
    }

    /// Evaluation set for a split: the records carrying every volume the
    /// modality needs, always real.
    pub fn classifier_set(&self, split: Split, modality: Modality) -> ClassifierDataset {
        let samples = self
            .scans
            .iter()
            .filter(|s| s.record.split == split)
            .filter(|s| match modality {
                Modality::T1 => s.t1.is_some(),
                Modality::Dwi => s.dwi.is_some(),
                Modality::Bimodal => s.t1.is_some() && s.dwi.is_some(),
            })
            .map(|s| LabeledSample {
                t1: s.t1.clone(),
                dwi: s.dwi.clone(),
                label: s.record.diagnosis,
            })
            .collect();
        ClassifierDataset { samples }
    }
}
