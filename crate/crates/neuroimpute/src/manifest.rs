//! Per-scan metadata and dataset manifests with split validation.
//!
//! A manifest is one JSON document listing every scan, which modalities it
//! carries, its diagnosis, its split, and where each modality's volume file
//! lives. Splits must be subject-disjoint.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// Diagnostic class for the 3-way classification task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Diagnosis {
    #[serde(rename = "CN")]
    Cn,
    #[serde(rename = "MCI")]
    Mci,
    #[serde(rename = "AD")]
    Ad,
}

impl Diagnosis {
    pub const ALL: [Diagnosis; 3] = [Diagnosis::Cn, Diagnosis::Mci, Diagnosis::Ad];

    /// Class index used for labels and metric rows.
    pub fn index(self) -> usize {
        match self {
            Diagnosis::Cn => 0,
            Diagnosis::Mci => 1,
            Diagnosis::Ad => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Diagnosis::Cn => "CN",
            Diagnosis::Mci => "MCI",
            Diagnosis::Ad => "AD",
        }
    }
}

impl fmt::Display for Diagnosis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How a scan's DWI volume came to exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    #[serde(rename = "real")]
    Real,
    #[serde(rename = "imputed-ddpm")]
    ImputedDdpm,
    #[serde(rename = "imputed-blank")]
    ImputedBlank,
    #[serde(rename = "imputed-avgdx")]
    ImputedAvgDx,
}

/// One scan: subject identity, diagnosis, modality availability and file paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRecord {
    pub subject_id: String,
    pub scan_id: String,
    pub diagnosis: Diagnosis,
    pub has_t1: bool,
    pub has_dwi: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t1_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dwi_path: Option<PathBuf>,
    pub split: Split,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub records: Vec<ScanRecord>,
}

impl DatasetManifest {
    pub fn new(records: Vec<ScanRecord>) -> Self {
        Self { schema_version: MANIFEST_SCHEMA_VERSION, records }
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ScanRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }
}

/// A single rule violation found by [`validate_manifest`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub rule: &'static str,
    pub message: String,
    pub scan_ids: Vec<String>,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {} ({})", self.rule, self.message, self.scan_ids.join(", "))
    }
}

/// Checks every manifest invariant; an empty list means the manifest is valid.
pub fn validate_manifest(manifest: &DatasetManifest) -> Vec<Violation> {
    let mut violations = Vec::new();

    // Subject-disjointness across splits.
    let mut subject_splits: HashMap<&str, Vec<(Split, &str)>> = HashMap::new();
    for r in &manifest.records {
        subject_splits
            .entry(r.subject_id.as_str())
            .or_default()
            .push((r.split, r.scan_id.as_str()));
    }
    let mut offenders: Vec<(&str, Vec<&str>)> = subject_splits
        .iter()
        .filter(|(_, entries)| {
            let first = entries[0].0;
            entries.iter().any(|(s, _)| *s != first)
        })
        .map(|(subject, entries)| {
            (*subject, entries.iter().map(|(_, id)| *id).collect::<Vec<_>>())
        })
        .collect();
    offenders.sort();
    for (subject, mut scan_ids) in offenders {
        scan_ids.sort();
        violations.push(Violation {
            rule: "subject-disjoint-splits",
            message: format!("subject {subject} appears in more than one split"),
            scan_ids: scan_ids.into_iter().map(String::from).collect(),
        });
    }

    // Unique scan ids.
    let mut seen: HashMap<&str, usize> = HashMap::new();
    for r in &manifest.records {
        *seen.entry(r.scan_id.as_str()).or_insert(0) += 1;
    }
    let mut dupes: Vec<&str> = seen
        .into_iter()
        .filter(|(_, n)| *n > 1)
        .map(|(id, _)| id)
        .collect();
    dupes.sort();
    for id in dupes {
        violations.push(Violation {
            rule: "unique-scan-ids",
            message: format!("scan_id {id} occurs more than once"),
            scan_ids: vec![id.to_string()],
        });
    }

    for r in &manifest.records {
        if r.has_dwi && !r.has_t1 {
            violations.push(Violation {
                rule: "dwi-implies-t1",
                message: format!("scan {} has DWI without a corresponding T1", r.scan_id),
                scan_ids: vec![r.scan_id.clone()],
            });
        }
        for (modality, has, path) in
            [("t1", r.has_t1, &r.t1_path), ("dwi", r.has_dwi, &r.dwi_path)]
        {
            if has != path.is_some() {
                violations.push(Violation {
                    rule: "path-presence",
                    message: format!(
                        "scan {}: has_{modality}={} but {modality}_path {}",
                        r.scan_id,
                        has,
                        if path.is_some() { "is set" } else { "is missing" }
                    ),
                    scan_ids: vec![r.scan_id.clone()],
                });
            }
        }
    }

    violations
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(subject: &str, scan: &str, split: Split) -> ScanRecord {
        ScanRecord {
            subject_id: subject.into(),
            scan_id: scan.into(),
            diagnosis: Diagnosis::Cn,
            has_t1: true,
            has_dwi: true,
            t1_path: Some(PathBuf::from(format!("{scan}_t1.vol"))),
            dwi_path: Some(PathBuf::from(format!("{scan}_dwi.vol"))),
            split,
            provenance: Provenance::Real,
        }
    }

    #[test]
    fn subject_in_two_splits_is_one_violation() {
        let m = DatasetManifest::new(vec![
            record("s1", "s1_a", Split::Train),
            record("s1", "s1_b", Split::Test),
        ]);
        let v = validate_manifest(&m);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, "subject-disjoint-splits");
        assert_eq!(v[0].scan_ids, vec!["s1_a", "s1_b"]);
    }

    #[test]
    fn dwi_without_t1_is_modality_violation() {
        let mut r = record("s1", "s1_a", Split::Train);
        r.has_t1 = false;
        r.t1_path = None;
        let v = validate_manifest(&DatasetManifest::new(vec![r]));
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, "dwi-implies-t1");
    }

    #[test]
    fn well_formed_manifest_validates_clean() {
        let m = DatasetManifest::new(vec![
            record("s1", "s1_a", Split::Train),
            record("s2", "s2_a", Split::Val),
            record("s3", "s3_a", Split::Test),
        ]);
        assert!(validate_manifest(&m).is_empty());
    }

    #[test]
    fn manifest_roundtrips_with_exact_field_names() {
        let m = DatasetManifest::new(vec![record("s1", "s1_a", Split::Train)]);
        let text = serde_json::to_string(&m).unwrap();
        for key in [
            "subject_id", "scan_id", "diagnosis", "has_t1", "has_dwi", "t1_path", "dwi_path",
            "split", "provenance", "schema_version",
        ] {
            assert!(text.contains(key), "missing key {key} in {text}");
        }
        assert!(text.contains("\"CN\""));
        assert!(text.contains("\"train\""));
        assert!(text.contains("\"real\""));
        let back: DatasetManifest = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
    }

    /// Corruption kinds the property test can inject.
    #[derive(Debug, Clone, Copy)]
    enum Corruption {
        None,
        CrossSplitSubject,
        DuplicateScanId,
        DwiWithoutT1,
        PathFlagMismatch,
    }

    proptest! {
        #[test]
        fn validate_detects_exactly_the_injected_corruption(
            n in 2usize..8,
            which in 0usize..5,
            target in 0usize..8,
        ) {
            let corruption = match which {
                0 => Corruption::None,
                1 => Corruption::CrossSplitSubject,
                2 => Corruption::DuplicateScanId,
                3 => Corruption::DwiWithoutT1,
                _ => Corruption::PathFlagMismatch,
            };
            let mut records: Vec<ScanRecord> = (0..n)
                .map(|i| {
                    let split = Split::ALL[i % 3];
                    record(&format!("subj{i}"), &format!("subj{i}_scan"), split)
                })
                .collect();
            let t = target % n;
            match corruption {
                Corruption::None => {}
                Corruption::CrossSplitSubject => {
                    let mut extra = records[t].clone();
                    extra.scan_id = format!("{}_b", extra.scan_id);
                    extra.split = match extra.split {
                        Split::Train => Split::Test,
                        Split::Val => Split::Train,
                        Split::Test => Split::Val,
                    };
                    records.push(extra);
                }
                Corruption::DuplicateScanId => {
                    // Same scan_id, same subject and split: only uniqueness breaks.
                    records.push(records[t].clone());
                }
                Corruption::DwiWithoutT1 => {
                    records[t].has_t1 = false;
                    records[t].t1_path = None;
                }
                Corruption::PathFlagMismatch => {
                    records[t].dwi_path = None;
                }
            }
            let violations = validate_manifest(&DatasetManifest::new(records));
            match corruption {
                Corruption::None => prop_assert!(violations.is_empty()),
                Corruption::CrossSplitSubject => {
                    prop_assert!(violations.iter().any(|v| v.rule == "subject-disjoint-splits"));
                }
                Corruption::DuplicateScanId => {
                    prop_assert!(violations.iter().any(|v| v.rule == "unique-scan-ids"));
                }
                Corruption::DwiWithoutT1 => {
                    prop_assert!(violations.iter().any(|v| v.rule == "dwi-implies-t1"));
                }
                Corruption::PathFlagMismatch => {
                    prop_assert!(violations.iter().any(|v| v.rule == "path-presence"));
                }
            }
        }
    }
}
