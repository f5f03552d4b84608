//! Imputation strategies for missing DWI volumes and the construction of
//! augmented training sets.
//!
//! Three mechanisms fill a missing FA volume: conditional DDPM sampling from
//! the subject's T1, an all-zero blank, or the per-diagnosis mean of the
//! real paired training volumes. Strategy `none` adds the selected scans as
//! real T1-only records, which is how the T1-only experiment rows grow their
//! training set.

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{sample_conditional, DdpmCheckpoint};
use crate::error::{Error, Result};
use crate::manifest::{Diagnosis, Provenance, ScanRecord, Split};
use crate::nn::Scalar;
use crate::rng::{mix_seed_str, seeded};
use crate::volume::{RangeTag, Volume3D};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    Ddpm,
    Blank,
    #[serde(rename = "avgdx")]
    AvgDx,
    None,
}

impl StrategyKind {
    /// Table-style label for report rows.
    pub fn label(self) -> &'static str {
        match self {
            StrategyKind::Ddpm => "DDPM",
            StrategyKind::Blank => "Blank",
            StrategyKind::AvgDx => "AvgDX",
            StrategyKind::None => "--",
        }
    }

    pub fn provenance(self) -> Provenance {
        match self {
            StrategyKind::Ddpm => Provenance::ImputedDdpm,
            StrategyKind::Blank => Provenance::ImputedBlank,
            StrategyKind::AvgDx => Provenance::ImputedAvgDx,
            StrategyKind::None => Provenance::Real,
        }
    }
}

impl std::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// A strategy plus the checkpoint it needs; the checkpoint is present
/// exactly when the kind is DDPM.
pub enum ImputationStrategy<'a, S> {
    None,
    Blank,
    AvgDx,
    Ddpm(&'a DdpmCheckpoint<S>),
}

impl<S> ImputationStrategy<'_, S> {
    pub fn kind(&self) -> StrategyKind {
        match self {
            ImputationStrategy::None => StrategyKind::None,
            ImputationStrategy::Blank => StrategyKind::Blank,
            ImputationStrategy::AvgDx => StrategyKind::AvgDx,
            ImputationStrategy::Ddpm(_) => StrategyKind::Ddpm,
        }
    }
}

/// Training samples to add per diagnostic class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AugmentationPlan {
    pub add_cn: usize,
    pub add_mci: usize,
    pub add_ad: usize,
}

impl AugmentationPlan {
    pub fn new(add_cn: usize, add_mci: usize, add_ad: usize) -> Self {
        Self { add_cn, add_mci, add_ad }
    }

    pub fn total(&self) -> usize {
        self.add_cn + self.add_mci + self.add_ad
    }

    pub fn get(&self, d: Diagnosis) -> usize {
        match d {
            Diagnosis::Cn => self.add_cn,
            Diagnosis::Mci => self.add_mci,
            Diagnosis::Ad => self.add_ad,
        }
    }

    /// Parses the CLI form `cn=0,mci=200,ad=100`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut plan = AugmentationPlan::default();
        for part in text.split(',') {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("bad plan component {part:?}")))?;
            let value: usize = value
                .trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad plan count {value:?}")))?;
            match key.trim().to_ascii_lowercase().as_str() {
                "cn" => plan.add_cn = value,
                "mci" => plan.add_mci = value,
                "ad" => plan.add_ad = value,
                other => {
                    return Err(Error::InvalidConfig(format!("unknown plan class {other:?}")))
                }
            }
        }
        Ok(plan)
    }
}

impl std::fmt::Display for AugmentationPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "cn={},mci={},ad={}", self.add_cn, self.add_mci, self.add_ad)
    }
}

/// A real paired training scan held in memory.
#[derive(Debug, Clone)]
pub struct PairedScan {
    pub record: ScanRecord,
    pub t1: Volume3D,
    pub fa: Volume3D,
}

/// A T1-only training scan eligible for augmentation.
#[derive(Debug, Clone)]
pub struct PoolScan {
    pub record: ScanRecord,
    pub t1: Volume3D,
}

/// One record of the augmented training set; `fa` is `None` only for
/// real T1-only additions under strategy `none`.
#[derive(Debug, Clone)]
pub struct AugmentedScan {
    pub record: ScanRecord,
    pub t1: Volume3D,
    pub fa: Option<Volume3D>,
}

#[derive(Debug, Clone)]
pub struct AugmentedDataset {
    pub records: Vec<AugmentedScan>,
    pub plan: AugmentationPlan,
    pub strategy: StrategyKind,
    pub seed: u64,
}

/// All-zero unit-range volume: the no-information imputation baseline.
pub fn impute_blank(dims: (usize, usize, usize)) -> Result<Volume3D> {
    Volume3D::zeros(dims)
}

/// Voxelwise mean FA over the real paired training scans with the given
/// diagnosis. Averages only the training split and only real provenance, so
/// no information leaks across splits or from other imputations.
pub fn impute_avgdx(diagnosis: Diagnosis, paired_train: &[PairedScan]) -> Result<Volume3D> {
    let members: Vec<&PairedScan> = paired_train
        .iter()
        .filter(|p| {
            p.record.diagnosis == diagnosis
                && p.record.split == Split::Train
                && p.record.provenance == Provenance::Real
        })
        .collect();
    if members.is_empty() {
        return Err(Error::NoScansForDiagnosis(diagnosis.name().to_string()));
    }
    let dims = members[0].fa.dims();
    let mut acc = vec![0.0f64; members[0].fa.len()];
    for m in &members {
        if m.fa.dims() != dims {
            return Err(Error::DimMismatch { a: dims, b: m.fa.dims() });
        }
        for (a, &v) in acc.iter_mut().zip(m.fa.voxels()) {
            *a += v as f64;
        }
    }
    let n = members.len() as f64;
    let voxels: Vec<f32> = acc.iter().map(|&a| ((a / n) as f32).clamp(0.0, 1.0)).collect();
    Volume3D::new(dims, members[0].fa.spacing_mm(), voxels, RangeTag::Unit)
}

/// Selects `plan` scans per class from the T1-only pool (uniformly, without
/// replacement, seeded), imputes the missing FA per strategy, and returns
/// real and added records together.
///
/// The per-scan DDPM seed derives from `(seed, scan_id)`, so a scan's
/// imputed volume does not depend on which other scans were selected.
pub fn build_augmented_training_set<S: Scalar>(
    paired_train: &[PairedScan],
    t1_only_pool: &[PoolScan],
    plan: &AugmentationPlan,
    strategy: &ImputationStrategy<'_, S>,
    seed: u64,
) -> Result<AugmentedDataset> {
    for p in t1_only_pool {
        if p.record.split != Split::Train {
            return Err(Error::InvalidConfig(format!(
                "pool scan {} is in split {}, not train",
                p.record.scan_id, p.record.split
            )));
        }
    }

    let mut records: Vec<AugmentedScan> = paired_train
        .iter()
        .map(|p| AugmentedScan { record: p.record.clone(), t1: p.t1.clone(), fa: Some(p.fa.clone()) })
        .collect();

    // Lazily computed per-class means for AvgDX.
    let mut avg_cache: [Option<Volume3D>; 3] = [None, None, None];

    for diagnosis in Diagnosis::ALL {
        let requested = plan.get(diagnosis);
        if requested == 0 {
            continue;
        }
        let candidates: Vec<&PoolScan> = t1_only_pool
            .iter()
            .filter(|p| p.record.diagnosis == diagnosis)
            .collect();
        if candidates.len() < requested {
            return Err(Error::PoolExhausted {
                class: diagnosis.name().to_string(),
                requested,
                available: candidates.len(),
            });
        }
        // Uniform selection without replacement from a per-class stream, so
        // changing another class's plan never reshuffles this one.
        let mut rng = seeded(seed, diagnosis.index() as u64);
        let selected = rand::seq::index::sample(&mut rng, candidates.len(), requested);
        let mut picked: Vec<&PoolScan> = selected.iter().map(|i| candidates[i]).collect();
        picked.sort_by(|a, b| a.record.scan_id.cmp(&b.record.scan_id));

        for scan in picked {
            let mut record = scan.record.clone();
            record.provenance = strategy.kind().provenance();
            let fa = match strategy {
                ImputationStrategy::None => None,
                ImputationStrategy::Blank => Some(impute_blank(scan.t1.dims())?),
                ImputationStrategy::AvgDx => {
                    let slot = &mut avg_cache[diagnosis.index()];
                    if slot.is_none() {
                        *slot = Some(impute_avgdx(diagnosis, paired_train)?);
                    }
                    Some(slot.clone().expect("just computed"))
                }
                ImputationStrategy::Ddpm(ckpt) => {
                    let mut srng =
                        rand_chacha::ChaCha8Rng::seed_from_u64(mix_seed_str(seed, &record.scan_id));
                    Some(sample_conditional(&scan.t1, ckpt, &mut srng)?)
                }
            };
            record.has_dwi = fa.is_some();
            if fa.is_none() {
                record.dwi_path = None;
            }
            records.push(AugmentedScan { record, t1: scan.t1.clone(), fa });
        }
    }

    Ok(AugmentedDataset { records, plan: *plan, strategy: strategy.kind(), seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::Provenance;
    use crate::phantom::{generate_subject, PhantomSpec};
    use rand_chacha::ChaCha8Rng;

    fn record(id: &str, diagnosis: Diagnosis, split: Split, paired: bool) -> ScanRecord {
        ScanRecord {
            subject_id: id.to_string(),
            scan_id: format!("{id}_s0"),
            diagnosis,
            has_t1: true,
            has_dwi: paired,
            t1_path: Some(format!("{id}_t1.vol").into()),
            dwi_path: paired.then(|| format!("{id}_dwi.vol").into()),
            split,
            provenance: Provenance::Real,
        }
    }

    fn phantom_paired(n: usize, diagnosis: Diagnosis, dim: usize) -> Vec<PairedScan> {
        let spec = PhantomSpec::desk(dim, 5);
        (0..n)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(300 + i as u64);
                let (t1, fa, _) = generate_subject(&spec, diagnosis, &mut rng).unwrap();
                PairedScan {
                    record: record(&format!("p{diagnosis}{i}"), diagnosis, Split::Train, true),
                    t1,
                    fa,
                }
            })
            .collect()
    }

    fn phantom_pool(n: usize, diagnosis: Diagnosis, dim: usize) -> Vec<PoolScan> {
        let spec = PhantomSpec::desk(dim, 6);
        (0..n)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(400 + i as u64);
                let (t1, _, _) = generate_subject(&spec, diagnosis, &mut rng).unwrap();
                PoolScan {
                    record: record(&format!("q{diagnosis}{i}"), diagnosis, Split::Train, false),
                    t1,
                }
            })
            .collect()
    }

    #[test]
    fn blank_is_all_zeros_and_repeatable() {
        let a = impute_blank((16, 16, 16)).unwrap();
        assert_eq!(a.len(), 4096);
        assert!(a.voxels().iter().all(|&v| v == 0.0));
        assert_eq!(a, impute_blank((16, 16, 16)).unwrap());
        assert_eq!(a.range_tag(), RangeTag::Unit);
    }

    #[test]
    fn blank_ssim_below_self_similarity() {
        let paired = phantom_paired(1, Diagnosis::Cn, 8);
        let fa = &paired[0].fa;
        let blank = impute_blank(fa.dims()).unwrap();
        let s_blank = crate::metrics::ssim3d(&blank, fa).unwrap().value;
        let s_self = crate::metrics::ssim3d(fa, fa).unwrap().value;
        assert!(s_blank < s_self);
    }

    #[test]
    fn avgdx_of_one_scan_is_that_scan() {
        let paired = phantom_paired(1, Diagnosis::Cn, 8);
        let mean = impute_avgdx(Diagnosis::Cn, &paired).unwrap();
        assert_eq!(mean, paired[0].fa);
    }

    #[test]
    fn avgdx_of_zero_and_one_volumes_is_half() {
        let dims = (4, 4, 4);
        let zeros = Volume3D::zeros(dims).unwrap();
        let ones = zeros.with_voxels(vec![1.0; 64], RangeTag::Unit).unwrap();
        let mk = |i: usize, fa: Volume3D| PairedScan {
            record: record(&format!("s{i}"), Diagnosis::Ad, Split::Train, true),
            t1: zeros.clone(),
            fa,
        };
        let paired = vec![mk(0, zeros.clone()), mk(1, ones)];
        let mean = impute_avgdx(Diagnosis::Ad, &paired).unwrap();
        assert!(mean.voxels().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn avgdx_matches_brute_force_voxel_loop() {
        let paired = phantom_paired(5, Diagnosis::Mci, 8);
        let mean = impute_avgdx(Diagnosis::Mci, &paired).unwrap();
        // Independent oracle: plain voxel loop in f32-to-f64 order.
        let n = paired[0].fa.len();
        for i in 0..n {
            let mut acc = 0.0f64;
            for p in &paired {
                acc += p.fa.voxels()[i] as f64;
            }
            let expected = (acc / 5.0) as f32;
            assert!((mean.voxels()[i] - expected).abs() < 1e-6);
        }
    }

    #[test]
    fn avgdx_without_members_errors() {
        let paired = phantom_paired(2, Diagnosis::Cn, 8);
        assert!(matches!(
            impute_avgdx(Diagnosis::Ad, &paired),
            Err(Error::NoScansForDiagnosis(_))
        ));
    }

    #[test]
    fn identity_plan_returns_paired_train_unchanged() {
        let paired = phantom_paired(3, Diagnosis::Cn, 8);
        let pool = phantom_pool(2, Diagnosis::Cn, 8);
        let out = build_augmented_training_set::<f32>(
            &paired,
            &pool,
            &AugmentationPlan::default(),
            &ImputationStrategy::Blank,
            7,
        )
        .unwrap();
        assert_eq!(out.records.len(), 3);
        for (a, p) in out.records.iter().zip(&paired) {
            assert_eq!(a.record, p.record);
            assert_eq!(a.t1, p.t1);
            assert_eq!(a.fa.as_ref(), Some(&p.fa));
        }
    }

    #[test]
    fn totals_follow_the_real_plus_plan_rule() {
        let mut paired = phantom_paired(4, Diagnosis::Cn, 8);
        paired.extend(phantom_paired(2, Diagnosis::Mci, 8));
        let mut pool = phantom_pool(3, Diagnosis::Mci, 8);
        pool.extend(phantom_pool(2, Diagnosis::Ad, 8));
        // A scaled analog of the paper's rows: total = real + plan sum.
        let plan = AugmentationPlan::new(0, 2, 1);
        let out = build_augmented_training_set::<f32>(
            &paired,
            &pool,
            &plan,
            &ImputationStrategy::Blank,
            1,
        )
        .unwrap();
        assert_eq!(out.records.len(), 6 + plan.total());
        let imputed = out
            .records
            .iter()
            .filter(|r| r.record.provenance == Provenance::ImputedBlank)
            .count();
        assert_eq!(imputed, plan.total());
        // Real records stay bitwise untouched.
        for (a, p) in out.records.iter().zip(&paired) {
            assert_eq!(a.t1.voxels(), p.t1.voxels());
        }
    }

    #[test]
    fn insufficient_pool_names_class_and_shortfall() {
        let paired = phantom_paired(2, Diagnosis::Cn, 8);
        let pool = phantom_pool(1, Diagnosis::Ad, 8);
        let err = build_augmented_training_set::<f32>(
            &paired,
            &pool,
            &AugmentationPlan::new(0, 0, 3),
            &ImputationStrategy::Blank,
            1,
        )
        .unwrap_err();
        match err {
            Error::PoolExhausted { class, requested, available } => {
                assert_eq!(class, "AD");
                assert_eq!(requested, 3);
                assert_eq!(available, 1);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn blank_and_avgdx_content_is_rng_independent() {
        let paired = phantom_paired(3, Diagnosis::Cn, 8);
        // Pool exactly matches the plan, so selection is forced and any
        // difference would come from the (forbidden) use of the RNG.
        let pool = phantom_pool(2, Diagnosis::Cn, 8);
        let plan = AugmentationPlan::new(2, 0, 0);
        for strategy in [ImputationStrategy::Blank, ImputationStrategy::AvgDx] {
            let a = build_augmented_training_set::<f32>(&paired, &pool, &plan, &strategy, 1)
                .unwrap();
            let b = build_augmented_training_set::<f32>(&paired, &pool, &plan, &strategy, 999)
                .unwrap();
            for (ra, rb) in a.records.iter().zip(&b.records) {
                assert_eq!(ra.fa, rb.fa);
            }
        }
    }

    #[test]
    fn none_strategy_adds_real_t1_only_records() {
        let paired = phantom_paired(2, Diagnosis::Cn, 8);
        let pool = phantom_pool(2, Diagnosis::Cn, 8);
        let out = build_augmented_training_set::<f32>(
            &paired,
            &pool,
            &AugmentationPlan::new(2, 0, 0),
            &ImputationStrategy::None,
            3,
        )
        .unwrap();
        assert_eq!(out.records.len(), 4);
        let added: Vec<_> = out.records.iter().skip(2).collect();
        for r in added {
            assert_eq!(r.record.provenance, Provenance::Real);
            assert!(!r.record.has_dwi);
            assert!(r.fa.is_none());
        }
    }

    #[test]
    fn pool_outside_train_split_is_rejected() {
        let paired = phantom_paired(1, Diagnosis::Cn, 8);
        let mut pool = phantom_pool(1, Diagnosis::Cn, 8);
        pool[0].record.split = Split::Val;
        assert!(build_augmented_training_set::<f32>(
            &paired,
            &pool,
            &AugmentationPlan::new(1, 0, 0),
            &ImputationStrategy::Blank,
            1,
        )
        .is_err());
    }

    #[test]
    fn plan_parses_cli_form() {
        let plan = AugmentationPlan::parse("cn=0,mci=200,ad=100").unwrap();
        assert_eq!(plan, AugmentationPlan::new(0, 200, 100));
        assert!(AugmentationPlan::parse("cn=x").is_err());
        assert!(AugmentationPlan::parse("bad=1").is_err());
    }
}
