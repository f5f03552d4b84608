//! Build augmented training sets with the three imputation strategies and
//! compare what each one fills in for the same missing scans.
//!
//! Run with: `cargo run --release --example impute_strategies`

use neuroimpute::harness::LoadedDataset;
use neuroimpute::imputation::{
    build_augmented_training_set, AugmentationPlan, ImputationStrategy,
};
use neuroimpute::manifest::Provenance;
use neuroimpute::metrics::{mse, ssim3d};
use neuroimpute::phantom::{generate_dataset, DatasetCounts, PhantomSpec, SplitCounts};

fn main() -> neuroimpute::Result<()> {
    let out = std::env::temp_dir().join("neuroimpute_impute_demo");
    let spec = PhantomSpec::desk(16, 3);
    let counts = DatasetCounts {
        train: SplitCounts { cn: 6, mci: 6, ad: 6 },
        val: SplitCounts::default(),
        test: SplitCounts::default(),
    };
    generate_dataset(&spec, &counts, 0.5, &out)?;
    let data = LoadedDataset::load(out.join("manifest.json"))?;
    let paired = data.paired_train();
    let pool = data.t1_only_train_pool();
    println!("{} paired train scans, {} in the T1-only pool", paired.len(), pool.len());

    let plan = AugmentationPlan::new(2, 2, 2);
    for strategy in [ImputationStrategy::<f32>::Blank, ImputationStrategy::AvgDx] {
        let augmented = build_augmented_training_set(&paired, &pool, &plan, &strategy, 7)?;
        let imputed: Vec<_> = augmented
            .records
            .iter()
            .filter(|r| r.record.provenance != Provenance::Real)
            .collect();
        println!(
            "\nstrategy {:>5}: {} real + {} imputed = {} records",
            augmented.strategy,
            augmented.records.len() - imputed.len(),
            imputed.len(),
            augmented.records.len()
        );
        // How close is the imputed FA to a real FA of the same class? Take
        // the first imputed scan and compare against one real class member.
        let first = imputed[0];
        let real = paired
            .iter()
            .find(|p| p.record.diagnosis == first.record.diagnosis)
            .expect("class has a paired member");
        let fa = first.fa.as_ref().expect("imputing strategies fill FA");
        println!(
            "  first imputed ({} {}): mse to a real class FA = {:.5}, ssim = {:.4}",
            first.record.diagnosis,
            first.record.scan_id,
            mse(fa, &real.fa)?,
            ssim3d(fa, &real.fa)?.value,
        );
    }
    Ok(())
}
