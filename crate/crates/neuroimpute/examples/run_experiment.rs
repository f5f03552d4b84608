//! A miniature version of the imputation experiment grid: baseline plus one
//! augmentation plan under two strategies, three seeds each, rendered as a
//! results table.
//!
//! Run with: `cargo run --release --example run_experiment`
//! (takes a few minutes on CPU)

use neuroimpute::classifier::{BackboneSpec, FitConfig, Modality};
use neuroimpute::harness::{
    collect_run_records, render_table, run_experiment, to_csv, to_text, ExperimentConfig,
};
use neuroimpute::imputation::{AugmentationPlan, StrategyKind};
use neuroimpute::phantom::{generate_dataset, DatasetCounts, PhantomSpec, SplitCounts};

fn main() -> neuroimpute::Result<()> {
    let root = std::env::temp_dir().join("neuroimpute_experiment_demo");
    let data_dir = root.join("data");
    let spec = PhantomSpec::desk(16, 21);
    let counts = DatasetCounts {
        train: SplitCounts { cn: 8, mci: 8, ad: 8 },
        val: SplitCounts { cn: 3, mci: 3, ad: 3 },
        test: SplitCounts { cn: 3, mci: 3, ad: 3 },
    };
    // Half the training subjects are T1-only: the imputation pool.
    generate_dataset(&spec, &counts, 0.5, &data_dir)?;

    let base = ExperimentConfig {
        modality: Modality::Bimodal,
        strategy: StrategyKind::None,
        plan: AugmentationPlan::default(),
        n_runs: 3,
        seeds: None,
        base_seed: 17,
        manifest: data_dir.join("manifest.json"),
        ddpm_checkpoint: None,
        backbone: BackboneSpec::with_width_scale(8),
        fit: FitConfig {
            max_epochs: 15,
            patience: 10,
            learning_rate: 1e-3,
            weight_decay: 1e-5,
            batch_size: 8,
            seed: 0,
        },
        search: None,
        out_dir: root.join("exp"),
    };

    let rows: Vec<(StrategyKind, AugmentationPlan)> = vec![
        (StrategyKind::None, AugmentationPlan::default()),
        (StrategyKind::Blank, AugmentationPlan::new(2, 2, 2)),
        (StrategyKind::AvgDx, AugmentationPlan::new(2, 2, 2)),
    ];
    for (strategy, plan) in rows {
        let cfg = ExperimentConfig { strategy, plan, ..base.clone() };
        println!("running {} / plan {} ...", strategy, plan);
        for outcome in run_experiment::<f32>(&cfg)? {
            match outcome {
                neuroimpute::harness::RunOutcome::Ok(r) => println!(
                    "  seed {:>20}  acc {:.3}  ({} train records)",
                    r.seed,
                    r.metrics.accuracy.unwrap_or(f64::NAN),
                    r.summary.train_total
                ),
                neuroimpute::harness::RunOutcome::Failed { seed, error, .. } => {
                    println!("  seed {seed} FAILED: {error}")
                }
            }
        }
    }

    let records = collect_run_records(base.out_dir.join("runs"))?;
    let table = render_table(&records)?;
    println!("\n{}", to_text(&table));
    println!("csv:\n{}", to_csv(&table));
    Ok(())
}
