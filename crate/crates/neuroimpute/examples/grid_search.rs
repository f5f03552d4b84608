//! Exhaustive hyperparameter search over the learning-rate / weight-decay
//! grid, selecting on validation accuracy.
//!
//! Run with: `cargo run --release --example grid_search`

use neuroimpute::classifier::{hyperparameter_search, BackboneSpec, FitConfig, Modality, SearchSpace};
use neuroimpute::harness::LoadedDataset;
use neuroimpute::manifest::Split;
use neuroimpute::phantom::{generate_dataset, DatasetCounts, PhantomSpec, SplitCounts};

fn main() -> neuroimpute::Result<()> {
    let out = std::env::temp_dir().join("neuroimpute_search_demo");
    let spec = PhantomSpec::desk(12, 4);
    let counts = DatasetCounts {
        train: SplitCounts { cn: 5, mci: 5, ad: 5 },
        val: SplitCounts { cn: 2, mci: 2, ad: 2 },
        test: SplitCounts::default(),
    };
    generate_dataset(&spec, &counts, 1.0, &out)?;
    let data = LoadedDataset::load(out.join("manifest.json"))?;
    let train = data.classifier_set(Split::Train, Modality::T1);
    let val = data.classifier_set(Split::Val, Modality::T1);

    // A compact grid for the demo; `SearchSpace::default()` holds the full
    // 4 x 3 grid.
    let space = SearchSpace {
        learning_rates: vec![1e-3, 1e-4],
        weight_decays: vec![1e-4, 1e-6],
        ..Default::default()
    };
    let base = FitConfig { max_epochs: 12, patience: 6, batch_size: 8, seed: 5, ..Default::default() };
    let backbone = BackboneSpec::with_width_scale(8);

    let (best, trained, rows) =
        hyperparameter_search::<f32>(&space, &backbone, Modality::T1, &train, &val, &base)?;
    println!("lr        wd        val acc   best epoch");
    for row in &rows {
        println!(
            "{:8.0e}  {:8.0e}  {:7.3}  {:10}",
            row.learning_rate, row.weight_decay, row.val_accuracy, row.best_epoch
        );
    }
    println!(
        "\nbest: lr {:.0e}, wd {:.0e} (val acc {:.3})",
        best.learning_rate, best.weight_decay, trained.meta.best_val_accuracy
    );
    Ok(())
}
