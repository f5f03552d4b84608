//! Train the unimodal and bimodal classifiers on phantom data and print
//! their test-split metrics.
//!
//! Run with: `cargo run --release --example classify_phantoms`

use neuroimpute::classifier::{fit, predict_proba, BackboneSpec, FitConfig, Modality};
use neuroimpute::harness::LoadedDataset;
use neuroimpute::manifest::Split;
use neuroimpute::metrics::{classification_metrics, ScoreMatrix};
use neuroimpute::phantom::{generate_dataset, DatasetCounts, PhantomSpec, SplitCounts};

fn main() -> neuroimpute::Result<()> {
    let out = std::env::temp_dir().join("neuroimpute_classify_demo");
    let spec = PhantomSpec::desk(16, 9);
    let counts = DatasetCounts {
        train: SplitCounts { cn: 8, mci: 8, ad: 8 },
        val: SplitCounts { cn: 3, mci: 3, ad: 3 },
        test: SplitCounts { cn: 3, mci: 3, ad: 3 },
    };
    generate_dataset(&spec, &counts, 1.0, &out)?;
    let data = LoadedDataset::load(out.join("manifest.json"))?;

    let backbone = BackboneSpec::with_width_scale(8);
    let cfg = FitConfig {
        max_epochs: 30,
        patience: 10,
        learning_rate: 1e-3,
        weight_decay: 1e-5,
        batch_size: 8,
        seed: 1,
    };

    for modality in [Modality::T1, Modality::Dwi, Modality::Bimodal] {
        let train = data.classifier_set(Split::Train, modality);
        let val = data.classifier_set(Split::Val, modality);
        let test = data.classifier_set(Split::Test, modality);
        let (trained, _) = fit::<f32>(&backbone, modality, &train, &val, &cfg)?;
        let (rows, _) = predict_proba(&trained, &test)?;
        let report = classification_metrics(&ScoreMatrix::new(rows, test.labels())?);
        println!(
            "{:6}  best epoch {:2} (val acc {:.2})  test acc {:.2}  bal acc {:.2}  macro AUC {:.2}",
            modality.name(),
            trained.meta.best_epoch,
            trained.meta.best_val_accuracy,
            report.accuracy.unwrap(),
            report.balanced_accuracy.unwrap(),
            report.macro_auc.unwrap_or(f64::NAN),
        );
    }
    Ok(())
}
