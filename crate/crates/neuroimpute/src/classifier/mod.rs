//! 3-way diagnostic classifiers: unimodal and late-fusion bimodal 3D CNNs,
//! AdamW training with early stopping, and the hyperparameter grid search.

mod fit;
mod model;
mod search;

pub use fit::{
    fit, predict_proba, ClassifierDataset, ClassifierMeta, ClassifierModel, EarlyStopping,
    FitConfig, FitStats, LabeledSample, Modality, TrainedClassifier, MODEL_SCHEMA_VERSION,
};
pub use model::{BackboneSpec, BimodalCnn, BimodalTrace, UnimodalCnn, UnimodalTrace};
pub use search::{hyperparameter_search, SearchRow, SearchSpace, SearchStrategy};
