//! Hyperparameter search over the learning-rate / weight-decay grid.
//!
//! The default 4x3 grid is small enough that exhaustive enumeration
//! dominates any adaptive scheme and stays deterministic; `random-k` exists
//! for larger user-supplied grids.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Scalar;
use crate::rng::seeded;

use super::fit::{fit, ClassifierDataset, FitConfig, Modality, TrainedClassifier};
use super::model::BackboneSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchStrategy {
    Exhaustive,
    RandomK,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpace {
    pub learning_rates: Vec<f64>,
    pub weight_decays: Vec<f64>,
    pub strategy: SearchStrategy,
    /// Evaluation cap for `random-k`.
    pub budget: Option<usize>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            learning_rates: vec![1e-4, 1e-5, 5e-5, 1e-6],
            weight_decays: vec![1e-4, 1e-5, 1e-6],
            strategy: SearchStrategy::Exhaustive,
            budget: None,
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rates.is_empty() || self.weight_decays.is_empty() {
            return Err(Error::InvalidConfig("search grids must be nonempty".into()));
        }
        if self.strategy == SearchStrategy::RandomK && self.budget.is_none() {
            return Err(Error::InvalidConfig("random-k needs a budget".into()));
        }
        Ok(())
    }
}

/// One evaluated configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRow {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub val_accuracy: f64,
    pub best_epoch: usize,
}

/// Evaluates grid points via [`fit`] and returns the best configuration by
/// validation accuracy; ties break toward the larger learning rate, then
/// the larger weight decay.
pub fn hyperparameter_search<S: Scalar>(
    space: &SearchSpace,
    spec: &BackboneSpec,
    modality: Modality,
    train_set: &ClassifierDataset,
    val_set: &ClassifierDataset,
    base_cfg: &FitConfig,
) -> Result<(FitConfig, TrainedClassifier<S>, Vec<SearchRow>)> {
    space.validate()?;
    let mut grid: Vec<(f64, f64)> = space
        .learning_rates
        .iter()
        .flat_map(|&lr| space.weight_decays.iter().map(move |&wd| (lr, wd)))
        .collect();
    if space.strategy == SearchStrategy::RandomK {
        let budget = space.budget.expect("validated");
        let mut rng = seeded(base_cfg.seed, 0x736561); // search stream
        grid.shuffle(&mut rng);
        grid.truncate(budget);
    }

    let mut rows = Vec::with_capacity(grid.len());
    let mut best: Option<(FitConfig, TrainedClassifier<S>, f64)> = None;
    for (lr, wd) in grid {
        let cfg = FitConfig { learning_rate: lr, weight_decay: wd, ..base_cfg.clone() };
        let (trained, _) = fit::<S>(spec, modality, train_set, val_set, &cfg)?;
        let acc = trained.meta.best_val_accuracy;
        rows.push(SearchRow {
            learning_rate: lr,
            weight_decay: wd,
            val_accuracy: acc,
            best_epoch: trained.meta.best_epoch,
        });
        let better = match &best {
            None => true,
            Some((best_cfg, _, best_acc)) => {
                acc > *best_acc
                    || (acc == *best_acc
                        && (lr > best_cfg.learning_rate
                            || (lr == best_cfg.learning_rate && wd > best_cfg.weight_decay)))
            }
        };
        if better {
            best = Some((cfg, trained, acc));
        }
    }
    let (cfg, trained, _) = best.expect("nonempty grid");
    Ok((cfg, trained, rows))
}
