//! Multiclass classification metrics over probability rows.

use crate::error::{Error, Result};

use super::MetricReport;

/// Probability rows with ground-truth class indices.
#[derive(Debug, Clone)]
pub struct ScoreMatrix {
    n_classes: usize,
    rows: Vec<f64>,
    labels: Vec<usize>,
}

impl ScoreMatrix {
    pub fn new(rows: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyDataset("score matrix needs at least one row".into()));
        }
        if rows.len() != labels.len() {
            return Err(Error::InvalidConfig(format!(
                "{} score rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        let n_classes = rows[0].len();
        if n_classes < 2 {
            return Err(Error::InvalidConfig("need at least two classes".into()));
        }
        let mut flat = Vec::with_capacity(rows.len() * n_classes);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n_classes {
                return Err(Error::InvalidConfig(format!(
                    "row {i} has {} entries, expected {n_classes}",
                    row.len()
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidConfig(format!(
                    "row {i} sums to {sum}, not 1 within 1e-6"
                )));
            }
            flat.extend_from_slice(row);
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::InvalidConfig(format!(
                "label {bad} outside [0, {n_classes})"
            )));
        }
        Ok(Self { n_classes, rows: flat, labels })
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.n_classes..(i + 1) * self.n_classes]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Argmax with ties resolved toward the lowest class index.
    pub fn predicted(&self, i: usize) -> usize {
        let row = self.row(i);
        let mut best = 0;
        for (c, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = c;
            }
        }
        best
    }
}

/// One-vs-rest ROC AUC via the Mann-Whitney rank statistic with tied ranks
/// averaged. Returns `None` when either class is empty.
pub fn one_vs_rest_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), positive.len());
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("scores must not be NaN"));
    // Average ranks across tie groups (1-based ranks).
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if positive[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let n_pos_f = n_pos as f64;
    Some((rank_sum_pos - n_pos_f * (n_pos_f + 1.0) / 2.0) / (n_pos_f * n_neg as f64))
}

/// Computes the six Table-style classification metrics.
///
/// Per-class quantities exist only for classes present in the labels; an
/// absent class is reported as a warning rather than silently skewing or
/// NaN-ing the mean. Within defined classes, 0/0 precision and F1 are 0.
pub fn classification_metrics(scores: &ScoreMatrix) -> MetricReport {
    let n = scores.n_samples();
    let k = scores.n_classes();
    let mut warnings = Vec::new();

    let predicted: Vec<usize> = (0..n).map(|i| scores.predicted(i)).collect();
    let mut support = vec![0usize; k];
    let mut tp = vec![0usize; k];
    let mut pred_count = vec![0usize; k];
    for i in 0..n {
        let label = scores.labels()[i];
        support[label] += 1;
        pred_count[predicted[i]] += 1;
        if predicted[i] == label {
            tp[label] += 1;
        }
    }

    let correct = tp.iter().sum::<usize>();
    let accuracy = correct as f64 / n as f64;

    let defined: Vec<usize> = (0..k).filter(|&c| support[c] > 0).collect();
    for c in 0..k {
        if support[c] == 0 {
            warnings.push(format!(
                "class {c} has no true samples: recall, precision, F1 and one-vs-rest AUC are undefined for it"
            ));
        }
    }

    let mean_over_defined = |f: &dyn Fn(usize) -> f64| -> Option<f64> {
        if defined.is_empty() {
            None
        } else {
            Some(defined.iter().map(|&c| f(c)).sum::<f64>() / defined.len() as f64)
        }
    };

    let recall = |c: usize| tp[c] as f64 / support[c] as f64;
    let precision = |c: usize| {
        if pred_count[c] == 0 {
            0.0
        } else {
            tp[c] as f64 / pred_count[c] as f64
        }
    };
    let f1 = |c: usize| {
        let (p, r) = (precision(c), recall(c));
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    };

    let balanced_accuracy = mean_over_defined(&recall);
    let macro_precision = mean_over_defined(&precision);
    let macro_f1 = mean_over_defined(&f1);

    // Macro AUC: mean of per-class one-vs-rest AUCs over classes where the
    // rank statistic exists (some positives and some negatives).
    let mut class_aucs = Vec::new();
    for c in 0..k {
        let col: Vec<f64> = (0..n).map(|i| scores.row(i)[c]).collect();
        let pos: Vec<bool> = scores.labels().iter().map(|&l| l == c).collect();
        match one_vs_rest_auc(&col, &pos) {
            Some(auc) => class_aucs.push(auc),
            None => {
                if support[c] > 0 {
                    warnings.push(format!(
                        "class {c} covers every sample: one-vs-rest AUC is undefined for it"
                    ));
                }
            }
        }
    }
    let macro_auc = if class_aucs.is_empty() {
        warnings.push("macro AUC undefined: no class has both positives and negatives".into());
        None
    } else {
        Some(class_aucs.iter().sum::<f64>() / class_aucs.len() as f64)
    };

    // Micro AUC: pooled one-vs-rest over the flattened (sample, class) set.
    let mut flat_scores = Vec::with_capacity(n * k);
    let mut flat_pos = Vec::with_capacity(n * k);
    for i in 0..n {
        for c in 0..k {
            flat_scores.push(scores.row(i)[c]);
            flat_pos.push(scores.labels()[i] == c);
        }
    }
    let micro_auc = one_vs_rest_auc(&flat_scores, &flat_pos);

    MetricReport {
        accuracy: Some(accuracy),
        balanced_accuracy,
        micro_auc,
        macro_auc,
        macro_precision,
        macro_f1,
        warnings,
        ..Default::default()
    }
}
