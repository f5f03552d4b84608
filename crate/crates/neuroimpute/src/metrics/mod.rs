//! Classification and image-quality metrics.
//!
//! Every metric here is deliberately small and deterministic so it can be
//! checked against brute-force oracles: confusion-matrix loops for the
//! classification columns and a naive per-window pass for SSIM.

mod aggregate;
mod classification;
mod image;

pub use aggregate::{aggregate_runs, format_cell, AggregateReport, MetricSummary};
pub use classification::{classification_metrics, one_vs_rest_auc, ScoreMatrix};
pub use image::{l1, mse, psnr, psnr_from_mse, ssim3d, SsimResult};

use serde::{Deserialize, Serialize};

/// One evaluation's metrics. Classification values are fractions in `[0, 1]`
/// (tables render them x100); `psnr_db` is in decibels and serializes the
/// +infinity sentinel as the string `"inf"`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub balanced_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub micro_auc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub macro_auc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub macro_precision: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub macro_f1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ssim3d: Option<f64>,
    #[serde(default, with = "psnr_serde", skip_serializing_if = "Option::is_none")]
    pub psnr_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mse: Option<f64>,
    /// Undefined-metric conditions, e.g. a class absent from the labels.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

mod psnr_serde {
    use serde::de::Error as DeError;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(x) if x.is_infinite() => s.serialize_str("inf"),
            Some(x) => s.serialize_f64(*x),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        let v = Option::<serde_json::Value>::deserialize(d)?;
        match v {
            None | Some(serde_json::Value::Null) => Ok(None),
            Some(serde_json::Value::String(s)) if s == "inf" => Ok(Some(f64::INFINITY)),
            Some(serde_json::Value::Number(n)) => n
                .as_f64()
                .map(Some)
                .ok_or_else(|| D::Error::custom("psnr_db is not representable as f64")),
            Some(other) => Err(D::Error::custom(format!("unexpected psnr_db value {other}"))),
        }
    }
}
