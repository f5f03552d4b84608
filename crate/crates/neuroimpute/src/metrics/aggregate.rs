//! Aggregation of per-run metric reports into mean ± std cells.

use serde::{Deserialize, Serialize};

use super::MetricReport;

/// Mean and sample standard deviation of one metric, on the fraction scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub n_runs: usize,
    pub accuracy: Option<MetricSummary>,
    pub balanced_accuracy: Option<MetricSummary>,
    pub micro_auc: Option<MetricSummary>,
    pub macro_auc: Option<MetricSummary>,
    pub macro_precision: Option<MetricSummary>,
    pub macro_f1: Option<MetricSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

fn summarize(name: &str, values: Vec<Option<f64>>, warnings: &mut Vec<String>) -> Option<MetricSummary> {
    let defined: Vec<f64> = values.iter().filter_map(|v| *v).collect();
    if defined.len() < values.len() {
        warnings.push(format!(
            "{name} undefined in {} of {} runs; cell left empty",
            values.len() - defined.len(),
            values.len()
        ));
        return None;
    }
    let n = defined.len();
    let mean = defined.iter().sum::<f64>() / n as f64;
    let std = if n >= 2 {
        let ss: f64 = defined.iter().map(|v| (v - mean) * (v - mean)).sum();
        (ss / (n - 1) as f64).sqrt()
    } else {
        warnings.push(format!("{name} aggregated from a single run; std reported as 0.00"));
        0.0
    };
    Some(MetricSummary { mean, std })
}

/// Aggregates per-run reports: arithmetic mean and sample (n-1) standard
/// deviation per metric. A single run yields std 0.00 plus a warning.
pub fn aggregate_runs(reports: &[MetricReport]) -> AggregateReport {
    let mut warnings = Vec::new();
    let pick = |f: &dyn Fn(&MetricReport) -> Option<f64>| -> Vec<Option<f64>> {
        reports.iter().map(f).collect()
    };
    let accuracy = summarize("accuracy", pick(&|r| r.accuracy), &mut warnings);
    let balanced_accuracy =
        summarize("balanced_accuracy", pick(&|r| r.balanced_accuracy), &mut warnings);
    let micro_auc = summarize("micro_auc", pick(&|r| r.micro_auc), &mut warnings);
    let macro_auc = summarize("macro_auc", pick(&|r| r.macro_auc), &mut warnings);
    let macro_precision =
        summarize("macro_precision", pick(&|r| r.macro_precision), &mut warnings);
    let macro_f1 = summarize("macro_f1", pick(&|r| r.macro_f1), &mut warnings);
    AggregateReport {
        n_runs: reports.len(),
        accuracy,
        balanced_accuracy,
        micro_auc,
        macro_auc,
        macro_precision,
        macro_f1,
        warnings,
    }
}

/// Renders one table cell on the x100 scale: `65.00±7.07`, or `--` when the
/// metric is undefined.
pub fn format_cell(summary: &Option<MetricSummary>) -> String {
    match summary {
        Some(s) => format!("{:.2}\u{b1}{:.2}", s.mean * 100.0, s.std * 100.0),
        None => "--".to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(acc: f64) -> MetricReport {
        MetricReport { accuracy: Some(acc), ..Default::default() }
    }

    #[test]
    fn mean_and_sample_std_of_two_runs() {
        // {60, 70} on the x100 scale: mean 65.00, std sqrt(50) = 7.07.
        let agg = aggregate_runs(&[report(0.60), report(0.70)]);
        let cell = format_cell(&agg.accuracy);
        assert_eq!(cell, "65.00±7.07");
    }

    #[test]
    fn identical_reports_have_zero_std() {
        let agg = aggregate_runs(&[report(0.5), report(0.5), report(0.5)]);
        assert_eq!(format_cell(&agg.accuracy), "50.00±0.00");
    }

    #[test]
    fn single_report_warns_and_reports_zero_std() {
        let agg = aggregate_runs(&[report(0.42)]);
        assert_eq!(format_cell(&agg.accuracy), "42.00±0.00");
        assert!(agg.warnings.iter().any(|w| w.contains("single run")));
    }

    #[test]
    fn undefined_metric_renders_as_dashes() {
        let agg = aggregate_runs(&[report(0.5)]);
        assert_eq!(format_cell(&agg.macro_auc), "--");
    }
}
