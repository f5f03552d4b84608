//! Aggregation of run records into result tables (CSV and aligned text).

use serde::{Deserialize, Serialize};

use crate::classifier::Modality;
use crate::error::{Error, Result};
use crate::imputation::StrategyKind;
use crate::metrics::{aggregate_runs, format_cell, AggregateReport};

use super::run::{RunRecord, RunSummary};

pub const TABLE_COLUMNS: [&str; 11] = [
    "CN",
    "MCI",
    "AD",
    "Total",
    "Imputation",
    "Acc",
    "Bal Acc",
    "Micro AUC",
    "Macro AUC",
    "Macro Prec",
    "Macro F1",
];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableRow {
    pub config_hash: String,
    pub summary: RunSummary,
    pub n_runs: usize,
    pub aggregates: AggregateReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultsTable {
    pub rows: Vec<TableRow>,
}

fn modality_rank(m: Modality) -> usize {
    match m {
        Modality::Bimodal => 0,
        Modality::Dwi => 1,
        Modality::T1 => 2,
    }
}

fn strategy_rank(s: StrategyKind) -> usize {
    match s {
        StrategyKind::None => 0,
        StrategyKind::Ddpm => 1,
        StrategyKind::Blank => 2,
        StrategyKind::AvgDx => 3,
    }
}

/// Groups records by config hash, aggregates each group to mean ± std, and
/// orders rows by (modality, Total ascending, strategy).
pub fn render_table(records: &[RunRecord]) -> Result<ResultsTable> {
    if records.is_empty() {
        return Err(Error::EmptyDataset("no run records to render".into()));
    }
    let mut groups: Vec<(String, Vec<&RunRecord>)> = Vec::new();
    for record in records {
        match groups.iter_mut().find(|(hash, _)| *hash == record.config_hash) {
            Some((_, members)) => members.push(record),
            None => groups.push((record.config_hash.clone(), vec![record])),
        }
    }
    let mut rows: Vec<TableRow> = groups
        .into_iter()
        .map(|(config_hash, members)| {
            let reports: Vec<_> = members.iter().map(|r| r.metrics.clone()).collect();
            TableRow {
                config_hash,
                summary: members[0].summary.clone(),
                n_runs: members.len(),
                aggregates: aggregate_runs(&reports),
            }
        })
        .collect();
    rows.sort_by_key(|row| {
        (
            modality_rank(row.summary.modality),
            row.summary.train_total,
            strategy_rank(row.summary.strategy),
        )
    });
    Ok(ResultsTable { rows })
}

fn row_cells(row: &TableRow) -> [String; 11] {
    let a = &row.aggregates;
    [
        row.summary.plan.add_cn.to_string(),
        row.summary.plan.add_mci.to_string(),
        row.summary.plan.add_ad.to_string(),
        row.summary.train_total.to_string(),
        row.summary.strategy.label().to_string(),
        format_cell(&a.accuracy),
        format_cell(&a.balanced_accuracy),
        format_cell(&a.micro_auc),
        format_cell(&a.macro_auc),
        format_cell(&a.macro_precision),
        format_cell(&a.macro_f1),
    ]
}

/// CSV with the exact Table-style header.
pub fn to_csv(table: &ResultsTable) -> String {
    let mut out = TABLE_COLUMNS.join(",");
    out.push('\n');
    for row in &table.rows {
        out.push_str(&row_cells(row).join(","));
        out.push('\n');
    }
    out
}

/// Aligned text rendering with one section per modality block.
pub fn to_text(table: &ResultsTable) -> String {
    let mut widths: Vec<usize> = TABLE_COLUMNS.iter().map(|c| c.len()).collect();
    let all_cells: Vec<[String; 11]> = table.rows.iter().map(row_cells).collect();
    for cells in &all_cells {
        for (w, cell) in widths.iter_mut().zip(cells) {
            *w = (*w).max(cell.len());
        }
    }
    let render_line = |cells: &[String]| {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:>w$}", w = w))
            .collect::<Vec<_>>()
            .join("  ")
    };
    let header_cells: Vec<String> = TABLE_COLUMNS.iter().map(|c| c.to_string()).collect();
    let mut out = String::new();
    let mut current_modality: Option<Modality> = None;
    for (row, cells) in table.rows.iter().zip(&all_cells) {
        if current_modality != Some(row.summary.modality) {
            current_modality = Some(row.summary.modality);
            out.push_str(&format!("== {} ==\n", row.summary.modality));
            out.push_str(&render_line(&header_cells));
            out.push('\n');
        }
        out.push_str(&render_line(cells));
        out.push('\n');
    }
    out
}
