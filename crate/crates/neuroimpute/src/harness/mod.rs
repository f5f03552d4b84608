//! Config-driven experiment harness: build augmented training sets, train
//! classifiers over seeded runs, persist run records, and render result
//! tables.

mod data;
mod report;
mod run;

pub use data::{LoadedDataset, ScanVolumes};
pub use report::{render_table, to_csv, to_text, ResultsTable, TableRow, TABLE_COLUMNS};
pub use run::{
    collect_run_records, run_experiment, ExperimentConfig, RunOutcome, RunRecord, RunSummary,
    RUN_RECORD_SCHEMA_VERSION,
};
