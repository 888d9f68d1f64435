//! Plans, run enumeration, execution and reporting.

pub mod aggregate;
pub mod catalog;
pub mod execute;
pub mod plan;
pub mod report;
pub mod runs;
pub mod synthetic;

pub use aggregate::{aggregate, AggregateCell, Averaging};
pub use catalog::{natural_cmp, write_descriptor, Catalog, SessionRef, DATA_ROOT_ENV, DESCRIPTOR_FILE};
pub use execute::{execute, ExecuteOptions, ExecutionReport, PROGRESS_FILE, SCORES_FILE, SUMMARY_FILE};
pub use plan::{cell_seed, pretrain_seed, stable_seed, ExperimentPlan, DEFAULT_K_VALUES};
pub use report::{cells_to_csv, emit_curves, emit_score_table, percent, CurveSeries, CurveSet, Direction, ScoreGrid};
pub use runs::{enumerate_runs, expected_scores, CellKey, RunDescriptor};
pub use synthetic::SyntheticDataset;
