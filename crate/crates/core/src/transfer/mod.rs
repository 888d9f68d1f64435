//! Frozen-trunk transfer: pretraining, calibration of a linear head and
//! within-session scoring.

pub mod calibration;
pub mod eval;
pub mod extractor;
pub mod head;
pub mod metrics;

pub use calibration::{sample_calibration, Analysis, Split};
pub use eval::{evaluate_cell, within_session_eval, CellOutcome, RecordContext, ScoreRecord, SessionEmbedding};
pub use extractor::{pretrain_donor, FrozenExtractor};
pub use head::{fit_linear_head, Features, HeadOptions, LinearHead};
pub use metrics::{accuracy, roc_auc};
