//! Fold protocol comparing MLS against the surrogate, the paired test, and
//! report files.

pub mod fold;
pub mod report;
pub mod split;
pub mod wilcoxon;

pub use fold::{run_fold, run_fold_observed, slice_id, summarize, timed, BenchReport, FoldConfig, FoldReport, MethodSummary, SliceRecord, TimingConfig, MLS, SURROGATE};
pub use report::{emit_report, format_ms, summary_fields, PER_SLICE_HEADER, SUMMARY_HEADER};
pub use split::{split_by_parent, FoldSpec, Split};
pub use wilcoxon::{paired_significance, Significance, TestMethod, MIN_PAIRS};

use crate::net::NetError;
use crate::opt::OptError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("invalid evaluation setup: {0}")]
    Spec(String),
    #[error("{0}")]
    MissingReference(String),
    #[error("report integrity: {0}")]
    Integrity(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Opt(#[from] OptError),
}
