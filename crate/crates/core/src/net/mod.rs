//! Residual-network surrogate mapping masked B1+ maps to shim weights.

pub mod checkpoint;
pub mod loss;
pub mod model;
pub mod ops;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader};
pub use loss::{physics_loss, physics_loss_terms, LossTerm};
pub use model::{ForwardPass, InputBatch, Mode, NetConfig, ResNet};
pub use train::{evaluate_loss, predict, predict_batch, train, train_observed, EpochLog, Prediction, TrainConfig, TrainOutcome};

use crate::field::FieldError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NetError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("{0}")]
    Domain(String),
    #[error("usage error: {0}")]
    Usage(&'static str),
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("training diverged (non-finite loss) at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize },
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<FieldError> for NetError {
    fn from(e: FieldError) -> Self {
        match e {
            FieldError::Dimension(m) => NetError::Dimension(m),
            other => NetError::Domain(other.to_string()),
        }
    }
}
