//! Classical shim solvers: restart Adam (reference weights) and MLS variable
//! exchange (baseline).

pub mod adam;
pub mod gradient;
pub mod mls;
pub mod restart;

use serde::{Deserialize, Serialize};

use crate::field::{FieldError, ShimWeights};

pub use adam::{AdamConfig, AdamState};
pub use gradient::{adam_minimize, objective_gradient};
pub use mls::{mls_from, mls_variable_exchange, weighted_regularized_ls, MlsConfig, MlsTrace, NormalEquations};
pub use restart::{best_of_restarts, reference_weights, restart_inits, RestartPolicy, StartDiagnostic};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OptError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("non-finite objective from start '{label}' at iteration {iteration}")]
    NonFinite { label: String, iteration: usize },
    #[error("every start diverged: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    AllStartsFailed(Vec<StartDiagnostic>),
    #[error("normal equations are singular; use lambda > 0")]
    Singular,
    #[error("MLS objective increased from {before} to {after} at iteration {iteration}")]
    Increase { iteration: usize, before: f64, after: f64 },
    #[error("invalid solver config: {0}")]
    Config(String),
}

/// Outcome of one solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    /// Canonical (first coil real, nonnegative).
    pub weights: ShimWeights,
    pub objective: f64,
    /// Fraction of target.
    pub rmse: f64,
    pub iterations: usize,
    /// Seconds.
    pub wall_time: f64,
    pub init_label: String,
}

impl SolveResult {
    /// Equality of everything except timing.
    pub fn same_solution(&self, other: &SolveResult) -> bool {
        self.weights == other.weights
            && self.objective.to_bits() == other.objective.to_bits()
            && self.rmse.to_bits() == other.rmse.to_bits()
            && self.iterations == other.iterations
            && self.init_label == other.init_label
    }
}
