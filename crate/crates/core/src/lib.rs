//! RF shimming toolkit for multi-channel parallel transmit.
//!
//! * [`field`] - B1+ field types, the magnitude-least-squares objective and RMSE.
//! * [`sim`] - synthetic coil/phantom simulation and the dataset format.
//! * [`opt`] - restart Adam reference solver and MLS variable exchange.
//! * [`net`] - residual-network surrogate, physics loss and training.
//! * [`eval`] - fold protocol, paired significance test and reports.

pub mod eval;
pub mod field;
pub mod net;
pub mod opt;
pub mod sim;

pub use field::{
    canonicalize_phase, forward_field, quadrature_weights, rmse, shim_objective, ComplexImage, FieldError, Mask,
    Provenance, ShimProblem, ShimWeights, SliceSample, TargetProfile,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
