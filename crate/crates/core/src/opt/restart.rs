//! Best-of-many Adam starts for reference shim weights.

use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{adam_minimize, AdamConfig, OptError, SolveResult};
use crate::field::{quadrature_weights, ShimProblem, ShimWeights, SliceSample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RestartPolicy {
    pub n_random: usize,
    pub include_quadrature: bool,
    /// Initial magnitudes are drawn uniformly from this range.
    pub magnitude_range: (f64, f64),
    pub seed: u64,
}

impl Default for RestartPolicy {
    fn default() -> Self {
        Self { n_random: 300, include_quadrature: true, magnitude_range: (0.5, 1.5), seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StartDiagnostic {
    pub label: String,
    pub error: OptError,
}

impl fmt::Display for StartDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.label, self.error)
    }
}

/// Labeled initial points for `policy`: quadrature first (when enabled), then
/// `random_0 .. random_{n-1}` drawn in order from the policy seed.
pub fn restart_inits(coils: usize, policy: &RestartPolicy) -> Result<Vec<(String, ShimWeights)>, OptError> {
    if policy.n_random == 0 && !policy.include_quadrature {
        return Err(OptError::Config("restart policy has no initializations".into()));
    }
    let mut out = Vec::with_capacity(policy.n_random + 1);
    if policy.include_quadrature {
        out.push(("quadrature".to_string(), quadrature_weights(coils)?));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
    let (lo, hi) = policy.magnitude_range;
    for k in 0..policy.n_random {
        let values = (0..coils)
            .map(|_| {
                let mag = rng.gen_range(lo..hi);
                let phase = rng.gen_range(0.0..2.0 * PI);
                Complex64::from_polar(mag, phase)
            })
            .collect();
        out.push((format!("random_{k}"), ShimWeights::new(values)));
    }
    Ok(out)
}

/// Run Adam from every start and keep the lowest objective (ties go to the
/// earlier start). Writes the winner into `sample`.
pub fn reference_weights(sample: &mut SliceSample, cfg: &AdamConfig, policy: &RestartPolicy) -> Result<SolveResult, OptError> {
    let p = sample.problem()?;
    let best = best_of_restarts(&p, cfg, policy)?;
    sample.ref_weights = Some(best.weights.clone());
    sample.ref_rmse = Some(best.rmse);
    Ok(best)
}

pub fn best_of_restarts(p: &ShimProblem, cfg: &AdamConfig, policy: &RestartPolicy) -> Result<SolveResult, OptError> {
    let inits = restart_inits(p.coils, policy)?;
    let outcomes: Vec<Result<SolveResult, OptError>> =
        inits.par_iter().map(|(label, w0)| adam_minimize(p, w0, cfg, label)).collect();
    let mut best: Option<SolveResult> = None;
    let mut failures = Vec::new();
    for ((label, _), outcome) in inits.iter().zip(outcomes) {
        match outcome {
            Ok(r) => {
                if best.as_ref().map_or(true, |b| r.objective < b.objective) {
                    best = Some(r);
                }
            }
            Err(error) => failures.push(StartDiagnostic { label: label.clone(), error }),
        }
    }
    best.ok_or(OptError::AllStartsFailed(failures))
}
