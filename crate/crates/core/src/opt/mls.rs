//! Magnitude least squares by variable exchange.
//!
//! Alternates between fixing the phase of the combined field to that of the
//! current iterate and solving the resulting Tikhonov-regularized complex
//! least-squares problem. Each half-step cannot increase the objective.

use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{OptError, SolveResult};
use crate::field::{canonicalize_phase, quadrature_weights, ComplexImage, Mask, ShimProblem, ShimWeights, SliceSample, TargetProfile};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlsConfig {
    pub max_outer_iters: usize,
    pub rel_tol: f64,
}

impl Default for MlsConfig {
    fn default() -> Self {
        Self { max_outer_iters: 200, rel_tol: 1e-10 }
    }
}

/// Allowed objective increase per iteration before it counts as a solver fault.
pub const MONOTONE_TOL: f64 = 1e-12;

/// Cholesky factor of `A^H A + lambda I` over the masked rows.
#[derive(Debug, Clone)]
pub struct NormalEquations {
    chol: Cholesky<Complex64, Dyn>,
}

impl NormalEquations {
    pub fn new(p: &ShimProblem) -> Result<Self, OptError> {
        let c = p.coils;
        let mut g = DMatrix::<Complex64>::zeros(c, c);
        for row in p.rows.chunks_exact(c) {
            for i in 0..c {
                let ai = row[i].conj();
                for j in 0..c {
                    g[(i, j)] += ai * row[j];
                }
            }
        }
        for i in 0..c {
            g[(i, i)] += Complex64::new(p.lambda, 0.0);
        }
        let scale = (0..c).map(|i| g[(i, i)].re).fold(0.0, f64::max);
        let chol = Cholesky::new(g).ok_or(OptError::Singular)?;
        // Reject numerically rank-deficient systems; squared pivot ratio is a
        // cheap lower bound on the reciprocal condition number.
        let l = chol.l_dirty();
        let min_pivot = (0..c).map(|i| l[(i, i)].re).fold(f64::INFINITY, f64::min);
        if !(scale > 0.0) || min_pivot * min_pivot < 1e-14 * scale {
            return Err(OptError::Singular);
        }
        Ok(Self { chol })
    }

    /// Solve for `w` given `A^H rhs`.
    pub fn solve(&self, ah_rhs: &[Complex64]) -> Vec<Complex64> {
        let b = DVector::from_column_slice(ah_rhs);
        self.chol.solve(&b).iter().copied().collect()
    }
}

fn adjoint_apply(p: &ShimProblem, rhs: &[Complex64]) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); p.coils];
    for (row, &t) in p.rows.chunks_exact(p.coils).zip(rhs) {
        for (o, a) in out.iter_mut().zip(row) {
            *o += a.conj() * t;
        }
    }
    out
}

/// Solve `(A^H W A + lambda I) w = A^H W rhs` with `W` the binary mask;
/// `rhs` holds one value per masked voxel.
pub fn weighted_regularized_ls(b1: &ComplexImage, mask: &Mask, rhs: &[Complex64], lambda: f64) -> Result<ShimWeights, OptError> {
    let target = TargetProfile::uniform(mask.count(), lambda);
    let p = ShimProblem::new(b1, mask, &target)?;
    if rhs.len() != p.voxels() {
        return Err(OptError::Field(crate::FieldError::Dimension(format!(
            "{} right-hand-side values for {} masked voxels",
            rhs.len(),
            p.voxels()
        ))));
    }
    let ne = NormalEquations::new(&p)?;
    Ok(ShimWeights::new(ne.solve(&adjoint_apply(&p, rhs))))
}

/// Objective after each variable-exchange iteration, starting with the
/// initial point.
#[derive(Debug, Clone, PartialEq)]
pub struct MlsTrace {
    pub objectives: Vec<f64>,
}

/// Variable exchange from an arbitrary start.
pub fn mls_from(p: &ShimProblem, w0: &ShimWeights, cfg: &MlsConfig, label: &str) -> Result<(SolveResult, MlsTrace), OptError> {
    if cfg.max_outer_iters == 0 {
        return Err(OptError::Config("mls.max_iters must be positive".into()));
    }
    let start = Instant::now();
    let ne = NormalEquations::new(p)?;
    let mut w = w0.values.clone();
    let mut f = p.objective(&w);
    let mut trace = vec![f];
    let mut iterations = 0;
    let mut rhs = vec![Complex64::new(0.0, 0.0); p.voxels()];
    for it in 1..=cfg.max_outer_iters {
        for ((r, z), &m) in rhs.iter_mut().zip(p.combine(&w)).zip(&p.target) {
            let mag = z.norm();
            *r = if mag > 0.0 { z * (m / mag) } else { Complex64::new(m, 0.0) };
        }
        let next = ne.solve(&adjoint_apply(p, &rhs));
        let f_next = p.objective(&next);
        if !f_next.is_finite() {
            return Err(OptError::NonFinite { label: label.to_string(), iteration: it });
        }
        if f_next > f + MONOTONE_TOL {
            return Err(OptError::Increase { iteration: it, before: f, after: f_next });
        }
        let decrease = (f - f_next) / f.abs().max(f64::MIN_POSITIVE);
        w = next;
        f = f_next;
        trace.push(f);
        iterations = it;
        if decrease < cfg.rel_tol {
            break;
        }
    }
    let weights = canonicalize_phase(&ShimWeights::new(w));
    let result = SolveResult {
        objective: p.objective(&weights.values),
        rmse: p.rmse(&weights.values),
        weights,
        iterations,
        wall_time: start.elapsed().as_secs_f64(),
        init_label: label.to_string(),
    };
    Ok((result, MlsTrace { objectives: trace }))
}

/// Baseline MLS: variable exchange started from the quadrature drive.
pub fn mls_variable_exchange(sample: &SliceSample, cfg: &MlsConfig) -> Result<SolveResult, OptError> {
    let p = sample.problem()?;
    let q = quadrature_weights(p.coils)?;
    mls_from(&p, &q, cfg, "quadrature").map(|(r, _)| r)
}
