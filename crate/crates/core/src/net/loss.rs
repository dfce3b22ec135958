//! Mean absolute difference between predicted and reference RMSE.

use num_complex::Complex64;

use super::NetError;
use crate::field::{ShimProblem, SliceSample};

/// A masked slice prepared for repeated loss evaluation.
#[derive(Debug, Clone)]
pub struct LossTerm {
    pub problem: ShimProblem,
    pub ref_rmse: f64,
}

impl LossTerm {
    pub fn new(sample: &SliceSample) -> Result<Self, NetError> {
        let ref_rmse = sample.ref_rmse.ok_or_else(|| {
            NetError::Domain(format!(
                "slice {}/{}/{} has no reference RMSE; run reference generation first",
                sample.provenance.phantom, sample.provenance.slice, sample.provenance.variant
            ))
        })?;
        Ok(Self { problem: sample.problem()?, ref_rmse })
    }

    /// `rmse(w)` and its gradient packed `(d/dRe, d/dIm)` per coil.
    fn rmse_and_gradient(&self, w: &[Complex64], floor: f64, grad: &mut [f64]) -> f64 {
        let p = &self.problem;
        let n = p.voxels() as f64;
        let s = p.residual_sum(w);
        let rmse = (s / n).sqrt();
        // d rmse = dS / (2 n rmse)
        let scale = if rmse > 0.0 { 1.0 / (2.0 * n * rmse) } else { 0.0 };
        for (pair, g) in grad.chunks_exact_mut(2).zip(p.residual_gradient(w, floor)) {
            pair[0] = scale * g.re;
            pair[1] = scale * g.im;
        }
        rmse
    }
}

fn weights(out: &[f64]) -> Vec<Complex64> {
    out.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect()
}

/// Loss over a batch and its gradient with respect to `outputs`
/// (`[n][2C]`, interleaved real/imag).
///
/// The absolute value is differentiated with `sign(0) = 0`.
pub fn physics_loss_terms(outputs: &[f64], terms: &[&LossTerm], floor: f64) -> Result<(f64, Vec<f64>), NetError> {
    if terms.is_empty() {
        return Err(NetError::Dimension("empty batch".into()));
    }
    let dim = 2 * terms[0].problem.coils;
    if outputs.len() != dim * terms.len() {
        return Err(NetError::Dimension(format!("{} outputs for {} samples of {dim}", outputs.len(), terms.len())));
    }
    let n = terms.len() as f64;
    let mut grad = vec![0.0; outputs.len()];
    let mut total = 0.0;
    for ((out, g), t) in outputs.chunks_exact(dim).zip(grad.chunks_exact_mut(dim)).zip(terms) {
        if t.problem.coils * 2 != dim {
            return Err(NetError::Dimension("mixed coil counts in batch".into()));
        }
        let r = t.rmse_and_gradient(&weights(out), floor, g);
        let diff = r - t.ref_rmse;
        total += diff.abs();
        let sign = if diff > 0.0 {
            1.0
        } else if diff < 0.0 {
            -1.0
        } else {
            0.0
        };
        g.iter_mut().for_each(|v| *v *= sign / n);
    }
    Ok((total / n, grad))
}

/// Loss value only.
pub fn physics_loss(outputs: &[f64], samples: &[&SliceSample]) -> Result<f64, NetError> {
    let terms = samples.iter().map(|s| LossTerm::new(s)).collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<&LossTerm> = terms.iter().collect();
    Ok(physics_loss_terms(outputs, &refs, 1e-12)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{ComplexImage, Mask, Provenance, ShimWeights, TargetProfile};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample(rng: &mut ChaCha8Rng, n: usize, c: usize) -> SliceSample {
        let data = (0..n * c).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        SliceSample {
            b1: ComplexImage::new(1, n, c, data).unwrap(),
            mask: Mask::full(1, n),
            target: TargetProfile::uniform(n, 1e-3),
            ref_weights: None,
            ref_rmse: Some(rng.gen_range(0.05..0.3)),
            provenance: Provenance { phantom: 0, slice: 0, variant: 0, angle_deg: 0.0, short_selection: false },
        }
    }

    #[test]
    fn zero_at_reference_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut samples: Vec<SliceSample> = (0..3).map(|_| sample(&mut rng, 9, 2)).collect();
        let mut out = Vec::new();
        for s in &mut samples {
            let w = ShimWeights::new(vec![Complex64::new(0.7, 0.1), Complex64::new(-0.2, 0.5)]);
            s.ref_rmse = Some(s.problem().unwrap().rmse(&w.values));
            out.extend(w.to_interleaved());
        }
        let refs: Vec<&SliceSample> = samples.iter().collect();
        assert_eq!(physics_loss(&out, &refs).unwrap(), 0.0);
    }

    #[test]
    fn forced_arithmetic() {
        // One coil, one voxel with a = 1, target 1: rmse = | |w| - 1 |.
        let mk = |rmse_ref: f64| SliceSample {
            b1: ComplexImage::new(1, 1, 1, vec![Complex64::new(1.0, 0.0)]).unwrap(),
            mask: Mask::full(1, 1),
            target: TargetProfile::uniform(1, 0.0),
            ref_weights: None,
            ref_rmse: Some(rmse_ref),
            provenance: Provenance { phantom: 0, slice: 0, variant: 0, angle_deg: 0.0, short_selection: false },
        };
        let a = mk(0.09);
        let b = mk(0.12);
        let out = [1.10, 0.0, 0.88, 0.0];
        let loss = physics_loss(&out, &[&a, &b]).unwrap();
        assert!((loss - 0.005).abs() < 1e-12, "{loss}");
    }

    #[test]
    fn missing_reference_is_domain_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut s = sample(&mut rng, 4, 2);
        s.ref_rmse = None;
        assert!(matches!(physics_loss(&[0.0; 4], &[&s]), Err(NetError::Domain(_))));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let samples: Vec<SliceSample> = (0..3).map(|_| sample(&mut rng, 12, 3)).collect();
            let terms: Vec<LossTerm> = samples.iter().map(|s| LossTerm::new(s).unwrap()).collect();
            let refs: Vec<&LossTerm> = terms.iter().collect();
            let out: Vec<f64> = (0..18).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (_, g) = physics_loss_terms(&out, &refs, 1e-12).unwrap();
            for k in 0..out.len() {
                let h = 1e-6;
                let mut a = out.clone();
                a[k] += h;
                let mut b = out.clone();
                b[k] -= h;
                let fd = (physics_loss_terms(&a, &refs, 1e-12).unwrap().0 - physics_loss_terms(&b, &refs, 1e-12).unwrap().0) / (2.0 * h);
                assert!((fd - g[k]).abs() <= 1e-5 * fd.abs().max(1e-3), "{fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn invariant_under_global_phase() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let samples: Vec<SliceSample> = (0..4).map(|_| sample(&mut rng, 10, 4)).collect();
        let refs: Vec<&SliceSample> = samples.iter().collect();
        let out: Vec<f64> = (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let rotated: Vec<f64> = out
            .chunks_exact(8)
            .flat_map(|o| ShimWeights::from_interleaved(o).rotated(rng.gen_range(0.0..std::f64::consts::TAU)).to_interleaved())
            .collect();
        let a = physics_loss(&out, &refs).unwrap();
        let b = physics_loss(&rotated, &refs).unwrap();
        assert!((a - b).abs() < 1e-10);
    }
}
