use std::time::Instant;

use num_complex::Complex64;

use super::{AdamConfig, AdamState, OptError, SolveResult};
use crate::field::{canonicalize_phase, ComplexImage, Mask, ShimProblem, ShimWeights, TargetProfile};

/// Gradient of the shim objective with respect to the weights viewed as `2C`
/// reals, interleaved `(d/dRe w_0, d/dIm w_0, d/dRe w_1, ...)`.
pub fn objective_gradient(
    b1: &ComplexImage,
    mask: &Mask,
    target: &TargetProfile,
    w: &ShimWeights,
    mag_floor: f64,
) -> Result<Vec<f64>, OptError> {
    let p = ShimProblem::new(b1, mask, target)?;
    if w.len() != p.coils {
        return Err(OptError::Field(crate::FieldError::Dimension(format!("{} weights for {} coils", w.len(), p.coils))));
    }
    let (_, g) = p.objective_and_gradient(&w.values, mag_floor);
    Ok(g.iter().flat_map(|z| [z.re, z.im]).collect())
}

/// Adam descent on the shim objective from `w0`, returning the best iterate seen.
pub fn adam_minimize(p: &ShimProblem, w0: &ShimWeights, cfg: &AdamConfig, label: &str) -> Result<SolveResult, OptError> {
    cfg.validate().map_err(OptError::Config)?;
    if w0.len() != p.coils {
        return Err(OptError::Field(crate::FieldError::Dimension(format!("{} weights for {} coils", w0.len(), p.coils))));
    }
    let start = Instant::now();
    let mut x: Vec<f64> = w0.to_interleaved();
    let mut state = AdamState::grouped(x.len(), 2);
    let mut best_f = f64::INFINITY;
    let mut best_x = x.clone();
    let mut prev_f = f64::NAN;
    let mut iterations = 0;
    let mut w = vec![Complex64::new(0.0, 0.0); p.coils];
    let mut grad = vec![0.0; x.len()];

    for it in 0..=cfg.max_iters {
        for (wc, pair) in w.iter_mut().zip(x.chunks_exact(2)) {
            *wc = Complex64::new(pair[0], pair[1]);
        }
        let (f, g) = p.objective_and_gradient(&w, cfg.mag_floor);
        if !f.is_finite() {
            return Err(OptError::NonFinite { label: label.to_string(), iteration: it });
        }
        if f < best_f {
            best_f = f;
            best_x.copy_from_slice(&x);
        }
        if it == cfg.max_iters || (it > 0 && (prev_f - f).abs() <= cfg.rel_tol * prev_f.abs().max(f64::MIN_POSITIVE)) {
            break;
        }
        prev_f = f;
        for (gp, gc) in grad.chunks_exact_mut(2).zip(&g) {
            gp[0] = gc.re;
            gp[1] = gc.im;
        }
        state.step(&mut x, &grad, cfg.step_size, cfg.beta1, cfg.beta2, cfg.eps);
        iterations = it + 1;
    }

    let weights = canonicalize_phase(&ShimWeights::from_interleaved(&best_x));
    Ok(SolveResult {
        objective: p.objective(&weights.values),
        rmse: p.rmse(&weights.values),
        weights,
        iterations,
        wall_time: start.elapsed().as_secs_f64(),
        init_label: label.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::quadrature_weights;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_instance(rng: &mut ChaCha8Rng, n: usize, ch: usize, lambda: f64) -> (ComplexImage, Mask, TargetProfile) {
        let data = (0..n * ch).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        let b1 = ComplexImage::new(1, n, ch, data).unwrap();
        let target = TargetProfile { magnitude: (0..n).map(|_| rng.gen_range(0.5..1.5)).collect(), lambda };
        (b1, Mask::full(1, n), target)
    }

    fn fd_gradient(p: &ShimProblem, w: &ShimWeights, h: f64) -> Vec<f64> {
        let x = w.to_interleaved();
        (0..x.len())
            .map(|k| {
                let mut a = x.clone();
                let mut b = x.clone();
                a[k] += h;
                b[k] -= h;
                (p.objective(&ShimWeights::from_interleaved(&a).values) - p.objective(&ShimWeights::from_interleaved(&b).values))
                    / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let (b1, mask, target) = random_instance(&mut rng, 7, 4, 0.05);
            let w = ShimWeights::new((0..4).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect());
            let g = objective_gradient(&b1, &mask, &target, &w, 1e-12).unwrap();
            let fd = fd_gradient(&ShimProblem::new(&b1, &mask, &target).unwrap(), &w, 1e-6);
            for (a, b) in g.iter().zip(&fd) {
                assert!((a - b).abs() <= 1e-5 * b.abs().max(1e-3), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn stationary_at_global_minimum() {
        // Unit-modulus rows with w = 1 fit the target exactly.
        let b1 = ComplexImage::new(1, 3, 1, vec![Complex64::new(0.6, 0.8), Complex64::new(0.0, -1.0), Complex64::new(1.0, 0.0)]).unwrap();
        let g = objective_gradient(&b1, &Mask::full(1, 3), &TargetProfile::uniform(3, 0.0), &ShimWeights::new(vec![Complex64::new(1.0, 0.0)]), 1e-12)
            .unwrap();
        assert!(g.iter().map(|x| x * x).sum::<f64>().sqrt() < 1e-8);
    }

    #[test]
    fn scalar_problem_converges_to_one() {
        let b1 = ComplexImage::new(1, 1, 1, vec![Complex64::new(1.0, 0.0)]).unwrap();
        let p = ShimProblem::new(&b1, &Mask::full(1, 1), &TargetProfile::uniform(1, 0.0)).unwrap();
        let cfg = AdamConfig { max_iters: 5000, rel_tol: 0.0, ..AdamConfig::default() };
        let r = adam_minimize(&p, &ShimWeights::new(vec![Complex64::new(0.5, 0.0)]), &cfg, "test").unwrap();
        assert!((r.weights.values[0].re - 1.0).abs() < 1e-6, "{:?}", r.weights);
        assert_eq!(r.weights.values[0].im, 0.0);
    }

    #[test]
    fn quadratic_surrogate_converges() {
        // Identity rows with targets |w*_c| and tiny lambda: the minimizers are
        // exactly the vectors with |w_c| = |w*_c|; canonical phases fix the rest
        // only for coil 0, so compare magnitudes.
        let star = [1.3, 0.4, 0.9];
        let mut data = vec![Complex64::new(0.0, 0.0); 9];
        for c in 0..3 {
            data[c * 3 + c] = Complex64::new(1.0, 0.0);
        }
        let b1 = ComplexImage::new(1, 3, 3, data).unwrap();
        let target = TargetProfile { magnitude: star.to_vec(), lambda: 0.0 };
        let p = ShimProblem::new(&b1, &Mask::full(1, 3), &target).unwrap();
        let cfg = AdamConfig { max_iters: 20000, rel_tol: 0.0, ..AdamConfig::default() };
        let r = adam_minimize(&p, &quadrature_weights(3).unwrap(), &cfg, "q").unwrap();
        for (w, s) in r.weights.values.iter().zip(star) {
            assert!((w.norm() - s).abs() < 1e-6, "{} vs {s}", w.norm());
        }
    }

    #[test]
    fn never_worse_than_start() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let (b1, mask, target) = random_instance(&mut rng, 12, 4, 1e-3);
            let p = ShimProblem::new(&b1, &mask, &target).unwrap();
            let w0 = ShimWeights::new((0..4).map(|_| Complex64::from_polar(rng.gen_range(0.5..1.5), rng.gen_range(0.0..std::f64::consts::TAU))).collect());
            let r = adam_minimize(&p, &w0, &AdamConfig::default(), "r").unwrap();
            assert!(r.objective <= p.objective(&w0.values) + 1e-12);
            assert!((r.objective - crate::field::shim_objective(&b1, &mask, &target, &r.weights).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn gauge_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..5 {
            let (b1, mask, target) = random_instance(&mut rng, 10, 3, 1e-3);
            let p = ShimProblem::new(&b1, &mask, &target).unwrap();
            let w0 = ShimWeights::new((0..3).map(|_| Complex64::from_polar(1.0, rng.gen_range(0.0..std::f64::consts::TAU))).collect());
            let a = adam_minimize(&p, &w0, &AdamConfig::default(), "a").unwrap();
            let b = adam_minimize(&p, &w0.rotated(1.234), &AdamConfig::default(), "b").unwrap();
            for (x, y) in a.weights.values.iter().zip(&b.weights.values) {
                assert!((x - y).norm() < 1e-8);
            }
        }
    }

    #[test]
    fn non_finite_objective_aborts() {
        let b1 = ComplexImage::new(1, 1, 1, vec![Complex64::new(1.0, 0.0)]).unwrap();
        let p = ShimProblem::new(&b1, &Mask::full(1, 1), &TargetProfile::uniform(1, 0.0)).unwrap();
        let err = adam_minimize(&p, &ShimWeights::new(vec![Complex64::new(f64::INFINITY, 0.0)]), &AdamConfig::default(), "bad")
            .unwrap_err();
        assert_eq!(err, OptError::NonFinite { label: "bad".into(), iteration: 0 });
    }
}
