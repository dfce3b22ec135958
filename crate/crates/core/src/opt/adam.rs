//! Adaptive moment estimation, shared by the shim solver and network training.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub max_iters: usize,
    /// Stop once the relative objective change between iterations drops below this.
    pub rel_tol: f64,
    /// Floor on `|Ab|` in the magnitude derivative.
    pub mag_floor: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { step_size: 1e-2, beta1: 0.9, beta2: 0.999, eps: 1e-8, max_iters: 500, rel_tol: 1e-8, mag_floor: 1e-12 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(format!("adam betas must lie in [0, 1), got {} and {}", self.beta1, self.beta2));
        }
        if !(self.step_size > 0.0) || !(self.eps > 0.0) {
            return Err("adam step size and eps must be positive".into());
        }
        Ok(())
    }
}

/// Moment buffers for one parameter vector.
///
/// `groups` sets how many consecutive parameters share one second-moment
/// estimate. Complex weights stored as `(re, im)` pairs use `groups = 2`, so
/// the update depends on `|g|^2` and commutes with a global phase rotation.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    group: usize,
    t: i32,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self::grouped(len, 1)
    }

    pub fn grouped(len: usize, group: usize) -> Self {
        assert!(group >= 1 && len % group == 0);
        Self { m: vec![0.0; len], v: vec![0.0; len / group], group, t: 0 }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// One bias-corrected update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, beta1: f64, beta2: f64, eps: f64) {
        debug_assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        for (k, (pg, gg)) in params.chunks_mut(self.group).zip(grad.chunks(self.group)).enumerate() {
            let g2: f64 = gg.iter().map(|g| g * g).sum();
            self.v[k] = beta2 * self.v[k] + (1.0 - beta2) * g2;
            let denom = (self.v[k] / c2).sqrt() + eps;
            for (j, (p, &g)) in pg.iter_mut().zip(gg).enumerate() {
                let i = k * self.group + j;
                self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
                *p -= lr * (self.m[i] / c1) / denom;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_step_size() {
        // With bias correction the first update is lr * sign(g) (up to eps).
        let mut s = AdamState::new(2);
        let mut p = vec![1.0, -1.0];
        s.step(&mut p, &[3.0, -0.5], 0.1, 0.9, 0.999, 1e-12);
        assert!((p[0] - 0.9).abs() < 1e-9);
        assert!((p[1] + 0.9).abs() < 1e-9);
    }

    #[test]
    fn minimizes_quadratic() {
        let target = [0.3, -2.0, 1.5];
        let mut p = vec![0.0; 3];
        let mut s = AdamState::new(3);
        for k in 0..5000 {
            let g: Vec<f64> = p.iter().zip(&target).map(|(x, t)| 2.0 * (x - t)).collect();
            let lr = if k < 3000 { 1e-2 } else { 1e-3 };
            s.step(&mut p, &g, lr, 0.9, 0.999, 1e-8);
        }
        for (x, t) in p.iter().zip(&target) {
            assert!((x - t).abs() < 1e-4);
        }
    }

    #[test]
    fn grouped_update_is_rotation_equivariant() {
        let rot = |v: &[f64], a: f64| vec![v[0] * a.cos() - v[1] * a.sin(), v[0] * a.sin() + v[1] * a.cos()];
        let mut s1 = AdamState::grouped(2, 2);
        let mut s2 = AdamState::grouped(2, 2);
        let mut p1 = vec![0.4, 0.1];
        let mut p2 = rot(&p1, 0.7);
        for g in [[1.0, 2.0], [-0.3, 0.5], [0.2, 0.2]] {
            s1.step(&mut p1, &g, 0.05, 0.9, 0.999, 1e-8);
            s2.step(&mut p2, &rot(&g, 0.7), 0.05, 0.9, 0.999, 1e-8);
        }
        let r = rot(&p1, 0.7);
        assert!((r[0] - p2[0]).abs() < 1e-14 && (r[1] - p2[1]).abs() < 1e-14);
    }
}
