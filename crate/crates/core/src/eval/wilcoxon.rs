//! Two-sided Wilcoxon signed-rank test for paired samples.

use serde::{Deserialize, Serialize};

use super::EvalError;

/// Largest number of nonzero differences handled by exact enumeration.
pub const EXACT_MAX_N: usize = 25;
pub const MIN_PAIRS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TestMethod {
    Exact,
    NormalApprox,
    NoEffect,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Significance {
    /// Pairs with a nonzero difference.
    pub n: usize,
    /// Sum of ranks of positive differences `a - b`.
    pub statistic: f64,
    pub p_value: f64,
    pub method: TestMethod,
}

impl Significance {
    pub fn no_effect(&self) -> bool {
        self.method == TestMethod::NoEffect
    }
}

/// Midranks of `values` (1-based), ties share the average rank.
fn midranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && values[idx[j]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + 1 + j) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = r;
        }
        if j - i > 1 {
            ties.push(j - i);
        }
        i = j;
    }
    (ranks, ties)
}

/// Test whether the paired differences `a_i - b_i` are centered on zero.
pub fn paired_significance(a: &[f64], b: &[f64]) -> Result<Significance, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::Spec(format!("{} vs {} paired values", a.len(), b.len())));
    }
    if a.len() < MIN_PAIRS {
        return Err(EvalError::Spec(format!("signed-rank test needs at least {MIN_PAIRS} pairs, got {}", a.len())));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    let n = diffs.len();
    if n == 0 {
        return Ok(Significance { n: 0, statistic: 0.0, p_value: 1.0, method: TestMethod::NoEffect });
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let (ranks, ties) = midranks(&abs);
    let w_plus: f64 = diffs.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();

    if n <= EXACT_MAX_N {
        // Doubled midranks are integers; count subsets by their doubled sum.
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let total: usize = doubled.iter().sum();
        let mut counts = vec![0.0f64; total + 1];
        counts[0] = 1.0;
        for &r in &doubled {
            for s in (r..=total).rev() {
                counts[s] += counts[s - r];
            }
        }
        let all = 2f64.powi(n as i32);
        let w2 = (2.0 * w_plus).round() as usize;
        let lower: f64 = counts[..=w2].iter().sum::<f64>() / all;
        let upper: f64 = counts[w2..].iter().sum::<f64>() / all;
        let p = (2.0 * lower.min(upper)).min(1.0);
        return Ok(Significance { n, statistic: w_plus, p_value: p, method: TestMethod::Exact });
    }

    Ok(Significance { n, statistic: w_plus, p_value: normal_p(w_plus, n, &ties), method: TestMethod::NormalApprox })
}

/// Normal approximation with continuity and tie corrections.
fn normal_p(w_plus: f64, n: usize, ties: &[usize]) -> f64 {
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
    let z = ((w_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
    libm::erfc(z / std::f64::consts::SQRT_2).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Brute-force enumeration over all 2^n sign assignments.
    fn brute_p(diffs: &[f64]) -> f64 {
        let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
        let (ranks, _) = midranks(&abs);
        let obs: f64 = diffs.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
        let n = diffs.len();
        let (mut le, mut ge) = (0u64, 0u64);
        for mask in 0u64..(1 << n) {
            let w: f64 = (0..n).filter(|k| mask >> k & 1 == 1).map(|k| ranks[k]).sum();
            if w <= obs + 1e-9 {
                le += 1;
            }
            if w >= obs - 1e-9 {
                ge += 1;
            }
        }
        (2.0 * le.min(ge) as f64 / (1u64 << n) as f64).min(1.0)
    }

    #[test]
    fn identical_samples_give_one() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0];
        let s = paired_significance(&a, &a).unwrap();
        assert_eq!(s.p_value, 1.0);
        assert!(s.no_effect());
    }

    #[test]
    fn six_positive_differences() {
        let a = [2.0, 3.0, 4.5, 5.0, 7.0, 9.0];
        let b = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0];
        let s = paired_significance(&a, &b).unwrap();
        assert_eq!(s.method, TestMethod::Exact);
        assert_eq!(s.statistic, 21.0);
        assert_eq!(s.p_value, 2.0 / 64.0);
    }

    #[test]
    fn constant_shift_on_hundred_pairs() {
        let b: Vec<f64> = (0..100).map(|i| 10.0 + (i as f64 * 0.7).sin()).collect();
        let a: Vec<f64> = b.iter().map(|x| x + 0.5).collect();
        let s = paired_significance(&a, &b).unwrap();
        assert_eq!(s.method, TestMethod::NormalApprox);
        assert!(s.p_value < 0.001, "{}", s.p_value);
    }

    #[test]
    fn too_few_pairs() {
        assert!(paired_significance(&[1.0; 5], &[0.0; 5]).is_err());
    }

    #[test]
    fn normal_approximation_close_to_exact_at_boundary() {
        let d: Vec<f64> = (0..25).map(|i| if i % 3 == 0 { -(i as f64 + 1.0) } else { i as f64 + 1.0 }).collect();
        let exact = paired_significance(&d, &vec![0.0; 25]).unwrap();
        assert_eq!(exact.method, TestMethod::Exact);
        let approx = normal_p(exact.statistic, 25, &[]);
        assert!((exact.p_value - approx).abs() < 0.01, "{} vs {approx}", exact.p_value);
        let more: Vec<f64> = (0..26).map(|i| i as f64 + 1.0).collect();
        assert_eq!(paired_significance(&more, &vec![0.0; 26]).unwrap().method, TestMethod::NormalApprox);
    }

    proptest! {
        #[test]
        fn exact_matches_enumeration(d in prop::collection::vec(prop_oneof![Just(0.0), (-4i32..5).prop_map(|x| x as f64)], 6..13)) {
            let zeros = vec![0.0; d.len()];
            let s = paired_significance(&d, &zeros).unwrap();
            let nonzero: Vec<f64> = d.iter().copied().filter(|x| *x != 0.0).collect();
            if nonzero.is_empty() {
                prop_assert_eq!(s.p_value, 1.0);
            } else {
                prop_assert!((s.p_value - brute_p(&nonzero)).abs() < 1e-12);
            }
        }

        #[test]
        fn swapping_sides_keeps_p(a in prop::collection::vec(0.0f64..10.0, 6..40), b in prop::collection::vec(0.0f64..10.0, 40)) {
            let b = &b[..a.len()];
            let x = paired_significance(&a, b).unwrap();
            let y = paired_significance(b, &a).unwrap();
            prop_assert!((x.p_value - y.p_value).abs() < 1e-12);
        }
    }
}
