use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::field::SliceSample;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldSpec {
    /// 1-based.
    pub index: usize,
    pub seed: u64,
    pub ratios: [f64; 3],
}

impl FoldSpec {
    /// Folds `1..=count` with seeds `base_seed + index`.
    pub fn standard(count: usize, base_seed: u64) -> Vec<FoldSpec> {
        (1..=count).map(|index| FoldSpec { index, seed: base_seed.wrapping_add(index as u64), ratios: [0.8, 0.1, 0.1] }).collect()
    }
}

/// Sample indices of one split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffle parent slices `(phantom, slice)` with `seed` and divide them by
/// `ratios`; every augmented variant follows its parent. Indices within each
/// part are sorted.
pub fn split_by_parent(samples: &[SliceSample], ratios: [f64; 3], seed: u64) -> Result<Split, EvalError> {
    if ratios.iter().any(|r| !(*r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(EvalError::Spec(format!("split ratios must be nonnegative and sum to 1, got {ratios:?}")));
    }
    let mut groups: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        groups.entry((s.provenance.phantom, s.provenance.slice)).or_default().push(i);
    }
    let mut keys: Vec<(usize, usize)> = groups.keys().copied().collect();
    keys.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let g = keys.len();
    let n_train = (ratios[0] * g as f64).round() as usize;
    let n_val = ((ratios[1] * g as f64).round() as usize).min(g - n_train.min(g));
    let n_train = n_train.min(g);
    let collect = |ks: &[(usize, usize)]| {
        let mut v: Vec<usize> = ks.iter().flat_map(|k| groups[k].iter().copied()).collect();
        v.sort_unstable();
        v
    };
    Ok(Split {
        train: collect(&keys[..n_train]),
        val: collect(&keys[n_train..n_train + n_val]),
        test: collect(&keys[n_train + n_val..]),
    })
}
