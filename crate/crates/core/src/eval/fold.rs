use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::split::{split_by_parent, FoldSpec};
use super::wilcoxon::{paired_significance, Significance, MIN_PAIRS};
use super::EvalError;
use crate::field::SliceSample;
use crate::net::{predict, train_observed, EpochLog, NetConfig, ResNet, TrainConfig};
use crate::opt::{mls_variable_exchange, MlsConfig};

pub const MLS: &str = "MLS";
pub const SURROGATE: &str = "Surrogate";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingConfig {
    /// Timed calls per slice after the untimed warm-up call.
    pub repetitions: usize,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self { repetitions: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldConfig {
    pub mls: MlsConfig,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub timing: TimingConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceRecord {
    pub fold: usize,
    pub method: String,
    pub slice_id: String,
    /// Percent of the target flip angle.
    pub rmse_pct: f64,
    pub time_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub fold: usize,
    pub method: String,
    pub slices: usize,
    pub mean_rmse: f64,
    pub best_rmse: f64,
    pub worst_rmse: f64,
    pub runtime_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: FoldSpec,
    pub train_slices: usize,
    pub val_slices: usize,
    pub test_slices: usize,
    pub best_epoch: usize,
    pub train_log: Vec<EpochLog>,
    pub summaries: Vec<MethodSummary>,
    pub records: Vec<SliceRecord>,
    /// MLS minus surrogate RMSE per test slice; absent below the minimum pair count.
    pub significance: Option<Significance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub tool_version: String,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub folds: Vec<FoldReport>,
}

pub fn slice_id(s: &SliceSample) -> String {
    format!("p{}_s{}_v{}", s.provenance.phantom, s.provenance.slice, s.provenance.variant)
}

/// Mean/best/worst RMSE and mean runtime per `(fold, method)`, in order of
/// first appearance. Sums run in record order.
pub fn summarize(records: &[SliceRecord]) -> Vec<MethodSummary> {
    let mut keys: Vec<(usize, &str)> = Vec::new();
    for r in records {
        if !keys.contains(&(r.fold, r.method.as_str())) {
            keys.push((r.fold, r.method.as_str()));
        }
    }
    keys.into_iter()
        .map(|(fold, method)| {
            let rs: Vec<&SliceRecord> = records.iter().filter(|r| r.fold == fold && r.method == method).collect();
            let n = rs.len() as f64;
            MethodSummary {
                fold,
                method: method.to_string(),
                slices: rs.len(),
                mean_rmse: rs.iter().map(|r| r.rmse_pct).sum::<f64>() / n,
                best_rmse: rs.iter().map(|r| r.rmse_pct).fold(f64::INFINITY, f64::min),
                worst_rmse: rs.iter().map(|r| r.rmse_pct).fold(f64::NEG_INFINITY, f64::max),
                runtime_ms: rs.iter().map(|r| r.time_ms).sum::<f64>() / n,
            }
        })
        .collect()
}

/// Warm up once, then average `reps` timed calls (ms). Returns the last result.
pub fn timed<T, E>(reps: usize, mut f: impl FnMut() -> Result<T, E>) -> Result<(T, f64), E> {
    let mut out = f()?;
    let mut total = 0.0;
    for _ in 0..reps {
        let start = Instant::now();
        out = f()?;
        total += start.elapsed().as_secs_f64();
    }
    Ok((out, 1e3 * total / reps as f64))
}

fn check_references(samples: &[SliceSample], idx: &[usize]) -> Result<(), EvalError> {
    let missing = idx.iter().filter(|&&i| samples[i].ref_rmse.is_none()).count();
    if missing > 0 {
        return Err(EvalError::MissingReference(format!(
            "{missing} training/validation slices have no reference weights; run `shimkit reference` on the dataset first"
        )));
    }
    Ok(())
}

/// Train on the fold's training split, then solve every test slice with MLS
/// and the surrogate.
pub fn run_fold(samples: &[SliceSample], fold: &FoldSpec, cfg: &FoldConfig) -> Result<(FoldReport, ResNet), EvalError> {
    run_fold_observed(samples, fold, cfg, |_| {})
}

pub fn run_fold_observed(
    samples: &[SliceSample],
    fold: &FoldSpec,
    cfg: &FoldConfig,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<(FoldReport, ResNet), EvalError> {
    if cfg.timing.repetitions < 3 {
        return Err(EvalError::Spec(format!("timing needs at least 3 repetitions, got {}", cfg.timing.repetitions)));
    }
    let split = split_by_parent(samples, fold.ratios, fold.seed)?;
    if split.test.is_empty() {
        return Err(EvalError::Spec(format!("fold {} has an empty test split", fold.index)));
    }
    if split.train.len() < 2 {
        return Err(EvalError::Spec(format!("fold {} has fewer than 2 training slices", fold.index)));
    }
    check_references(samples, &split.train)?;
    check_references(samples, &split.val)?;

    let pick = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect::<Vec<_>>();
    let (train_set, val_set) = (pick(&split.train), pick(&split.val));
    let net_cfg = NetConfig { seed: fold.seed, ..cfg.net.clone() };
    let train_cfg = TrainConfig { seed: fold.seed, ..cfg.train };
    let outcome = train_observed(&net_cfg, &train_cfg, &train_set, &val_set, on_epoch)?;
    let net = outcome.net;

    let mut records = Vec::with_capacity(2 * split.test.len());
    let mut pairs = (Vec::new(), Vec::new());
    let reps = cfg.timing.repetitions;
    for &i in &split.test {
        let s = &samples[i];
        let (m, m_ms) = timed(reps, || mls_variable_exchange(s, &cfg.mls))?;
        let (p, p_ms) = timed(reps, || predict(&net, s))?;
        let id = slice_id(s);
        records.push(SliceRecord { fold: fold.index, method: MLS.into(), slice_id: id.clone(), rmse_pct: 100.0 * m.rmse, time_ms: m_ms });
        records.push(SliceRecord { fold: fold.index, method: SURROGATE.into(), slice_id: id, rmse_pct: 100.0 * p.rmse, time_ms: p_ms });
        pairs.0.push(100.0 * m.rmse);
        pairs.1.push(100.0 * p.rmse);
    }
    let significance = if pairs.0.len() >= MIN_PAIRS { Some(paired_significance(&pairs.0, &pairs.1)?) } else { None };
    let mut summaries = summarize(&records);
    summaries.sort_by_key(|s| s.method != MLS);
    let report = FoldReport {
        fold: *fold,
        train_slices: split.train.len(),
        val_slices: split.val.len(),
        test_slices: split.test.len(),
        best_epoch: outcome.best_epoch,
        train_log: outcome.log,
        summaries,
        records,
        significance,
    };
    Ok((report, net))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(fold: usize, method: &str, rmse: f64, ms: f64) -> SliceRecord {
        SliceRecord { fold, method: method.into(), slice_id: "x".into(), rmse_pct: rmse, time_ms: ms }
    }

    #[test]
    fn summary_ordering() {
        let rs = vec![rec(1, MLS, 10.0, 4.0), rec(1, SURROGATE, 8.0, 1.0), rec(1, MLS, 12.0, 2.0), rec(1, SURROGATE, 9.0, 1.0)];
        let s = summarize(&rs);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].method, MLS);
        assert_eq!((s[0].mean_rmse, s[0].best_rmse, s[0].worst_rmse, s[0].runtime_ms), (11.0, 10.0, 12.0, 3.0));
        for m in &s {
            assert!(m.best_rmse <= m.mean_rmse && m.mean_rmse <= m.worst_rmse);
        }
    }

    #[test]
    fn timing_warms_up_then_averages() {
        let mut calls = 0;
        let (v, ms) = timed::<_, ()>(3, || {
            calls += 1;
            Ok(calls)
        })
        .unwrap();
        assert_eq!((calls, v), (4, 4));
        assert!(ms >= 0.0);
    }
}
