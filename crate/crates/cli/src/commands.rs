use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use shimkit::eval::{
    emit_report, paired_significance, run_fold_observed, slice_id, split_by_parent, summarize, timed, BenchReport, FoldConfig,
    SliceRecord, MIN_PAIRS, MLS, SURROGATE,
};
use shimkit::net::{load_checkpoint, predict, save_checkpoint, train_observed, EpochLog, ResNet};
use shimkit::opt::{mls_variable_exchange, reference_weights, SolveResult};
use shimkit::sim::dataset::write_manifest;
use shimkit::sim::{augment_rotations, generate_volume, load_dataset, save_dataset, slice_and_mask, DatasetManifest, ReferenceRecord};
use shimkit::SliceSample;

use crate::config::RunConfig;
use crate::error::CliError;

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Load a dataset, mapping a missing directory to a config error.
fn open_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<SliceSample>), CliError> {
    if !dir.join(shimkit::sim::dataset::MANIFEST_FILE).is_file() {
        return Err(CliError::Config(format!("--data {}: no dataset manifest found (run `shimkit simulate` first)", dir.display())));
    }
    Ok(load_dataset(dir)?)
}

/// Every slice takes the configured regularization weight.
fn apply_lambda(samples: &mut [SliceSample], lambda: f64) {
    for s in samples {
        s.target.lambda = lambda;
    }
}

fn require_references(samples: &[SliceSample], idx: &[usize]) -> Result<(), CliError> {
    let missing = idx.iter().filter(|&&i| samples[i].ref_rmse.is_none()).count();
    if missing > 0 {
        return Err(CliError::Config(format!(
            "{missing} training/validation slices have no reference weights; run `shimkit reference` on the dataset first"
        )));
    }
    Ok(())
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let array = cfg.coil_array()?;
    let wave = cfg.wave()?;
    let phantoms = cfg.phantoms()?;
    let selection = cfg.selection()?;
    let lambda = cfg.lambda()?;
    let angles = cfg.angles();
    fs::create_dir_all(out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;

    let mut parents = Vec::new();
    for (id, p) in phantoms.iter().enumerate() {
        eprintln!("simulate: phantom {}/{} (scale {:.4})", id + 1, phantoms.len(), p.scale);
        let volume = generate_volume(&array, p, &wave).map_err(|e| CliError::Config(e.to_string()))?;
        let slices = slice_and_mask(&volume, id, selection, lambda);
        if slices.len() < selection.keep {
            eprintln!("simulate: phantom {id} has only {} slices above the mask threshold", slices.len());
        }
        parents.extend(slices);
    }
    let mut samples = augment_rotations(&parents, &angles);
    for s in &mut samples {
        s.quantize_f32();
    }
    let mut manifest = DatasetManifest::new(array, phantoms, wave, angles, cfg.seed());
    manifest.config = cfg.echo();
    manifest.config_hash = cfg.hash();
    save_dataset(&samples, &manifest, None, out)?;
    eprintln!("simulate: wrote {} slices to {}", samples.len(), out.display());
    Ok(())
}

pub fn reference(cfg: &RunConfig, data: &Path, force: bool) -> Result<(), CliError> {
    let adam = cfg.adam()?;
    let policy = cfg.restart_policy()?;
    let lambda = cfg.lambda()?;
    let (mut manifest, mut samples) = open_dataset(data)?;
    apply_lambda(&mut samples, lambda);

    let todo: Vec<usize> = manifest
        .entries
        .iter()
        .enumerate()
        .filter(|(_, e)| force || e.reference.is_none() || e.lambda != lambda)
        .map(|(i, _)| i)
        .collect();
    eprintln!("reference: {} of {} slices need reference weights", todo.len(), samples.len());
    let results: Vec<(usize, Result<SolveResult, _>)> = todo
        .par_iter()
        .map(|&i| {
            let mut s = samples[i].clone();
            (i, reference_weights(&mut s, &adam, &policy))
        })
        .collect();
    for (i, r) in results {
        let r = r.map_err(|e| CliError::Numeric(format!("slice {}: {e}", slice_id(&samples[i]))))?;
        let e = &mut manifest.entries[i];
        e.lambda = lambda;
        e.reference = Some(ReferenceRecord {
            weights: r.weights.values.iter().map(|z| [z.re, z.im]).collect(),
            rmse: r.rmse,
            objective: r.objective,
            iterations: r.iterations,
            init_label: r.init_label,
        });
    }
    if todo.is_empty() && manifest.config_hash == cfg.hash() {
        return Ok(());
    }
    manifest.config = cfg.echo();
    manifest.config_hash = cfg.hash();
    write_manifest(&manifest, data)?;
    Ok(())
}

#[derive(Serialize)]
struct MlsRecord {
    slice_id: String,
    result: SolveResult,
}

pub fn mls(cfg: &RunConfig, data: &Path, out: &Path) -> Result<(), CliError> {
    let mls = cfg.mls()?;
    let lambda = cfg.lambda()?;
    let (_, mut samples) = open_dataset(data)?;
    apply_lambda(&mut samples, lambda);
    let mut records = Vec::with_capacity(samples.len());
    for s in &samples {
        let result = mls_variable_exchange(s, &mls).map_err(|e| CliError::Numeric(format!("slice {}: {e}", slice_id(s))))?;
        records.push(MlsRecord { slice_id: slice_id(s), result });
    }
    let mean = records.iter().map(|r| r.result.rmse).sum::<f64>() / records.len().max(1) as f64;
    eprintln!("mls: {} slices, mean RMSE {:.4}%", records.len(), 100.0 * mean);
    write_json(
        &json!({
            "tool_version": shimkit::VERSION,
            "config": cfg.echo(),
            "config_hash": cfg.hash(),
            "slices": records,
        }),
        out,
    )
}

fn log_epoch(tag: &str) -> impl FnMut(&EpochLog) + '_ {
    move |e| match e.val_loss {
        Some(v) => eprintln!("{tag}: epoch {} lr {:.3e} train {:.6} val {v:.6}", e.epoch, e.learning_rate, e.train_loss),
        None => eprintln!("{tag}: epoch {} lr {:.3e} train {:.6}", e.epoch, e.learning_rate, e.train_loss),
    }
}

pub fn train(cfg: &RunConfig, data: &Path, out: &Path) -> Result<(), CliError> {
    let tcfg = cfg.train()?;
    let lambda = cfg.lambda()?;
    let (_, mut samples) = open_dataset(data)?;
    apply_lambda(&mut samples, lambda);
    let first = samples.first().ok_or_else(|| CliError::Config("dataset has no slices".into()))?;
    let mut net_cfg = cfg.net(first.b1.channels, first.b1.height, first.b1.width)?;
    net_cfg.seed = tcfg.seed;

    let split = split_by_parent(&samples, tcfg.split, tcfg.seed)?;
    if split.train.len() < 2 {
        return Err(CliError::Config(format!("training split has {} slices; need at least 2", split.train.len())));
    }
    require_references(&samples, &split.train)?;
    require_references(&samples, &split.val)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect::<Vec<_>>();
    eprintln!("train: {} train / {} val / {} test slices", split.train.len(), split.val.len(), split.test.len());
    let outcome = train_observed(&net_cfg, &tcfg, &pick(&split.train), &pick(&split.val), log_epoch("train"))?;
    let meta = json!({
        "config": cfg.echo(),
        "config_hash": cfg.hash(),
        "fold_seed": tcfg.seed,
        "split": tcfg.split,
        "best_epoch": outcome.best_epoch,
        "log": outcome.log,
    });
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    }
    save_checkpoint(&outcome.net, meta, out)?;
    eprintln!("train: best epoch {}, checkpoint {}", outcome.best_epoch, out.display());
    Ok(())
}

/// Base configuration echoed into a checkpoint.
pub fn checkpoint_config(path: &Path) -> Result<serde_json::Value, CliError> {
    let (_, header) = load_checkpoint(path, None)?;
    Ok(header.meta.get("config").cloned().unwrap_or(serde_json::Value::Null))
}

pub fn eval(cfg: &RunConfig, data: &Path, ckpt: &Path, out: &Path) -> Result<(), CliError> {
    let mls = cfg.mls()?;
    let timing = cfg.timing()?;
    let lambda = cfg.lambda()?;
    let (net, header): (ResNet, _) = load_checkpoint(ckpt, None)?;
    let (_, mut samples) = open_dataset(data)?;
    apply_lambda(&mut samples, lambda);
    let fold_seed = header.meta.get("fold_seed").and_then(|v| v.as_u64()).unwrap_or(net.config().seed);
    let ratios: [f64; 3] = header
        .meta
        .get("split")
        .and_then(|v| serde_json::from_value(v.clone()).ok())
        .unwrap_or([0.8, 0.1, 0.1]);
    let split = split_by_parent(&samples, ratios, fold_seed)?;
    if split.test.is_empty() {
        return Err(CliError::Config("test split is empty".into()));
    }
    let nc = net.config();
    let s0 = &samples[split.test[0]];
    if (2 * s0.b1.channels, s0.b1.height, s0.b1.width) != (nc.input_channels, nc.height, nc.width) {
        return Err(CliError::Config(format!(
            "checkpoint expects {} channels on {}x{}, dataset has {} coils on {}x{}",
            nc.input_channels, nc.height, nc.width, s0.b1.channels, s0.b1.height, s0.b1.width
        )));
    }

    let mut records = Vec::new();
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for &i in &split.test {
        let s = &samples[i];
        let (m, m_ms) = timed(timing.repetitions, || mls_variable_exchange(s, &mls))
            .map_err(|e| CliError::Numeric(format!("slice {}: {e}", slice_id(s))))?;
        let (p, p_ms) = timed(timing.repetitions, || predict(&net, s))?;
        records.push(SliceRecord { fold: 0, method: MLS.into(), slice_id: slice_id(s), rmse_pct: 100.0 * m.rmse, time_ms: m_ms });
        records.push(SliceRecord { fold: 0, method: SURROGATE.into(), slice_id: slice_id(s), rmse_pct: 100.0 * p.rmse, time_ms: p_ms });
        a.push(100.0 * m.rmse);
        b.push(100.0 * p.rmse);
    }
    let significance = if a.len() >= MIN_PAIRS { Some(paired_significance(&a, &b)?) } else { None };
    let summaries = summarize(&records);
    for s in &summaries {
        eprintln!("eval: {} mean {:.4}% best {:.4}% worst {:.4}% {:.4}ms/slice", s.method, s.mean_rmse, s.best_rmse, s.worst_rmse, s.runtime_ms);
    }
    write_json(
        &json!({
            "tool_version": shimkit::VERSION,
            "config": cfg.echo(),
            "config_hash": cfg.hash(),
            "checkpoint": ckpt.display().to_string(),
            "fold_seed": fold_seed,
            "summaries": summaries,
            "records": records,
            "significance": significance,
        }),
        out,
    )
}

pub fn bench(cfg: &RunConfig, data: &Path, out: &Path) -> Result<(), CliError> {
    let folds = cfg.folds()?;
    let lambda = cfg.lambda()?;
    let (_, mut samples) = open_dataset(data)?;
    apply_lambda(&mut samples, lambda);
    let first = samples.first().ok_or_else(|| CliError::Config("dataset has no slices".into()))?;
    let fold_cfg = FoldConfig {
        mls: cfg.mls()?,
        net: cfg.net(first.b1.channels, first.b1.height, first.b1.width)?,
        train: cfg.train()?,
        timing: cfg.timing()?,
    };
    let mut reports = Vec::with_capacity(folds.len());
    for fold in &folds {
        let tag = format!("bench fold {}", fold.index);
        let (report, _) = run_fold_observed(&samples, fold, &fold_cfg, log_epoch(&tag))?;
        for s in &report.summaries {
            eprintln!("{tag}: {} mean {:.4}% ({:.4}ms/slice)", s.method, s.mean_rmse, s.runtime_ms);
        }
        reports.push(report);
    }
    let report = BenchReport { tool_version: shimkit::VERSION.into(), config: cfg.echo(), config_hash: cfg.hash(), folds: reports };
    emit_report(&report, out)?;
    eprintln!("bench: report written to {}", out.display());
    Ok(())
}
