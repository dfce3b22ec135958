use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::fold::{summarize, BenchReport, MethodSummary};
use super::EvalError;

pub const SUMMARY_HEADER: [&str; 6] = ["fold", "method", "mean_rmse", "best_rmse", "worst_rmse", "runtime_per_slice"];
pub const PER_SLICE_HEADER: [&str; 5] = ["fold", "method", "slice_id", "rmse_pct", "time_ms"];

/// Milliseconds with at most four decimals, trailing zeros dropped: `4114.6ms`.
pub fn format_ms(ms: f64) -> String {
    let s = format!("{ms:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    format!("{s}ms")
}

pub fn summary_fields(s: &MethodSummary) -> [String; 6] {
    [
        s.fold.to_string(),
        s.method.clone(),
        format!("{:.4}", s.mean_rmse),
        format!("{:.4}", s.best_rmse),
        format!("{:.4}", s.worst_rmse),
        format_ms(s.runtime_ms),
    ]
}

fn check(report: &BenchReport) -> Result<(), EvalError> {
    if report.folds.is_empty() {
        return Err(EvalError::Integrity("report has no folds".into()));
    }
    for f in &report.folds {
        if f.records.is_empty() {
            return Err(EvalError::Integrity(format!("fold {} has no per-slice records", f.fold.index)));
        }
        let mut expect = summarize(&f.records);
        expect.sort_by_key(|s| s.method != super::fold::MLS);
        if expect != f.summaries {
            return Err(EvalError::Integrity(format!("fold {} summary does not match its records", f.fold.index)));
        }
    }
    Ok(())
}

fn summary_text(report: &BenchReport) -> String {
    let headers = ["Fold", "Method", "Mean RMSE (%)", "Best RMSE (%)", "Worst RMSE (%)", "Runtime per slice"];
    let rows: Vec<[String; 6]> = report.folds.iter().flat_map(|f| f.summaries.iter().map(summary_fields)).collect();
    let widths: Vec<usize> =
        (0..6).map(|k| rows.iter().map(|r| r[k].len()).chain([headers[k].len()]).max().unwrap_or(0)).collect();
    let mut out = String::new();
    let line = |cells: Vec<&str>| cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect::<Vec<_>>().join("  ");
    writeln!(out, "{}", line(headers.to_vec()).trim_end()).unwrap();
    for r in &rows {
        writeln!(out, "{}", line(r.iter().map(String::as_str).collect()).trim_end()).unwrap();
    }
    writeln!(out).unwrap();
    for f in &report.folds {
        match &f.significance {
            Some(s) => writeln!(
                out,
                "fold {}: Wilcoxon signed-rank (MLS - Surrogate), n = {}, W+ = {}, p = {:.3e} ({:?})",
                f.fold.index, s.n, s.statistic, s.p_value, s.method
            )
            .unwrap(),
            None => writeln!(out, "fold {}: too few test slices for the signed-rank test", f.fold.index).unwrap(),
        }
    }
    writeln!(out).unwrap();
    writeln!(out, "shimkit {} config {}", report.tool_version, report.config_hash).unwrap();
    out
}

/// Write `summary.txt`, `summary.csv`, `per_slice.csv` and `report.json` into `dir`.
pub fn emit_report(report: &BenchReport, dir: &Path) -> Result<(), EvalError> {
    check(report)?;
    fs::create_dir_all(dir).map_err(|e| EvalError::Io(format!("{}: {e}", dir.display())))?;
    let io = |p: &Path, e: &dyn std::fmt::Display| EvalError::Io(format!("{}: {e}", p.display()));

    let path = dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| io(&path, &e))?;
    w.write_record(SUMMARY_HEADER).map_err(|e| io(&path, &e))?;
    for s in report.folds.iter().flat_map(|f| &f.summaries) {
        w.write_record(summary_fields(s)).map_err(|e| io(&path, &e))?;
    }
    w.flush().map_err(|e| io(&path, &e))?;

    let path = dir.join("per_slice.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| io(&path, &e))?;
    w.write_record(PER_SLICE_HEADER).map_err(|e| io(&path, &e))?;
    for r in report.folds.iter().flat_map(|f| &f.records) {
        w.write_record([r.fold.to_string(), r.method.clone(), r.slice_id.clone(), r.rmse_pct.to_string(), r.time_ms.to_string()])
            .map_err(|e| io(&path, &e))?;
    }
    w.flush().map_err(|e| io(&path, &e))?;

    let path = dir.join("summary.txt");
    fs::write(&path, summary_text(report)).map_err(|e| io(&path, &e))?;

    let path = dir.join("report.json");
    let json = serde_json::to_string_pretty(report).map_err(|e| EvalError::Io(e.to_string()))?;
    fs::write(&path, json + "\n").map_err(|e| io(&path, &e))?;
    Ok(())
}
