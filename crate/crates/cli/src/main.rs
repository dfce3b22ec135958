//! `shimkit` command-line front end.

mod commands;
mod config;
mod error;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{RunConfig, SCHEMA};
use error::CliError;

/// Help text for a flag bound to a config key, with the key's default.
fn key_help(name: &str) -> String {
    let k = SCHEMA.iter().find(|k| k.name == name).expect("flag bound to a schema key");
    format!("{} (config key {}) [default: {}]", k.help, k.name, k.default)
}

fn keys_listing() -> String {
    let mut out = String::from("Config keys (use in --config files or --set KEY=VALUE):\n");
    for k in SCHEMA {
        out.push_str(&format!("  {:<30} {} [default: {}]\n", k.name, k.help, k.default));
    }
    out
}

#[derive(Parser)]
#[command(name = "shimkit", version, about = "Synthetic RF shimming pipeline: simulate, reference, mls, train, eval, bench")]
#[command(after_long_help = keys_listing())]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat key=value config file applied over the defaults [default: none]
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one config key; repeatable [default: none]
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, value_name = "S", help = key_help("seed"))]
    seed: Option<String>,
    #[arg(long, value_name = "J", help = key_help("jobs"))]
    jobs: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate coil fields on the phantom family and write a dataset
    Simulate {
        /// Output dataset directory [default: data]
        #[arg(long, default_value = "data")]
        out: PathBuf,
        #[arg(long, value_name = "N", help = key_help("phantom.count"))]
        phantoms: Option<String>,
        #[arg(long, value_name = "HxWxD", help = key_help("phantom.grid"))]
        grid: Option<String>,
        #[arg(long, value_name = "C", help = key_help("coil.count"))]
        coils: Option<String>,
        #[arg(long, value_name = "K", help = key_help("slices.keep"))]
        slices_per_phantom: Option<String>,
        #[arg(long, value_name = "LIST", allow_hyphen_values = true, help = key_help("augment.angles"))]
        augment: Option<String>,
        #[arg(long, value_name = "L", help = key_help("target.lambda"))]
        lambda: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Compute best-of-restarts reference weights for every slice
    Reference {
        /// Dataset directory [default: data]
        #[arg(long, default_value = "data")]
        data: PathBuf,
        #[arg(long, value_name = "N", help = key_help("reference.restarts"))]
        restarts: Option<String>,
        #[arg(long, value_name = "BOOL", help = key_help("reference.include_quadrature"))]
        include_quadrature: Option<String>,
        #[arg(long, value_name = "L", help = key_help("target.lambda"))]
        lambda: Option<String>,
        /// Recompute slices that already have references [default: false]
        #[arg(long)]
        force: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Solve every slice with MLS variable exchange
    Mls {
        /// Dataset directory [default: data]
        #[arg(long, default_value = "data")]
        data: PathBuf,
        /// Output JSON [default: <data>/mls.json]
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_name = "L", help = key_help("target.lambda"))]
        lambda: Option<String>,
        #[arg(long, value_name = "N", help = key_help("mls.max_iters"))]
        max_iters: Option<String>,
        #[arg(long, value_name = "T", help = key_help("mls.tol"))]
        tol: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Train the surrogate network on one split
    Train {
        /// Dataset directory [default: data]
        #[arg(long, default_value = "data")]
        data: PathBuf,
        /// Checkpoint path [default: model.ckpt]
        #[arg(long, default_value = "model.ckpt")]
        out: PathBuf,
        #[arg(long, value_name = "S", help = key_help("train.fold_seed"))]
        fold_seed: Option<String>,
        #[arg(long, value_name = "E", help = key_help("train.epochs"))]
        epochs: Option<String>,
        #[arg(long, value_name = "B", help = key_help("train.batch"))]
        batch: Option<String>,
        #[arg(long, value_name = "LR", help = key_help("train.lr"))]
        lr: Option<String>,
        #[arg(long, value_name = "BOOL", help = key_help("net.paper_scale"))]
        paper_scale: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Compare MLS and a trained checkpoint on the checkpoint's test split
    Eval {
        /// Dataset directory [default: data]
        #[arg(long, default_value = "data")]
        data: PathBuf,
        /// Checkpoint path [default: model.ckpt]
        #[arg(long, default_value = "model.ckpt")]
        ckpt: PathBuf,
        /// Output JSON [default: eval.json]
        #[arg(long, default_value = "eval.json")]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run the multi-fold MLS vs surrogate comparison and write reports
    Bench {
        /// Dataset directory [default: data]
        #[arg(long, default_value = "data")]
        data: PathBuf,
        #[arg(long, value_name = "K", help = key_help("bench.folds"))]
        folds: Option<String>,
        /// Report directory [default: report]
        #[arg(long, default_value = "report")]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

/// Defaults < base (artifact echo) < config file < `SHIMKIT_SEED` < `--set` < flags.
fn resolve(base: Option<serde_json::Value>, common: &Common, flags: &[(&str, &Option<String>)]) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(echo) = base {
        cfg.apply_echo(&echo)?;
    }
    if let Some(path) = &common.config {
        cfg.apply_file(path)?;
    }
    if let Ok(seed) = std::env::var("SHIMKIT_SEED") {
        cfg.set("seed", &seed).map_err(|e| CliError::Config(format!("SHIMKIT_SEED: {e}")))?;
    }
    for kv in &common.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        cfg.set(k.trim(), v)?;
    }
    for (key, value) in flags.iter().chain(&[("seed", &common.seed), ("jobs", &common.jobs)]) {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    let jobs = cfg.jobs();
    if jobs > 0 {
        // Only fails when a pool already exists, which keeps its width.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    Ok(cfg)
}

fn manifest_config(data: &Path) -> Option<serde_json::Value> {
    shimkit::sim::dataset::read_manifest(data).ok().map(|m| m.config)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { out, phantoms, grid, coils, slices_per_phantom, augment, lambda, common } => {
            let cfg = resolve(
                None,
                &common,
                &[
                    ("phantom.count", &phantoms),
                    ("phantom.grid", &grid),
                    ("coil.count", &coils),
                    ("slices.keep", &slices_per_phantom),
                    ("augment.angles", &augment),
                    ("target.lambda", &lambda),
                ],
            )?;
            commands::simulate(&cfg, &out)
        }
        Command::Reference { data, restarts, include_quadrature, lambda, force, common } => {
            let cfg = resolve(
                manifest_config(&data),
                &common,
                &[("reference.restarts", &restarts), ("reference.include_quadrature", &include_quadrature), ("target.lambda", &lambda)],
            )?;
            commands::reference(&cfg, &data, force)
        }
        Command::Mls { data, out, lambda, max_iters, tol, common } => {
            let cfg = resolve(
                manifest_config(&data),
                &common,
                &[("target.lambda", &lambda), ("mls.max_iters", &max_iters), ("mls.tol", &tol)],
            )?;
            let out = out.unwrap_or_else(|| data.join("mls.json"));
            commands::mls(&cfg, &data, &out)
        }
        Command::Train { data, out, fold_seed, epochs, batch, lr, paper_scale, common } => {
            let cfg = resolve(
                manifest_config(&data),
                &common,
                &[
                    ("train.fold_seed", &fold_seed),
                    ("train.epochs", &epochs),
                    ("train.batch", &batch),
                    ("train.lr", &lr),
                    ("net.paper_scale", &paper_scale),
                ],
            )?;
            commands::train(&cfg, &data, &out)
        }
        Command::Eval { data, ckpt, out, common } => {
            let base = commands::checkpoint_config(&ckpt)?;
            let cfg = resolve(Some(base), &common, &[])?;
            commands::eval(&cfg, &data, &ckpt, &out)
        }
        Command::Bench { data, folds, out, common } => {
            let cfg = resolve(manifest_config(&data), &common, &[("bench.folds", &folds)])?;
            commands::bench(&cfg, &data, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("shimkit: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
