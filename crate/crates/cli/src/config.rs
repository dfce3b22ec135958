//! Flat `section.key=value` run configuration.
//!
//! Every setting lives in [`SCHEMA`] with its default. Values are validated
//! and normalized on assignment, so two spellings of the same number hash
//! identically.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use shimkit::eval::{FoldSpec, TimingConfig};
use shimkit::net::{NetConfig, TrainConfig};
use shimkit::opt::{AdamConfig, MlsConfig, RestartPolicy};
use shimkit::sim::{scale_set, CoilArray, PhantomSpec, SliceSelection, WaveModel};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Usize,
    U64,
    F64,
    Bool,
    /// `HxWxD`
    Grid,
    /// Comma-separated floats.
    F64List,
    /// Comma-separated positive integers.
    UsizeList,
}

pub struct Key {
    pub name: &'static str,
    pub default: &'static str,
    kind: Kind,
    pub help: &'static str,
}

const fn key(name: &'static str, default: &'static str, kind: Kind, help: &'static str) -> Key {
    Key { name, default, kind, help }
}

/// Keys that do not change any output and are left out of the echo and hash.
const EXECUTION_ONLY: [&str; 1] = ["jobs"];

pub static SCHEMA: &[Key] = &[
    key("seed", "0", Kind::U64, "master seed for every stochastic choice"),
    key("jobs", "0", Kind::Usize, "worker threads (0 = all hardware threads)"),
    key("coil.count", "8", Kind::Usize, "number of loop elements"),
    key("coil.diameter", "0.28", Kind::F64, "cylinder diameter, m"),
    key("coil.element_height", "0.16", Kind::F64, "element height along the axis, m"),
    key("coil.element_width", "0.1", Kind::F64, "element width along the circumference, m"),
    key("coil.gap", "0.0099", Kind::F64, "gap between neighbouring elements, m"),
    key("coil.segments", "64", Kind::Usize, "straight segments per loop"),
    key("coil.current", "1", Kind::F64, "drive current, A"),
    key("wave.lambda_eff", "0.12", Kind::F64, "effective tissue wavelength, m"),
    key("wave.attenuation_length", "0.25", Kind::F64, "amplitude attenuation length, m"),
    key("phantom.count", "10", Kind::Usize, "number of scaled phantoms"),
    key("phantom.grid", "64x64x32", Kind::Grid, "grid size HxWxD in voxels"),
    key("phantom.fov_xy", "0.28", Kind::F64, "in-plane field of view, m"),
    key("phantom.fov_z", "0.16", Kind::F64, "axial slab thickness, m"),
    key("phantom.semi_axes", "0.075,0.095,0.11", Kind::F64List, "unscaled ellipsoid semi-axes x,y,z, m"),
    key("phantom.scale_min", "0.9", Kind::F64, "smallest phantom scale factor"),
    key("phantom.scale_max", "1.1", Kind::F64, "largest phantom scale factor"),
    key("phantom.density_inside", "1000", Kind::F64, "density inside the head"),
    key("phantom.density_outside", "1.2", Kind::F64, "density outside the head"),
    key("phantom.mask_threshold", "500", Kind::F64, "mask threshold on density"),
    key("phantom.axial_offset", "0.02", Kind::F64, "head center offset from the coil plane, m"),
    key("slices.keep", "32", Kind::Usize, "slices kept per phantom"),
    key("slices.min_mask_voxels", "64", Kind::Usize, "minimum mask area of a kept slice"),
    key("augment.angles", "0,10,-10,20,-20,30,-30,45,90,135,180,225", Kind::F64List, "rotation angles in degrees"),
    key("target.lambda", "0.001", Kind::F64, "power regularization weight"),
    key("reference.restarts", "300", Kind::Usize, "random Adam starts per slice"),
    key("reference.include_quadrature", "true", Kind::Bool, "also start from quadrature weights"),
    key("reference.mag_min", "0.5", Kind::F64, "smallest random initial magnitude"),
    key("reference.mag_max", "1.5", Kind::F64, "largest random initial magnitude"),
    key("adam.step_size", "0.01", Kind::F64, "shim Adam step size"),
    key("adam.beta1", "0.9", Kind::F64, "Adam first-moment decay"),
    key("adam.beta2", "0.999", Kind::F64, "Adam second-moment decay"),
    key("adam.eps", "0.00000001", Kind::F64, "Adam denominator epsilon"),
    key("adam.max_iters", "500", Kind::Usize, "shim Adam iterations per start"),
    key("adam.rel_tol", "0.00000001", Kind::F64, "relative objective change to stop"),
    key("adam.mag_floor", "0.000000000001", Kind::F64, "floor on |Ab| in gradients"),
    key("mls.max_iters", "200", Kind::Usize, "MLS variable-exchange iterations"),
    key("mls.tol", "0.0000000001", Kind::F64, "MLS relative objective change to stop"),
    key("net.paper_scale", "false", Kind::Bool, "use widths 64,128,256,512"),
    key("net.stem_width", "16", Kind::Usize, "stem convolution width"),
    key("net.widths", "16,32,64,128", Kind::UsizeList, "stage widths"),
    key("train.batch", "16", Kind::Usize, "training batch size"),
    key("train.epochs", "200", Kind::Usize, "training epochs"),
    key("train.lr", "0.001", Kind::F64, "initial learning rate"),
    key("train.decay", "0.5", Kind::F64, "learning-rate decay factor"),
    key("train.decay_every", "50", Kind::Usize, "epochs between decays"),
    key("train.split", "0.8,0.1,0.1", Kind::F64List, "train,validation,test fractions"),
    key("train.fold_seed", "1", Kind::U64, "split seed for `train` (bench fold k uses seed + k)"),
    key("bench.folds", "5", Kind::Usize, "number of folds"),
    key("bench.repetitions", "3", Kind::Usize, "timed repetitions per slice"),
];

fn lookup(name: &str) -> Option<&'static Key> {
    SCHEMA.iter().find(|k| k.name == name)
}

fn normalize(k: &Key, raw: &str) -> Result<String, String> {
    let raw = raw.trim();
    let float = |s: &str| -> Result<f64, String> {
        let v: f64 = s.trim().parse().map_err(|_| format!("'{s}' is not a number"))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(format!("'{s}' is not finite"))
        }
    };
    let int = |s: &str| -> Result<usize, String> { s.trim().parse().map_err(|_| format!("'{s}' is not a nonnegative integer")) };
    Ok(match k.kind {
        Kind::Usize => int(raw)?.to_string(),
        Kind::U64 => raw.parse::<u64>().map_err(|_| format!("'{raw}' is not a nonnegative integer"))?.to_string(),
        Kind::F64 => format!("{:?}", float(raw)?),
        Kind::Bool => match raw {
            "true" | "1" | "yes" => "true".into(),
            "false" | "0" | "no" => "false".into(),
            _ => return Err(format!("'{raw}' is not a boolean")),
        },
        Kind::Grid => {
            let parts: Vec<usize> = raw.split('x').map(int).collect::<Result<_, _>>()?;
            if parts.len() != 3 || parts.contains(&0) {
                return Err(format!("'{raw}' is not a grid HxWxD with positive sizes"));
            }
            format!("{}x{}x{}", parts[0], parts[1], parts[2])
        }
        Kind::F64List => {
            if raw.is_empty() {
                return Err("empty list".into());
            }
            raw.split(',').map(|s| float(s).map(|v| format!("{v:?}"))).collect::<Result<Vec<_>, _>>()?.join(",")
        }
        Kind::UsizeList => {
            if raw.is_empty() {
                return Err("empty list".into());
            }
            raw.split(',').map(|s| int(s).map(|v| v.to_string())).collect::<Result<Vec<_>, _>>()?.join(",")
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let values = SCHEMA.iter().map(|k| (k.name.to_string(), normalize(k, k.default).expect("schema default"))).collect();
        Self { values }
    }
}

impl RunConfig {
    pub fn set(&mut self, name: &str, raw: &str) -> Result<(), CliError> {
        let k = lookup(name).ok_or_else(|| CliError::Config(format!("unknown config key '{name}'")))?;
        let v = normalize(k, raw).map_err(|e| CliError::Config(format!("{name}: {e}")))?;
        self.values.insert(name.to_string(), v);
        Ok(())
    }

    pub fn get(&self, name: &str) -> &str {
        &self.values[name]
    }

    /// Apply `key=value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), CliError> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("{origin}:{}: expected key=value, got '{line}'", n + 1)))?;
            self.set(k.trim(), v).map_err(|e| CliError::Config(format!("{origin}:{}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("config file {}: {e}", path.display())))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Overlay a configuration echoed into an earlier artifact. Unknown keys
    /// are ignored so older artifacts stay readable.
    pub fn apply_echo(&mut self, echo: &serde_json::Value) -> Result<(), CliError> {
        if let Some(map) = echo.as_object() {
            for (k, v) in map {
                if let (Some(_), Some(s)) = (lookup(k), v.as_str()) {
                    self.set(k, s)?;
                }
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        self.echo_pairs().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    fn echo_pairs(&self) -> impl Iterator<Item = (&String, &String)> {
        self.values.iter().filter(|(k, _)| !EXECUTION_ONLY.contains(&k.as_str()))
    }

    pub fn echo(&self) -> serde_json::Value {
        serde_json::Value::Object(self.echo_pairs().map(|(k, v)| (k.clone(), serde_json::Value::String(v.clone()))).collect())
    }

    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    fn usize(&self, k: &str) -> usize {
        self.get(k).parse().expect("validated")
    }

    fn u64(&self, k: &str) -> u64 {
        self.get(k).parse().expect("validated")
    }

    fn f64(&self, k: &str) -> f64 {
        self.get(k).parse().expect("validated")
    }

    fn bool(&self, k: &str) -> bool {
        self.get(k) == "true"
    }

    fn f64_list(&self, k: &str) -> Vec<f64> {
        self.get(k).split(',').map(|s| s.parse().expect("validated")).collect()
    }

    fn fixed<const N: usize>(&self, k: &str) -> Result<[f64; N], CliError> {
        self.f64_list(k).try_into().map_err(|v: Vec<f64>| CliError::Config(format!("{k}: expected {N} values, got {}", v.len())))
    }

    pub fn seed(&self) -> u64 {
        self.u64("seed")
    }

    pub fn jobs(&self) -> usize {
        self.usize("jobs")
    }

    pub fn coil_array(&self) -> Result<CoilArray, CliError> {
        let a = CoilArray {
            coils: self.usize("coil.count"),
            cylinder_diameter: self.f64("coil.diameter"),
            element_height: self.f64("coil.element_height"),
            element_width: self.f64("coil.element_width"),
            gap: self.f64("coil.gap"),
            segments_per_loop: self.usize("coil.segments"),
            current: self.f64("coil.current"),
        };
        a.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(a)
    }

    pub fn wave(&self) -> Result<WaveModel, CliError> {
        let w = WaveModel { lambda_eff: self.f64("wave.lambda_eff"), attenuation_length: self.f64("wave.attenuation_length") };
        w.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(w)
    }

    pub fn grid(&self) -> (usize, usize, usize) {
        let p: Vec<usize> = self.get("phantom.grid").split('x').map(|s| s.parse().expect("validated")).collect();
        (p[0], p[1], p[2])
    }

    pub fn phantoms(&self) -> Result<Vec<PhantomSpec>, CliError> {
        let (h, w, d) = self.grid();
        let fov = self.f64("phantom.fov_xy");
        let base = PhantomSpec {
            id: 0,
            grid: (h, w, d),
            voxel_size: [fov / w as f64, fov / h as f64, self.f64("phantom.fov_z") / d as f64],
            semi_axes: self.fixed::<3>("phantom.semi_axes")?,
            scale: 1.0,
            density_inside: self.f64("phantom.density_inside"),
            density_outside: self.f64("phantom.density_outside"),
            mask_threshold: self.f64("phantom.mask_threshold"),
            axial_offset: self.f64("phantom.axial_offset"),
        };
        let n = self.usize("phantom.count");
        if n == 0 {
            return Err(CliError::Config("phantom.count must be positive".into()));
        }
        let (lo, hi) = (self.f64("phantom.scale_min"), self.f64("phantom.scale_max"));
        if !(lo > 0.0 && lo <= hi) {
            return Err(CliError::Config(format!("phantom scale range [{lo}, {hi}] is invalid")));
        }
        let family = PhantomSpec::family(&base, &scale_set(n, lo, hi));
        for p in &family {
            p.validate().map_err(|e| CliError::Config(e.to_string()))?;
        }
        Ok(family)
    }

    pub fn selection(&self) -> Result<SliceSelection, CliError> {
        let keep = self.usize("slices.keep");
        if keep == 0 {
            return Err(CliError::Config("slices.keep must be positive".into()));
        }
        Ok(SliceSelection { keep, min_mask_voxels: self.usize("slices.min_mask_voxels") })
    }

    pub fn angles(&self) -> Vec<f64> {
        self.f64_list("augment.angles")
    }

    pub fn lambda(&self) -> Result<f64, CliError> {
        let l = self.f64("target.lambda");
        if l < 0.0 {
            return Err(CliError::Config(format!("target.lambda must be nonnegative, got {l}")));
        }
        Ok(l)
    }

    pub fn adam(&self) -> Result<AdamConfig, CliError> {
        let a = AdamConfig {
            step_size: self.f64("adam.step_size"),
            beta1: self.f64("adam.beta1"),
            beta2: self.f64("adam.beta2"),
            eps: self.f64("adam.eps"),
            max_iters: self.usize("adam.max_iters"),
            rel_tol: self.f64("adam.rel_tol"),
            mag_floor: self.f64("adam.mag_floor"),
        };
        a.validate().map_err(CliError::Config)?;
        Ok(a)
    }

    pub fn restart_policy(&self) -> Result<RestartPolicy, CliError> {
        let p = RestartPolicy {
            n_random: self.usize("reference.restarts"),
            include_quadrature: self.bool("reference.include_quadrature"),
            magnitude_range: (self.f64("reference.mag_min"), self.f64("reference.mag_max")),
            seed: self.seed(),
        };
        if p.n_random == 0 && !p.include_quadrature {
            return Err(CliError::Config("reference.restarts is 0 and reference.include_quadrature is false".into()));
        }
        if !(p.magnitude_range.0 >= 0.0 && p.magnitude_range.0 < p.magnitude_range.1) {
            return Err(CliError::Config("reference.mag_min must be nonnegative and below reference.mag_max".into()));
        }
        Ok(p)
    }

    pub fn mls(&self) -> Result<MlsConfig, CliError> {
        let m = MlsConfig { max_outer_iters: self.usize("mls.max_iters"), rel_tol: self.f64("mls.tol") };
        if m.max_outer_iters == 0 || m.rel_tol < 0.0 {
            return Err(CliError::Config("mls.max_iters must be positive and mls.tol nonnegative".into()));
        }
        Ok(m)
    }

    /// Network for `coils` channels on an `height x width` grid.
    pub fn net(&self, coils: usize, height: usize, width: usize) -> Result<NetConfig, CliError> {
        let cfg = if self.bool("net.paper_scale") {
            NetConfig::paper_scale(coils, height, width)
        } else {
            let w: Vec<usize> = self.get("net.widths").split(',').map(|s| s.parse().expect("validated")).collect();
            let widths: [usize; 4] =
                w.try_into().map_err(|v: Vec<usize>| CliError::Config(format!("net.widths: expected 4 values, got {}", v.len())))?;
            NetConfig::desk(coils, height, width).with_widths(self.usize("net.stem_width"), widths)
        };
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn train(&self) -> Result<TrainConfig, CliError> {
        let t = TrainConfig {
            batch_size: self.usize("train.batch"),
            epochs: self.usize("train.epochs"),
            learning_rate: self.f64("train.lr"),
            decay: self.f64("train.decay"),
            decay_every: self.usize("train.decay_every"),
            split: self.fixed::<3>("train.split")?,
            seed: self.u64("train.fold_seed"),
            ..TrainConfig::default()
        };
        t.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(t)
    }

    pub fn folds(&self) -> Result<Vec<FoldSpec>, CliError> {
        let n = self.usize("bench.folds");
        if n == 0 {
            return Err(CliError::Config("bench.folds must be positive".into()));
        }
        let ratios = self.fixed::<3>("train.split")?;
        Ok(FoldSpec::standard(n, self.seed()).into_iter().map(|f| FoldSpec { ratios, ..f }).collect())
    }

    pub fn timing(&self) -> Result<TimingConfig, CliError> {
        let repetitions = self.usize("bench.repetitions");
        if repetitions < 3 {
            return Err(CliError::Config(format!("bench.repetitions must be at least 3, got {repetitions}")));
        }
        Ok(TimingConfig { repetitions })
    }
}
