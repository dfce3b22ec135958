//! On-disk dataset: a JSON manifest plus one little-endian `f32` payload per
//! slice.
//!
//! Payload layout (all `f32`, row-major, coil-minor):
//! `[re, im] x height x width x channels`, then the mask as `0.0`/`1.0`
//! (`height x width`), then the target magnitude map (`height x width`, zero
//! outside the mask).

use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::biot_savart::{CoilArray, WaveModel};
use super::phantom::PhantomSpec;
use crate::field::{ComplexImage, Mask, Provenance, ShimWeights, SliceSample, TargetProfile};

pub const FORMAT_VERSION: &str = "1.0";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed manifest: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("dataset format version {found} is not supported (this build reads {FORMAT_VERSION})")]
    Version { found: String },
    #[error("{file}: {message}")]
    Payload { file: String, message: String },
}

/// Reference solution stored alongside a slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRecord {
    pub weights: Vec<[f64; 2]>,
    pub rmse: f64,
    pub objective: f64,
    pub iterations: usize,
    pub init_label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub phantom: usize,
    pub slice: usize,
    pub variant: usize,
    pub angle_deg: f64,
    #[serde(default)]
    pub short_selection: bool,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub masked_voxels: usize,
    pub lambda: f64,
    pub mask_threshold: f64,
    pub reference: Option<ReferenceRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: String,
    pub tool_version: String,
    /// Resolved run configuration of the pipeline that wrote this dataset.
    pub config: serde_json::Value,
    pub config_hash: String,
    pub coil_array: CoilArray,
    pub phantoms: Vec<PhantomSpec>,
    pub wave: WaveModel,
    pub angles_deg: Vec<f64>,
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(coil_array: CoilArray, phantoms: Vec<PhantomSpec>, wave: WaveModel, angles_deg: Vec<f64>, seed: u64) -> Self {
        Self {
            format_version: FORMAT_VERSION.to_string(),
            tool_version: crate::VERSION.to_string(),
            config: serde_json::Value::Null,
            config_hash: String::new(),
            coil_array,
            phantoms,
            wave,
            angles_deg,
            seed,
            entries: Vec::new(),
        }
    }
}

/// Extra solver bookkeeping kept next to a sample's reference weights.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReferenceMeta {
    pub objective: f64,
    pub iterations: usize,
    pub init_label: String,
}

pub fn payload_name(p: &Provenance) -> String {
    format!("slice_{}_{}_{}.f32", p.phantom, p.slice, p.variant)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.to_path_buf(), source }
}

fn encode(sample: &SliceSample) -> Vec<u8> {
    let (h, w, ch) = (sample.b1.height, sample.b1.width, sample.b1.channels);
    let mut out = Vec::with_capacity(4 * (h * w * (2 * ch + 2)));
    for z in &sample.b1.data {
        out.extend_from_slice(&(z.re as f32).to_le_bytes());
        out.extend_from_slice(&(z.im as f32).to_le_bytes());
    }
    for &b in &sample.mask.bits {
        out.extend_from_slice(&(if b { 1.0f32 } else { 0.0f32 }).to_le_bytes());
    }
    let mut target = vec![0.0f32; h * w];
    for (v, &m) in sample.mask.indices().zip(&sample.target.magnitude) {
        target[v] = m as f32;
    }
    for t in target {
        out.extend_from_slice(&t.to_le_bytes());
    }
    out
}

fn payload_len(h: usize, w: usize, ch: usize) -> usize {
    4 * h * w * (2 * ch + 2)
}

/// Write samples and a manifest describing them. Any previous manifest in
/// `dir` is replaced; per-sample reference metadata comes from `meta` when
/// given (same order as `samples`).
pub fn save_dataset(
    samples: &[SliceSample],
    manifest: &DatasetManifest,
    meta: Option<&[ReferenceMeta]>,
    dir: &Path,
) -> Result<DatasetManifest, DatasetError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut out = manifest.clone();
    out.format_version = FORMAT_VERSION.to_string();
    out.entries = Vec::with_capacity(samples.len());
    for (k, s) in samples.iter().enumerate() {
        let file = payload_name(&s.provenance);
        let path = dir.join(&file);
        fs::write(&path, encode(s)).map_err(io_err(&path))?;
        let reference = match (&s.ref_weights, s.ref_rmse) {
            (Some(w), Some(rmse)) => {
                let m = meta.and_then(|m| m.get(k)).cloned().unwrap_or_default();
                Some(ReferenceRecord {
                    weights: w.values.iter().map(|z| [z.re, z.im]).collect(),
                    rmse,
                    objective: m.objective,
                    iterations: m.iterations,
                    init_label: m.init_label,
                })
            }
            _ => None,
        };
        out.entries.push(ManifestEntry {
            file,
            phantom: s.provenance.phantom,
            slice: s.provenance.slice,
            variant: s.provenance.variant,
            angle_deg: s.provenance.angle_deg,
            short_selection: s.provenance.short_selection,
            height: s.b1.height,
            width: s.b1.width,
            channels: s.b1.channels,
            masked_voxels: s.mask.count(),
            lambda: s.target.lambda,
            mask_threshold: s.mask.source_threshold,
            reference,
        });
    }
    write_manifest(&out, dir)?;
    Ok(out)
}

pub fn write_manifest(manifest: &DatasetManifest, dir: &Path) -> Result<(), DatasetError> {
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(manifest)
        .map_err(|e| DatasetError::Manifest { path: path.clone(), message: e.to_string() })?;
    fs::write(&path, text + "\n").map_err(io_err(&path))
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest, DatasetError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let raw: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| DatasetError::Manifest { path: path.clone(), message: e.to_string() })?;
    // Check the version before the schema so newer layouts fail cleanly.
    let found = raw.get("format_version").and_then(|v| v.as_str()).unwrap_or("").to_string();
    let major = |v: &str| v.split('.').next().and_then(|m| m.parse::<u32>().ok());
    match (major(&found), major(FORMAT_VERSION)) {
        (Some(f), Some(ours)) if f == ours => {}
        _ => return Err(DatasetError::Version { found }),
    }
    serde_json::from_value(raw).map_err(|e| DatasetError::Manifest { path, message: e.to_string() })
}

pub fn load_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<SliceSample>), DatasetError> {
    let manifest = read_manifest(dir)?;
    let mut samples = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        samples.push(load_entry(dir, e)?);
    }
    Ok((manifest, samples))
}

fn load_entry(dir: &Path, e: &ManifestEntry) -> Result<SliceSample, DatasetError> {
    let bad = |message: String| DatasetError::Payload { file: e.file.clone(), message };
    let path = dir.join(&e.file);
    let bytes = fs::read(&path).map_err(io_err(&path))?;
    let (h, w, ch) = (e.height, e.width, e.channels);
    let expected = payload_len(h, w, ch);
    if bytes.len() != expected {
        return Err(bad(format!("payload is {} bytes, expected {expected} for {h}x{w}x{ch}", bytes.len())));
    }
    let mut floats = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64);
    let data: Vec<Complex64> = (0..h * w * ch)
        .map(|_| {
            let re = floats.next().unwrap();
            let im = floats.next().unwrap();
            Complex64::new(re, im)
        })
        .collect();
    let bits: Vec<bool> = (0..h * w).map(|_| floats.next().unwrap() != 0.0).collect();
    let target_map: Vec<f64> = floats.collect();
    let magnitude: Vec<f64> = bits.iter().zip(&target_map).filter_map(|(&b, &t)| b.then_some(t)).collect();
    if magnitude.len() != e.masked_voxels {
        return Err(bad(format!("mask has {} voxels, manifest declares {}", magnitude.len(), e.masked_voxels)));
    }
    let b1 = ComplexImage::new(h, w, ch, data).map_err(|err| bad(err.to_string()))?;
    let (ref_weights, ref_rmse) = match &e.reference {
        Some(r) => {
            if r.weights.len() != ch {
                return Err(bad(format!("reference has {} weights for {ch} coils", r.weights.len())));
            }
            (Some(ShimWeights::new(r.weights.iter().map(|p| Complex64::new(p[0], p[1])).collect())), Some(r.rmse))
        }
        None => (None, None),
    };
    Ok(SliceSample {
        b1,
        mask: Mask { height: h, width: w, bits, source_threshold: e.mask_threshold },
        target: TargetProfile { magnitude, lambda: e.lambda },
        ref_weights,
        ref_rmse,
        provenance: Provenance {
            phantom: e.phantom,
            slice: e.slice,
            variant: e.variant,
            angle_deg: e.angle_deg,
            short_selection: e.short_selection,
        },
    })
}
