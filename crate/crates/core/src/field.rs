//! Shared B1+ field types and the magnitude-least-squares objective.
//!
//! The shimming problem for one slice is
//!
//! ```text
//!   f(w) = sum_{v in mask} (|(A w)_v| - m_v)^2 + lambda * ||w||^2
//! ```
//!
//! where `A` holds the per-coil complex B1+ values at each voxel and `w` the
//! per-coil drive weights. The RMSE metric drops the power term and divides by
//! the masked voxel count.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("mask selects no voxels")]
    EmptyMask,
    #[error("domain error: {0}")]
    Domain(String),
}

pub type Result<T> = std::result::Result<T, FieldError>;

/// Per-coil complex B1+ maps on a regular 2-D grid.
///
/// Storage is row-major over voxels with the coil index varying fastest, so
/// voxel `v` occupies `data[v * channels .. (v + 1) * channels]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexImage {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<Complex64>,
}

impl ComplexImage {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(FieldError::Dimension(format!(
                "data length {} != {height}x{width}x{channels}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(FieldError::Domain(format!("non-finite field value at index {i}")));
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels, data: vec![Complex64::new(0.0, 0.0); height * width * channels] }
    }

    pub fn voxels(&self) -> usize {
        self.height * self.width
    }

    /// Coil values at voxel `v`.
    pub fn voxel(&self, v: usize) -> &[Complex64] {
        &self.data[v * self.channels..(v + 1) * self.channels]
    }

    pub fn at(&self, row: usize, col: usize, coil: usize) -> Complex64 {
        self.data[(row * self.width + col) * self.channels + coil]
    }
}

/// Binary region of interest derived from a density map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub bits: Vec<bool>,
    pub source_threshold: f64,
}

impl Mask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>, source_threshold: f64) -> Result<Self> {
        if bits.len() != height * width {
            return Err(FieldError::Dimension(format!(
                "mask length {} != {height}x{width}",
                bits.len()
            )));
        }
        Ok(Self { height, width, bits, source_threshold })
    }

    /// All voxels selected.
    pub fn full(height: usize, width: usize) -> Self {
        Self { height, width, bits: vec![true; height * width], source_threshold: 0.0 }
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter_map(|(i, &b)| b.then_some(i))
    }
}

/// One complex drive weight per transmit coil.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShimWeights {
    pub values: Vec<Complex64>,
}

impl ShimWeights {
    pub fn new(values: Vec<Complex64>) -> Self {
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.values.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Multiply every weight by `e^{i psi}`.
    pub fn rotated(&self, psi: f64) -> Self {
        let r = Complex64::from_polar(1.0, psi);
        Self { values: self.values.iter().map(|&z| z * r).collect() }
    }

    /// Interleaved `(re, im)` pairs.
    pub fn to_interleaved(&self) -> Vec<f64> {
        self.values.iter().flat_map(|z| [z.re, z.im]).collect()
    }

    pub fn from_interleaved(x: &[f64]) -> Self {
        Self { values: x.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect() }
    }
}

/// Target magnitude over the masked voxels plus the power-regularization weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetProfile {
    /// One entry per masked voxel, in mask scan order.
    pub magnitude: Vec<f64>,
    pub lambda: f64,
}

impl TargetProfile {
    pub fn uniform(masked_voxels: usize, lambda: f64) -> Self {
        Self { magnitude: vec![1.0; masked_voxels], lambda }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(FieldError::Domain(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.magnitude.iter().any(|&m| !(m >= 0.0)) {
            return Err(FieldError::Domain("target magnitude must be >= 0".into()));
        }
        Ok(())
    }
}

/// Where a slice came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub phantom: usize,
    pub slice: usize,
    /// Index into the augmentation angle list.
    #[serde(default)]
    pub variant: usize,
    pub angle_deg: f64,
    /// Set when slice selection could not find the requested number of slices.
    #[serde(default)]
    pub short_selection: bool,
}

/// One training/evaluation example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceSample {
    pub b1: ComplexImage,
    pub mask: Mask,
    pub target: TargetProfile,
    pub ref_weights: Option<ShimWeights>,
    pub ref_rmse: Option<f64>,
    pub provenance: Provenance,
}

impl SliceSample {
    pub fn problem(&self) -> Result<ShimProblem> {
        ShimProblem::new(&self.b1, &self.mask, &self.target)
    }

    pub fn clear_reference(&mut self) {
        self.ref_weights = None;
        self.ref_rmse = None;
    }

    /// Round every stored field value to the nearest `f32`, as the dataset
    /// payload format does.
    pub fn quantize_f32(&mut self) {
        for z in &mut self.b1.data {
            *z = Complex64::new(z.re as f32 as f64, z.im as f32 as f64);
        }
        for m in &mut self.target.magnitude {
            *m = *m as f32 as f64;
        }
    }
}

/// The masked rows of `A` gathered contiguously, with target and `lambda`.
///
/// All solvers work on this form; building it once per slice avoids
/// re-scanning the mask on every objective evaluation.
#[derive(Debug, Clone)]
pub struct ShimProblem {
    pub coils: usize,
    /// `rows[v * coils + c]` for the v-th masked voxel.
    pub rows: Vec<Complex64>,
    pub target: Vec<f64>,
    pub lambda: f64,
}

impl ShimProblem {
    pub fn new(b1: &ComplexImage, mask: &Mask, target: &TargetProfile) -> Result<Self> {
        if mask.height != b1.height || mask.width != b1.width {
            return Err(FieldError::Dimension(format!(
                "mask {}x{} vs field {}x{}",
                mask.height, mask.width, b1.height, b1.width
            )));
        }
        let n = mask.count();
        if n == 0 {
            return Err(FieldError::EmptyMask);
        }
        if target.magnitude.len() != n {
            return Err(FieldError::Dimension(format!(
                "target has {} entries for {n} masked voxels",
                target.magnitude.len()
            )));
        }
        target.validate()?;
        let mut rows = Vec::with_capacity(n * b1.channels);
        for v in mask.indices() {
            rows.extend_from_slice(b1.voxel(v));
        }
        Ok(Self { coils: b1.channels, rows, target: target.magnitude.clone(), lambda: target.lambda })
    }

    pub fn voxels(&self) -> usize {
        self.target.len()
    }

    fn check(&self, w: &[Complex64]) -> Result<()> {
        if w.len() != self.coils {
            return Err(FieldError::Dimension(format!("{} weights for {} coils", w.len(), self.coils)));
        }
        Ok(())
    }

    /// `(A w)_v` for every masked voxel.
    pub fn combine(&self, w: &[Complex64]) -> Vec<Complex64> {
        self.rows.chunks_exact(self.coils).map(|row| dot(row, w)).collect()
    }

    /// Sum of squared magnitude residuals over the mask.
    pub fn residual_sum(&self, w: &[Complex64]) -> f64 {
        self.rows
            .chunks_exact(self.coils)
            .zip(&self.target)
            .map(|(row, &m)| {
                let r = dot(row, w).norm() - m;
                r * r
            })
            .sum()
    }

    pub fn objective(&self, w: &[Complex64]) -> f64 {
        self.residual_sum(w) + self.lambda * w.iter().map(|z| z.norm_sqr()).sum::<f64>()
    }

    pub fn rmse(&self, w: &[Complex64]) -> f64 {
        (self.residual_sum(w) / self.voxels() as f64).sqrt()
    }

    /// Gradient of the residual sum (no power term) with respect to the real
    /// and imaginary parts of each weight, packed as a complex number
    /// `d/dRe + i d/dIm`.
    ///
    /// The magnitude derivative uses `z / max(|z|, floor)`.
    pub fn residual_gradient(&self, w: &[Complex64], floor: f64) -> Vec<Complex64> {
        let mut g = vec![Complex64::new(0.0, 0.0); self.coils];
        for (row, &m) in self.rows.chunks_exact(self.coils).zip(&self.target) {
            let z = dot(row, w);
            let mag = z.norm();
            let scale = 2.0 * (mag - m) / mag.max(floor);
            let u = z * scale;
            for (gc, a) in g.iter_mut().zip(row) {
                *gc += a.conj() * u;
            }
        }
        g
    }

    /// Objective value and its gradient in one pass.
    pub fn objective_and_gradient(&self, w: &[Complex64], floor: f64) -> (f64, Vec<Complex64>) {
        let mut g = vec![Complex64::new(0.0, 0.0); self.coils];
        let mut f = 0.0;
        for (row, &m) in self.rows.chunks_exact(self.coils).zip(&self.target) {
            let z = dot(row, w);
            let mag = z.norm();
            let r = mag - m;
            f += r * r;
            let u = z * (2.0 * r / mag.max(floor));
            for (gc, a) in g.iter_mut().zip(row) {
                *gc += a.conj() * u;
            }
        }
        for (gc, wc) in g.iter_mut().zip(w) {
            f += self.lambda * wc.norm_sqr();
            *gc += wc * (2.0 * self.lambda);
        }
        (f, g)
    }

    pub fn checked_objective(&self, w: &ShimWeights) -> Result<f64> {
        self.check(&w.values)?;
        Ok(self.objective(&w.values))
    }
}

#[inline]
fn dot(row: &[Complex64], w: &[Complex64]) -> Complex64 {
    row.iter().zip(w).fold(Complex64::new(0.0, 0.0), |acc, (a, b)| acc + a * b)
}

/// Per-voxel combined field `sum_c b1[v, c] * w[c]` over the whole grid.
pub fn forward_field(b1: &ComplexImage, w: &ShimWeights) -> Result<Vec<Complex64>> {
    if w.len() != b1.channels {
        return Err(FieldError::Dimension(format!("{} weights for {} coils", w.len(), b1.channels)));
    }
    Ok(b1.data.chunks_exact(b1.channels).map(|row| dot(row, &w.values)).collect())
}

pub fn shim_objective(b1: &ComplexImage, mask: &Mask, target: &TargetProfile, w: &ShimWeights) -> Result<f64> {
    ShimProblem::new(b1, mask, target)?.checked_objective(w)
}

/// Root-mean-square magnitude error over the mask, as a fraction of target.
pub fn rmse(b1: &ComplexImage, mask: &Mask, target: &TargetProfile, w: &ShimWeights) -> Result<f64> {
    let p = ShimProblem::new(b1, mask, target)?;
    p.check(&w.values)?;
    Ok(p.rmse(&w.values))
}

/// Remove the global phase so the first nonzero weight is real and positive.
pub fn canonicalize_phase(w: &ShimWeights) -> ShimWeights {
    match w.values.iter().find(|z| z.norm_sqr() > 0.0) {
        Some(z) if z.im != 0.0 || z.re < 0.0 => {
            let r = z.conj() / z.norm();
            let mut values: Vec<Complex64> = w.values.iter().map(|&x| x * r).collect();
            // Pin the reference element to an exact real value.
            let k = w.values.iter().position(|z| z.norm_sqr() > 0.0).unwrap();
            values[k] = Complex64::new(w.values[k].norm(), 0.0);
            ShimWeights { values }
        }
        _ => w.clone(),
    }
}

/// Unit-amplitude circularly polarized drive, coil `c` at phase `2 pi c / C`.
pub fn quadrature_weights(coils: usize) -> Result<ShimWeights> {
    if coils == 0 {
        return Err(FieldError::Domain("coil count must be >= 1".into()));
    }
    let values = (0..coils)
        .map(|c| Complex64::from_polar(1.0, 2.0 * PI * c as f64 / coils as f64))
        .collect();
    Ok(ShimWeights { values })
}
