//! Ellipsoidal two-density head phantoms, multi-coil B1+ volumes and
//! slice selection.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::biot_savart::{b1_plus, field_at, norm, sub, CoilArray, WaveModel};
use super::SimError;
use crate::field::{quadrature_weights, ComplexImage, Mask, Provenance, SliceSample, TargetProfile};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub id: usize,
    /// `(height, width, depth)` in voxels.
    pub grid: (usize, usize, usize),
    /// `(x, y, z)` voxel pitch in meters.
    pub voxel_size: [f64; 3],
    /// Unscaled head semi-axes `(x, y, z)`, meters.
    pub semi_axes: [f64; 3],
    pub scale: f64,
    pub density_inside: f64,
    pub density_outside: f64,
    pub mask_threshold: f64,
    /// Head center position along the cylinder axis relative to the coil
    /// plane, meters. Nonzero values break the up/down mirror symmetry that
    /// would otherwise make slices `z` and `D-1-z` identical.
    #[serde(default)]
    pub axial_offset: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            id: 0,
            grid: (64, 64, 32),
            voxel_size: [0.28 / 64.0, 0.28 / 64.0, 0.005],
            semi_axes: [0.075, 0.095, 0.11],
            scale: 1.0,
            density_inside: 1000.0,
            density_outside: 1.2,
            mask_threshold: 500.0,
            axial_offset: 0.02,
        }
    }
}

/// `n` scale factors evenly spaced over `[lo, hi]`.
pub fn scale_set(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![0.5 * (lo + hi)],
        _ => (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect(),
    }
}

impl PhantomSpec {
    /// One phantom per scale factor, sharing every other setting of `base`.
    pub fn family(base: &PhantomSpec, scales: &[f64]) -> Vec<PhantomSpec> {
        scales.iter().enumerate().map(|(id, &scale)| PhantomSpec { id, scale, ..base.clone() }).collect()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let (h, w, d) = self.grid;
        if h == 0 || w == 0 || d == 0 {
            return Err(SimError::Spec(format!("phantom grid {h}x{w}x{d} has an empty axis")));
        }
        if self.voxel_size.iter().any(|&v| !(v > 0.0)) || self.semi_axes.iter().any(|&v| !(v > 0.0)) {
            return Err(SimError::Spec("phantom voxel size and semi-axes must be positive".into()));
        }
        if !self.axial_offset.is_finite() {
            return Err(SimError::Spec("phantom axial_offset must be finite".into()));
        }
        if !(self.scale > 0.0) {
            return Err(SimError::Spec(format!("phantom scale must be positive, got {}", self.scale)));
        }
        let (lo, hi) = if self.density_inside > self.density_outside {
            (self.density_outside, self.density_inside)
        } else {
            (self.density_inside, self.density_outside)
        };
        if !(self.mask_threshold > lo && self.mask_threshold < hi) {
            return Err(SimError::Spec(format!(
                "mask threshold {} must lie strictly between densities {lo} and {hi}",
                self.mask_threshold
            )));
        }
        // In-plane only: the slab may cut through the head along z.
        for (axis, n, pitch, semi) in
            [("x", w, self.voxel_size[0], self.semi_axes[0]), ("y", h, self.voxel_size[1], self.semi_axes[1])]
        {
            let room = ((n as f64 - 1.0) / 2.0 - 2.0) * pitch;
            if semi * self.scale > room {
                return Err(SimError::Spec(format!(
                    "phantom {} overflows the grid along {axis}: semi-axis {:.4} m > {room:.4} m (2-voxel margin)",
                    self.id,
                    semi * self.scale
                )));
            }
        }
        Ok(())
    }

    /// Physical position of voxel `(row, col, slice)`; the grid is centered
    /// on the cylinder axis.
    pub fn position(&self, row: usize, col: usize, slice: usize) -> [f64; 3] {
        let (h, w, d) = self.grid;
        [
            (col as f64 - (w as f64 - 1.0) / 2.0) * self.voxel_size[0],
            (row as f64 - (h as f64 - 1.0) / 2.0) * self.voxel_size[1],
            (slice as f64 - (d as f64 - 1.0) / 2.0) * self.voxel_size[2],
        ]
    }

    pub fn inside(&self, p: [f64; 3]) -> bool {
        let q: f64 = (0..3).map(|k| (p[k] / (self.semi_axes[k] * self.scale)).powi(2)).sum();
        q <= 1.0
    }

    /// Density map, `[slice][row][col]`.
    pub fn density(&self) -> Vec<f64> {
        let (h, w, d) = self.grid;
        let mut out = Vec::with_capacity(h * w * d);
        for z in 0..d {
            for r in 0..h {
                for c in 0..w {
                    out.push(if self.inside(self.position(r, c, z)) {
                        self.density_inside
                    } else {
                        self.density_outside
                    });
                }
            }
        }
        out
    }
}

/// Multi-coil B1+ over a phantom grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub height: usize,
    pub width: usize,
    pub depth: usize,
    pub channels: usize,
    /// `[slice][row][col][coil]`.
    pub b1: Vec<Complex64>,
    /// `[slice][row][col]`.
    pub density: Vec<f64>,
    pub mask_threshold: f64,
}

impl Volume {
    pub fn slice_len(&self) -> usize {
        self.height * self.width
    }

    pub fn mask_bits(&self, slice: usize) -> Vec<bool> {
        let n = self.slice_len();
        self.density[slice * n..(slice + 1) * n].iter().map(|&d| d > self.mask_threshold).collect()
    }
}

/// Raw (unnormalized) B1+ of every coil at `point`.
pub fn b1_at(array: &CoilArray, segments: &[Vec<super::biot_savart::Segment>], wave: &WaveModel, point: [f64; 3]) -> Vec<Complex64> {
    (0..array.coils)
        .map(|c| {
            let b = field_at(&segments[c], point).map(|x| Complex64::new(x, 0.0));
            b1_plus(b, wave, norm(sub(point, array.center(c))))
        })
        .collect()
}

/// Evaluate every coil over the phantom grid and normalize so the quadrature
/// drive has unit mean magnitude over the masked voxels of the volume.
pub fn generate_volume(array: &CoilArray, phantom: &PhantomSpec, wave: &WaveModel) -> Result<Volume, SimError> {
    array.validate()?;
    phantom.validate()?;
    wave.validate()?;
    let (h, w, d) = phantom.grid;
    let ch = array.coils;
    let segments: Vec<_> = (0..ch).map(|c| array.segments(c)).collect();
    let density = phantom.density();

    let per_slice: Vec<Vec<Complex64>> = (0..d)
        .into_par_iter()
        .map(|z| {
            let mut out = Vec::with_capacity(h * w * ch);
            for r in 0..h {
                for c in 0..w {
                    let [x, y, pz] = phantom.position(r, c, z);
                    out.extend(b1_at(array, &segments, wave, [x, y, pz + phantom.axial_offset]));
                }
            }
            out
        })
        .collect();
    let mut b1: Vec<Complex64> = per_slice.into_iter().flatten().collect();

    let quad = quadrature_weights(ch).map_err(|e| SimError::Spec(e.to_string()))?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (v, &rho) in density.iter().enumerate() {
        if rho > phantom.mask_threshold {
            let row = &b1[v * ch..(v + 1) * ch];
            let z: Complex64 = row.iter().zip(&quad.values).map(|(a, b)| a * b).sum();
            sum += z.norm();
            count += 1;
        }
    }
    if count == 0 || !(sum > 0.0) {
        return Err(SimError::Spec(format!("phantom {} has no voxels above the mask threshold", phantom.id)));
    }
    let inv = count as f64 / sum;
    for z in &mut b1 {
        *z *= inv;
    }
    Ok(Volume { height: h, width: w, depth: d, channels: ch, b1, density, mask_threshold: phantom.mask_threshold })
}

/// Slice indices kept by area-ranked selection: the `keep` largest masks with
/// at least `min_voxels` voxels, returned in slice order.
pub fn select_slices(areas: &[usize], keep: usize, min_voxels: usize) -> Vec<usize> {
    let mut candidates: Vec<usize> = (0..areas.len()).filter(|&z| areas[z] >= min_voxels.max(1)).collect();
    candidates.sort_by(|&a, &b| areas[b].cmp(&areas[a]).then(a.cmp(&b)));
    candidates.truncate(keep);
    candidates.sort_unstable();
    candidates
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceSelection {
    pub keep: usize,
    pub min_mask_voxels: usize,
}

impl Default for SliceSelection {
    fn default() -> Self {
        Self { keep: 32, min_mask_voxels: 64 }
    }
}

/// Cut a volume into masked axial slices with a uniform unit target.
pub fn slice_and_mask(volume: &Volume, phantom_id: usize, selection: SliceSelection, lambda: f64) -> Vec<SliceSample> {
    let n = volume.slice_len();
    let areas: Vec<usize> =
        (0..volume.depth).map(|z| volume.mask_bits(z).iter().filter(|&&b| b).count()).collect();
    let chosen = select_slices(&areas, selection.keep, selection.min_mask_voxels);
    let short = chosen.len() < selection.keep;
    chosen
        .into_iter()
        .map(|z| {
            let bits = volume.mask_bits(z);
            let data = volume.b1[z * n * volume.channels..(z + 1) * n * volume.channels].to_vec();
            let count = areas[z];
            SliceSample {
                b1: ComplexImage { height: volume.height, width: volume.width, channels: volume.channels, data },
                mask: Mask { height: volume.height, width: volume.width, bits, source_threshold: volume.mask_threshold },
                target: TargetProfile::uniform(count, lambda),
                ref_weights: None,
                ref_rmse: None,
                provenance: Provenance { phantom: phantom_id, slice: z, variant: 0, angle_deg: 0.0, short_selection: short },
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::ShimWeights;

    fn coarse() -> (CoilArray, PhantomSpec, WaveModel) {
        let phantom = PhantomSpec {
            grid: (16, 16, 16),
            voxel_size: [0.0175, 0.0175, 0.0175],
            semi_axes: [0.075, 0.095, 0.09],
            ..PhantomSpec::default()
        };
        (CoilArray::default(), phantom, WaveModel::default())
    }

    #[test]
    fn default_phantom_family_is_valid() {
        let scales = scale_set(10, 0.9, 1.1);
        assert_eq!(scales.len(), 10);
        assert!((scales[9] - 1.1).abs() < 1e-15);
        for p in PhantomSpec::family(&PhantomSpec::default(), &scales) {
            p.validate().unwrap();
        }
    }

    #[test]
    fn axial_offset_breaks_slice_twins() {
        let (array, phantom, wave) = coarse();
        let slice = |v: &Volume, z: usize| v.b1[z * v.slice_len() * v.channels..(z + 1) * v.slice_len() * v.channels].to_vec();
        let centered = generate_volume(&array, &PhantomSpec { axial_offset: 0.0, ..phantom.clone() }, &wave).unwrap();
        for (a, b) in slice(&centered, 4).iter().zip(slice(&centered, 11)) {
            assert!((a - b).norm() < 1e-9);
        }
        let shifted = generate_volume(&array, &phantom, &wave).unwrap();
        let diff: f64 = slice(&shifted, 4).iter().zip(slice(&shifted, 11)).map(|(a, b)| (a - b).norm()).sum();
        assert!(diff > 1e-3);
    }

    #[test]
    fn overflow_is_rejected() {
        let p = PhantomSpec { scale: 1.5, ..PhantomSpec::default() };
        assert!(matches!(p.validate(), Err(SimError::Spec(_))));
        let q = PhantomSpec { mask_threshold: 1000.0, ..PhantomSpec::default() };
        assert!(q.validate().is_err());
    }

    #[test]
    fn default_volume_shape_and_normalization() {
        let volume = generate_volume(&CoilArray::default(), &PhantomSpec::default(), &WaveModel::default()).unwrap();
        assert_eq!(volume.b1.len(), 64 * 64 * 32 * 8);
        assert!(volume.b1.iter().all(|z| z.re.is_finite() && z.im.is_finite()));
        let quad = quadrature_weights(8).unwrap();
        let mut sum = 0.0;
        let mut n = 0;
        for (v, &rho) in volume.density.iter().enumerate() {
            if rho > volume.mask_threshold {
                let z: Complex64 = volume.b1[v * 8..(v + 1) * 8].iter().zip(&quad.values).map(|(a, b)| a * b).sum();
                sum += z.norm();
                n += 1;
            }
        }
        assert!((sum / n as f64 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn mirror_coils_are_mirror_images() {
        let (array, phantom, wave) = coarse();
        let v = generate_volume(&array, &phantom, &wave).unwrap();
        let (h, w, d, ch) = (16, 16, 16, 8);
        let at = |z: usize, r: usize, c: usize, k: usize| v.b1[((z * h + r) * w + c) * ch + k];
        for z in 0..d {
            for r in 0..h {
                for c in 0..w {
                    assert_eq!(v.density[(z * h + r) * w + c], v.density[(z * h + (h - 1 - r)) * w + c]);
                    for k in 0..ch {
                        let a = at(z, r, c, k);
                        let b = at(z, h - 1 - r, c, (ch - k) % ch);
                        assert!((a.norm() - b.norm()).abs() < 1e-9, "coil {k} at ({z},{r},{c})");
                    }
                }
            }
        }
    }

    #[test]
    fn mirror_relation_on_quasi_static_field() {
        // Reflection y -> -y maps coil c onto coil C - c with B -> (Bx, -By, Bz).
        let array = CoilArray::default();
        let p = [0.031, 0.047, -0.02];
        let q = [p[0], -p[1], p[2]];
        for c in 0..8 {
            let b = field_at(&array.segments(c), p);
            let m = field_at(&array.segments((8 - c) % 8), q);
            assert!((b[0] - m[0]).abs() < 1e-15);
            assert!((b[1] + m[1]).abs() < 1e-15);
            assert!((b[2] - m[2]).abs() < 1e-15);
        }
    }

    #[test]
    fn rotation_permutes_coils() {
        let array = CoilArray::default();
        let wave = WaveModel::default();
        let segments: Vec<_> = (0..8).map(|c| array.segments(c)).collect();
        // Coil c+1 is coil c rotated by -2 pi / C; B1+ picks up e^{-i 2 pi / C}.
        let alpha = -2.0 * std::f64::consts::PI / 8.0;
        let phase = Complex64::from_polar(1.0, alpha);
        for p in [[0.01, 0.02, 0.0], [-0.05, 0.03, 0.04], [0.08, -0.07, -0.03]] {
            let rp = [alpha.cos() * p[0] - alpha.sin() * p[1], alpha.sin() * p[0] + alpha.cos() * p[1], p[2]];
            let orig = b1_at(&array, &segments, &wave, p);
            let rot = b1_at(&array, &segments, &wave, rp);
            for c in 0..8 {
                let expect = orig[c] * phase;
                let got = rot[(c + 1) % 8];
                assert!((got - expect).norm() < 1e-9 * expect.norm().max(1e-12) + 1e-18, "coil {c}");
            }
        }
    }

    #[test]
    fn quadrature_is_constructive_at_center() {
        let array = CoilArray::default();
        let segments: Vec<_> = (0..8).map(|c| array.segments(c)).collect();
        let b = b1_at(&array, &segments, &WaveModel::default(), [0.0; 3]);
        let q = quadrature_weights(8).unwrap();
        let sum: Complex64 = b.iter().zip(&q.values).map(|(a, w)| a * w).sum();
        let each: f64 = b.iter().map(|z| z.norm()).sum();
        assert!((sum.norm() - each).abs() < 1e-9 * each);
    }

    #[test]
    fn mask_matches_density_threshold() {
        let (array, phantom, wave) = coarse();
        let v = generate_volume(&array, &phantom, &wave).unwrap();
        let samples = slice_and_mask(&v, 0, SliceSelection { keep: 16, min_mask_voxels: 1 }, 1e-3);
        for s in &samples {
            let z = s.provenance.slice;
            for (k, &bit) in s.mask.bits.iter().enumerate() {
                assert_eq!(bit, v.density[z * 256 + k] > phantom.mask_threshold);
            }
            assert_eq!(s.target.magnitude.len(), s.mask.count());
        }
    }

    #[test]
    fn desk_phantom_keeps_every_slice() {
        let p = PhantomSpec { scale: 0.9, ..PhantomSpec::default() };
        let density = p.density();
        let n = 64 * 64;
        let areas: Vec<usize> =
            (0..32).map(|z| density[z * n..(z + 1) * n].iter().filter(|&&x| x > p.mask_threshold).count()).collect();
        assert_eq!(select_slices(&areas, 32, 64).len(), 32);
    }

    #[test]
    fn slices_outside_ellipsoid_are_excluded() {
        let (array, mut phantom, wave) = coarse();
        phantom.semi_axes[2] = 0.05;
        let v = generate_volume(&array, &phantom, &wave).unwrap();
        let samples = slice_and_mask(&v, 0, SliceSelection { keep: 16, min_mask_voxels: 1 }, 1e-3);
        assert!(samples.len() < 16);
        assert!(samples.iter().all(|s| s.provenance.short_selection && s.mask.count() > 0));
        assert!(samples.iter().all(|s| s.provenance.slice > 0 && s.provenance.slice < 15));
    }

    #[test]
    fn paper_scale_selection_keeps_largest() {
        let p = PhantomSpec { grid: (101, 101, 71), voxel_size: [0.0028, 0.0028, 0.0028], ..PhantomSpec::default() };
        p.validate().unwrap();
        let density = p.density();
        let n = 101 * 101;
        let areas: Vec<usize> =
            (0..71).map(|z| density[z * n..(z + 1) * n].iter().filter(|&&x| x > p.mask_threshold).count()).collect();
        let kept = select_slices(&areas, 32, 64);
        assert_eq!(kept.len(), 32);
        // Sort-by-area oracle: every kept area dominates every rejected area.
        let min_kept = kept.iter().map(|&z| areas[z]).min().unwrap();
        for z in (0..71).filter(|z| !kept.contains(z)) {
            assert!(min_kept >= areas[z]);
        }
    }

    #[test]
    fn slices_have_consistent_shapes() {
        let (array, phantom, wave) = coarse();
        let v = generate_volume(&array, &phantom, &wave).unwrap();
        let samples = slice_and_mask(&v, 3, SliceSelection { keep: 4, min_mask_voxels: 10 }, 1e-3);
        assert_eq!(samples.len(), 4);
        for s in &samples {
            assert_eq!(s.provenance.phantom, 3);
            let q = quadrature_weights(8).unwrap();
            let r = crate::field::rmse(&s.b1, &s.mask, &s.target, &q).unwrap();
            assert!(r.is_finite());
            let _ = ShimWeights::new(vec![]);
        }
    }
}
