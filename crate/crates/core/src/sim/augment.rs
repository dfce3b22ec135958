//! In-plane rotation augmentation.

use num_complex::Complex64;

use crate::field::{ComplexImage, Mask, SliceSample, TargetProfile};

/// Default rotation set in degrees; 0 keeps the original slice.
pub const DEFAULT_ANGLES: [f64; 12] = [0.0, 10.0, -10.0, 20.0, -20.0, 30.0, -30.0, 45.0, 90.0, 135.0, 180.0, 225.0];

/// Rotate every sample by every angle about the slice center.
///
/// Fields use bilinear interpolation with zero fill outside the grid; mask
/// and target use nearest neighbour. Reference weights are cleared. Samples
/// whose rotated mask would be empty are dropped.
pub fn augment_rotations(samples: &[SliceSample], angles: &[f64]) -> Vec<SliceSample> {
    let mut out = Vec::with_capacity(samples.len() * angles.len());
    for s in samples {
        for (variant, &angle) in angles.iter().enumerate() {
            if let Some(mut r) = rotate_sample(s, angle) {
                r.provenance.variant = variant;
                out.push(r);
            }
        }
    }
    out
}

/// Rotate one sample counterclockwise (in row/column index space, rows
/// pointing down) by `angle_deg`.
pub fn rotate_sample(s: &SliceSample, angle_deg: f64) -> Option<SliceSample> {
    let (h, w, ch) = (s.b1.height, s.b1.width, s.b1.channels);
    let theta = angle_deg.to_radians();
    let (sin, cos) = theta.sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);

    // Target magnitude as a dense map so it can follow the mask.
    let mut target_map = vec![0.0; h * w];
    for (v, &m) in s.mask.indices().zip(&s.target.magnitude) {
        target_map[v] = m;
    }

    let mut data = vec![Complex64::new(0.0, 0.0); h * w * ch];
    let mut bits = vec![false; h * w];
    let mut new_target = Vec::new();
    for r in 0..h {
        for c in 0..w {
            // Inverse map: output pixel -> source coordinates.
            let (dx, dy) = (c as f64 - cx, r as f64 - cy);
            let sx = cos * dx + sin * dy + cx;
            let sy = -sin * dx + cos * dy + cy;
            let v = r * w + c;
            bilinear(&s.b1, sx, sy, &mut data[v * ch..(v + 1) * ch]);
            let (nr, nc) = (sy.round(), sx.round());
            if nr >= 0.0 && nc >= 0.0 && (nr as usize) < h && (nc as usize) < w {
                let src = nr as usize * w + nc as usize;
                if s.mask.bits[src] {
                    bits[v] = true;
                    new_target.push(target_map[src]);
                }
            }
        }
    }
    if new_target.is_empty() {
        return None;
    }
    let mut provenance = s.provenance.clone();
    provenance.angle_deg = angle_deg;
    Some(SliceSample {
        b1: ComplexImage { height: h, width: w, channels: ch, data },
        mask: Mask { height: h, width: w, bits, source_threshold: s.mask.source_threshold },
        target: TargetProfile { magnitude: new_target, lambda: s.target.lambda },
        ref_weights: None,
        ref_rmse: None,
        provenance,
    })
}

fn bilinear(img: &ComplexImage, x: f64, y: f64, out: &mut [Complex64]) {
    let (h, w) = (img.height as isize, img.width as isize);
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (x0, y0) = (x0 as isize, y0 as isize);
    let inside = |r: isize, c: isize| r >= 0 && c >= 0 && r < h && c < w;
    if fx == 0.0 && fy == 0.0 {
        if inside(y0, x0) {
            out.copy_from_slice(img.voxel((y0 * w + x0) as usize));
        }
        return;
    }
    let taps = [(y0, x0, (1.0 - fx) * (1.0 - fy)), (y0, x0 + 1, fx * (1.0 - fy)), (y0 + 1, x0, (1.0 - fx) * fy), (y0 + 1, x0 + 1, fx * fy)];
    for (r, c, wt) in taps {
        if wt == 0.0 || !inside(r, c) {
            continue;
        }
        for (o, a) in out.iter_mut().zip(img.voxel((r * w + c) as usize)) {
            *o += a * wt;
        }
    }
}
