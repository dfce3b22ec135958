//! Quasi-static Biot–Savart fields of discretized current loops and the
//! B1+ projection with a propagation surrogate.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{SimError, Vec3};

pub const MU0: f64 = 4.0e-7 * PI;

/// Closest approach to a segment midpoint before the kernel is clamped.
pub const MIN_DISTANCE: f64 = 1e-6;

/// Transmit array of rectangular loops on a cylinder around the z axis.
///
/// Coil `c` is centered at azimuth `2 pi c / C`, with azimuth measured
/// clockwise seen from +z (the B1+ rotation sense), so the quadrature drive
/// `w_c = e^{i 2 pi c / C}` adds constructively at the center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoilArray {
    pub coils: usize,
    pub cylinder_diameter: f64,
    pub element_height: f64,
    pub element_width: f64,
    pub gap: f64,
    pub segments_per_loop: usize,
    pub current: f64,
}

impl Default for CoilArray {
    fn default() -> Self {
        Self {
            coils: 8,
            cylinder_diameter: 0.28,
            element_height: 0.16,
            element_width: 0.10,
            gap: 0.0099,
            segments_per_loop: 64,
            current: 1.0,
        }
    }
}

impl CoilArray {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.coils == 0 {
            return Err(SimError::Spec("coil.count must be >= 1".into()));
        }
        if self.segments_per_loop < 4 {
            return Err(SimError::Spec("coil.segments must be >= 4".into()));
        }
        for (name, v) in [
            ("coil.diameter", self.cylinder_diameter),
            ("coil.height", self.element_height),
            ("coil.width", self.element_width),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SimError::Spec(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.gap >= 0.0) {
            return Err(SimError::Spec(format!("coil.gap must be >= 0, got {}", self.gap)));
        }
        let circumference = PI * self.cylinder_diameter;
        let used = self.coils as f64 * (self.element_width + self.gap);
        if used > circumference {
            return Err(SimError::Spec(format!(
                "{} elements of width {} with gap {} need {used:.4} m, cylinder circumference is {circumference:.4} m",
                self.coils, self.element_width, self.gap
            )));
        }
        Ok(())
    }

    pub fn azimuth(&self, coil: usize) -> f64 {
        2.0 * PI * coil as f64 / self.coils as f64
    }

    /// Element center on the cylinder surface.
    pub fn center(&self, coil: usize) -> Vec3 {
        let r = 0.5 * self.cylinder_diameter;
        let phi = self.azimuth(coil);
        [r * phi.cos(), -r * phi.sin(), 0.0]
    }

    /// Straight-segment discretization of coil `coil`'s loop.
    pub fn segments(&self, coil: usize) -> Vec<Segment> {
        let phi = self.azimuth(coil);
        let p = self.center(coil);
        // In-plane axes: tangential u and axial z; the outward normal is u x z.
        let u = [phi.sin(), phi.cos(), 0.0];
        let z = [0.0, 0.0, 1.0];
        let (hw, hh) = (0.5 * self.element_width, 0.5 * self.element_height);
        let corner = |a: f64, b: f64| add(p, add(scale(u, a), scale(z, b)));
        let corners = [corner(-hw, -hh), corner(hw, -hh), corner(hw, hh), corner(-hw, hh)];
        rectangle_segments(&corners, self.segments_per_loop, self.current)
    }
}

/// A current element: midpoint and `I * dl`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub midpoint: Vec3,
    pub current_dl: Vec3,
}

/// Split a closed polygon into `total` segments, allocated to the sides in
/// proportion to their length (each side gets at least one).
fn rectangle_segments(corners: &[Vec3; 4], total: usize, current: f64) -> Vec<Segment> {
    let lengths: Vec<f64> = (0..4).map(|k| norm(sub(corners[(k + 1) % 4], corners[k]))).collect();
    let perimeter: f64 = lengths.iter().sum();
    let mut counts: Vec<usize> =
        lengths.iter().map(|l| ((l / perimeter) * total as f64).floor().max(1.0) as usize).collect();
    // Hand out the rounding remainder to the longest sides first.
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&a, &b| lengths[b].partial_cmp(&lengths[a]).unwrap().then(a.cmp(&b)));
    let mut k = 0;
    while counts.iter().sum::<usize>() < total {
        counts[order[k % 4]] += 1;
        k += 1;
    }
    let mut out = Vec::with_capacity(total);
    for side in 0..4 {
        let (a, b) = (corners[side], corners[(side + 1) % 4]);
        let n = counts[side];
        let step = scale(sub(b, a), 1.0 / n as f64);
        for s in 0..n {
            let mid = add(a, scale(step, s as f64 + 0.5));
            out.push(Segment { midpoint: mid, current_dl: scale(step, current) });
        }
    }
    out
}

/// Circular loop in the plane `z = center[2]`, counterclockwise about +z.
pub fn circular_loop(center: Vec3, radius: f64, segments: usize, current: f64) -> Vec<Segment> {
    let dphi = 2.0 * PI / segments as f64;
    (0..segments)
        .map(|k| {
            let a = dphi * k as f64;
            let b = a + dphi;
            let pa = [center[0] + radius * a.cos(), center[1] + radius * a.sin(), center[2]];
            let pb = [center[0] + radius * b.cos(), center[1] + radius * b.sin(), center[2]];
            Segment { midpoint: scale(add(pa, pb), 0.5), current_dl: scale(sub(pb, pa), current) }
        })
        .collect()
}

/// Field of a set of current elements at `point`, in tesla.
pub fn field_at(segments: &[Segment], point: Vec3) -> Vec3 {
    let mut b = [0.0; 3];
    for s in segments {
        let r = sub(point, s.midpoint);
        let d = norm(r).max(MIN_DISTANCE);
        let k = 1e-7 / (d * d * d);
        let c = cross(s.current_dl, r);
        b[0] += k * c[0];
        b[1] += k * c[1];
        b[2] += k * c[2];
    }
    b
}

/// Quasi-static field of one array element, as a complex 3-vector with zero
/// imaginary part.
pub fn biot_savart_field(array: &CoilArray, point: Vec3, coil: usize) -> [Complex64; 3] {
    let b = field_at(&array.segments(coil), point);
    b.map(|x| Complex64::new(x, 0.0))
}

/// Propagation surrogate applied on top of the quasi-static field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveModel {
    /// Effective wavelength in tissue, meters.
    pub lambda_eff: f64,
    pub attenuation_length: f64,
}

impl Default for WaveModel {
    fn default() -> Self {
        Self { lambda_eff: 0.12, attenuation_length: 0.25 }
    }
}

impl WaveModel {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.lambda_eff > 0.0) || !(self.attenuation_length > 0.0) {
            return Err(SimError::Spec(format!(
                "wave.lambda and wave.attenuation must be positive, got {} and {}",
                self.lambda_eff, self.attenuation_length
            )));
        }
        Ok(())
    }

    pub fn factor(&self, distance: f64) -> Complex64 {
        Complex64::from_polar((-distance / self.attenuation_length).exp(), -2.0 * PI * distance / self.lambda_eff)
    }
}

/// `(Bx + i By) / 2` times the propagation factor for `distance` meters.
pub fn b1_plus(field: [Complex64; 3], wave: &WaveModel, distance: f64) -> Complex64 {
    let i = Complex64::new(0.0, 1.0);
    let circular = (field[0] + i * field[1]) * 0.5;
    if distance == 0.0 {
        return circular;
    }
    circular * wave.factor(distance)
}

pub(crate) fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub(crate) fn norm(a: Vec3) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}
