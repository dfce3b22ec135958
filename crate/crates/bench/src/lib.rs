//! Shared fixtures for the benchmarks: simulated slices at a given grid size.

use shimkit::opt::{AdamConfig, RestartPolicy};
use shimkit::sim::{generate_volume, slice_and_mask, CoilArray, PhantomSpec, SliceSelection, WaveModel};
use shimkit::SliceSample;

/// Central slices of the default phantom on an `n x n x depth` grid.
pub fn slices(n: usize, depth: usize, keep: usize) -> Vec<SliceSample> {
    let fov = 0.28;
    let phantom = PhantomSpec { grid: (n, n, depth), voxel_size: [fov / n as f64, fov / n as f64, 0.16 / depth as f64], ..PhantomSpec::default() };
    let volume = generate_volume(&CoilArray::default(), &phantom, &WaveModel::default()).expect("default phantom is valid");
    let mut out = slice_and_mask(&volume, 0, SliceSelection { keep, min_mask_voxels: 16 }, 1e-3);
    for s in &mut out {
        s.quantize_f32();
    }
    out
}

/// Slices with quick reference weights, for loss and training benchmarks.
pub fn referenced(n: usize, keep: usize) -> Vec<SliceSample> {
    let policy = RestartPolicy { n_random: 4, ..RestartPolicy::default() };
    let mut out = slices(n, 8, keep);
    for s in &mut out {
        shimkit::opt::reference_weights(s, &AdamConfig::default(), &policy).expect("reference solve");
    }
    out
}
