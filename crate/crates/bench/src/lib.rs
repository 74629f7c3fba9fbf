//! Shared fixtures for the benchmarks: cheap deterministic frame pairs with
//! known flow, built without touching the filesystem.

use stillflow::features::{build_training_set, LabelKind, SamplingConfig, TrainingCorpus};
use stillflow::imagecore::{CannyParams, ImageBuffer};
use stillflow::FlowField;

/// Checkerboard pattern translated by a whole-pixel offset with wraparound.
/// The constant truth flow is exact everywhere except along the wrap seam,
/// which benchmarks do not care about.
pub fn shifted_pair(
    width: usize,
    height: usize,
    du: i64,
    dv: i64,
) -> (ImageBuffer, ImageBuffer, FlowField) {
    let texel = |x: i64, y: i64, c: usize| -> f64 {
        let x = x.rem_euclid(width as i64) as usize;
        let y = y.rem_euclid(height as i64) as usize;
        // Gray-level contrast must clear the default Canny thresholds.
        let on = (x / 7 + y / 7) % 2 == 0;
        match (on, c) {
            (true, 0) => 1.0,
            (true, 1) => 0.95,
            (true, _) => 0.9,
            (false, 0) => 0.05,
            (false, 1) => 0.05,
            (false, _) => 0.2,
        }
    };
    let a = ImageBuffer::from_fn(width, height, 3, |x, y, c| texel(x as i64, y as i64, c)).unwrap();
    let b = ImageBuffer::from_fn(width, height, 3, |x, y, c| {
        texel(x as i64 - du, y as i64 - dv, c)
    })
    .unwrap();
    let mut flow = FlowField::zeros(width, height);
    for y in 0..height {
        for x in 0..width {
            flow.set(x, y, du as f64, dv as f64);
        }
    }
    (a, b, flow)
}

/// Sampling setup used across the benchmarks.
pub fn sampling_config(patch_size: usize, max_per_frame: usize) -> SamplingConfig {
    SamplingConfig {
        patch_size: Some(patch_size),
        stride: 1,
        max_per_frame,
        canny: CannyParams::default(),
        label: LabelKind::Flow,
        seed: 1,
    }
}

/// A ready-to-train corpus over a handful of shifted pairs.
pub fn bench_corpus(pairs: usize, width: usize, height: usize) -> TrainingCorpus {
    let shifts = [(2, 0), (-2, 0), (0, 2), (0, -2)];
    let data: Vec<_> = (0..pairs)
        .map(|k| {
            let (du, dv) = shifts[k % shifts.len()];
            let (frame, _, flow) = shifted_pair(width, height, du, dv);
            (frame, flow)
        })
        .collect();
    build_training_set(&data, &sampling_config(9, 400)).unwrap()
}
