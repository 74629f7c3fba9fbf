//! Flow-based pooling: each grid location lands in exactly one of nine
//! pools. Pool 0 holds near-zero predictions; the rest combine the flow
//! angle's quadrant with a two-way magnitude band around a split point
//! (by default the median nonzero magnitude of the grid).

use serde::Serialize;
use std::f64::consts::FRAC_PI_2;
use std::f64::consts::TAU;
use stillflow::features::DEFAULT_NO_MOTION_THRESHOLD;
use stillflow::{FlowField, ImageBuffer};

pub const ZERO_POOL_THRESHOLD: f64 = DEFAULT_NO_MOTION_THRESHOLD;
pub const POOL_COUNT: usize = 9;

#[derive(Clone, Debug)]
pub struct PoolGrid {
    /// Row-major patch centers, as produced by `grid_centers`.
    pub centers: Vec<(usize, usize)>,
    pub cols: usize,
    pub stride: usize,
    pub pools: Vec<usize>,
    /// Magnitude separating the two bands; infinite when nothing moves.
    pub band_split: f64,
}

impl PoolGrid {
    pub fn histogram(&self) -> [usize; POOL_COUNT] {
        let mut counts = [0usize; POOL_COUNT];
        for &p in &self.pools {
            counts[p] += 1;
        }
        counts
    }
}

/// Patch centers that fit the image, on a regular grid. Matches the layout
/// dense prediction uses, so every center has a predicted vector under it.
pub fn grid_centers(
    width: usize,
    height: usize,
    patch_size: usize,
    stride: usize,
) -> Vec<(usize, usize)> {
    let half = patch_size / 2;
    let mut centers = Vec::new();
    let mut cy = half;
    while cy + half < height {
        let mut cx = half;
        while cx + half < width {
            centers.push((cx, cy));
            cx += stride;
        }
        cy += stride;
    }
    centers
}

/// Quadrant of the flow direction: 0 covers [0, π/2) and so on around the
/// circle.
pub fn quadrant(u: f64, v: f64) -> usize {
    let mut theta = v.atan2(u);
    if theta < 0.0 {
        theta += TAU;
    }
    ((theta / FRAC_PI_2) as usize).min(3)
}

/// Upper median of the magnitudes at or above the zero-pool threshold.
fn median_nonzero(mags: &[f64]) -> Option<f64> {
    let mut moving: Vec<f64> = mags
        .iter()
        .copied()
        .filter(|m| *m >= ZERO_POOL_THRESHOLD)
        .collect();
    if moving.is_empty() {
        return None;
    }
    moving.sort_unstable_by(f64::total_cmp);
    Some(moving[moving.len() / 2])
}

pub fn assign(
    flow: &FlowField,
    centers: &[(usize, usize)],
    cols: usize,
    stride: usize,
    band_split: Option<f64>,
) -> PoolGrid {
    let mags: Vec<f64> = centers.iter().map(|&(x, y)| flow.magnitude(x, y)).collect();
    let split = band_split
        .or_else(|| median_nonzero(&mags))
        .unwrap_or(f64::INFINITY);
    let pools = centers
        .iter()
        .zip(&mags)
        .map(|(&(x, y), &mag)| {
            if mag < ZERO_POOL_THRESHOLD {
                0
            } else {
                let band = usize::from(mag >= split);
                1 + quadrant(flow.u(x, y), flow.v(x, y)) * 2 + band
            }
        })
        .collect();
    PoolGrid {
        centers: centers.to_vec(),
        cols,
        stride,
        pools,
        band_split: split,
    }
}

/// One fixed, clearly distinguishable color per pool.
pub fn pool_color(pool: usize) -> [f64; 3] {
    const PALETTE: [[f64; 3]; POOL_COUNT] = [
        [0.25, 0.25, 0.25],
        [0.90, 0.10, 0.10],
        [1.00, 0.55, 0.00],
        [0.95, 0.90, 0.10],
        [0.10, 0.80, 0.10],
        [0.00, 0.80, 0.80],
        [0.15, 0.30, 0.95],
        [0.60, 0.15, 0.85],
        [0.95, 0.45, 0.75],
    ];
    PALETTE[pool]
}

/// Paints every pixel with the pool of its nearest grid location.
pub fn render_pool_map(width: usize, height: usize, grid: &PoolGrid) -> ImageBuffer {
    let rows = grid.centers.len() / grid.cols.max(1);
    let (first_x, first_y) = grid.centers.first().copied().unwrap_or((0, 0));
    let nearest_index = |p: usize, first: usize, count: usize| -> usize {
        if count == 0 {
            return 0;
        }
        let offset = p as i64 - first as i64 + grid.stride as i64 / 2;
        (offset / grid.stride as i64).clamp(0, count as i64 - 1) as usize
    };
    ImageBuffer::from_fn(width, height, 3, |x, y, c| {
        let col = nearest_index(x, first_x, grid.cols);
        let row = nearest_index(y, first_y, rows);
        pool_color(grid.pools[row * grid.cols + col])[c]
    })
    .expect("pool map dimensions come from a valid image")
}

/// Per-pool aggregates written by the pool command.
#[derive(Serialize, Debug)]
pub struct PoolSummary {
    pub id: usize,
    pub count: usize,
    pub hog: Vec<f64>,
    pub hof: Vec<f64>,
    pub mbh: Vec<f64>,
}

#[derive(Serialize, Debug)]
pub struct PoolReport {
    pub n_pools: usize,
    pub grid_stride: usize,
    pub patch_size: usize,
    pub locations: usize,
    pub band_split: Option<f64>,
    pub histogram: Vec<usize>,
    pub pools: Vec<PoolSummary>,
}
