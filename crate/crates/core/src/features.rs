//! Appearance descriptors, motion labels and training-set assembly.
//!
//! The appearance descriptor is an opponent HOG over a square patch:
//! 2x2 spatial cells, 9 unsigned orientation bins and 3 opponent channels,
//! 108 values total. Layout: index = channel*36 + cell*9 + bin, cells in
//! row-major order (cell = cell_y*2 + cell_x). Gradients use plain
//! [-1, 0, 1] taps; orientation mass is split bilinearly between the two
//! nearest bin centers; each 36-value channel block is L2-normalized with
//! epsilon 1e-5. Motion labels are raw patch crops of a flow field (D=2)
//! or of its spatial derivatives (D=4).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::flowio::{flow_derivatives, FlowDerivativeField, FlowError, FlowField};
use crate::imagecore::{
    canny_edges, gradients, to_opponent, CannyParams, EdgeMask, GradientField, ImageBuffer,
    ImageError,
};
use crate::seed::derive_seed;

pub const DESCRIPTOR_LEN: usize = 108;
const CHANNEL_BLOCK: usize = 36;
const ORIENT_BINS: usize = 9;
const HOG_NORM_EPSILON: f64 = 1e-5;

/// Flow magnitude below which a pixel counts as not moving (HOF, pooling).
pub const DEFAULT_NO_MOTION_THRESHOLD: f64 = 0.25;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("patch size must be odd and at least 3, got {0}")]
    BadPatchSize(usize),
    #[error("patch centered at ({0}, {1}) with size {2} does not fit a {3}x{4} field")]
    PatchOutOfBounds(usize, usize, usize, usize, usize),
    #[error("descriptor must hold {DESCRIPTOR_LEN} finite non-negative values")]
    BadDescriptor,
    #[error("motion patch values must be finite, with pixels >= 1 and dims >= 1")]
    BadMotionPatch,
    #[error("region is empty or falls outside the {0}x{1} field")]
    BadRegion(usize, usize),
    #[error("stride must be at least 1")]
    BadStride,
    #[error("max samples must be at least 1")]
    BadMaxSamples,
    #[error("frame {0}: image is {1}x{2} but flow is {3}x{4}")]
    FrameFlowMismatch(usize, usize, usize, usize, usize),
    #[error("no edge-centered samples found in any frame")]
    NoEdgeSamples,
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Flow(#[from] FlowError),
}

/// Square odd-sized patch placement.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchGeometry {
    pub center_x: usize,
    pub center_y: usize,
    pub size: usize,
}

impl PatchGeometry {
    pub fn new(center_x: usize, center_y: usize, size: usize) -> Result<Self, FeatureError> {
        if size < 3 || size % 2 == 0 {
            return Err(FeatureError::BadPatchSize(size));
        }
        Ok(Self {
            center_x,
            center_y,
            size,
        })
    }

    pub fn half(&self) -> usize {
        self.size / 2
    }

    /// True when the whole patch lies inside a width x height field.
    pub fn fits(&self, width: usize, height: usize) -> bool {
        let half = self.half();
        self.center_x >= half
            && self.center_y >= half
            && self.center_x + half < width
            && self.center_y + half < height
    }

    fn check_fits(&self, width: usize, height: usize) -> Result<(), FeatureError> {
        if self.fits(width, height) {
            Ok(())
        } else {
            Err(FeatureError::PatchOutOfBounds(
                self.center_x,
                self.center_y,
                self.size,
                width,
                height,
            ))
        }
    }
}

/// Patch size rule: round(max(W, H) / 5), forced odd (even rounds up),
/// clamped to at least 3.
pub fn default_patch_size(width: usize, height: usize) -> usize {
    let raw = (width.max(height) as f64 / 5.0).round() as usize;
    let odd = if raw % 2 == 0 { raw + 1 } else { raw };
    odd.max(3)
}

/// 108-dimensional opponent HOG descriptor.
#[derive(Clone, Debug, PartialEq)]
pub struct AppearanceDescriptor {
    values: Box<[f64; DESCRIPTOR_LEN]>,
}

impl AppearanceDescriptor {
    pub fn new(values: Vec<f64>) -> Result<Self, FeatureError> {
        if values.len() != DESCRIPTOR_LEN || !values.iter().all(|v| v.is_finite() && *v >= 0.0) {
            return Err(FeatureError::BadDescriptor);
        }
        let boxed: Box<[f64; DESCRIPTOR_LEN]> = values
            .into_boxed_slice()
            .try_into()
            .expect("length checked");
        Ok(Self { values: boxed })
    }

    pub fn values(&self) -> &[f64; DESCRIPTOR_LEN] {
        &self.values
    }

    #[inline]
    pub fn get(&self, i: usize) -> f64 {
        self.values[i]
    }
}

/// Fixed-shape motion label: `pixels` patch positions by `dims` components,
/// stored row-major as values[pixel * dims + dim].
#[derive(Clone, Debug, PartialEq)]
pub struct MotionPatch {
    pixels: usize,
    dims: usize,
    values: Vec<f64>,
}

impl MotionPatch {
    pub fn new(pixels: usize, dims: usize, values: Vec<f64>) -> Result<Self, FeatureError> {
        if pixels == 0 || dims == 0 || values.len() != pixels * dims {
            return Err(FeatureError::BadMotionPatch);
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(FeatureError::BadMotionPatch);
        }
        Ok(Self {
            pixels,
            dims,
            values,
        })
    }

    pub fn pixels(&self) -> usize {
        self.pixels
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, pixel: usize, dim: usize) -> f64 {
        self.values[pixel * self.dims + dim]
    }

    pub fn same_shape(&self, other: &MotionPatch) -> bool {
        self.pixels == other.pixels && self.dims == other.dims
    }

    /// Rounds every value to its nearest f32, keeping f64 storage.
    pub fn quantize_f32(&mut self) {
        for v in &mut self.values {
            *v = f64::from(*v as f32);
        }
    }
}

/// Axis-aligned pixel rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    fn check_inside(&self, width: usize, height: usize) -> Result<(), FeatureError> {
        if self.width == 0
            || self.height == 0
            || self.x + self.width > width
            || self.y + self.height > height
        {
            return Err(FeatureError::BadRegion(width, height));
        }
        Ok(())
    }
}

/// Selects patch centers: edge pixels on a stride grid whose patch fits the
/// frame, in row-major order. When more than `max_samples` qualify, a seeded
/// uniform subsample is taken (original order preserved).
pub fn sample_patch_centers(
    edges: &EdgeMask,
    patch_size: usize,
    stride: usize,
    max_samples: usize,
    seed: u64,
) -> Result<Vec<PatchGeometry>, FeatureError> {
    if stride == 0 {
        return Err(FeatureError::BadStride);
    }
    if max_samples == 0 {
        return Err(FeatureError::BadMaxSamples);
    }
    if patch_size < 3 || patch_size % 2 == 0 {
        return Err(FeatureError::BadPatchSize(patch_size));
    }
    let (w, h) = (edges.width(), edges.height());
    let half = patch_size / 2;
    let mut centers = Vec::new();
    for y in (0..h).step_by(stride) {
        if y < half || y + half >= h {
            continue;
        }
        for x in (0..w).step_by(stride) {
            if x < half || x + half >= w {
                continue;
            }
            if edges.get(x, y) {
                centers.push(PatchGeometry {
                    center_x: x,
                    center_y: y,
                    size: patch_size,
                });
            }
        }
    }
    if centers.len() > max_samples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut keep = rand::seq::index::sample(&mut rng, centers.len(), max_samples).into_vec();
        keep.sort_unstable();
        centers = keep.into_iter().map(|i| centers[i]).collect();
    }
    Ok(centers)
}

/// Opponent HOG over one patch. Computes full-image gradients first; use
/// `extract_hog_from_gradients` to reuse them across patches.
pub fn extract_hog(
    opponent: &ImageBuffer,
    geometry: &PatchGeometry,
) -> Result<AppearanceDescriptor, FeatureError> {
    if opponent.channels() != 3 {
        return Err(FeatureError::Image(ImageError::NotColor));
    }
    let grads = gradients(opponent);
    extract_hog_from_gradients(&grads, geometry)
}

/// Opponent HOG from precomputed gradients.
pub fn extract_hog_from_gradients(
    grads: &GradientField,
    geometry: &PatchGeometry,
) -> Result<AppearanceDescriptor, FeatureError> {
    if grads.channels() != 3 {
        return Err(FeatureError::Image(ImageError::NotColor));
    }
    geometry.check_fits(grads.width(), grads.height())?;
    let size = geometry.size;
    let half = size / 2;
    let x0 = geometry.center_x - half;
    let y0 = geometry.center_y - half;
    let bin_width = std::f64::consts::PI / ORIENT_BINS as f64;
    let mut values = vec![0.0_f64; DESCRIPTOR_LEN];
    for c in 0..3 {
        let block = c * CHANNEL_BLOCK;
        for ly in 0..size {
            let cell_y = usize::from(ly >= half);
            for lx in 0..size {
                let cell_x = usize::from(lx >= half);
                let gx = grads.gx(x0 + lx, y0 + ly, c);
                let gy = grads.gy(x0 + lx, y0 + ly, c);
                let mag = (gx * gx + gy * gy).sqrt();
                if mag == 0.0 {
                    continue;
                }
                let mut theta = gy.atan2(gx);
                if theta < 0.0 {
                    theta += std::f64::consts::PI;
                }
                if theta >= std::f64::consts::PI {
                    theta = 0.0;
                }
                let pos = theta / bin_width - 0.5;
                let lower = pos.floor();
                let frac = pos - lower;
                let b0 = (lower as isize).rem_euclid(ORIENT_BINS as isize) as usize;
                let b1 = (b0 + 1) % ORIENT_BINS;
                let cell = (cell_y * 2 + cell_x) * ORIENT_BINS;
                values[block + cell + b0] += mag * (1.0 - frac);
                values[block + cell + b1] += mag * frac;
            }
        }
        let norm_sq: f64 = values[block..block + CHANNEL_BLOCK]
            .iter()
            .map(|v| v * v)
            .sum();
        let denom = (norm_sq + HOG_NORM_EPSILON * HOG_NORM_EPSILON).sqrt();
        for v in &mut values[block..block + CHANNEL_BLOCK] {
            *v /= denom;
        }
    }
    AppearanceDescriptor::new(values)
}

/// Anything a motion patch can be cropped from.
pub trait MotionSource {
    fn width(&self) -> usize;
    fn height(&self) -> usize;
    fn dims(&self) -> usize;
    fn component(&self, x: usize, y: usize, dim: usize) -> f64;
}

impl MotionSource for FlowField {
    fn width(&self) -> usize {
        self.width()
    }

    fn height(&self) -> usize {
        self.height()
    }

    fn dims(&self) -> usize {
        2
    }

    fn component(&self, x: usize, y: usize, dim: usize) -> f64 {
        match dim {
            0 => self.u(x, y),
            _ => self.v(x, y),
        }
    }
}

impl MotionSource for FlowDerivativeField {
    fn width(&self) -> usize {
        self.width()
    }

    fn height(&self) -> usize {
        self.height()
    }

    fn dims(&self) -> usize {
        4
    }

    fn component(&self, x: usize, y: usize, dim: usize) -> f64 {
        self.at(x, y)[dim]
    }
}

/// Crops the patch window out of a motion source, row-major pixels,
/// interleaved components.
pub fn extract_motion_patch<S: MotionSource>(
    source: &S,
    geometry: &PatchGeometry,
) -> Result<MotionPatch, FeatureError> {
    geometry.check_fits(source.width(), source.height())?;
    let size = geometry.size;
    let half = size / 2;
    let x0 = geometry.center_x - half;
    let y0 = geometry.center_y - half;
    let dims = source.dims();
    let mut values = Vec::with_capacity(size * size * dims);
    for ly in 0..size {
        for lx in 0..size {
            for d in 0..dims {
                values.push(source.component(x0 + lx, y0 + ly, d));
            }
        }
    }
    MotionPatch::new(size * size, dims, values)
}

/// Histogram of oriented flow over a region: 8 full-circle direction bins
/// weighted by magnitude, plus a final no-motion bin that counts pixels with
/// magnitude below `no_motion_threshold`. L1-normalized.
pub fn extract_hof(
    flow: &FlowField,
    region: &Rect,
    no_motion_threshold: f64,
) -> Result<[f64; 9], FeatureError> {
    region.check_inside(flow.width(), flow.height())?;
    if !(no_motion_threshold.is_finite() && no_motion_threshold >= 0.0) {
        return Err(FeatureError::BadRegion(flow.width(), flow.height()));
    }
    let mut hist = [0.0_f64; 9];
    let sector = std::f64::consts::PI / 4.0;
    for y in region.y..region.y + region.height {
        for x in region.x..region.x + region.width {
            let (u, v) = (flow.u(x, y), flow.v(x, y));
            let mag = (u * u + v * v).sqrt();
            if mag < no_motion_threshold {
                hist[8] += 1.0;
            } else {
                let mut theta = v.atan2(u);
                if theta < 0.0 {
                    theta += 2.0 * std::f64::consts::PI;
                }
                let bin = ((theta / sector) as usize).min(7);
                hist[bin] += mag;
            }
        }
    }
    let total: f64 = hist.iter().sum();
    if total > 0.0 {
        for v in &mut hist {
            *v /= total;
        }
    }
    Ok(hist)
}

/// Motion boundary histogram: 9 unsigned orientation bins over the gradient
/// of u and of v separately (hard binning), each half L2-normalized,
/// concatenated to 18 values.
pub fn extract_mbh(flow: &FlowField, region: &Rect) -> Result<[f64; 18], FeatureError> {
    region.check_inside(flow.width(), flow.height())?;
    let derivs = flow_derivatives(flow)?;
    let mut out = [0.0_f64; 18];
    let bin_width = std::f64::consts::PI / ORIENT_BINS as f64;
    let mut accumulate = |offset: usize, gx: f64, gy: f64| {
        let mag = (gx * gx + gy * gy).sqrt();
        if mag == 0.0 {
            return;
        }
        let mut theta = gy.atan2(gx);
        if theta < 0.0 {
            theta += std::f64::consts::PI;
        }
        if theta >= std::f64::consts::PI {
            theta = 0.0;
        }
        let bin = ((theta / bin_width) as usize).min(ORIENT_BINS - 1);
        out[offset + bin] += mag;
    };
    for y in region.y..region.y + region.height {
        for x in region.x..region.x + region.width {
            let [du_dx, du_dy, dv_dx, dv_dy] = derivs.at(x, y);
            accumulate(0, du_dx, du_dy);
            accumulate(9, dv_dx, dv_dy);
        }
    }
    for half in [0, 9] {
        let norm_sq: f64 = out[half..half + 9].iter().map(|v| v * v).sum();
        let denom = (norm_sq + HOG_NORM_EPSILON * HOG_NORM_EPSILON).sqrt();
        for v in &mut out[half..half + 9] {
            *v /= denom;
        }
    }
    Ok(out)
}

/// Label source for training: raw flow (D=2) or flow derivatives (D=4).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelKind {
    Flow,
    FlowDerivatives,
}

impl LabelKind {
    pub fn dims(&self) -> usize {
        match self {
            LabelKind::Flow => 2,
            LabelKind::FlowDerivatives => 4,
        }
    }
}

/// Controls per-frame sampling when building a training set.
#[derive(Clone, Debug)]
pub struct SamplingConfig {
    /// None applies the size rule to the first frame.
    pub patch_size: Option<usize>,
    pub stride: usize,
    pub max_per_frame: usize,
    pub canny: CannyParams,
    pub label: LabelKind,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            patch_size: None,
            stride: 1,
            max_per_frame: 500,
            canny: CannyParams::default(),
            label: LabelKind::Flow,
            seed: 0,
        }
    }
}

/// One appearance-to-motion training example.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    pub descriptor: AppearanceDescriptor,
    pub motion: MotionPatch,
    pub geometry: PatchGeometry,
    /// Index of the originating frame pair.
    pub source_id: u32,
}

/// Contiguous slice of corpus samples coming from one frame pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairSpan {
    pub source_id: u32,
    pub start: usize,
    pub len: usize,
}

/// Flat sample store plus per-pair spans, ready for per-tree pair draws.
#[derive(Clone, Debug)]
pub struct TrainingCorpus {
    pub patch_size: usize,
    pub label_dims: usize,
    pub samples: Vec<TrainingSample>,
    pub pairs: Vec<PairSpan>,
}

impl TrainingCorpus {
    pub fn indices_for_pairs(&self, pair_ids: &[usize]) -> Vec<u32> {
        let mut out = Vec::new();
        for &p in pair_ids {
            let span = self.pairs[p];
            out.extend((span.start..span.start + span.len).map(|i| i as u32));
        }
        out
    }
}

/// Builds training samples from (frame, flow) pairs: Canny edges on the
/// frame pick patch centers, opponent HOG describes appearance, and the
/// motion patch is cropped from the flow (or its derivatives for D=4).
/// Per-pair subsampling seeds derive from `cfg.seed` and the pair index,
/// so output order is deterministic: pairs in input order, centers row-major.
pub fn build_training_set(
    pairs: &[(ImageBuffer, FlowField)],
    cfg: &SamplingConfig,
) -> Result<TrainingCorpus, FeatureError> {
    if let Some(size) = cfg.patch_size {
        if size < 3 || size % 2 == 0 {
            return Err(FeatureError::BadPatchSize(size));
        }
    }
    let mut patch_size = cfg.patch_size;
    let label_dims = cfg.label.dims();
    let mut samples = Vec::new();
    let mut spans = Vec::new();
    for (idx, (frame, flow)) in pairs.iter().enumerate() {
        if frame.width() != flow.width() || frame.height() != flow.height() {
            return Err(FeatureError::FrameFlowMismatch(
                idx,
                frame.width(),
                frame.height(),
                flow.width(),
                flow.height(),
            ));
        }
        let size =
            *patch_size.get_or_insert_with(|| default_patch_size(frame.width(), frame.height()));
        let opponent = to_opponent(frame)?;
        let grads = gradients(&opponent);
        let edges = canny_edges(frame, &cfg.canny)?;
        let centers = sample_patch_centers(
            &edges,
            size,
            cfg.stride,
            cfg.max_per_frame,
            derive_seed(cfg.seed, idx as u64),
        )?;
        let derivs = match cfg.label {
            LabelKind::Flow => None,
            LabelKind::FlowDerivatives => Some(flow_derivatives(flow)?),
        };
        let start = samples.len();
        for geometry in centers {
            let descriptor = extract_hog_from_gradients(&grads, &geometry)?;
            let motion = match &derivs {
                None => extract_motion_patch(flow, &geometry)?,
                Some(d) => extract_motion_patch(d, &geometry)?,
            };
            samples.push(TrainingSample {
                descriptor,
                motion,
                geometry,
                source_id: idx as u32,
            });
        }
        spans.push(PairSpan {
            source_id: idx as u32,
            start,
            len: samples.len() - start,
        });
    }
    if samples.is_empty() {
        return Err(FeatureError::NoEdgeSamples);
    }
    Ok(TrainingCorpus {
        patch_size: patch_size.expect("set by first pair"),
        label_dims,
        samples,
        pairs: spans,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured_frame(w: usize, h: usize) -> ImageBuffer {
        ImageBuffer::from_fn(w, h, 3, |x, y, c| {
            if (x / 6 + y / 6) % 2 == 0 {
                [1.0, 0.9, 0.3][c]
            } else {
                [0.0, 0.1, 0.6][c]
            }
        })
        .unwrap()
    }

    /// Edge thresholds suited to the moderate-contrast test texture.
    fn test_canny() -> CannyParams {
        CannyParams {
            sigma: 1.4,
            low: 0.04,
            high: 0.1,
        }
    }

    #[test]
    fn patch_size_rule() {
        assert_eq!(default_patch_size(300, 240), 61);
        assert_eq!(default_patch_size(100, 100), 21);
        assert_eq!(default_patch_size(48, 48), 11);
        assert_eq!(default_patch_size(50, 40), 11);
        assert_eq!(default_patch_size(5, 5), 3);
    }

    #[test]
    fn centers_empty_mask_yields_nothing() {
        let edges = EdgeMask::filled(9, 9, false).unwrap();
        let centers = sample_patch_centers(&edges, 3, 1, 100, 0).unwrap();
        assert!(centers.is_empty());
    }

    #[test]
    fn centers_full_mask_counts_interior() {
        let edges = EdgeMask::filled(9, 9, true).unwrap();
        let centers = sample_patch_centers(&edges, 3, 1, 1000, 0).unwrap();
        assert_eq!(centers.len(), 49);
        assert_eq!(
            centers[0],
            PatchGeometry {
                center_x: 1,
                center_y: 1,
                size: 3
            }
        );
        // Row-major order.
        let mut sorted = centers.clone();
        sorted.sort_by_key(|g| (g.center_y, g.center_x));
        assert_eq!(centers, sorted);
    }

    #[test]
    fn centers_subsample_is_deterministic_and_capped() {
        let edges = EdgeMask::filled(15, 15, true).unwrap();
        let a = sample_patch_centers(&edges, 3, 1, 20, 7).unwrap();
        let b = sample_patch_centers(&edges, 3, 1, 20, 7).unwrap();
        let c = sample_patch_centers(&edges, 3, 1, 20, 8).unwrap();
        assert_eq!(a.len(), 20);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn centers_respect_stride() {
        let edges = EdgeMask::filled(13, 13, true).unwrap();
        let centers = sample_patch_centers(&edges, 3, 2, 1000, 0).unwrap();
        assert!(centers
            .iter()
            .all(|g| g.center_x % 2 == 0 && g.center_y % 2 == 0));
    }

    #[test]
    fn centers_reject_oversized_patch() {
        let edges = EdgeMask::filled(5, 5, true).unwrap();
        let centers = sample_patch_centers(&edges, 7, 1, 10, 0).unwrap();
        assert!(centers.is_empty());
    }

    #[test]
    fn hog_constant_patch_is_zero() {
        let img = ImageBuffer::from_fn(11, 11, 3, |_, _, c| [0.3, 0.5, 0.7][c]).unwrap();
        let g = PatchGeometry::new(5, 5, 9).unwrap();
        let d = extract_hog(&img, &g).unwrap();
        assert!(d.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hog_horizontal_boundary_fills_90_degree_bin() {
        // Dark top, bright bottom: gradients point down, orientation 90 deg.
        let img = ImageBuffer::from_fn(13, 13, 3, |_, y, _| if y < 6 { 0.1 } else { 0.9 }).unwrap();
        let g = PatchGeometry::new(6, 6, 11).unwrap();
        let d = extract_hog(&to_opponent(&img).unwrap(), &g).unwrap();
        for c in 0..3 {
            for cell in 0..4 {
                let base = c * CHANNEL_BLOCK + cell * ORIENT_BINS;
                let block = &d.values()[base..base + ORIENT_BINS];
                let total: f64 = block.iter().sum();
                if total > 1e-9 {
                    // Bin 4 covers [80, 100) degrees.
                    assert!(
                        block[4] / total > 0.999,
                        "channel {c} cell {cell}: {block:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn hog_blocks_stay_normalized() {
        let img = to_opponent(&textured_frame(21, 21)).unwrap();
        let g = PatchGeometry::new(10, 10, 15).unwrap();
        let d = extract_hog(&img, &g).unwrap();
        assert!(d.values().iter().all(|&v| v >= 0.0));
        for c in 0..3 {
            let norm: f64 = d.values()[c * CHANNEL_BLOCK..(c + 1) * CHANNEL_BLOCK]
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            assert!(norm <= 1.0 + 1e-6);
        }
    }

    #[test]
    fn hog_invariant_to_channel_offset() {
        let base = textured_frame(15, 15);
        let opponent = to_opponent(&base).unwrap();
        let shifted = ImageBuffer::from_fn(15, 15, 3, |x, y, c| {
            (opponent.get(x, y, c) * 0.5 + 0.25).clamp(0.0, 1.0)
        })
        .unwrap();
        let plain = ImageBuffer::from_fn(15, 15, 3, |x, y, c| opponent.get(x, y, c) * 0.5).unwrap();
        let g = PatchGeometry::new(7, 7, 11).unwrap();
        let a = extract_hog(&plain, &g).unwrap();
        let b = extract_hog(&shifted, &g).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn hog_rejects_out_of_bounds_and_tiny_patches() {
        let img = to_opponent(&textured_frame(9, 9)).unwrap();
        assert!(matches!(
            extract_hog(&img, &PatchGeometry::new(1, 4, 5).unwrap()),
            Err(FeatureError::PatchOutOfBounds(..))
        ));
        assert!(matches!(
            PatchGeometry::new(4, 4, 4),
            Err(FeatureError::BadPatchSize(4))
        ));
    }

    #[test]
    fn motion_patch_crop_matches_indexing() {
        let n = 9 * 9;
        let u: Vec<f64> = (0..n).map(|i| i as f64 * 0.5).collect();
        let v: Vec<f64> = (0..n).map(|i| 100.0 - i as f64).collect();
        let flow = FlowField::new(9, 9, u, v).unwrap();
        let g = PatchGeometry::new(4, 3, 3).unwrap();
        let p = extract_motion_patch(&flow, &g).unwrap();
        assert_eq!((p.pixels(), p.dims()), (9, 2));
        for ly in 0..3 {
            for lx in 0..3 {
                let (x, y) = (3 + lx, 2 + ly);
                let pix = ly * 3 + lx;
                assert_eq!(p.get(pix, 0), flow.u(x, y));
                assert_eq!(p.get(pix, 1), flow.v(x, y));
            }
        }
    }

    #[test]
    fn motion_patch_from_derivatives_has_four_dims() {
        let flow = FlowField::new(
            7,
            7,
            (0..49).map(|i| (i % 7) as f64).collect(),
            (0..49).map(|i| (i / 7) as f64 * 2.0).collect(),
        )
        .unwrap();
        let derivs = flow_derivatives(&flow).unwrap();
        let g = PatchGeometry::new(3, 3, 3).unwrap();
        let p = extract_motion_patch(&derivs, &g).unwrap();
        assert_eq!((p.pixels(), p.dims()), (9, 4));
        // u = x so du/dx = 1; v = 2y so dv/dy = 2.
        for pix in 0..9 {
            assert!((p.get(pix, 0) - 1.0).abs() < 1e-12);
            assert!(p.get(pix, 1).abs() < 1e-12);
            assert!(p.get(pix, 2).abs() < 1e-12);
            assert!((p.get(pix, 3) - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_flow_yields_constant_patches() {
        let flow = FlowField::new(9, 9, vec![1.25; 81], vec![-0.5; 81]).unwrap();
        let g = PatchGeometry::new(4, 4, 5).unwrap();
        let p = extract_motion_patch(&flow, &g).unwrap();
        for pix in 0..p.pixels() {
            assert_eq!(p.get(pix, 0), 1.25);
            assert_eq!(p.get(pix, 1), -0.5);
        }
    }

    #[test]
    fn hof_zero_region_is_a_no_motion_spike() {
        let flow = FlowField::zeros(6, 6);
        let h = extract_hof(
            &flow,
            &Rect {
                x: 1,
                y: 1,
                width: 4,
                height: 4,
            },
            DEFAULT_NO_MOTION_THRESHOLD,
        )
        .unwrap();
        assert_eq!(h[8], 1.0);
        assert!(h[..8].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hof_uniform_flow_hits_first_bin() {
        let flow = FlowField::new(5, 5, vec![1.0; 25], vec![0.0; 25]).unwrap();
        let h = extract_hof(
            &flow,
            &Rect {
                x: 0,
                y: 0,
                width: 5,
                height: 5,
            },
            DEFAULT_NO_MOTION_THRESHOLD,
        )
        .unwrap();
        assert!((h[0] - 1.0).abs() < 1e-12);
        let sum: f64 = h.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hof_sums_to_one_on_mixed_regions() {
        let mut flow = FlowField::zeros(6, 6);
        flow.set(2, 2, 3.0, 1.0);
        flow.set(3, 3, -2.0, -2.0);
        let h = extract_hof(
            &flow,
            &Rect {
                x: 0,
                y: 0,
                width: 6,
                height: 6,
            },
            DEFAULT_NO_MOTION_THRESHOLD,
        )
        .unwrap();
        let sum: f64 = h.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(h[8] > 0.0);
    }

    #[test]
    fn hof_rejects_bad_region() {
        let flow = FlowField::zeros(4, 4);
        let r = Rect {
            x: 2,
            y: 2,
            width: 4,
            height: 1,
        };
        assert!(matches!(
            extract_hof(&flow, &r, 0.25),
            Err(FeatureError::BadRegion(..))
        ));
    }

    #[test]
    fn mbh_constant_flow_is_zero() {
        let flow = FlowField::new(6, 6, vec![2.0; 36], vec![-3.0; 36]).unwrap();
        let m = extract_mbh(
            &flow,
            &Rect {
                x: 0,
                y: 0,
                width: 6,
                height: 6,
            },
        )
        .unwrap();
        assert!(m.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mbh_u_ramp_mass_in_horizontal_gradient_bin() {
        let flow = FlowField::new(
            7,
            7,
            (0..49).map(|i| (i % 7) as f64).collect(),
            vec![0.0; 49],
        )
        .unwrap();
        let m = extract_mbh(
            &flow,
            &Rect {
                x: 0,
                y: 0,
                width: 7,
                height: 7,
            },
        )
        .unwrap();
        let u_half: f64 = m[..9].iter().sum();
        assert!((m[0] - u_half).abs() < 1e-12, "u half: {:?}", &m[..9]);
        assert!(m[0] > 0.9);
        assert!(m[9..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn build_training_set_is_deterministic() {
        let frame = textured_frame(24, 24);
        let flow = FlowField::new(24, 24, vec![2.0; 576], vec![0.0; 576]).unwrap();
        let pairs = vec![(frame.clone(), flow.clone()), (frame, flow)];
        let cfg = SamplingConfig {
            patch_size: Some(5),
            max_per_frame: 30,
            canny: test_canny(),
            seed: 11,
            ..SamplingConfig::default()
        };
        let a = build_training_set(&pairs, &cfg).unwrap();
        let b = build_training_set(&pairs, &cfg).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.pairs, b.pairs);
        assert!(a.samples.len() <= 60);
        assert_eq!(a.patch_size, 5);
        assert_eq!(a.label_dims, 2);
        assert!(a.pairs.len() == 2 && a.pairs[1].source_id == 1);
    }

    #[test]
    fn training_samples_have_constant_motion_on_constant_flow() {
        let frame = textured_frame(24, 24);
        let flow = FlowField::new(24, 24, vec![1.5; 576], vec![-0.75; 576]).unwrap();
        let cfg = SamplingConfig {
            patch_size: Some(5),
            canny: test_canny(),
            ..SamplingConfig::default()
        };
        let corpus = build_training_set(&[(frame, flow)], &cfg).unwrap();
        assert!(!corpus.samples.is_empty());
        for s in &corpus.samples {
            for pix in 0..s.motion.pixels() {
                assert_eq!(s.motion.get(pix, 0), 1.5);
                assert_eq!(s.motion.get(pix, 1), -0.75);
            }
        }
    }

    #[test]
    fn training_descriptors_recompute_bit_identical() {
        let frame = textured_frame(20, 20);
        let flow = FlowField::zeros(20, 20);
        let cfg = SamplingConfig {
            patch_size: Some(7),
            max_per_frame: 25,
            canny: test_canny(),
            ..SamplingConfig::default()
        };
        let corpus = build_training_set(&[(frame.clone(), flow)], &cfg).unwrap();
        let opponent = to_opponent(&frame).unwrap();
        for s in &corpus.samples {
            let again = extract_hog(&opponent, &s.geometry).unwrap();
            assert_eq!(&s.descriptor, &again);
        }
    }

    #[test]
    fn build_training_set_errors_without_edges() {
        let frame = ImageBuffer::from_fn(16, 16, 3, |_, _, _| 0.5).unwrap();
        let flow = FlowField::zeros(16, 16);
        let cfg = SamplingConfig::default();
        assert!(matches!(
            build_training_set(&[(frame, flow)], &cfg),
            Err(FeatureError::NoEdgeSamples)
        ));
    }

    #[test]
    fn build_training_set_rejects_mismatched_dims() {
        let frame = textured_frame(16, 16);
        let flow = FlowField::zeros(17, 16);
        assert!(matches!(
            build_training_set(&[(frame, flow)], &SamplingConfig::default()),
            Err(FeatureError::FrameFlowMismatch(0, 16, 16, 17, 16))
        ));
    }

    #[test]
    fn derivative_labels_have_dims_four() {
        let frame = textured_frame(24, 24);
        let flow = FlowField::new(
            24,
            24,
            (0..576).map(|i| (i % 24) as f64 * 0.1).collect(),
            vec![0.0; 576],
        )
        .unwrap();
        let cfg = SamplingConfig {
            patch_size: Some(5),
            label: LabelKind::FlowDerivatives,
            canny: test_canny(),
            ..SamplingConfig::default()
        };
        let corpus = build_training_set(&[(frame, flow)], &cfg).unwrap();
        assert_eq!(corpus.label_dims, 4);
        assert!(corpus.samples.iter().all(|s| s.motion.dims() == 4));
    }
}
