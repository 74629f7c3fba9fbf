//! Camera-motion estimation and compensation: Harris corners, ZNCC patch
//! matching between consecutive frames, robust affine fitting and removal of
//! the fitted global motion from a flow field.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::flowio::{FlowError, FlowField};
use crate::imagecore::{gaussian_blur_plane, sobel_plane, ImageBuffer, ImageError};

#[derive(Debug, Error)]
pub enum CameraError {
    #[error("bad parameter: {0}")]
    BadParameter(String),
    #[error("need at least 3 matches, got {0}")]
    NotEnoughMatches(usize),
    #[error("no affine model reached a 3-inlier consensus")]
    NoConsensus,
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Flow(#[from] FlowError),
}

/// Harris corner detection settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HarrisParams {
    pub k: f64,
    /// Gaussian window over the gradient products.
    pub sigma: f64,
    /// Chebyshev radius for non-maximum suppression.
    pub nms_radius: usize,
    /// Keep responses at least this fraction of the maximum.
    pub quality: f64,
    pub max_corners: usize,
}

impl Default for HarrisParams {
    fn default() -> Self {
        Self {
            k: 0.04,
            sigma: 1.5,
            nms_radius: 5,
            quality: 0.01,
            max_corners: 200,
        }
    }
}

impl HarrisParams {
    fn validate(&self) -> Result<(), CameraError> {
        if !(self.k.is_finite() && self.k > 0.0) {
            return Err(CameraError::BadParameter("k must be positive".into()));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(CameraError::BadParameter("sigma must be positive".into()));
        }
        if !(self.quality.is_finite() && (0.0..=1.0).contains(&self.quality)) {
            return Err(CameraError::BadParameter(
                "quality must be in [0, 1]".into(),
            ));
        }
        if self.max_corners == 0 {
            return Err(CameraError::BadParameter(
                "max_corners must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Harris corners: response R = det(M) - k * trace(M)^2 over Gaussian-
/// weighted Sobel gradient products, thresholded at `quality` times the
/// maximum response, locally maximal within the NMS radius. Returns up to
/// `max_corners` positions, strongest first (ties by row-major position).
pub fn detect_corners(
    img: &ImageBuffer,
    params: &HarrisParams,
) -> Result<Vec<(usize, usize)>, CameraError> {
    params.validate()?;
    let (w, h) = (img.width(), img.height());
    let gray = img.to_gray();
    let (ix, iy) = sobel_plane(gray.data(), w, h);
    let n = w * h;
    let mut ixx = vec![0.0; n];
    let mut iyy = vec![0.0; n];
    let mut ixy = vec![0.0; n];
    for i in 0..n {
        ixx[i] = ix[i] * ix[i];
        iyy[i] = iy[i] * iy[i];
        ixy[i] = ix[i] * iy[i];
    }
    let sxx = gaussian_blur_plane(&ixx, w, h, params.sigma);
    let syy = gaussian_blur_plane(&iyy, w, h, params.sigma);
    let sxy = gaussian_blur_plane(&ixy, w, h, params.sigma);
    let mut response = vec![0.0; n];
    let mut max_r: f64 = 0.0;
    for i in 0..n {
        let det = sxx[i] * syy[i] - sxy[i] * sxy[i];
        let tr = sxx[i] + syy[i];
        response[i] = det - params.k * tr * tr;
        max_r = max_r.max(response[i]);
    }
    if max_r <= 0.0 {
        return Ok(Vec::new());
    }
    let threshold = params.quality * max_r;
    let radius = params.nms_radius as isize;
    let mut corners: Vec<(usize, usize, f64)> = Vec::new();
    for y in 0..h {
        'pixel: for x in 0..w {
            let r = response[y * w + x];
            if r < threshold {
                continue;
            }
            for dy in -radius..=radius {
                let ny = y as isize + dy;
                if ny < 0 || ny >= h as isize {
                    continue;
                }
                for dx in -radius..=radius {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let nx = x as isize + dx;
                    if nx < 0 || nx >= w as isize {
                        continue;
                    }
                    let other = response[ny as usize * w + nx as usize];
                    // Ties keep the earlier pixel in row-major order.
                    if other > r || (other == r && (ny as usize, nx as usize) < (y, x)) {
                        continue 'pixel;
                    }
                }
            }
            corners.push((x, y, r));
        }
    }
    corners.sort_by(|a, b| {
        b.2.total_cmp(&a.2)
            .then_with(|| (a.1, a.0).cmp(&(b.1, b.0)))
    });
    corners.truncate(params.max_corners);
    Ok(corners.into_iter().map(|(x, y, _)| (x, y)).collect())
}

/// Patch matching settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchParams {
    /// Odd correlation window side.
    pub window: usize,
    /// Search displacement limit per axis.
    pub search_radius: usize,
    /// Smallest accepted correlation.
    pub min_zncc: f64,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self {
            window: 9,
            search_radius: 15,
            min_zncc: 0.8,
        }
    }
}

/// One accepted correspondence between two frames.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointMatch {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub score: f64,
}

fn window_stats(plane: &[f64], w: usize, x0: usize, y0: usize, side: usize) -> (Vec<f64>, f64) {
    let mut vals = Vec::with_capacity(side * side);
    let mut mean = 0.0;
    for y in y0..y0 + side {
        for x in x0..x0 + side {
            let v = plane[y * w + x];
            vals.push(v);
            mean += v;
        }
    }
    mean /= (side * side) as f64;
    let mut norm_sq = 0.0;
    for v in &mut vals {
        *v -= mean;
        norm_sq += *v * *v;
    }
    (vals, norm_sq)
}

/// Matches corner points of frame `a` into frame `b` by exhaustive
/// zero-normalized cross-correlation over a square search range. Corners
/// whose window leaves the frame are skipped; flat windows never match.
/// The best displacement wins (ties keep the earliest in row-major scan
/// order of the displacement grid) and must score at least `min_zncc`.
pub fn match_points(
    a: &ImageBuffer,
    b: &ImageBuffer,
    corners: &[(usize, usize)],
    params: &MatchParams,
) -> Result<Vec<PointMatch>, CameraError> {
    if params.window < 3 || params.window % 2 == 0 {
        return Err(CameraError::BadParameter(
            "window must be odd and at least 3".into(),
        ));
    }
    if !(params.min_zncc.is_finite() && (-1.0..=1.0).contains(&params.min_zncc)) {
        return Err(CameraError::BadParameter(
            "min_zncc must be in [-1, 1]".into(),
        ));
    }
    if a.width() != b.width() || a.height() != b.height() {
        return Err(CameraError::Image(ImageError::DimensionMismatch(
            a.width(),
            a.height(),
            b.width(),
            b.height(),
        )));
    }
    let (w, h) = (a.width(), a.height());
    let ga = a.to_gray();
    let gb = b.to_gray();
    let half = params.window / 2;
    let r = params.search_radius as isize;
    let mut matches = Vec::new();
    for &(cx, cy) in corners {
        if cx < half || cy < half || cx + half >= w || cy + half >= h {
            continue;
        }
        let (pa, na) = window_stats(ga.data(), w, cx - half, cy - half, params.window);
        if na < 1e-12 {
            continue;
        }
        let mut best: Option<(f64, isize, isize)> = None;
        for dy in -r..=r {
            let ty = cy as isize + dy;
            if ty < half as isize || ty + half as isize >= h as isize {
                continue;
            }
            for dx in -r..=r {
                let tx = cx as isize + dx;
                if tx < half as isize || tx + half as isize >= w as isize {
                    continue;
                }
                let (pb, nb) = window_stats(
                    gb.data(),
                    w,
                    tx as usize - half,
                    ty as usize - half,
                    params.window,
                );
                if nb < 1e-12 {
                    continue;
                }
                let dot: f64 = pa.iter().zip(&pb).map(|(x, y)| x * y).sum();
                let score = dot / (na * nb).sqrt();
                if best.map_or(true, |(s, _, _)| score > s) {
                    best = Some((score, dx, dy));
                }
            }
        }
        if let Some((score, dx, dy)) = best {
            if score >= params.min_zncc {
                matches.push(PointMatch {
                    x1: cx as f64,
                    y1: cy as f64,
                    x2: (cx as isize + dx) as f64,
                    y2: (cy as isize + dy) as f64,
                    score,
                });
            }
        }
    }
    Ok(matches)
}

/// 2D affine map (x, y) -> (a x + b y + c, d x + e y + f).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineModel {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub f: f64,
}

impl AffineModel {
    pub fn identity() -> Self {
        Self {
            a: 1.0,
            b: 0.0,
            c: 0.0,
            d: 0.0,
            e: 1.0,
            f: 0.0,
        }
    }

    #[inline]
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.a * x + self.b * y + self.c,
            self.d * x + self.e * y + self.f,
        )
    }

    pub fn det(&self) -> f64 {
        self.a * self.e - self.b * self.d
    }

    /// A usable model has finite coefficients and is not collapsed.
    pub fn is_valid(&self) -> bool {
        let vals = [self.a, self.b, self.c, self.d, self.e, self.f];
        vals.iter().all(|v| v.is_finite()) && self.det().abs() > 1e-6
    }
}

/// Gaussian elimination with partial pivoting on a 3x3 system.
fn solve3(mut m: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[pivot][col].abs() < 1e-12 {
            return None;
        }
        m.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..3 {
            let factor = m[row][col] / m[col][col];
            for k in col..3 {
                m[row][k] -= factor * m[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let mut acc = b[row];
        for k in row + 1..3 {
            acc -= m[row][k] * x[k];
        }
        x[row] = acc / m[row][row];
    }
    Some(x)
}

fn fit_exact(matches: &[PointMatch], ids: &[usize]) -> Option<AffineModel> {
    let m = |r: usize| {
        let p = &matches[ids[r]];
        [p.x1, p.y1, 1.0]
    };
    let mat = [m(0), m(1), m(2)];
    let bx = [matches[ids[0]].x2, matches[ids[1]].x2, matches[ids[2]].x2];
    let by = [matches[ids[0]].y2, matches[ids[1]].y2, matches[ids[2]].y2];
    let [a, b, c] = solve3(mat, bx)?;
    let [d, e, f] = solve3(mat, by)?;
    let model = AffineModel { a, b, c, d, e, f };
    model.is_valid().then_some(model)
}

fn fit_least_squares(matches: &[PointMatch], inliers: &[bool]) -> Option<AffineModel> {
    let mut n = [[0.0_f64; 3]; 3];
    let mut bx = [0.0_f64; 3];
    let mut by = [0.0_f64; 3];
    for (p, &keep) in matches.iter().zip(inliers) {
        if !keep {
            continue;
        }
        let row = [p.x1, p.y1, 1.0];
        for i in 0..3 {
            for j in 0..3 {
                n[i][j] += row[i] * row[j];
            }
            bx[i] += row[i] * p.x2;
            by[i] += row[i] * p.y2;
        }
    }
    let [a, b, c] = solve3(n, bx)?;
    let [d, e, f] = solve3(n, by)?;
    let model = AffineModel { a, b, c, d, e, f };
    model.is_valid().then_some(model)
}

/// Robust affine estimation settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RansacParams {
    pub iterations: usize,
    /// A match is an inlier when its mapped point lands within this radius.
    pub tolerance_px: f64,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            iterations: 500,
            tolerance_px: 2.0,
            seed: 0,
        }
    }
}

/// Fits an affine model to noisy matches: repeatedly fits three random
/// distinct matches exactly, counts matches reproduced within the tolerance,
/// and keeps the largest consensus (ties keep the earlier iteration). The
/// returned model is re-fitted by least squares over that consensus set; the
/// mask marks the consensus of the winning minimal model. Fails when no
/// minimal model gathers at least three inliers.
pub fn ransac_affine(
    matches: &[PointMatch],
    params: &RansacParams,
) -> Result<(AffineModel, Vec<bool>), CameraError> {
    if params.iterations == 0 {
        return Err(CameraError::BadParameter(
            "iterations must be at least 1".into(),
        ));
    }
    if !(params.tolerance_px.is_finite() && params.tolerance_px >= 0.0) {
        return Err(CameraError::BadParameter(
            "tolerance_px must be non-negative".into(),
        ));
    }
    if matches.len() < 3 {
        return Err(CameraError::NotEnoughMatches(matches.len()));
    }
    let tol_sq = params.tolerance_px * params.tolerance_px;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<(usize, Vec<bool>)> = None;
    for _ in 0..params.iterations {
        let ids = rand::seq::index::sample(&mut rng, matches.len(), 3).into_vec();
        let Some(model) = fit_exact(matches, &ids) else {
            continue;
        };
        let mut mask = vec![false; matches.len()];
        let mut count = 0usize;
        for (k, p) in matches.iter().enumerate() {
            let (px, py) = model.apply(p.x1, p.y1);
            let (dx, dy) = (px - p.x2, py - p.y2);
            if dx * dx + dy * dy <= tol_sq {
                mask[k] = true;
                count += 1;
            }
        }
        if best.as_ref().map_or(true, |(c, _)| count > *c) {
            best = Some((count, mask));
        }
    }
    let Some((count, mask)) = best else {
        return Err(CameraError::NoConsensus);
    };
    if count < 3 {
        return Err(CameraError::NoConsensus);
    }
    let model = fit_least_squares(matches, &mask).ok_or(CameraError::NoConsensus)?;
    Ok((model, mask))
}

/// The dense displacement field the model induces: u = mapped x - x.
pub fn affine_to_flow(
    model: &AffineModel,
    width: usize,
    height: usize,
) -> Result<FlowField, CameraError> {
    let n = width
        .checked_mul(height)
        .ok_or_else(|| CameraError::BadParameter("field dimensions overflow".into()))?;
    let mut u = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    for y in 0..height {
        for x in 0..width {
            let (px, py) = model.apply(x as f64, y as f64);
            u.push(px - x as f64);
            v.push(py - y as f64);
        }
    }
    Ok(FlowField::new(width, height, u, v)?)
}

/// Subtracts the model-induced motion from a flow field, leaving the
/// residual (independent) motion.
pub fn correct_flow(flow: &FlowField, model: &AffineModel) -> Result<FlowField, CameraError> {
    let (w, h) = (flow.width(), flow.height());
    let mut u = Vec::with_capacity(w * h);
    let mut v = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (px, py) = model.apply(x as f64, y as f64);
            u.push(flow.u(x, y) - (px - x as f64));
            v.push(flow.v(x, y) - (py - y as f64));
        }
    }
    Ok(FlowField::new(w, h, u, v)?)
}
