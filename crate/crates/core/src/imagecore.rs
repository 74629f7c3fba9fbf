//! Image buffers, file I/O, opponent color conversion, Canny edges, warping.
//!
//! Pixels are stored row-major, channel-interleaved, as f64 in [0, 1].
//! 8-bit file values map to v/255 on load and round back on save.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("failed to read image {path}: {source}")]
    Read {
        path: String,
        source: image::ImageError,
    },
    #[error("failed to write image {path}: {source}")]
    Write {
        path: String,
        source: image::ImageError,
    },
    #[error("image has zero dimensions")]
    ZeroDimensions,
    #[error("channel count must be 1 or 3, got {0}")]
    BadChannelCount(usize),
    #[error("buffer length {got} does not match width*height*channels = {expected}")]
    BadBufferLength { got: usize, expected: usize },
    #[error("pixel values must be finite and within [0, 1]")]
    BadPixelValue,
    #[error("expected a 3-channel image")]
    NotColor,
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("invalid parameter: {0}")]
    BadParameter(String),
}

/// Row-major, channel-interleaved image with values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        data: Vec<f64>,
    ) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::ZeroDimensions);
        }
        if channels != 1 && channels != 3 {
            return Err(ImageError::BadChannelCount(channels));
        }
        let expected = width * height * channels;
        if data.len() != expected {
            return Err(ImageError::BadBufferLength {
                got: data.len(),
                expected,
            });
        }
        if !data
            .iter()
            .all(|v| v.is_finite() && (0.0..=1.0).contains(v))
        {
            return Err(ImageError::BadPixelValue);
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_fn<F>(
        width: usize,
        height: usize,
        channels: usize,
        mut f: F,
    ) -> Result<Self, ImageError>
    where
        F: FnMut(usize, usize, usize) -> f64,
    {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self::new(width, height, channels, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Single-channel intensity: the unweighted channel mean.
    pub fn to_gray(&self) -> ImageBuffer {
        if self.channels == 1 {
            return self.clone();
        }
        let mut data = Vec::with_capacity(self.width * self.height);
        for px in self.data.chunks_exact(3) {
            data.push((px[0] + px[1] + px[2]) / 3.0);
        }
        ImageBuffer {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    /// Expands a grayscale image to 3 equal channels; color images pass through.
    pub fn to_rgb(&self) -> ImageBuffer {
        if self.channels == 3 {
            return self.clone();
        }
        let mut data = Vec::with_capacity(self.width * self.height * 3);
        for &v in &self.data {
            data.extend_from_slice(&[v, v, v]);
        }
        ImageBuffer {
            width: self.width,
            height: self.height,
            channels: 3,
            data,
        }
    }
}

/// Boolean per-pixel mask. Produced by Canny and reused as a coverage mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeMask {
    width: usize,
    height: usize,
    mask: Vec<bool>,
}

impl EdgeMask {
    pub fn new(width: usize, height: usize, mask: Vec<bool>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::ZeroDimensions);
        }
        if mask.len() != width * height {
            return Err(ImageError::BadBufferLength {
                got: mask.len(),
                expected: width * height,
            });
        }
        Ok(Self {
            width,
            height,
            mask,
        })
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Result<Self, ImageError> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.mask[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.mask[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.mask
    }
}

/// Per-channel central-difference gradients with [-1, 0, 1] taps
/// (unscaled; replicate padding at image borders). Layout matches ImageBuffer.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientField {
    width: usize,
    height: usize,
    channels: usize,
    gx: Vec<f64>,
    gy: Vec<f64>,
}

impl GradientField {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn gx(&self, x: usize, y: usize, c: usize) -> f64 {
        self.gx[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn gy(&self, x: usize, y: usize, c: usize) -> f64 {
        self.gy[(y * self.width + x) * self.channels + c]
    }
}

/// Computes [-1, 0, 1] tap gradients per channel, replicating edge pixels.
pub fn gradients(img: &ImageBuffer) -> GradientField {
    let (w, h, ch) = (img.width, img.height, img.channels);
    let mut gx = vec![0.0; w * h * ch];
    let mut gy = vec![0.0; w * h * ch];
    for y in 0..h {
        let ym = y.saturating_sub(1);
        let yp = (y + 1).min(h - 1);
        for x in 0..w {
            let xm = x.saturating_sub(1);
            let xp = (x + 1).min(w - 1);
            for c in 0..ch {
                let i = (y * w + x) * ch + c;
                gx[i] = img.get(xp, y, c) - img.get(xm, y, c);
                gy[i] = img.get(x, yp, c) - img.get(x, ym, c);
            }
        }
    }
    GradientField {
        width: w,
        height: h,
        channels: ch,
        gx,
        gy,
    }
}

/// Loads a PNG, PPM (P6) or PGM (P5) file into a normalized buffer.
///
/// 8-bit values map to v/255. Inputs with alpha or more than 8 bits per
/// sample are converted to 8-bit RGB first.
pub fn load_image<P: AsRef<Path>>(path: P) -> Result<ImageBuffer, ImageError> {
    let path = path.as_ref();
    let dyn_img = image::open(path).map_err(|source| ImageError::Read {
        path: path.display().to_string(),
        source,
    })?;
    let (width, height) = (dyn_img.width() as usize, dyn_img.height() as usize);
    let (buf, channels) = match dyn_img {
        image::DynamicImage::ImageLuma8(g) => (g.into_raw(), 1),
        image::DynamicImage::ImageRgb8(rgb) => (rgb.into_raw(), 3),
        other => (other.to_rgb8().into_raw(), 3),
    };
    let data = buf.iter().map(|&v| f64::from(v) / 255.0).collect();
    ImageBuffer::new(width, height, channels, data)
}

/// Writes an 8-bit PNG, rounding each value to v*255.
pub fn save_png<P: AsRef<Path>>(img: &ImageBuffer, path: P) -> Result<(), ImageError> {
    let path = path.as_ref();
    let quant = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let bytes: Vec<u8> = img.data.iter().map(|&v| quant(v)).collect();
    let (w, h) = (img.width as u32, img.height as u32);
    let result = match img.channels {
        1 => image::GrayImage::from_raw(w, h, bytes)
            .expect("buffer length checked at construction")
            .save_with_format(path, image::ImageFormat::Png),
        _ => image::RgbImage::from_raw(w, h, bytes)
            .expect("buffer length checked at construction")
            .save_with_format(path, image::ImageFormat::Png),
    };
    result.map_err(|source| ImageError::Write {
        path: path.display().to_string(),
        source,
    })
}

const INV_SQRT2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Converts RGB to rescaled opponent color space.
///
/// O1 = (R-G)/sqrt(2), O2 = (R+G-2B)/sqrt(6), O3 = (R+G+B)/sqrt(3), then each
/// channel is affinely mapped from its analytic range onto [0, 1]
/// (O1 from [-1/sqrt2, 1/sqrt2], O2 from [-2/sqrt6, 2/sqrt6], O3 from [0, sqrt3]).
pub fn to_opponent(img: &ImageBuffer) -> Result<ImageBuffer, ImageError> {
    if img.channels != 3 {
        return Err(ImageError::NotColor);
    }
    let sqrt6 = 6.0_f64.sqrt();
    let sqrt3 = 3.0_f64.sqrt();
    let (o1_lo, o1_hi) = (-INV_SQRT2, INV_SQRT2);
    let (o2_lo, o2_hi) = (-2.0 / sqrt6, 2.0 / sqrt6);
    let mut data = Vec::with_capacity(img.data.len());
    for px in img.data.chunks_exact(3) {
        let (r, g, b) = (px[0], px[1], px[2]);
        let o1 = (r - g) / 2.0_f64.sqrt();
        let o2 = (r + g - 2.0 * b) / sqrt6;
        let o3 = (r + g + b) / sqrt3;
        data.push(((o1 - o1_lo) / (o1_hi - o1_lo)).clamp(0.0, 1.0));
        data.push(((o2 - o2_lo) / (o2_hi - o2_lo)).clamp(0.0, 1.0));
        data.push((o3 / sqrt3).clamp(0.0, 1.0));
    }
    Ok(ImageBuffer {
        width: img.width,
        height: img.height,
        channels: 3,
        data,
    })
}

/// Canny thresholds apply to Sobel magnitudes of the smoothed [0, 1] intensity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CannyParams {
    pub sigma: f64,
    pub low: f64,
    pub high: f64,
}

impl Default for CannyParams {
    fn default() -> Self {
        Self {
            sigma: 1.4,
            low: 0.1,
            high: 0.2,
        }
    }
}

impl CannyParams {
    fn validate(&self) -> Result<(), ImageError> {
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(ImageError::BadParameter(format!(
                "canny sigma must be positive, got {}",
                self.sigma
            )));
        }
        if !(self.low.is_finite() && self.high.is_finite() && self.low >= 0.0) {
            return Err(ImageError::BadParameter(
                "canny thresholds must be finite and non-negative".into(),
            ));
        }
        if self.high < self.low {
            return Err(ImageError::BadParameter(format!(
                "canny high threshold {} below low threshold {}",
                self.high, self.low
            )));
        }
        Ok(())
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    // Radius 2 at the default sigma 1.4 (a 5x5 separable kernel).
    let radius = ((1.5 * sigma).round() as usize).max(1);
    let mut k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

pub(crate) fn gaussian_blur_plane(plane: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let radius = k.len() / 2;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                let sx = (x as isize + i as isize - radius as isize).clamp(0, w as isize - 1);
                acc += kv * plane[y * w + sx as usize];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                let sy = (y as isize + i as isize - radius as isize).clamp(0, h as isize - 1);
                acc += kv * tmp[sy as usize * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Sobel gradients scaled by 1/8, estimating intensity change per pixel.
pub(crate) fn sobel_plane(plane: &[f64], w: usize, h: usize) -> (Vec<f64>, Vec<f64>) {
    let at = |x: isize, y: isize| {
        let cx = x.clamp(0, w as isize - 1) as usize;
        let cy = y.clamp(0, h as isize - 1) as usize;
        plane[cy * w + cx]
    };
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let p = |dx: isize, dy: isize| at(x + dx, y + dy);
            let sx = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            let sy = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
            gx[y as usize * w + x as usize] = sx / 8.0;
            gy[y as usize * w + x as usize] = sy / 8.0;
        }
    }
    (gx, gy)
}

fn canny_magnitudes(img: &ImageBuffer, sigma: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let gray = img.to_gray();
    let smoothed = gaussian_blur_plane(&gray.data, img.width, img.height, sigma);
    let (gx, gy) = sobel_plane(&smoothed, img.width, img.height);
    let mag = gx
        .iter()
        .zip(&gy)
        .map(|(&a, &b)| (a * a + b * b).sqrt())
        .collect();
    (mag, gx, gy)
}

/// Canny edge detection: Gaussian smoothing, Sobel, non-maximum suppression
/// along the quantized gradient direction, then hysteresis from strong pixels.
pub fn canny_edges(img: &ImageBuffer, params: &CannyParams) -> Result<EdgeMask, ImageError> {
    params.validate()?;
    let (w, h) = (img.width, img.height);
    let (mag, gx, gy) = canny_magnitudes(img, params.sigma);
    let m = |x: isize, y: isize| {
        let cx = x.clamp(0, w as isize - 1) as usize;
        let cy = y.clamp(0, h as isize - 1) as usize;
        mag[cy * w + cx]
    };

    // Candidates survive NMS and sit above the low threshold. On plateaus the
    // pixel whose predecessor neighbor is strictly smaller survives.
    let mut candidate = vec![false; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            if mag[i] < params.low {
                continue;
            }
            let (dgx, dgy) = (gx[i], gy[i]);
            let mut angle = dgy.atan2(dgx);
            if angle < 0.0 {
                angle += std::f64::consts::PI;
            }
            if angle >= std::f64::consts::PI {
                angle = 0.0;
            }
            let sector = ((angle / (std::f64::consts::PI / 4.0)) + 0.5).floor() as usize % 4;
            let (prev, next) = match sector {
                0 => (m(x - 1, y), m(x + 1, y)),
                1 => (m(x - 1, y - 1), m(x + 1, y + 1)),
                2 => (m(x, y - 1), m(x, y + 1)),
                _ => (m(x + 1, y - 1), m(x - 1, y + 1)),
            };
            if mag[i] > prev && mag[i] >= next {
                candidate[i] = true;
            }
        }
    }

    let mut edges = vec![false; w * h];
    let mut stack: Vec<(usize, usize)> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if candidate[i] && mag[i] >= params.high && !edges[i] {
                edges[i] = true;
                stack.push((x, y));
                while let Some((cx, cy)) = stack.pop() {
                    for dy in -1i64..=1 {
                        for dx in -1i64..=1 {
                            let nx = cx as i64 + dx;
                            let ny = cy as i64 + dy;
                            if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                                continue;
                            }
                            let ni = ny as usize * w + nx as usize;
                            if candidate[ni] && !edges[ni] {
                                edges[ni] = true;
                                stack.push((nx as usize, ny as usize));
                            }
                        }
                    }
                }
            }
        }
    }
    EdgeMask::new(w, h, edges)
}

/// Forward-warps an image along `step * flow` with bilinear splatting.
/// Target pixels that receive no mass copy the source pixel.
pub fn warp_image(
    img: &ImageBuffer,
    flow: &crate::flowio::FlowField,
    step: f64,
) -> Result<ImageBuffer, ImageError> {
    if img.width != flow.width() || img.height != flow.height() {
        return Err(ImageError::DimensionMismatch(
            img.width,
            img.height,
            flow.width(),
            flow.height(),
        ));
    }
    if !step.is_finite() {
        return Err(ImageError::BadParameter("warp step must be finite".into()));
    }
    let (w, h, ch) = (img.width, img.height, img.channels);
    let mut acc = vec![0.0; w * h * ch];
    let mut weight = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let tx = x as f64 + step * flow.u(x, y);
            let ty = y as f64 + step * flow.v(x, y);
            if tx <= -1.0 || ty <= -1.0 || tx >= w as f64 || ty >= h as f64 {
                continue;
            }
            let x0 = tx.floor();
            let y0 = ty.floor();
            let fx = tx - x0;
            let fy = ty - y0;
            let corners = [
                (x0 as isize, y0 as isize, (1.0 - fx) * (1.0 - fy)),
                (x0 as isize + 1, y0 as isize, fx * (1.0 - fy)),
                (x0 as isize, y0 as isize + 1, (1.0 - fx) * fy),
                (x0 as isize + 1, y0 as isize + 1, fx * fy),
            ];
            for (cx, cy, wgt) in corners {
                if wgt == 0.0 || cx < 0 || cy < 0 || cx >= w as isize || cy >= h as isize {
                    continue;
                }
                let ti = cy as usize * w + cx as usize;
                weight[ti] += wgt;
                for c in 0..ch {
                    acc[ti * ch + c] += wgt * img.get(x, y, c);
                }
            }
        }
    }
    let mut data = Vec::with_capacity(w * h * ch);
    for i in 0..w * h {
        if weight[i] > 1e-12 {
            for c in 0..ch {
                data.push((acc[i * ch + c] / weight[i]).clamp(0.0, 1.0));
            }
        } else {
            for c in 0..ch {
                data.push(img.data[i * ch + c]);
            }
        }
    }
    Ok(ImageBuffer {
        width: w,
        height: h,
        channels: ch,
        data,
    })
}

/// Bilinear resize with pixel-center alignment.
pub fn resize_bilinear(
    img: &ImageBuffer,
    new_width: usize,
    new_height: usize,
) -> Result<ImageBuffer, ImageError> {
    if new_width == 0 || new_height == 0 {
        return Err(ImageError::ZeroDimensions);
    }
    let (w, h, ch) = (img.width, img.height, img.channels);
    let sx = w as f64 / new_width as f64;
    let sy = h as f64 / new_height as f64;
    let mut data = Vec::with_capacity(new_width * new_height * ch);
    for y in 0..new_height {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, h as f64 - 1.0);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = fy - y0 as f64;
        for x in 0..new_width {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, w as f64 - 1.0);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let wx = fx - x0 as f64;
            for c in 0..ch {
                let top = img.get(x0, y0, c) * (1.0 - wx) + img.get(x1, y0, c) * wx;
                let bot = img.get(x0, y1, c) * (1.0 - wx) + img.get(x1, y1, c) * wx;
                data.push((top * (1.0 - wy) + bot * wy).clamp(0.0, 1.0));
            }
        }
    }
    ImageBuffer::new(new_width, new_height, ch, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowio::FlowField;

    fn checker(w: usize, h: usize) -> ImageBuffer {
        ImageBuffer::from_fn(w, h, 3, |x, y, c| {
            if (x / 3 + y / 3) % 2 == 0 {
                [0.9, 0.8, 0.2][c]
            } else {
                [0.1, 0.2, 0.7][c]
            }
        })
        .unwrap()
    }

    #[test]
    fn rejects_bad_buffers() {
        assert!(matches!(
            ImageBuffer::new(0, 4, 1, vec![]),
            Err(ImageError::ZeroDimensions)
        ));
        assert!(matches!(
            ImageBuffer::new(2, 2, 2, vec![0.0; 8]),
            Err(ImageError::BadChannelCount(2))
        ));
        assert!(matches!(
            ImageBuffer::new(2, 2, 1, vec![0.0; 3]),
            Err(ImageError::BadBufferLength { .. })
        ));
        assert!(matches!(
            ImageBuffer::new(1, 1, 1, vec![1.5]),
            Err(ImageError::BadPixelValue)
        ));
        assert!(matches!(
            ImageBuffer::new(1, 1, 1, vec![f64::NAN]),
            Err(ImageError::BadPixelValue)
        ));
    }

    #[test]
    fn loads_binary_ppm_and_pgm() {
        let dir = tempfile::tempdir().unwrap();
        let ppm = dir.path().join("t.ppm");
        let mut bytes = b"P6\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 0, 0, 0, 255, 0, 0, 0, 255, 255, 255, 255]);
        std::fs::write(&ppm, bytes).unwrap();
        let img = load_image(&ppm).unwrap();
        assert_eq!((img.width(), img.height(), img.channels()), (2, 2, 3));
        assert_eq!(img.get(0, 0, 0), 1.0);
        assert_eq!(img.get(1, 0, 1), 1.0);
        assert_eq!(img.get(0, 1, 2), 1.0);
        assert_eq!(img.get(1, 1, 0), 1.0);

        let pgm = dir.path().join("t.pgm");
        std::fs::write(&pgm, b"P5\n1 1\n255\n\x7f".as_slice()).unwrap();
        let img = load_image(&pgm).unwrap();
        assert_eq!((img.width(), img.height(), img.channels()), (1, 1, 1));
        assert!((img.get(0, 0, 0) - 127.0 / 255.0).abs() < 1e-12);
    }

    #[test]
    fn png_round_trip_stays_within_one_level() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.png");
        let img = ImageBuffer::from_fn(16, 16, 3, |x, y, c| {
            (((x * 31 + y * 17 + c * 47) % 256) as f64) / 255.0
        })
        .unwrap();
        save_png(&img, &path).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back.channels(), 3);
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 1.0 / 255.0);
        }
    }

    #[test]
    fn load_missing_file_errors() {
        assert!(matches!(
            load_image("/nonexistent/nope.png"),
            Err(ImageError::Read { .. })
        ));
    }

    #[test]
    fn opponent_matches_formulas() {
        let img = checker(8, 8);
        let opp = to_opponent(&img).unwrap();
        let sqrt2 = 2.0_f64.sqrt();
        let sqrt6 = 6.0_f64.sqrt();
        let sqrt3 = 3.0_f64.sqrt();
        for y in 0..8 {
            for x in 0..8 {
                let (r, g, b) = (img.get(x, y, 0), img.get(x, y, 1), img.get(x, y, 2));
                let o1 = (r - g) / sqrt2;
                let o2 = (r + g - 2.0 * b) / sqrt6;
                let o3 = (r + g + b) / sqrt3;
                let e1 = (o1 + INV_SQRT2) / (2.0 * INV_SQRT2);
                let e2 = (o2 + 2.0 / sqrt6) / (4.0 / sqrt6);
                let e3 = o3 / sqrt3;
                assert!((opp.get(x, y, 0) - e1).abs() <= 1e-9);
                assert!((opp.get(x, y, 1) - e2).abs() <= 1e-9);
                assert!((opp.get(x, y, 2) - e3).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn opponent_gray_pixel_lands_mid_range() {
        let img = ImageBuffer::from_fn(1, 1, 3, |_, _, _| 0.5).unwrap();
        let opp = to_opponent(&img).unwrap();
        // R=G=B makes O1 and O2 zero before rescale, so both map to 0.5.
        assert!((opp.get(0, 0, 0) - 0.5).abs() < 1e-12);
        assert!((opp.get(0, 0, 1) - 0.5).abs() < 1e-12);
        assert!((opp.get(0, 0, 2) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn opponent_rejects_grayscale() {
        let img = ImageBuffer::from_fn(2, 2, 1, |_, _, _| 0.3).unwrap();
        assert!(matches!(to_opponent(&img), Err(ImageError::NotColor)));
    }

    #[test]
    fn opponent_stays_in_unit_range() {
        for (r, g, b) in [
            (1.0, 0.0, 0.0),
            (0.0, 1.0, 0.0),
            (0.0, 0.0, 1.0),
            (1.0, 1.0, 1.0),
            (0.0, 0.0, 0.0),
        ] {
            let img = ImageBuffer::new(1, 1, 3, vec![r, g, b]).unwrap();
            let opp = to_opponent(&img).unwrap();
            for c in 0..3 {
                let v = opp.get(0, 0, c);
                assert!((0.0..=1.0).contains(&v), "channel {c} out of range: {v}");
            }
        }
    }

    #[test]
    fn canny_constant_image_has_no_edges() {
        let img = ImageBuffer::from_fn(16, 16, 1, |_, _, _| 0.42).unwrap();
        let edges = canny_edges(&img, &CannyParams::default()).unwrap();
        assert_eq!(edges.count(), 0);
    }

    #[test]
    fn canny_step_edge_is_single_column() {
        let img =
            ImageBuffer::from_fn(32, 32, 1, |x, _, _| if x < 16 { 0.0 } else { 1.0 }).unwrap();
        let edges = canny_edges(&img, &CannyParams::default()).unwrap();
        assert!(edges.count() > 0);
        let mut cols = std::collections::BTreeSet::new();
        for y in 0..32 {
            let row: Vec<usize> = (0..32).filter(|&x| edges.get(x, y)).collect();
            assert!(row.len() <= 1, "row {y} has {} edge pixels", row.len());
            cols.extend(row);
        }
        assert_eq!(cols.len(), 1);
        let col = *cols.iter().next().unwrap();
        assert!((14..=17).contains(&col), "edge column {col} far from step");
    }

    #[test]
    fn canny_edge_count_monotone_in_thresholds() {
        let img = checker(32, 32);
        let mut last = usize::MAX;
        for (low, high) in [(0.02, 0.05), (0.05, 0.1), (0.1, 0.2), (0.2, 0.4)] {
            let p = CannyParams {
                sigma: 1.4,
                low,
                high,
            };
            let n = canny_edges(&img, &p).unwrap().count();
            assert!(n <= last, "edge count grew when thresholds rose");
            last = n;
        }
    }

    #[test]
    fn canny_edges_exceed_low_threshold() {
        let img = checker(24, 24);
        let params = CannyParams::default();
        let edges = canny_edges(&img, &params).unwrap();
        let (mag, _, _) = canny_magnitudes(&img, params.sigma);
        for y in 0..24 {
            for x in 0..24 {
                if edges.get(x, y) {
                    assert!(mag[y * 24 + x] >= params.low);
                }
            }
        }
    }

    #[test]
    fn canny_rejects_bad_params() {
        let img = checker(8, 8);
        let bad = CannyParams {
            sigma: 1.4,
            low: 0.3,
            high: 0.1,
        };
        assert!(canny_edges(&img, &bad).is_err());
        let bad = CannyParams {
            sigma: -1.0,
            ..CannyParams::default()
        };
        assert!(canny_edges(&img, &bad).is_err());
    }

    #[test]
    fn warp_zero_flow_is_identity() {
        let img = checker(12, 10);
        let flow = FlowField::zeros(12, 10);
        for step in [0.25, 1.0, 3.5] {
            let out = warp_image(&img, &flow, step).unwrap();
            assert_eq!(out, img);
        }
    }

    #[test]
    fn warp_zero_step_is_identity() {
        let img = checker(12, 10);
        let flow = FlowField::new(12, 10, vec![3.7; 120], vec![-2.1; 120]).unwrap();
        let out = warp_image(&img, &flow, 0.0).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn warp_uniform_flow_shifts_interior() {
        let img = checker(16, 12);
        let flow = FlowField::new(16, 12, vec![1.0; 192], vec![0.0; 192]).unwrap();
        let out = warp_image(&img, &flow, 3.0).unwrap();
        for y in 0..12 {
            for x in 3..16 {
                for c in 0..3 {
                    assert!((out.get(x, y, c) - img.get(x - 3, y, c)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn warp_scale_symmetry() {
        let img = checker(14, 14);
        let n = 14 * 14;
        let u: Vec<f64> = (0..n).map(|i| ((i % 7) as f64 - 3.0) * 0.6).collect();
        let v: Vec<f64> = (0..n).map(|i| ((i % 5) as f64 - 2.0) * 0.4).collect();
        let f1 = FlowField::new(14, 14, u.clone(), v.clone()).unwrap();
        let f2 = FlowField::new(
            14,
            14,
            u.iter().map(|x| 2.0 * x).collect(),
            v.iter().map(|x| 2.0 * x).collect(),
        )
        .unwrap();
        let a = warp_image(&img, &f1, 1.5).unwrap();
        let b = warp_image(&img, &f2, 0.75).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn warp_dimension_mismatch_errors() {
        let img = checker(8, 8);
        let flow = FlowField::zeros(9, 8);
        assert!(matches!(
            warp_image(&img, &flow, 1.0),
            Err(ImageError::DimensionMismatch(..))
        ));
    }

    #[test]
    fn gradients_use_replicate_borders() {
        let img = ImageBuffer::from_fn(4, 3, 1, |x, _, _| x as f64 / 10.0).unwrap();
        let g = gradients(&img);
        // Interior: (x+1) - (x-1) = 0.2; borders replicate so the span halves.
        assert!((g.gx(1, 1, 0) - 0.2).abs() < 1e-12);
        assert!((g.gx(0, 1, 0) - 0.1).abs() < 1e-12);
        assert!((g.gx(3, 1, 0) - 0.1).abs() < 1e-12);
        assert_eq!(g.gy(1, 1, 0), 0.0);
    }

    #[test]
    fn resize_preserves_constant_images() {
        let img = ImageBuffer::from_fn(10, 8, 3, |_, _, c| [0.2, 0.5, 0.8][c]).unwrap();
        let out = resize_bilinear(&img, 5, 4).unwrap();
        assert_eq!((out.width(), out.height()), (5, 4));
        for y in 0..4 {
            for x in 0..5 {
                for c in 0..3 {
                    assert!((out.get(x, y, c) - img.get(0, 0, c)).abs() < 1e-12);
                }
            }
        }
    }
}
