//! Dense flow fields, Middlebury .flo I/O, derivatives, color rendering.
//!
//! The .flo container is little-endian: a float32 magic 202021.25, int32
//! width and height, then row-major interleaved float32 (u, v) pairs.
//! In memory both planes are f64; writing quantizes to f32, so a file read
//! back in is bit-identical to what was written.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use thiserror::Error;

use crate::imagecore::ImageBuffer;

pub const FLO_MAGIC: f32 = 202021.25;
const MAX_FLO_DIMENSION: i32 = 99_999;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("not a .flo file: bad magic {0}")]
    BadMagic(f32),
    #[error("invalid .flo dimensions {0}x{1}")]
    BadDimensions(i32, i32),
    #[error("flow values must be finite")]
    NonFinite,
    #[error("flow value {0} exceeds the float32 range of the .flo format")]
    ValueOutOfRange(f64),
    #[error("field {0}x{1} too small, need at least 3x3")]
    TooSmall(usize, usize),
    #[error("plane length {got} does not match width*height = {expected}")]
    BadBufferLength { got: usize, expected: usize },
    #[error("flow field has zero dimensions")]
    ZeroDimensions,
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("invalid parameter: {0}")]
    BadParameter(String),
}

/// Per-pixel displacement field, row-major u and v planes.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    u: Vec<f64>,
    v: Vec<f64>,
}

impl FlowField {
    pub fn new(width: usize, height: usize, u: Vec<f64>, v: Vec<f64>) -> Result<Self, FlowError> {
        if width == 0 || height == 0 {
            return Err(FlowError::ZeroDimensions);
        }
        let expected = width * height;
        for plane in [&u, &v] {
            if plane.len() != expected {
                return Err(FlowError::BadBufferLength {
                    got: plane.len(),
                    expected,
                });
            }
            if !plane.iter().all(|x| x.is_finite()) {
                return Err(FlowError::NonFinite);
            }
        }
        Ok(Self {
            width,
            height,
            u,
            v,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            u: vec![0.0; width * height],
            v: vec![0.0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn u(&self, x: usize, y: usize) -> f64 {
        self.u[y * self.width + x]
    }

    #[inline]
    pub fn v(&self, x: usize, y: usize) -> f64 {
        self.v[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, u: f64, v: f64) {
        let i = y * self.width + x;
        self.u[i] = u;
        self.v[i] = v;
    }

    pub fn u_plane(&self) -> &[f64] {
        &self.u
    }

    pub fn v_plane(&self) -> &[f64] {
        &self.v
    }

    #[inline]
    pub fn magnitude(&self, x: usize, y: usize) -> f64 {
        let i = y * self.width + x;
        (self.u[i] * self.u[i] + self.v[i] * self.v[i]).sqrt()
    }

    pub fn max_magnitude(&self) -> f64 {
        let mut m = 0.0f64;
        for i in 0..self.u.len() {
            m = m.max((self.u[i] * self.u[i] + self.v[i] * self.v[i]).sqrt());
        }
        m
    }
}

/// Spatial derivatives of a flow field, one plane per component.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowDerivativeField {
    width: usize,
    height: usize,
    pub du_dx: Vec<f64>,
    pub du_dy: Vec<f64>,
    pub dv_dx: Vec<f64>,
    pub dv_dy: Vec<f64>,
}

impl FlowDerivativeField {
    pub fn from_planes(
        width: usize,
        height: usize,
        du_dx: Vec<f64>,
        du_dy: Vec<f64>,
        dv_dx: Vec<f64>,
        dv_dy: Vec<f64>,
    ) -> Result<Self, FlowError> {
        if width == 0 || height == 0 {
            return Err(FlowError::ZeroDimensions);
        }
        let n = width * height;
        let planes = [&du_dx, &du_dy, &dv_dx, &dv_dy];
        if let Some(p) = planes.iter().find(|p| p.len() != n) {
            return Err(FlowError::BadBufferLength {
                got: p.len(),
                expected: n,
            });
        }
        if planes.iter().any(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(FlowError::NonFinite);
        }
        Ok(Self {
            width,
            height,
            du_dx,
            du_dy,
            dv_dx,
            dv_dy,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> [f64; 4] {
        let i = y * self.width + x;
        [self.du_dx[i], self.du_dy[i], self.dv_dx[i], self.dv_dy[i]]
    }
}

fn io_err(path: &Path, source: std::io::Error) -> FlowError {
    FlowError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Reads a Middlebury .flo file, rejecting bad magic, bad dimensions,
/// truncated payloads and non-finite values.
pub fn read_flo<P: AsRef<Path>>(path: P) -> Result<FlowField, FlowError> {
    let path = path.as_ref();
    let mut r = BufReader::new(File::open(path).map_err(|e| io_err(path, e))?);
    let magic = r.read_f32::<LittleEndian>().map_err(|e| io_err(path, e))?;
    if magic != FLO_MAGIC {
        return Err(FlowError::BadMagic(magic));
    }
    let w = r.read_i32::<LittleEndian>().map_err(|e| io_err(path, e))?;
    let h = r.read_i32::<LittleEndian>().map_err(|e| io_err(path, e))?;
    if w <= 0 || h <= 0 || w > MAX_FLO_DIMENSION || h > MAX_FLO_DIMENSION {
        return Err(FlowError::BadDimensions(w, h));
    }
    let n = w as usize * h as usize;
    let mut u = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    for _ in 0..n {
        let uv = r.read_f32::<LittleEndian>().map_err(|e| io_err(path, e))?;
        let vv = r.read_f32::<LittleEndian>().map_err(|e| io_err(path, e))?;
        if !uv.is_finite() || !vv.is_finite() {
            return Err(FlowError::NonFinite);
        }
        u.push(f64::from(uv));
        v.push(f64::from(vv));
    }
    let mut trailing = [0u8; 1];
    match r.read(&mut trailing) {
        Ok(0) => {}
        Ok(_) => {
            return Err(FlowError::BadParameter(format!(
                "{} has trailing bytes after the flow payload",
                path.display()
            )))
        }
        Err(e) => return Err(io_err(path, e)),
    }
    FlowField::new(w as usize, h as usize, u, v)
}

/// Writes a .flo file. Values are quantized to float32; values outside the
/// float32 range are rejected rather than silently saturated.
pub fn write_flo<P: AsRef<Path>>(flow: &FlowField, path: P) -> Result<(), FlowError> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
    w.write_f32::<LittleEndian>(FLO_MAGIC)
        .map_err(|e| io_err(path, e))?;
    w.write_i32::<LittleEndian>(flow.width as i32)
        .map_err(|e| io_err(path, e))?;
    w.write_i32::<LittleEndian>(flow.height as i32)
        .map_err(|e| io_err(path, e))?;
    for i in 0..flow.u.len() {
        for value in [flow.u[i], flow.v[i]] {
            if value.abs() > f64::from(f32::MAX) {
                return Err(FlowError::ValueOutOfRange(value));
            }
            w.write_f32::<LittleEndian>(value as f32)
                .map_err(|e| io_err(path, e))?;
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Central differences on the interior, one-sided at borders.
/// Requires at least a 3x3 field.
pub fn flow_derivatives(flow: &FlowField) -> Result<FlowDerivativeField, FlowError> {
    let (w, h) = (flow.width, flow.height);
    if w < 3 || h < 3 {
        return Err(FlowError::TooSmall(w, h));
    }
    let diff_x = |plane: &[f64], x: usize, y: usize| -> f64 {
        if x == 0 {
            plane[y * w + 1] - plane[y * w]
        } else if x == w - 1 {
            plane[y * w + x] - plane[y * w + x - 1]
        } else {
            (plane[y * w + x + 1] - plane[y * w + x - 1]) / 2.0
        }
    };
    let diff_y = |plane: &[f64], x: usize, y: usize| -> f64 {
        if y == 0 {
            plane[w + x] - plane[x]
        } else if y == h - 1 {
            plane[y * w + x] - plane[(y - 1) * w + x]
        } else {
            (plane[(y + 1) * w + x] - plane[(y - 1) * w + x]) / 2.0
        }
    };
    let n = w * h;
    let mut out = FlowDerivativeField {
        width: w,
        height: h,
        du_dx: Vec::with_capacity(n),
        du_dy: Vec::with_capacity(n),
        dv_dx: Vec::with_capacity(n),
        dv_dy: Vec::with_capacity(n),
    };
    for y in 0..h {
        for x in 0..w {
            out.du_dx.push(diff_x(&flow.u, x, y));
            out.du_dy.push(diff_y(&flow.u, x, y));
            out.dv_dx.push(diff_x(&flow.v, x, y));
            out.dv_dy.push(diff_y(&flow.v, x, y));
        }
    }
    Ok(out)
}

const WHEEL_SEGMENTS: [usize; 6] = [15, 6, 4, 11, 13, 6]; // RY YG GC CB BM MR
pub const COLOR_WHEEL_SIZE: usize = 55;

fn color_wheel() -> Vec<[f64; 3]> {
    let mut wheel = Vec::with_capacity(COLOR_WHEEL_SIZE);
    let ramp = |i: usize, n: usize| i as f64 / n as f64;
    let [ry, yg, gc, cb, bm, mr] = WHEEL_SEGMENTS;
    for i in 0..ry {
        wheel.push([1.0, ramp(i, ry), 0.0]);
    }
    for i in 0..yg {
        wheel.push([1.0 - ramp(i, yg), 1.0, 0.0]);
    }
    for i in 0..gc {
        wheel.push([0.0, 1.0, ramp(i, gc)]);
    }
    for i in 0..cb {
        wheel.push([0.0, 1.0 - ramp(i, cb), 1.0]);
    }
    for i in 0..bm {
        wheel.push([ramp(i, bm), 0.0, 1.0]);
    }
    for i in 0..mr {
        wheel.push([1.0, 0.0, 1.0 - ramp(i, mr)]);
    }
    debug_assert_eq!(wheel.len(), COLOR_WHEEL_SIZE);
    wheel
}

/// Renders flow with the 55-entry Middlebury color wheel: hue encodes
/// direction, saturation encodes magnitude relative to `max_mag` (the field
/// maximum when not given), and zero flow is white.
pub fn flow_to_color(flow: &FlowField, max_mag: Option<f64>) -> Result<ImageBuffer, FlowError> {
    let max_mag = match max_mag {
        Some(m) if !(m.is_finite() && m > 0.0) => {
            return Err(FlowError::BadParameter(format!(
                "max magnitude must be positive and finite, got {m}"
            )))
        }
        Some(m) => m,
        None => {
            let auto = flow.max_magnitude();
            if auto > 0.0 {
                auto
            } else {
                1.0
            }
        }
    };
    let wheel = color_wheel();
    let ncols = wheel.len() as f64;
    let mut data = Vec::with_capacity(flow.width * flow.height * 3);
    for i in 0..flow.u.len() {
        let fu = flow.u[i] / max_mag;
        let fv = flow.v[i] / max_mag;
        let rad = (fu * fu + fv * fv).sqrt();
        let angle = (-fv).atan2(-fu) / std::f64::consts::PI;
        let fk = (angle + 1.0) / 2.0 * (ncols - 1.0);
        let k0 = (fk.floor() as usize).min(wheel.len() - 1);
        let k1 = (k0 + 1) % wheel.len();
        let f = fk - k0 as f64;
        for c in 0..3 {
            let col = (1.0 - f) * wheel[k0][c] + f * wheel[k1][c];
            let col = if rad <= 1.0 {
                1.0 - rad * (1.0 - col)
            } else {
                col * 0.75
            };
            data.push(col.clamp(0.0, 1.0));
        }
    }
    ImageBuffer::new(flow.width, flow.height, 3, data)
        .map_err(|e| FlowError::BadParameter(e.to_string()))
}

/// Bilinearly resizes a flow field, scaling displacement values by the same
/// spatial factors so displacements stay consistent with the new grid.
pub fn resize_flow(
    flow: &FlowField,
    new_width: usize,
    new_height: usize,
) -> Result<FlowField, FlowError> {
    if new_width == 0 || new_height == 0 {
        return Err(FlowError::ZeroDimensions);
    }
    let (w, h) = (flow.width, flow.height);
    let sx = w as f64 / new_width as f64;
    let sy = h as f64 / new_height as f64;
    let scale_u = new_width as f64 / w as f64;
    let scale_v = new_height as f64 / h as f64;
    let mut u = Vec::with_capacity(new_width * new_height);
    let mut v = Vec::with_capacity(new_width * new_height);
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
            let sample = |plane: &[f64]| {
                let top = plane[y0 * w + x0] * (1.0 - wx) + plane[y0 * w + x1] * wx;
                let bot = plane[y1 * w + x0] * (1.0 - wx) + plane[y1 * w + x1] * wx;
                top * (1.0 - wy) + bot * wy
            };
            u.push(sample(&flow.u) * scale_u);
            v.push(sample(&flow.v) * scale_v);
        }
    }
    FlowField::new(new_width, new_height, u, v)
}
