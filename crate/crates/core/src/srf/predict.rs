//! Dense prediction: slide the patch over the image, let every tree vote a
//! motion patch at each location, and average all votes covering each pixel.

use crate::features::{extract_hog_from_gradients, PatchGeometry};
use crate::flowio::{FlowDerivativeField, FlowField};
use crate::imagecore::{gradients, to_opponent, GradientField, ImageBuffer};

use super::{ForestError, StructuredForest};

/// Final dense output: raw flow or flow derivatives, by label kind.
#[derive(Clone, Debug, PartialEq)]
pub enum MotionOutput {
    Flow(FlowField),
    Derivatives(FlowDerivativeField),
}

/// Per-pixel vote averages plus how many votes each pixel received.
#[derive(Clone, Debug, PartialEq)]
pub struct DensePrediction {
    width: usize,
    height: usize,
    dims: usize,
    values: Vec<f64>,
    coverage: Vec<u32>,
}

impl DensePrediction {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    /// Averaged component d at a pixel; zero where nothing voted.
    #[inline]
    pub fn component(&self, x: usize, y: usize, d: usize) -> f64 {
        self.values[(y * self.width + x) * self.dims + d]
    }

    /// Number of (patch, tree) votes that covered a pixel.
    pub fn coverage(&self, x: usize, y: usize) -> u32 {
        self.coverage[y * self.width + x]
    }

    pub fn min_coverage(&self) -> u32 {
        self.coverage.iter().copied().min().unwrap_or(0)
    }

    pub fn to_output(&self) -> Result<MotionOutput, ForestError> {
        let n = self.width * self.height;
        match self.dims {
            2 => {
                let mut u = Vec::with_capacity(n);
                let mut v = Vec::with_capacity(n);
                for i in 0..n {
                    u.push(self.values[i * 2]);
                    v.push(self.values[i * 2 + 1]);
                }
                Ok(MotionOutput::Flow(FlowField::new(
                    self.width,
                    self.height,
                    u,
                    v,
                )?))
            }
            4 => {
                let mut planes = vec![Vec::with_capacity(n); 4];
                for i in 0..n {
                    for (d, plane) in planes.iter_mut().enumerate() {
                        plane.push(self.values[i * 4 + d]);
                    }
                }
                let dv_dy = planes.pop().expect("four planes");
                let dv_dx = planes.pop().expect("four planes");
                let du_dy = planes.pop().expect("four planes");
                let du_dx = planes.pop().expect("four planes");
                Ok(MotionOutput::Derivatives(FlowDerivativeField::from_planes(
                    self.width,
                    self.height,
                    du_dx,
                    du_dy,
                    dv_dx,
                    dv_dy,
                )?))
            }
            other => Err(ForestError::Corrupt(format!(
                "cannot convert {other}-component prediction"
            ))),
        }
    }
}

/// Dense prediction from precomputed opponent gradients. Patch centers run
/// over every position where the patch fits, stepping by `stride` in both
/// axes; each tree's leaf patch is splatted over the pixels it covers and
/// every covered pixel averages its votes.
pub fn predict_dense(
    forest: &StructuredForest,
    grads: &GradientField,
    stride: usize,
) -> Result<DensePrediction, ForestError> {
    if stride == 0 {
        return Err(ForestError::BadConfig("stride must be at least 1".into()));
    }
    let (w, h) = (grads.width(), grads.height());
    let size = forest.patch_size;
    let dims = forest.label_dims;
    if w < size || h < size {
        return Err(ForestError::PatchTooLarge {
            patch: size,
            width: w,
            height: h,
        });
    }
    let half = size / 2;
    let mut values = vec![0.0_f64; w * h * dims];
    let mut coverage = vec![0u32; w * h];
    let mut cy = half;
    while cy + half < h {
        let mut cx = half;
        while cx + half < w {
            let geometry = PatchGeometry {
                center_x: cx,
                center_y: cy,
                size,
            };
            let descriptor = extract_hog_from_gradients(grads, &geometry)?;
            let (x0, y0) = (cx - half, cy - half);
            for tree in &forest.trees {
                let patch = tree.predict(&descriptor);
                debug_assert_eq!(patch.pixels(), size * size);
                debug_assert_eq!(patch.dims(), dims);
                for ly in 0..size {
                    let row = (y0 + ly) * w;
                    for lx in 0..size {
                        let pix = row + x0 + lx;
                        let at = ly * size + lx;
                        for d in 0..dims {
                            values[pix * dims + d] += patch.get(at, d);
                        }
                        coverage[pix] += 1;
                    }
                }
            }
            cx += stride;
        }
        cy += stride;
    }
    for (pix, &c) in coverage.iter().enumerate() {
        if c > 0 {
            for d in 0..dims {
                values[pix * dims + d] /= f64::from(c);
            }
        }
    }
    Ok(DensePrediction {
        width: w,
        height: h,
        dims,
        values,
        coverage,
    })
}

/// Dense prediction straight from an image: converts to opponent color
/// (grayscale inputs are replicated to three channels first), takes its
/// gradients and calls `predict_dense`.
pub fn predict_image(
    forest: &StructuredForest,
    frame: &ImageBuffer,
    stride: usize,
) -> Result<DensePrediction, ForestError> {
    let rgb = frame.to_rgb();
    let opponent = to_opponent(&rgb)?;
    let grads = gradients(&opponent);
    predict_dense(forest, &grads, stride)
}
