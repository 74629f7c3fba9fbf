//! Flow evaluation: endpoint error plus direction and orientation
//! similarity between predicted and reference fields.

use thiserror::Error;

use crate::flowio::FlowField;
use crate::imagecore::EdgeMask;

/// Vectors shorter than this are left out of direction and orientation
/// scores; their angle is numerically meaningless.
pub const NORM_EPSILON: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("flow fields have different dimensions")]
    DimensionMismatch,
    #[error("mask dimensions do not match the flow")]
    MaskMismatch,
    #[error("no pixels selected for evaluation")]
    NoPixels,
    #[error("nothing to aggregate")]
    EmptyAggregate,
}

fn check_pair(pred: &FlowField, truth: &FlowField) -> Result<(), MetricsError> {
    if pred.width() != truth.width() || pred.height() != truth.height() {
        return Err(MetricsError::DimensionMismatch);
    }
    Ok(())
}

fn check_mask(flow: &FlowField, mask: Option<&EdgeMask>) -> Result<(), MetricsError> {
    if let Some(m) = mask {
        if m.width() != flow.width() || m.height() != flow.height() {
            return Err(MetricsError::MaskMismatch);
        }
    }
    Ok(())
}

fn selected(mask: Option<&EdgeMask>, x: usize, y: usize) -> bool {
    mask.map_or(true, |m| m.get(x, y))
}

/// Mean endpoint error over the masked pixels (all pixels without a mask).
pub fn epe_at_mask(
    pred: &FlowField,
    truth: &FlowField,
    mask: Option<&EdgeMask>,
) -> Result<f64, MetricsError> {
    check_pair(pred, truth)?;
    check_mask(pred, mask)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for y in 0..pred.height() {
        for x in 0..pred.width() {
            if !selected(mask, x, y) {
                continue;
            }
            let du = pred.u(x, y) - truth.u(x, y);
            let dv = pred.v(x, y) - truth.v(x, y);
            sum += (du * du + dv * dv).sqrt();
            count += 1;
        }
    }
    if count == 0 {
        return Err(MetricsError::NoPixels);
    }
    Ok(sum / count as f64)
}

/// Endpoint error of the all-zero prediction: the mean reference magnitude
/// over the masked pixels.
pub fn zero_baseline_epe(truth: &FlowField, mask: Option<&EdgeMask>) -> Result<f64, MetricsError> {
    let zeros = FlowField::zeros(truth.width(), truth.height());
    epe_at_mask(&zeros, truth, mask)
}

fn cosine_mean(
    pred: &FlowField,
    truth: &FlowField,
    mask: Option<&EdgeMask>,
    absolute: bool,
) -> Result<(f64, usize), MetricsError> {
    check_pair(pred, truth)?;
    check_mask(pred, mask)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for y in 0..pred.height() {
        for x in 0..pred.width() {
            if !selected(mask, x, y) {
                continue;
            }
            let (pu, pv) = (pred.u(x, y), pred.v(x, y));
            let (tu, tv) = (truth.u(x, y), truth.v(x, y));
            let np = (pu * pu + pv * pv).sqrt();
            let nt = (tu * tu + tv * tv).sqrt();
            if np < NORM_EPSILON || nt < NORM_EPSILON {
                continue;
            }
            let c = ((pu * tu + pv * tv) / (np * nt)).clamp(-1.0, 1.0);
            sum += if absolute { c.abs() } else { c };
            count += 1;
        }
    }
    if count == 0 {
        return Ok((0.0, 0));
    }
    Ok((100.0 * sum / count as f64, count))
}

/// 100 times the mean cosine between predicted and reference vectors, over
/// masked pixels where both exceed `NORM_EPSILON`. Returns the score and the
/// number of pixels that qualified; an empty selection scores zero.
pub fn direction_score(
    pred: &FlowField,
    truth: &FlowField,
    mask: Option<&EdgeMask>,
) -> Result<(f64, usize), MetricsError> {
    cosine_mean(pred, truth, mask, false)
}

/// As `direction_score` but on the absolute cosine, so opposite vectors
/// count as aligned.
pub fn orientation_score(
    pred: &FlowField,
    truth: &FlowField,
    mask: Option<&EdgeMask>,
) -> Result<(f64, usize), MetricsError> {
    cosine_mean(pred, truth, mask, true)
}

/// All scores for one prediction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreReport {
    /// Mean endpoint error over the masked pixels.
    pub epe: f64,
    /// Endpoint error of the all-zero prediction on the same pixels.
    pub zero_epe: f64,
    /// 100 * mean cosine; 0 when no pixel qualified.
    pub direction: f64,
    /// 100 * mean |cosine|; 0 when no pixel qualified.
    pub orientation: f64,
    /// Pixels that entered the direction and orientation means.
    pub n_points: usize,
}

/// Computes every metric in one pass over the pair.
pub fn score_report(
    pred: &FlowField,
    truth: &FlowField,
    mask: Option<&EdgeMask>,
) -> Result<ScoreReport, MetricsError> {
    let epe = epe_at_mask(pred, truth, mask)?;
    let zero_epe = zero_baseline_epe(truth, mask)?;
    let (direction, n_points) = direction_score(pred, truth, mask)?;
    let (orientation, _) = orientation_score(pred, truth, mask)?;
    Ok(ScoreReport {
        epe,
        zero_epe,
        direction,
        orientation,
        n_points,
    })
}

/// Combines per-pair reports. Unweighted averages each score across reports;
/// weighted scales by each report's `n_points` (which must not all be zero).
pub fn aggregate(reports: &[ScoreReport], weighted: bool) -> Result<ScoreReport, MetricsError> {
    if reports.is_empty() {
        return Err(MetricsError::EmptyAggregate);
    }
    let total_points: usize = reports.iter().map(|r| r.n_points).sum();
    let weight = |r: &ScoreReport| -> f64 {
        if weighted {
            r.n_points as f64
        } else {
            1.0
        }
    };
    let total_weight: f64 = reports.iter().map(weight).sum();
    if total_weight == 0.0 {
        return Err(MetricsError::NoPixels);
    }
    let mut out = ScoreReport {
        epe: 0.0,
        zero_epe: 0.0,
        direction: 0.0,
        orientation: 0.0,
        n_points: total_points,
    };
    for r in reports {
        let w = weight(r) / total_weight;
        out.epe += w * r.epe;
        out.zero_epe += w * r.zero_epe;
        out.direction += w * r.direction;
        out.orientation += w * r.orientation;
    }
    Ok(out)
}
