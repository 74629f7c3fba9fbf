//! Per-frame disagreement statistics for unexpected-event detection: a
//! frame is flagged when its error sits strictly more than one standard
//! deviation above the sequence mean.

use serde::Serialize;

#[derive(Serialize, Debug, Clone)]
pub struct AnomalyReport {
    /// Edge EPE between the model's prediction and the measured flow.
    pub epe: Vec<f64>,
    /// Edge EPE between the previous frame's measured flow and the current
    /// one; `null` for the first frame.
    pub baseline: Vec<Option<f64>>,
    pub mean: f64,
    pub std: f64,
    pub flagged: Vec<usize>,
}

/// Population mean/standard deviation and the strictly-over-one-std indices.
pub fn flag_over_one_std(series: &[f64]) -> (f64, f64, Vec<usize>) {
    if series.is_empty() {
        return (0.0, 0.0, Vec::new());
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    let cut = mean + std;
    let flagged = series
        .iter()
        .enumerate()
        .filter(|(_, &x)| x > cut)
        .map(|(i, _)| i)
        .collect();
    (mean, std, flagged)
}

impl AnomalyReport {
    pub fn from_series(epe: Vec<f64>, baseline: Vec<Option<f64>>) -> Self {
        let (mean, std, flagged) = flag_over_one_std(&epe);
        AnomalyReport {
            epe,
            baseline,
            mean,
            std,
            flagged,
        }
    }
}
