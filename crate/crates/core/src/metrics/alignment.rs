//! Enhanced-alignment measure.
//!
//! The prediction is binarized and both maps are mean-centered; each pixel
//! contributes `((φ + 1)² / 4)` where `φ = 2ab / (a² + b²)`. Because the
//! centered values only take two levels each, the per-pixel sum collapses to
//! four confusion-cell counts.

use crate::error::Result;
use crate::raster::GrayMap;

use super::structure::EPS;

/// Adaptive threshold: twice the mean prediction, capped at 1.
pub fn adaptive_threshold(pred: &GrayMap) -> f64 {
    (2.0 * pred.mean()).min(1.0)
}

/// Enhanced alignment at the adaptive threshold.
pub fn e_measure(pred: &GrayMap, gt: &GrayMap) -> Result<f64> {
    e_measure_at(pred, gt, adaptive_threshold(pred))
}

/// Mean enhanced alignment over 256 uniformly spaced thresholds in [0,1].
pub fn e_measure_sweep(pred: &GrayMap, gt: &GrayMap) -> Result<f64> {
    let mut total = 0.0;
    for k in 0..256 {
        total += e_measure_at(pred, gt, k as f64 / 255.0)?;
    }
    Ok(total / 256.0)
}

pub fn e_measure_at(pred: &GrayMap, gt: &GrayMap, threshold: f64) -> Result<f64> {
    pred.ensure_same_shape(gt, "e-measure")?;
    let n = pred.len();
    // [pred fg & gt fg, pred fg & gt bg, pred bg & gt fg, pred bg & gt bg]
    let mut cells = [0usize; 4];
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        let pf = p >= threshold;
        let gf = g > 0.5;
        cells[usize::from(!pf) * 2 + usize::from(!gf)] += 1;
    }
    let pred_fg = cells[0] + cells[1];
    let gt_fg = cells[0] + cells[2];

    let enhanced_sum = if gt_fg == 0 {
        (n - pred_fg) as f64
    } else if gt_fg == n {
        pred_fg as f64
    } else {
        let mu_p = pred_fg as f64 / n as f64;
        let mu_g = gt_fg as f64 / n as f64;
        let levels = |fg: bool, mu: f64| if fg { 1.0 - mu } else { -mu };
        let mut sum = 0.0;
        for (i, &count) in cells.iter().enumerate() {
            let a = levels(i < 2, mu_p);
            let b = levels(i % 2 == 0, mu_g);
            let align = 2.0 * a * b / (a * a + b * b + EPS);
            sum += count as f64 * (align + 1.0).powi(2) / 4.0;
        }
        sum
    };
    Ok(enhanced_sum / n as f64)
}
