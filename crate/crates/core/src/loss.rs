//! Structure-weighted BCE + IoU segmentation loss and the MSE alignment loss.

use std::collections::BTreeMap;

use apgnet_autograd::{Scalar, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Side of the square averaging window of the weight map.
pub const WEIGHT_WINDOW: usize = 31;
/// Gain on the local contrast term of the weight map.
pub const WEIGHT_GAIN: f64 = 5.0;
/// Guard in the IoU denominator.
pub const IOU_EPS: f64 = 1e-8;

/// Mean over a `window × window` box centred on every pixel, averaging only
/// the pixels that fall inside the image.
pub fn box_mean(values: &[f64], height: usize, width: usize, window: usize) -> Vec<f64> {
    assert_eq!(values.len(), height * width);
    let r = window / 2;
    let stride = width + 1;
    let mut integral = vec![0.0; (height + 1) * stride];
    for y in 0..height {
        let mut row = 0.0;
        for x in 0..width {
            row += values[y * width + x];
            integral[(y + 1) * stride + x + 1] = integral[y * stride + x + 1] + row;
        }
    }
    let mut out = Vec::with_capacity(height * width);
    for y in 0..height {
        let (y0, y1) = (y.saturating_sub(r), (y + r + 1).min(height));
        for x in 0..width {
            let (x0, x1) = (x.saturating_sub(r), (x + r + 1).min(width));
            let s = integral[y1 * stride + x1] - integral[y0 * stride + x1] - integral[y1 * stride + x0]
                + integral[y0 * stride + x0];
            out.push(s / ((y1 - y0) * (x1 - x0)) as f64);
        }
    }
    out
}

/// `w = 1 + 5·|avgpool₃₁(m) − m|`, emphasising pixels near mask boundaries.
pub fn pixel_weight_map<T: Scalar>(mask: &Tensor<T>) -> Tensor<T> {
    let [b, c, h, w] = mask.shape();
    let mut out = Vec::with_capacity(mask.numel());
    for plane in mask.data().chunks(h * w) {
        let m: Vec<f64> = plane.iter().map(|v| v.to_f64()).collect();
        let pooled = box_mean(&m, h, w, WEIGHT_WINDOW);
        out.extend(
            pooled
                .iter()
                .zip(&m)
                .map(|(p, v)| T::of(1.0 + WEIGHT_GAIN * (p - v).abs())),
        );
    }
    Tensor::constant([b, c, h, w], out)
}

fn check_same<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::InvalidArgument(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Batch mean of `Σw·bce/Σw + 1 − Σw·p·m / Σw·(p+m−p·m)` with `p = σ(logits)`.
pub fn weighted_bce_iou<T: Scalar>(logits: &Tensor<T>, mask: &Tensor<T>, weights: &Tensor<T>) -> Result<Tensor<T>> {
    check_same(logits, mask, "weighted_bce_iou mask")?;
    check_same(logits, weights, "weighted_bce_iou weights")?;
    let wsum = weights.sum_per_sample();
    let bce = weights.mul(&logits.bce_with_logits(mask.data())).sum_per_sample().div(&wsum);
    let p = logits.sigmoid();
    let inter = weights.mul(&p.mul(mask)).sum_per_sample();
    let union = weights.mul(&p.add(mask)).sum_per_sample();
    let iou = inter
        .div(&union.sub(&inter).add_scalar(T::of(IOU_EPS)))
        .rsub_scalar(T::ONE);
    Ok(bce.add(&iou).mean())
}

/// Mean squared difference of two probability maps.
pub fn alignment_loss<T: Scalar>(pred_a: &Tensor<T>, pred_b: &Tensor<T>) -> Result<Tensor<T>> {
    check_same(pred_a, pred_b, "alignment_loss")?;
    Ok(pred_a.sub(pred_b).square().mean())
}

/// Scalar summary of one training step's loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_seg: f64,
    pub l_align: f64,
    pub l_total: f64,
    /// Individual terms, e.g. `orig.m1`, `enh.m2`, `align.m2`.
    pub terms: BTreeMap<String, f64>,
}
