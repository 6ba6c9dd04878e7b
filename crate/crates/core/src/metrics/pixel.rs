use crate::error::Result;
use crate::raster::GrayMap;

/// Mean absolute error between a prediction in [0,1] and a binary mask.
pub fn mae(pred: &GrayMap, gt: &GrayMap) -> Result<f64> {
    pred.ensure_same_shape(gt, "mae")?;
    let total: f64 = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(p, g)| (p - g).abs())
        .sum();
    Ok(total / pred.len() as f64)
}

/// Intersection over union of `pred >= threshold` against the mask.
/// Two empty masks score 1.
pub fn iou(pred: &GrayMap, gt: &GrayMap, threshold: f64) -> Result<f64> {
    pred.ensure_same_shape(gt, "iou")?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        let p = p >= threshold;
        let g = g > 0.5;
        inter += usize::from(p && g);
        union += usize::from(p || g);
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// Mean per-image IoU over a set of (prediction, mask) pairs.
pub fn miou<'a>(
    pairs: impl IntoIterator<Item = (&'a GrayMap, &'a GrayMap)>,
    threshold: f64,
) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for (p, g) in pairs {
        total += iou(p, g, threshold)?;
        n += 1;
    }
    Ok(if n == 0 { 0.0 } else { total / n as f64 })
}
