//! Structure measure: object-aware similarity blended with a region-aware
//! SSIM over the four quadrants split at the mask centroid.

use crate::error::Result;
use crate::raster::GrayMap;

pub(crate) const EPS: f64 = f64::EPSILON;

pub fn s_measure(pred: &GrayMap, gt: &GrayMap, alpha: f64) -> Result<f64> {
    pred.ensure_same_shape(gt, "s-measure")?;
    let mask: Vec<bool> = gt.data().iter().map(|&g| g > 0.5).collect();
    let fg_ratio = mask.iter().filter(|&&m| m).count() as f64 / mask.len() as f64;
    if fg_ratio == 0.0 {
        return Ok(1.0 - pred.mean());
    }
    if fg_ratio == 1.0 {
        return Ok(pred.mean());
    }
    let score = alpha * object_similarity(pred.data(), &mask, fg_ratio)
        + (1.0 - alpha) * region_similarity(pred, &mask);
    Ok(score.max(0.0))
}

fn object_similarity(pred: &[f64], mask: &[bool], fg_ratio: f64) -> f64 {
    let fg = object_score(pred.iter().zip(mask).filter(|(_, &m)| m).map(|(&p, _)| p));
    let bg = object_score(
        pred.iter()
            .zip(mask)
            .filter(|(_, &m)| !m)
            .map(|(&p, _)| 1.0 - p),
    );
    fg_ratio * fg + (1.0 - fg_ratio) * bg
}

fn object_score(values: impl Iterator<Item = f64>) -> f64 {
    let values: Vec<f64> = values.collect();
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    // sample standard deviation; a single sample has zero spread
    let std = if n > 1 {
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        (ss / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    2.0 * mean / (mean * mean + 1.0 + std + EPS)
}

/// 1-based centroid (column, row) of the mask, rounded half away from zero.
pub(crate) fn centroid(mask: &[bool], height: usize, width: usize) -> (usize, usize) {
    let (mut n, mut sx, mut sy) = (0usize, 0usize, 0usize);
    for r in 0..height {
        for c in 0..width {
            if mask[r * width + c] {
                n += 1;
                sx += c + 1;
                sy += r + 1;
            }
        }
    }
    if n == 0 {
        return (
            (width as f64 / 2.0).round() as usize,
            (height as f64 / 2.0).round() as usize,
        );
    }
    (
        (sx as f64 / n as f64).round() as usize,
        (sy as f64 / n as f64).round() as usize,
    )
}

fn region_similarity(pred: &GrayMap, mask: &[bool]) -> f64 {
    let (h, w) = pred.shape();
    let (x, y) = centroid(mask, h, w);
    let area = (h * w) as f64;
    let quadrants = [
        (0..y, 0..x),
        (0..y, x..w),
        (y..h, 0..x),
        (y..h, x..w),
    ];
    let mut score = 0.0;
    for (rows, cols) in quadrants {
        let n = rows.len() * cols.len();
        if n == 0 {
            continue;
        }
        let weight = n as f64 / area;
        let mut p = Vec::with_capacity(n);
        let mut g = Vec::with_capacity(n);
        for r in rows {
            for c in cols.clone() {
                p.push(pred.get(r, c));
                g.push(if mask[r * w + c] { 1.0 } else { 0.0 });
            }
        }
        score += weight * ssim(&p, &g);
    }
    score
}

fn ssim(pred: &[f64], gt: &[f64]) -> f64 {
    let n = pred.len() as f64;
    let x = pred.iter().sum::<f64>() / n;
    let y = gt.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (&p, &g) in pred.iter().zip(gt) {
        sxx += (p - x) * (p - x);
        syy += (g - y) * (g - y);
        sxy += (p - x) * (g - y);
    }
    let denom = n - 1.0 + EPS;
    let (sxx, syy, sxy) = (sxx / denom, syy / denom, sxy / denom);
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sxx + syy);
    if alpha != 0.0 {
        alpha / (beta + EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_scores_one() {
        let gt = GrayMap::from_fn(12, 16, |r, c| f64::from(u8::from((3..8).contains(&r) && c > 5)));
        let s = s_measure(&gt, &gt, 0.5).unwrap();
        assert!((s - 1.0).abs() < 1e-6, "{s}");
    }

    #[test]
    fn degenerate_masks_use_mean_fallback() {
        let zeros = GrayMap::filled(5, 5, 0.0);
        assert_eq!(s_measure(&zeros, &zeros, 0.5).unwrap(), 1.0);
        let p = GrayMap::filled(5, 5, 0.3);
        assert!((s_measure(&p, &zeros, 0.5).unwrap() - 0.7).abs() < 1e-12);
        let ones = GrayMap::filled(5, 5, 1.0);
        assert!((s_measure(&p, &ones, 0.5).unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn centroid_rounds_half_away() {
        // columns {1,2} (1-based) -> mean 1.5 -> 2
        let mask = vec![true, true, false, false];
        assert_eq!(centroid(&mask, 1, 4), (2, 1));
    }
}
