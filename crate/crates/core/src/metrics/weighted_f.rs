//! Weighted F-measure.
//!
//! Errors on background pixels are replaced by the error at their nearest
//! foreground pixel, smoothed by a 7×7 Gaussian (σ = 5) to model pixel
//! dependency, and background errors are further scaled by a distance-based
//! importance term before computing weighted precision and recall.

use crate::error::Result;
use crate::raster::GrayMap;

use super::structure::EPS;

const KERNEL_SIZE: usize = 7;
const KERNEL_SIGMA: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedF {
    pub value: f64,
    /// Set when the mask has no foreground; `value` is then 0 by convention.
    pub empty_gt: bool,
}

pub fn weighted_f_measure(pred: &GrayMap, gt: &GrayMap, beta_sq: f64) -> Result<WeightedF> {
    pred.ensure_same_shape(gt, "weighted f-measure")?;
    let (h, w) = gt.shape();
    let mask: Vec<bool> = gt.data().iter().map(|&g| g > 0.5).collect();
    if !mask.iter().any(|&m| m) {
        return Ok(WeightedF {
            value: 0.0,
            empty_gt: true,
        });
    }

    let error: Vec<f64> = pred
        .data()
        .iter()
        .zip(&mask)
        .map(|(&p, &m)| (p - f64::from(u8::from(m))).abs())
        .collect();
    let nearest = nearest_foreground(&mask, h, w);

    let propagated: Vec<f64> = (0..h * w)
        .map(|i| if mask[i] { error[i] } else { error[nearest[i].1] })
        .collect();
    let smoothed = smooth_zero_padded(&propagated, h, w, &gaussian_1d());

    let decay = 0.5f64.ln() / 5.0;
    let (mut fg_err, mut bg_err) = (0.0, 0.0);
    let mut n_fg = 0usize;
    for i in 0..h * w {
        if mask[i] {
            let e = if smoothed[i] < error[i] { smoothed[i] } else { error[i] };
            fg_err += e;
            n_fg += 1;
        } else {
            let importance = 2.0 - (decay * nearest[i].0).exp();
            bg_err += error[i] * importance;
        }
    }
    let tp = n_fg as f64 - fg_err;
    let recall = 1.0 - fg_err / n_fg as f64;
    let precision = tp / (tp + bg_err + EPS);
    let value = (1.0 + beta_sq) * recall * precision / (recall + beta_sq * precision + EPS);
    Ok(WeightedF {
        value,
        empty_gt: false,
    })
}

/// Normalized 1-D factor of the 7×7, σ = 5 Gaussian; its outer product is
/// the 2-D kernel.
fn gaussian_1d() -> Vec<f64> {
    let r = (KERNEL_SIZE / 2) as isize;
    let k: Vec<f64> = (-r..=r)
        .map(|x| (-((x * x) as f64) / (2.0 * KERNEL_SIGMA * KERNEL_SIGMA)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    k.into_iter().map(|v| v / total).collect()
}

fn smooth_zero_padded(src: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let r = (k.len() / 2) as isize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, &kv) in k.iter().enumerate() {
                let xx = x as isize + j as isize - r;
                if (0..w as isize).contains(&xx) {
                    acc += kv * src[y * w + xx as usize];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, &kv) in k.iter().enumerate() {
                let yy = y as isize + j as isize - r;
                if (0..h as isize).contains(&yy) {
                    acc += kv * tmp[yy as usize * w + x];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Euclidean distance to, and flat index of, the nearest foreground pixel.
///
/// Distances come from an exact separable squared-distance transform. Among
/// equidistant foreground pixels the one with the smallest (row, column) is
/// chosen, so the result does not depend on scan order. Requires at least
/// one foreground pixel.
pub fn nearest_foreground(mask: &[bool], h: usize, w: usize) -> Vec<(f64, usize)> {
    let sq = squared_distance_transform(mask, h, w);
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if mask[i] {
                out.push((0.0, i));
                continue;
            }
            let d2 = sq[i];
            out.push(((d2 as f64).sqrt(), tie_broken_site(mask, h, w, r, c, d2)));
        }
    }
    out
}

fn tie_broken_site(mask: &[bool], h: usize, w: usize, r: usize, c: usize, d2: u64) -> usize {
    let reach = isqrt(d2) as i64;
    for dy in -reach..=reach {
        let rem = d2 - (dy * dy) as u64;
        let dx = isqrt(rem);
        if dx * dx != rem {
            continue;
        }
        let rr = r as i64 + dy;
        if rr < 0 || rr >= h as i64 {
            continue;
        }
        for cc in [c as i64 - dx as i64, c as i64 + dx as i64] {
            if cc >= 0 && cc < w as i64 && mask[rr as usize * w + cc as usize] {
                return rr as usize * w + cc as usize;
            }
        }
    }
    unreachable!("distance transform reported a site that does not exist")
}

fn isqrt(v: u64) -> u64 {
    let mut s = (v as f64).sqrt() as u64;
    while s * s > v {
        s -= 1;
    }
    while (s + 1) * (s + 1) <= v {
        s += 1;
    }
    s
}

/// Exact squared Euclidean distance transform: vertical scans followed by the
/// lower-envelope-of-parabolas pass along each row.
fn squared_distance_transform(mask: &[bool], h: usize, w: usize) -> Vec<u64> {
    const INF: u64 = u64::MAX / 4;
    let mut col = vec![INF; h * w];
    for c in 0..w {
        let mut last: Option<usize> = None;
        for r in 0..h {
            if mask[r * w + c] {
                last = Some(r);
            }
            if let Some(l) = last {
                col[r * w + c] = ((r - l) * (r - l)) as u64;
            }
        }
        last = None;
        for r in (0..h).rev() {
            if mask[r * w + c] {
                last = Some(r);
            }
            if let Some(l) = last {
                let d = ((l - r) * (l - r)) as u64;
                col[r * w + c] = col[r * w + c].min(d);
            }
        }
    }

    let mut out = vec![0u64; h * w];
    let mut v = vec![0usize; w];
    let mut z = vec![0f64; w + 1];
    for r in 0..h {
        let f = &col[r * w..(r + 1) * w];
        let sites: Vec<usize> = (0..w).filter(|&q| f[q] < INF).collect();
        if sites.is_empty() {
            out[r * w..(r + 1) * w].fill(INF);
            continue;
        }
        let mut k = 0usize;
        v[0] = sites[0];
        z[0] = f64::NEG_INFINITY;
        z[1] = f64::INFINITY;
        let intersect = |q: usize, p: usize| -> f64 {
            let (q, p, fq, fp) = (q as f64, p as f64, f[q] as f64, f[p] as f64);
            ((fq + q * q) - (fp + p * p)) / (2.0 * (q - p))
        };
        for &q in &sites[1..] {
            let mut s = intersect(q, v[k]);
            while s <= z[k] {
                k -= 1;
                s = intersect(q, v[k]);
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
        }
        k = 0;
        for q in 0..w {
            while z[k + 1] < q as f64 {
                k += 1;
            }
            let dq = q.abs_diff(v[k]) as u64;
            out[r * w + q] = dq * dq + f[v[k]];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn distance_transform_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let (h, w) = (rng.random_range(1..20), rng.random_range(1..20));
            let mut mask: Vec<bool> = (0..h * w).map(|_| rng.random::<f64>() < 0.08).collect();
            mask[rng.random_range(0..h * w)] = true;
            let fast = squared_distance_transform(&mask, h, w);
            for r in 0..h {
                for c in 0..w {
                    let best = (0..h * w)
                        .filter(|&j| mask[j])
                        .map(|j| {
                            let (dr, dc) = ((j / w) as i64 - r as i64, (j % w) as i64 - c as i64);
                            (dr * dr + dc * dc) as u64
                        })
                        .min()
                        .unwrap();
                    assert_eq!(fast[r * w + c], best);
                }
            }
        }
    }

    #[test]
    fn identity_scores_one() {
        let gt = GrayMap::from_fn(16, 16, |r, c| f64::from(u8::from((4..10).contains(&r) && c > 7)));
        let f = weighted_f_measure(&gt, &gt, 1.0).unwrap();
        assert!((f.value - 1.0).abs() < 1e-6);
        assert!(!f.empty_gt);
    }

    #[test]
    fn zero_prediction_scores_zero() {
        let gt = GrayMap::from_fn(20, 20, |r, c| f64::from(u8::from((6..14).contains(&r) && (5..12).contains(&c))));
        let f = weighted_f_measure(&GrayMap::filled(20, 20, 0.0), &gt, 1.0).unwrap();
        assert!(f.value.abs() < 1e-9, "{}", f.value);
    }

    #[test]
    fn empty_mask_is_flagged() {
        let z = GrayMap::filled(5, 5, 0.0);
        let f = weighted_f_measure(&z, &z, 1.0).unwrap();
        assert_eq!(f.value, 0.0);
        assert!(f.empty_gt);
    }
}
