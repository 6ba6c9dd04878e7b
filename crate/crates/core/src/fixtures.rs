//! Deterministic synthetic camouflage scenes for CPU-only tests.
//!
//! Each scene is a blue-green textured background with depth falloff and a
//! single low-contrast object (an ellipse or a thick curved "worm") whose
//! texture differs only slightly from its surroundings.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::raster::{save_gray_png, save_rgb_png, GrayMap, RgbImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Ellipse,
    Worm,
}

struct Wave {
    fy: f64,
    fx: f64,
    phase: f64,
    amp: f64,
}

fn waves(rng: &mut ChaCha8Rng, n: usize, freq: (f64, f64), amp: f64) -> Vec<Wave> {
    (0..n)
        .map(|_| {
            let angle = rng.random::<f64>() * PI;
            let f = rng.random_range(freq.0..freq.1);
            Wave {
                fy: f * angle.sin(),
                fx: f * angle.cos(),
                phase: rng.random::<f64>() * 2.0 * PI,
                amp: amp * rng.random_range(0.5..1.0),
            }
        })
        .collect()
}

fn texture(ws: &[Wave], y: f64, x: f64) -> f64 {
    ws.iter()
        .map(|w| w.amp * (2.0 * PI * (w.fy * y + w.fx * x) + w.phase).sin())
        .sum()
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * vx + (p.1 - a.1) * vy) / len2).clamp(0.0, 1.0)
    };
    let (dx, dy) = (p.0 - (a.0 + t * vx), p.1 - (a.1 + t * vy));
    (dx * dx + dy * dy).sqrt()
}

fn shape_mask(rng: &mut ChaCha8Rng, size: usize) -> (ShapeKind, GrayMap) {
    let s = size as f64;
    if rng.random::<f64>() < 0.6 {
        let cy = s * rng.random_range(0.3..0.7);
        let cx = s * rng.random_range(0.3..0.7);
        let ry = s * rng.random_range(0.12..0.26);
        let rx = s * rng.random_range(0.12..0.26);
        let theta = rng.random::<f64>() * PI;
        let (st, ct) = theta.sin_cos();
        let m = GrayMap::from_fn(size, size, |r, c| {
            let (y, x) = (r as f64 + 0.5 - cy, c as f64 + 0.5 - cx);
            let u = (x * ct + y * st) / rx;
            let v = (-x * st + y * ct) / ry;
            f64::from(u8::from(u * u + v * v <= 1.0))
        });
        (ShapeKind::Ellipse, m)
    } else {
        // quadratic Bezier centerline sampled into short segments
        let p0 = (s * rng.random_range(0.15..0.4), s * rng.random_range(0.15..0.85));
        let p2 = (s * rng.random_range(0.6..0.85), s * rng.random_range(0.15..0.85));
        let p1 = (s * rng.random_range(0.2..0.8), s * rng.random_range(0.2..0.8));
        let half = s * rng.random_range(0.05..0.08);
        let pts: Vec<(f64, f64)> = (0..=24)
            .map(|i| {
                let t = i as f64 / 24.0;
                let a = (1.0 - t) * (1.0 - t);
                let b = 2.0 * t * (1.0 - t);
                let c = t * t;
                (a * p0.0 + b * p1.0 + c * p2.0, a * p0.1 + b * p1.1 + c * p2.1)
            })
            .collect();
        let m = GrayMap::from_fn(size, size, |r, c| {
            let p = (r as f64 + 0.5, c as f64 + 0.5);
            let d = pts
                .windows(2)
                .map(|w| segment_distance(p, w[0], w[1]))
                .fold(f64::INFINITY, f64::min);
            f64::from(u8::from(d <= half))
        });
        (ShapeKind::Worm, m)
    }
}

/// Generates scene `index` of the set identified by `seed`.
pub fn generate_fixture(seed: u64, index: usize, size: usize) -> (RgbImage, GrayMap, ShapeKind) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index as u64);
    let base = [
        rng.random_range(0.12..0.28),
        rng.random_range(0.35..0.55),
        rng.random_range(0.45..0.65),
    ];
    let shift: Vec<f64> = (0..3).map(|_| rng.random_range(0.06..0.11)).collect();
    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let bg_tex = waves(&mut rng, 5, (1.5, 6.0), 0.05);
    let fg_tex = waves(&mut rng, 4, (8.0, 14.0), 0.05);
    let falloff = rng.random_range(0.15..0.35);
    let (kind, mask) = shape_mask(&mut rng, size);

    let s = size as f64;
    let mut data = Vec::with_capacity(size * size * 3);
    for r in 0..size {
        for c in 0..size {
            let (y, x) = (r as f64 / s, c as f64 / s);
            let depth = 1.0 - falloff * y;
            let inside = mask.get(r, c) > 0.5;
            let tex = if inside {
                texture(&fg_tex, y, x)
            } else {
                texture(&bg_tex, y, x)
            };
            let grain = rng.random_range(-0.025..0.025);
            for ch in 0..3 {
                let mut v = base[ch] + tex + grain;
                if inside {
                    v += sign * shift[ch];
                }
                data.push((v * depth).clamp(0.0, 1.0));
            }
        }
    }
    let image = RgbImage::new(size, size, data).expect("clamped pixels are valid");
    (image, mask, kind)
}

/// Writes `count` scenes as `Image/fixture_NNN.png` and `GT/fixture_NNN.png`.
pub fn write_fixture_set(out: &Path, count: usize, seed: u64, size: usize) -> Result<()> {
    for i in 0..count {
        let (image, mask, _) = generate_fixture(seed, i, size);
        let name = format!("fixture_{i:03}.png");
        save_rgb_png(&image, &out.join("Image").join(&name))?;
        save_gray_png(&mask, &out.join("GT").join(&name))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_deterministic_and_nondegenerate() {
        for i in 0..6 {
            let (a, ma, _) = generate_fixture(0, i, 64);
            let (b, mb, _) = generate_fixture(0, i, 64);
            assert_eq!(a, b);
            assert_eq!(ma, mb);
            let fg = ma.mean();
            assert!(fg > 0.02 && fg < 0.6, "foreground ratio {fg}");
        }
        let (a, _, _) = generate_fixture(0, 0, 64);
        let (b, _, _) = generate_fixture(1, 0, 64);
        assert_ne!(a, b);
    }

    #[test]
    fn both_shape_kinds_occur() {
        let kinds: Vec<_> = (0..16).map(|i| generate_fixture(0, i, 48).2).collect();
        assert!(kinds.contains(&ShapeKind::Ellipse));
        assert!(kinds.contains(&ShapeKind::Worm));
    }

    #[test]
    fn object_is_low_contrast() {
        let (img, mask, _) = generate_fixture(3, 2, 96);
        let mut sums = [[0.0; 3]; 2];
        let mut counts = [0.0; 2];
        for r in 0..96 {
            for c in 0..96 {
                let k = usize::from(mask.get(r, c) > 0.5);
                counts[k] += 1.0;
                for ch in 0..3 {
                    sums[k][ch] += img.get(r, c, ch);
                }
            }
        }
        for ch in 0..3 {
            let diff = (sums[1][ch] / counts[1] - sums[0][ch] / counts[0]).abs();
            assert!(diff < 0.2, "channel {ch} contrast {diff}");
        }
    }
}
