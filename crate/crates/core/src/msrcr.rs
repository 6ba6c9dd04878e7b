//! Multi-Scale Retinex with Color Restoration.
//!
//! Each channel is decomposed in the log domain against Gaussian surrounds
//! at several scales, the reflectance estimates are blended with per-scale
//! weights and multiplied by a color-restoration factor, and the result is
//! stretched back to [0,1] with a per-image min-max normalization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{reflect_index, GrayMap, RgbImage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MsrcrConfig {
    /// Gaussian surround standard deviations in pixels.
    pub scales: Vec<f64>,
    /// Blend weight for each scale; must sum to 1.
    pub weights: Vec<f64>,
    /// Color-restoration nonlinearity strength.
    pub alpha: f64,
    /// Color-restoration gain.
    pub beta: f64,
    pub gain: f64,
    pub offset: f64,
    pub epsilon: f64,
}

impl Default for MsrcrConfig {
    fn default() -> Self {
        Self {
            scales: vec![15.0, 80.0, 250.0],
            weights: vec![1.0 / 3.0; 3],
            alpha: 125.0,
            beta: 46.0,
            gain: 1.0,
            offset: 0.0,
            epsilon: 1e-6,
        }
    }
}

impl MsrcrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() {
            return Err(Error::InvalidArgument("msrcr needs at least one scale".into()));
        }
        if self.scales.len() != self.weights.len() {
            return Err(Error::InvalidArgument(format!(
                "msrcr has {} scales but {} weights",
                self.scales.len(),
                self.weights.len()
            )));
        }
        if let Some(s) = self.scales.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidArgument(format!("msrcr scale {s} must be positive")));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "msrcr weights sum to {total}, expected 1"
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidArgument("msrcr epsilon must be positive".into()));
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gain", self.gain),
            ("offset", self.offset),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!("msrcr {name} is not finite")));
            }
        }
        Ok(())
    }

    /// Stable fingerprint of every field, used as part of cache keys.
    pub fn fingerprint(&self) -> String {
        let mut s = String::new();
        for v in self
            .scales
            .iter()
            .chain(&self.weights)
            .chain([self.alpha, self.beta, self.gain, self.offset, self.epsilon].iter())
        {
            s.push_str(&format!("{:016x};", v.to_bits()));
        }
        s
    }
}

/// Normalized 1-D Gaussian truncated at 3σ.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "gaussian sigma must be positive, got {sigma}"
        )));
    }
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|x| (-((x * x) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    Ok(k)
}

/// Convolves `image` with a normalized Gaussian of standard deviation
/// `sigma` under reflect padding. Same spatial shape as the input.
pub fn gaussian_surround(image: &GrayMap, sigma: f64) -> Result<GrayMap> {
    let kernel = gaussian_kernel(sigma)?;
    if !image.is_finite() {
        return Err(Error::InvalidArgument("surround input is not finite".into()));
    }
    let radius = (kernel.len() / 2) as isize;
    let (h, w) = image.shape();

    // horizontal pass
    let col_taps: Vec<Vec<usize>> = (0..w as isize)
        .map(|c| {
            (-radius..=radius)
                .map(|d| reflect_index(c + d, w))
                .collect()
        })
        .collect();
    let mut tmp = vec![0.0; h * w];
    let src = image.data();
    for r in 0..h {
        let row = &src[r * w..(r + 1) * w];
        for c in 0..w {
            tmp[r * w + c] = col_taps[c]
                .iter()
                .zip(&kernel)
                .map(|(&i, &k)| row[i] * k)
                .sum();
        }
    }

    // vertical pass, accumulated row by row to stay cache-friendly
    let mut out = vec![0.0; h * w];
    for r in 0..h as isize {
        let dst = &mut out[r as usize * w..(r as usize + 1) * w];
        for (j, &k) in kernel.iter().enumerate() {
            let sr = reflect_index(r + j as isize - radius, h);
            let srow = &tmp[sr * w..(sr + 1) * w];
            for (d, s) in dst.iter_mut().zip(srow) {
                *d += k * s;
            }
        }
    }
    GrayMap::new(h, w, out)
}

/// Applies MSRCR and rescales the result to [0,1].
///
/// A result with no dynamic range (for instance a uniformly gray input)
/// maps to the constant 0.5 image.
pub fn msrcr(image: &RgbImage, config: &MsrcrConfig) -> Result<RgbImage> {
    config.validate()?;
    let eps = config.epsilon;
    let (h, w) = image.shape();
    let channels: Vec<GrayMap> = (0..3).map(|c| image.channel(c)).collect();
    let intensity_sum: Vec<f64> = (0..h * w)
        .map(|i| channels.iter().map(|ch| ch.data()[i]).sum())
        .collect();

    let mut restored = Vec::with_capacity(3);
    for ch in &channels {
        let mut retinex = vec![0.0; h * w];
        for (&sigma, &weight) in config.scales.iter().zip(&config.weights) {
            let surround = gaussian_surround(ch, sigma)?;
            for ((acc, &v), &s) in retinex.iter_mut().zip(ch.data()).zip(surround.data()) {
                *acc += weight * ((v + eps).ln() - (s + eps).ln());
            }
        }
        let out: Vec<f64> = retinex
            .iter()
            .zip(ch.data())
            .zip(&intensity_sum)
            .map(|((&r, &v), &total)| {
                let restoration =
                    config.beta * ((config.alpha * v + eps).ln() - (total + eps).ln());
                config.gain * r * restoration + config.offset
            })
            .collect();
        restored.push(GrayMap::new(h, w, out)?);
    }

    let (lo, hi) = restored.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |acc, m| {
        let (a, b) = m.min_max();
        (acc.0.min(a), acc.1.max(b))
    });
    if !(hi - lo > 1e-9) {
        return Ok(RgbImage::filled(h, w, 0.5));
    }
    let scale = 1.0 / (hi - lo);
    let normalized: Vec<GrayMap> = restored
        .iter()
        .map(|m| m.map(|v| ((v - lo) * scale).clamp(0.0, 1.0)))
        .collect();
    RgbImage::from_channels([&normalized[0], &normalized[1], &normalized[2]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense_surround(img: &GrayMap, sigma: f64) -> GrayMap {
        let radius = (3.0 * sigma).ceil() as isize;
        let mut k2 = Vec::new();
        for dy in -radius..=radius {
            for dx in -radius..=radius {
                k2.push((dy, dx, (-((dy * dy + dx * dx) as f64) / (2.0 * sigma * sigma)).exp()));
            }
        }
        let total: f64 = k2.iter().map(|t| t.2).sum();
        let (h, w) = img.shape();
        GrayMap::from_fn(h, w, |r, c| {
            let mut acc = 0.0;
            for &(dy, dx, k) in &k2 {
                let rr = reflect_index(r as isize + dy, h);
                let cc = reflect_index(c as isize + dx, w);
                acc += img.get(rr, cc) * k / total;
            }
            acc
        })
    }

    #[test]
    fn constant_map_is_preserved() {
        let img = GrayMap::filled(9, 13, 0.37);
        for sigma in [0.5, 1.0, 2.0, 15.0, 80.0] {
            let out = gaussian_surround(&img, sigma).unwrap();
            assert!(out.data().iter().all(|v| (v - 0.37).abs() < 1e-9), "sigma {sigma}");
        }
    }

    #[test]
    fn impulse_spreads_into_unit_mass_blob() {
        let mut img = GrayMap::filled(15, 15, 0.0);
        img.set(7, 7, 1.0);
        let out = gaussian_surround(&img, 1.0).unwrap();
        let mass: f64 = out.data().iter().sum();
        assert!((mass - 1.0).abs() < 1e-6);
        for d in 1..4 {
            assert!((out.get(7, 7 - d) - out.get(7, 7 + d)).abs() < 1e-15);
            assert!((out.get(7 - d, 7) - out.get(7 + d, 7)).abs() < 1e-15);
            assert!((out.get(7 - d, 7) - out.get(7, 7 + d)).abs() < 1e-15);
        }
        assert!(out.get(7, 7) > out.get(7, 8));
    }

    #[test]
    fn separable_surround_matches_dense_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let img = GrayMap::from_fn(16, 16, |_, _| rng.random::<f64>());
        let fast = gaussian_surround(&img, 2.0).unwrap();
        let slow = dense_surround(&img, 2.0);
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn surround_wider_than_image_still_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let img = GrayMap::from_fn(5, 7, |_, _| rng.random::<f64>());
        let fast = gaussian_surround(&img, 4.0).unwrap();
        let slow = dense_surround(&img, 4.0);
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn non_positive_sigma_is_rejected() {
        let img = GrayMap::filled(4, 4, 0.1);
        assert!(matches!(gaussian_surround(&img, 0.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(gaussian_surround(&img, -1.0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn constant_gray_maps_to_half() {
        let img = RgbImage::filled(12, 10, 0.4);
        let out = msrcr(&img, &MsrcrConfig::default()).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn config_validation() {
        let mut cfg = MsrcrConfig::default();
        cfg.weights = vec![0.5, 0.5, 0.5];
        assert!(cfg.validate().is_err());
        let mut cfg = MsrcrConfig::default();
        cfg.scales.pop();
        assert!(cfg.validate().is_err());
        let mut cfg = MsrcrConfig::default();
        cfg.scales[1] = -3.0;
        assert!(cfg.validate().is_err());
        let mut cfg = MsrcrConfig::default();
        cfg.epsilon = 0.0;
        assert!(cfg.validate().is_err());
        assert!(MsrcrConfig::default().validate().is_ok());
    }

    #[test]
    fn deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = (0..20 * 20 * 3).map(|_| rng.random::<f64>()).collect();
        let img = RgbImage::new(20, 20, data).unwrap();
        let cfg = MsrcrConfig {
            scales: vec![2.0, 6.0],
            weights: vec![0.5, 0.5],
            ..Default::default()
        };
        let a = msrcr(&img, &cfg).unwrap();
        let b = msrcr(&img, &cfg).unwrap();
        assert_eq!(a.data(), b.data());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn output_in_unit_range(seed in 0u64..1000, h in 1usize..12, w in 1usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = (0..h * w * 3).map(|_| rng.random::<f64>()).collect();
            let img = RgbImage::new(h, w, data).unwrap();
            let cfg = MsrcrConfig { scales: vec![1.0, 3.0], weights: vec![0.5, 0.5], ..Default::default() };
            let out = msrcr(&img, &cfg).unwrap();
            prop_assert_eq!(out.shape(), (h, w));
            prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }

        #[test]
        fn surround_preserves_constants(c in 0.0f64..1.0, sigma in 0.3f64..20.0) {
            let out = gaussian_surround(&GrayMap::filled(6, 9, c), sigma).unwrap();
            prop_assert!(out.data().iter().all(|v| (v - c).abs() < 1e-9));
        }
    }
}
