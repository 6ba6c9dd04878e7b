//! Host-side image containers and the pixel-level helpers shared by the
//! enhancement, data loading and evaluation code.

use std::path::Path;

use image::{GrayImage, Luma, Rgb};

use crate::error::{Error, Result};

/// Single-channel real-valued map, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl GrayMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "map dimensions must be positive, got {height}x{width}"
            )));
        }
        if data.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{height}x{width} map needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0, "empty map");
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(height > 0 && width > 0, "empty map");
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.width + col] = value;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn ensure_same_shape(&self, other: &GrayMap, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch(format!(
                "{what}: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }
}

/// Interleaved H×W×3 color image with values in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        if data.len() != height * width * 3 {
            return Err(Error::ShapeMismatch(format!(
                "{height}x{width}x3 image needs {} values, got {}",
                height * width * 3,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::InvalidArgument(format!(
                "pixel value {bad} outside [0,1]"
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self::new(height, width, vec![value; height * width * 3]).expect("valid fill")
    }

    pub fn from_channels(channels: [&GrayMap; 3]) -> Result<Self> {
        let (h, w) = channels[0].shape();
        for ch in &channels[1..] {
            channels[0].ensure_same_shape(ch, "rgb channels")?;
        }
        let mut data = Vec::with_capacity(h * w * 3);
        for i in 0..h * w {
            for ch in &channels {
                data.push(ch.data[i]);
            }
        }
        Self::new(h, w, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.data[(row * self.width + col) * 3 + channel]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn channel(&self, channel: usize) -> GrayMap {
        assert!(channel < 3);
        GrayMap {
            height: self.height,
            width: self.width,
            data: self.data.iter().skip(channel).step_by(3).copied().collect(),
        }
    }

    /// Multiplies every value by `factor` and clips to [0,1].
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| (v * factor).clamp(0.0, 1.0)).collect(),
        }
    }

    pub fn resize_bilinear(&self, height: usize, width: usize) -> Self {
        let chans = [0, 1, 2].map(|c| resize_bilinear(&self.channel(c), height, width));
        Self::from_channels([&chans[0], &chans[1], &chans[2]]).expect("resized channels agree")
    }

    /// Channel-first copy (3×H×W) as `f32`, the layout fed to the network.
    pub fn to_chw_f32(&self) -> Vec<f32> {
        let plane = self.height * self.width;
        let mut out = vec![0f32; 3 * plane];
        for (i, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * plane + i] = px[c] as f32;
            }
        }
        out
    }
}

/// Index into `0..n` under reflect padding (`d c b | a b c d | c b a`),
/// folding repeatedly when the offset exceeds the signal length.
#[inline]
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Bilinear resampling with half-pixel centers and edge clamping
/// (no antialiasing), matching the usual `align_corners = false` convention.
pub fn resize_bilinear(src: &GrayMap, height: usize, width: usize) -> GrayMap {
    assert!(height > 0 && width > 0, "empty target size");
    if src.shape() == (height, width) {
        return src.clone();
    }
    let taps = |out: usize, inp: usize| -> Vec<(usize, usize, f64)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|o| {
                let pos = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
                let i0 = (pos.floor() as usize).min(inp - 1);
                let i1 = (i0 + 1).min(inp - 1);
                (i0, i1, pos - i0 as f64)
            })
            .collect()
    };
    let rows = taps(height, src.height);
    let cols = taps(width, src.width);
    GrayMap::from_fn(height, width, |r, c| {
        let (r0, r1, fy) = rows[r];
        let (c0, c1, fx) = cols[c];
        let top = src.get(r0, c0) * (1.0 - fx) + src.get(r0, c1) * fx;
        let bottom = src.get(r1, c0) * (1.0 - fx) + src.get(r1, c1) * fx;
        top * (1.0 - fy) + bottom * fy
    })
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path)
        .map_err(|e| Error::image(path, e))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.as_raw().iter().map(|&v| f64::from(v) / 255.0).collect();
    RgbImage::new(h as usize, w as usize, data)
}

/// Loads any image as a single-channel map scaled to [0,1].
pub fn load_gray(path: &Path) -> Result<GrayMap> {
    let img = image::open(path)
        .map_err(|e| Error::image(path, e))?
        .to_luma8();
    let (w, h) = img.dimensions();
    let data = img.as_raw().iter().map(|&v| f64::from(v) / 255.0).collect();
    GrayMap::new(h as usize, w as usize, data)
}

#[inline]
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn save_gray_png(map: &GrayMap, path: &Path) -> Result<()> {
    let mut img = GrayImage::new(map.width as u32, map.height as u32);
    for (x, y, px) in img.enumerate_pixels_mut() {
        *px = Luma([quantize(map.get(y as usize, x as usize))]);
    }
    ensure_parent(path)?;
    img.save(path).map_err(|e| Error::image(path, e))
}

pub fn save_rgb_png(rgb: &RgbImage, path: &Path) -> Result<()> {
    let mut img = image::RgbImage::new(rgb.width as u32, rgb.height as u32);
    for (x, y, px) in img.enumerate_pixels_mut() {
        let (r, c) = (y as usize, x as usize);
        *px = Rgb([0, 1, 2].map(|ch| quantize(rgb.get(r, c, ch))));
    }
    ensure_parent(path)?;
    img.save(path).map_err(|e| Error::image(path, e))
}

pub(crate) fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(())
}
