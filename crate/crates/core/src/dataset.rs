//! Image/mask directory indexing, loading and Siamese batch assembly.
//!
//! Expected layout is either a flat `root/{Image,GT}` pair or MAS3K-style
//! `root/{train,test}/{Image,GT}`. Every image `x.jpg` (or `.jpeg`/`.png`)
//! must have a mask `x.png`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::msrcr::{msrcr, MsrcrConfig};
use crate::raster::{load_gray, load_rgb, resize_bilinear, GrayMap, RgbImage};

const IMAGE_EXTENSIONS: [&str; 3] = ["jpg", "jpeg", "png"];
pub const MIN_INPUT_SIZE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Layout {
    /// Parallel image and mask directories.
    PairedDirs { image_dir: String, mask_dir: String },
}

impl Default for Layout {
    fn default() -> Self {
        Layout::PairedDirs {
            image_dir: "Image".into(),
            mask_dir: "GT".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleRecord {
    pub image_path: PathBuf,
    pub mask_path: PathBuf,
    pub split: Split,
}

impl SampleRecord {
    pub fn stem(&self) -> String {
        self.image_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    }
}

/// Lists every image/mask pair under `root`, sorted by split then file name.
pub fn index_dataset(root: &Path, layout: &Layout) -> Result<Vec<SampleRecord>> {
    let Layout::PairedDirs {
        image_dir,
        mask_dir,
    } = layout;
    if !root.is_dir() {
        return Err(Error::Dataset(format!("{} is not a directory", root.display())));
    }
    let mut records = Vec::new();
    if root.join(image_dir).is_dir() {
        index_split(root, image_dir, mask_dir, Split::Train, &mut records)?;
    } else {
        for split in [Split::Train, Split::Test] {
            let dir = root.join(split.dir_name());
            if dir.join(image_dir).is_dir() {
                index_split(&dir, image_dir, mask_dir, split, &mut records)?;
            }
        }
    }
    if records.is_empty() {
        return Err(Error::Dataset(format!(
            "no images found under {} (expected {image_dir}/ and {mask_dir}/)",
            root.display()
        )));
    }
    Ok(records)
}

fn index_split(
    dir: &Path,
    image_dir: &str,
    mask_dir: &str,
    split: Split,
    out: &mut Vec<SampleRecord>,
) -> Result<()> {
    let images = dir.join(image_dir);
    let masks = dir.join(mask_dir);
    let mut found = Vec::new();
    for entry in fs::read_dir(&images).map_err(|e| Error::io(&images, e))? {
        let path = entry.map_err(|e| Error::io(&images, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            found.push(path);
        }
    }
    found.sort();
    for image_path in found {
        let stem = image_path.file_stem().unwrap_or_default();
        let mask_path = masks.join(stem).with_extension("png");
        if !mask_path.is_file() {
            return Err(Error::Dataset(format!(
                "image {} has no mask (looked for {})",
                image_path.display(),
                mask_path.display()
            )));
        }
        out.push(SampleRecord {
            image_path,
            mask_path,
            split,
        });
    }
    Ok(())
}

/// Loads an image and its mask at `size`×`size`. The image is bilinearly
/// resized; the mask is bilinearly resized then thresholded at 0.5.
pub fn load_sample(record: &SampleRecord, size: usize) -> Result<(RgbImage, GrayMap)> {
    if size < MIN_INPUT_SIZE {
        return Err(Error::InvalidArgument(format!(
            "input size {size} below minimum {MIN_INPUT_SIZE}"
        )));
    }
    let image = load_rgb(&record.image_path)?.resize_bilinear(size, size);
    let mask = load_gray(&record.mask_path)?;
    let mask = resize_bilinear(&mask, size, size).map(|v| if v >= 0.5 { 1.0 } else { 0.0 });
    Ok((image, mask))
}

/// Host-side Siamese batch, channel-first.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub batch_size: usize,
    pub size: usize,
    /// B×3×H×W in [0,1].
    pub originals: Vec<f32>,
    /// B×3×H×W in [0,1], the enhanced counterpart of each original.
    pub enhanced: Vec<f32>,
    /// B×1×H×W with values in {0,1}.
    pub masks: Vec<f32>,
}

impl Batch {
    pub fn from_samples(samples: &[(RgbImage, RgbImage, GrayMap)]) -> Result<Self> {
        let Some(first) = samples.first() else {
            return Err(Error::InvalidArgument("empty batch".into()));
        };
        let size = first.0.height();
        let mut batch = Batch {
            batch_size: samples.len(),
            size,
            originals: Vec::with_capacity(samples.len() * 3 * size * size),
            enhanced: Vec::with_capacity(samples.len() * 3 * size * size),
            masks: Vec::with_capacity(samples.len() * size * size),
        };
        for (orig, enh, mask) in samples {
            if orig.shape() != (size, size) || enh.shape() != (size, size) || mask.shape() != (size, size) {
                return Err(Error::ShapeMismatch(format!("batch members must all be {size}x{size}")));
            }
            batch.originals.extend(orig.to_chw_f32());
            batch.enhanced.extend(enh.to_chw_f32());
            batch.masks.extend(mask.data().iter().map(|&v| v as f32));
        }
        Ok(batch)
    }

    pub fn image_shape(&self) -> [usize; 4] {
        [self.batch_size, 3, self.size, self.size]
    }

    pub fn mask_shape(&self) -> [usize; 4] {
        [self.batch_size, 1, self.size, self.size]
    }
}

/// On-disk cache of enhanced images, keyed by source path, input size and
/// enhancement parameters. Entries hold raw little-endian `f64` pixels so a
/// cache hit is bit-identical to recomputation. Writes go through a
/// temporary file and an atomic rename.
#[derive(Debug, Clone)]
pub struct EnhanceCache {
    dir: PathBuf,
}

impl EnhanceCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self { dir })
    }

    fn key(path: &Path, size: usize, config: &MsrcrConfig) -> String {
        let mut h = Sha256::new();
        h.update(path.to_string_lossy().as_bytes());
        h.update(size.to_le_bytes());
        h.update(config.fingerprint().as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn get_or_compute(
        &self,
        path: &Path,
        size: usize,
        config: &MsrcrConfig,
        original: &RgbImage,
    ) -> Result<RgbImage> {
        let file = self.dir.join(Self::key(path, size, config) + ".bin");
        if let Ok(bytes) = fs::read(&file) {
            if bytes.len() == size * size * 3 * 8 {
                let data = bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                    .collect();
                return RgbImage::new(size, size, data);
            }
            log::warn!("ignoring truncated cache entry {}", file.display());
        }
        let enhanced = msrcr(original, config)?;
        let tmp = self.dir.join(format!(
            ".{}.{}.tmp",
            file.file_name().unwrap_or_default().to_string_lossy(),
            std::process::id()
        ));
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let bytes: Vec<u8> = enhanced.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        drop(f);
        fs::rename(&tmp, &file).map_err(|e| Error::io(&file, e))?;
        Ok(enhanced)
    }
}

/// Loads one record and pairs it with its enhanced version.
pub fn load_pair(
    record: &SampleRecord,
    config: &MsrcrConfig,
    size: usize,
    cache: Option<&EnhanceCache>,
) -> Result<(RgbImage, RgbImage, GrayMap)> {
    let (image, mask) = load_sample(record, size)?;
    let enhanced = match cache {
        Some(c) => c.get_or_compute(&record.image_path, size, config, &image)?,
        None => msrcr(&image, config)?,
    };
    Ok((image, enhanced, mask))
}

pub fn make_batch(records: &[SampleRecord], config: &MsrcrConfig, size: usize) -> Result<Batch> {
    make_batch_cached(records, config, size, None)
}

pub fn make_batch_cached(
    records: &[SampleRecord],
    config: &MsrcrConfig,
    size: usize,
    cache: Option<&EnhanceCache>,
) -> Result<Batch> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("cannot build a batch from zero records".into()));
    }
    let samples = records
        .iter()
        .map(|r| load_pair(r, config, size, cache))
        .collect::<Result<Vec<_>>>()?;
    Batch::from_samples(&samples)
}
