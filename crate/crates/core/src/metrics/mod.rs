//! Segmentation quality metrics: mIoU, structure measure, weighted
//! F-measure, enhanced-alignment measure and MAE.

mod alignment;
mod pixel;
mod structure;
mod weighted_f;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{load_gray, resize_bilinear, GrayMap};

pub use alignment::{adaptive_threshold, e_measure, e_measure_at, e_measure_sweep};
pub use pixel::{iou, mae, miou};
pub use structure::s_measure;
pub use weighted_f::{nearest_foreground, weighted_f_measure, WeightedF};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricConfig {
    /// Object/region balance of the structure measure.
    pub alpha: f64,
    /// β² of the weighted F-measure.
    pub beta_sq: f64,
    pub iou_threshold: f64,
    /// Report E-measure averaged over a threshold sweep instead of the
    /// adaptive threshold.
    pub e_sweep: bool,
    /// Min-max stretch each prediction map before scoring (the usual
    /// saliency/COD evaluation convention).
    pub normalize_predictions: bool,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta_sq: 1.0,
            iou_threshold: 0.5,
            e_sweep: false,
            normalize_predictions: true,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidArgument(format!("metric alpha {} not in [0,1]", self.alpha)));
        }
        if !(self.beta_sq > 0.0) {
            return Err(Error::InvalidArgument("metric beta_sq must be positive".into()));
        }
        if !(self.iou_threshold > 0.0 && self.iou_threshold < 1.0) {
            return Err(Error::InvalidArgument("iou threshold must lie in (0,1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageScores {
    pub iou: f64,
    pub s_alpha: f64,
    pub f_beta_w: f64,
    pub e_phi: f64,
    pub mae: f64,
}

/// Dataset-level averages, one field per reported column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub miou: f64,
    pub s_alpha: f64,
    pub f_beta_w: f64,
    pub e_phi: f64,
    pub mae: f64,
    pub n_images: usize,
}

impl MetricReport {
    pub fn from_scores(scores: &[ImageScores]) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::Dataset("no images to score".into()));
        }
        let n = scores.len() as f64;
        let avg = |f: fn(&ImageScores) -> f64| scores.iter().map(f).sum::<f64>() / n;
        Ok(Self {
            miou: avg(|s| s.iou),
            s_alpha: avg(|s| s.s_alpha),
            f_beta_w: avg(|s| s.f_beta_w),
            e_phi: avg(|s| s.e_phi),
            mae: avg(|s| s.mae),
            n_images: scores.len(),
        })
    }

    pub const CSV_HEADER: [&'static str; 6] = ["miou", "s_alpha", "f_beta_w", "e_phi", "mae", "n_images"];

    pub fn csv_row(&self) -> [String; 6] {
        [
            format!("{:.6}", self.miou),
            format!("{:.6}", self.s_alpha),
            format!("{:.6}", self.f_beta_w),
            format!("{:.6}", self.e_phi),
            format!("{:.6}", self.mae),
            self.n_images.to_string(),
        ]
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        crate::raster::ensure_parent(path)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        crate::raster::ensure_parent(path)?;
        let mut w = csv::Writer::from_path(path)
            .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        w.write_record(Self::CSV_HEADER)
            .and_then(|_| w.write_record(self.csv_row()))
            .and_then(|_| w.flush().map_err(Into::into))
            .map_err(|e| Error::io(path, std::io::Error::other(e)))
    }
}

/// Binarizes a loaded mask at 0.5.
pub fn binarize(map: &GrayMap) -> GrayMap {
    map.map(|v| if v > 0.5 { 1.0 } else { 0.0 })
}

fn min_max_stretch(map: &GrayMap) -> GrayMap {
    let (lo, hi) = map.min_max();
    if hi > lo {
        map.map(|v| (v - lo) / (hi - lo))
    } else {
        map.clone()
    }
}

/// Scores one prediction against its mask. The prediction is resized to
/// the mask resolution first.
pub fn score_pair(pred: &GrayMap, gt: &GrayMap, config: &MetricConfig) -> Result<ImageScores> {
    let gt = binarize(gt);
    let mut pred = if pred.shape() == gt.shape() {
        pred.clone()
    } else {
        resize_bilinear(pred, gt.height(), gt.width())
    };
    if pred.shape() != gt.shape() {
        return Err(Error::ShapeMismatch("prediction not at mask resolution".into()));
    }
    pred = pred.map(|v| v.clamp(0.0, 1.0));
    if config.normalize_predictions {
        pred = min_max_stretch(&pred);
    }
    let wf = weighted_f_measure(&pred, &gt, config.beta_sq)?;
    Ok(ImageScores {
        iou: iou(&pred, &gt, config.iou_threshold)?,
        s_alpha: s_measure(&pred, &gt, config.alpha)?,
        f_beta_w: wf.value,
        e_phi: if config.e_sweep {
            e_measure_sweep(&pred, &gt)?
        } else {
            e_measure(&pred, &gt)?
        },
        mae: mae(&pred, &gt)?,
    })
}

fn png_stems(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), path.clone());
            }
        }
    }
    Ok(out)
}

/// Scores every `<name>.png` prediction in `pred_dir` against the mask of
/// the same name in `gt_dir`.
pub fn evaluate_dataset(pred_dir: &Path, gt_dir: &Path, config: &MetricConfig) -> Result<MetricReport> {
    config.validate()?;
    let preds = png_stems(pred_dir)?;
    let gts = png_stems(gt_dir)?;
    if let Some((_, path)) = gts.iter().find(|(k, _)| !preds.contains_key(*k)) {
        return Err(Error::Dataset(format!(
            "no prediction for mask {}",
            path.display()
        )));
    }
    if let Some((_, path)) = preds.iter().find(|(k, _)| !gts.contains_key(*k)) {
        return Err(Error::Dataset(format!(
            "no mask for prediction {}",
            path.display()
        )));
    }
    let mut scores = Vec::with_capacity(gts.len());
    for (stem, gt_path) in &gts {
        let gt = load_gray(gt_path)?;
        let pred = load_gray(&preds[stem])?;
        if !binarize(&gt).data().iter().any(|&v| v > 0.0) {
            log::warn!("mask {} is empty; weighted F scored as 0", gt_path.display());
        }
        scores.push(score_pair(&pred, &gt, config)?);
    }
    MetricReport::from_scores(&scores)
}
