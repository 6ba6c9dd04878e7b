//! Training schemes: the weight-shared Siamese step, single-branch training,
//! and single-branch training on randomly enhanced samples.

use std::collections::BTreeMap;

use apgnet_autograd::{param_count, Adam, AdamConfig, Mode, Scalar, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Batch;
use crate::error::{Error, Result};
use crate::loss::{alignment_loss, pixel_weight_map, weighted_bce_iou, LossReport};
use crate::model::{ApgNet, PredictionSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// One branch on original images.
    Single,
    /// One branch; each sample replaced by its enhanced version with
    /// probability [`MIX_PROBABILITY`].
    MixedAugment,
    /// Original and enhanced branches with shared weights plus alignment.
    Siamese,
}

pub const MIX_PROBABILITY: f64 = 0.5;

/// Shared-weight branch in the Siamese step: batch statistics are used but
/// running statistics follow the original images only.
pub const ENHANCED_BRANCH_MODE: Mode = Mode::Train { update_stats: false };

pub fn batch_tensors<T: Scalar>(batch: &Batch) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let cast = |v: &[f32]| v.iter().map(|&x| T::of(f64::from(x))).collect::<Vec<T>>();
    (
        Tensor::constant(batch.image_shape(), cast(&batch.originals)),
        Tensor::constant(batch.image_shape(), cast(&batch.enhanced)),
        Tensor::constant(batch.mask_shape(), cast(&batch.masks)),
    )
}

/// Loss graph of one scheme evaluation, before any update.
pub struct LossGraph<T: Scalar> {
    pub total: Tensor<T>,
    pub report: LossReport,
    pub predictions: Vec<PredictionSet<T>>,
}

struct Terms<T: Scalar> {
    seg: Vec<(&'static str, Tensor<T>)>,
    align: Vec<(&'static str, Tensor<T>)>,
}

impl<T: Scalar> Terms<T> {
    fn new() -> Self {
        Self {
            seg: Vec::new(),
            align: Vec::new(),
        }
    }

    fn seg_terms(&mut self, pred: &PredictionSet<T>, mask: &Tensor<T>, weights: &Tensor<T>, names: [&'static str; 2]) -> Result<()> {
        self.seg.push((names[0], weighted_bce_iou(&pred.m1_logits, mask, weights)?));
        if let Some(m2) = &pred.m2_logits {
            self.seg.push((names[1], weighted_bce_iou(m2, mask, weights)?));
        }
        Ok(())
    }

    fn finish(self, step: usize, predictions: Vec<PredictionSet<T>>) -> Result<LossGraph<T>> {
        let mut terms = BTreeMap::new();
        let (mut l_seg, mut l_align) = (0.0, 0.0);
        let mut total: Option<Tensor<T>> = None;
        for (is_align, (name, t)) in self
            .seg
            .iter()
            .map(|x| (false, x))
            .chain(self.align.iter().map(|x| (true, x)))
        {
            let value = t.item().to_f64();
            if !value.is_finite() {
                return Err(Error::NonFinite { term: name, step, value });
            }
            terms.insert(name.to_string(), value);
            if is_align {
                l_align += value;
            } else {
                l_seg += value;
            }
            total = Some(match total {
                Some(acc) => acc.add(t),
                None => t.clone(),
            });
        }
        let total = total.expect("at least one segmentation term");
        Ok(LossGraph {
            total,
            report: LossReport {
                l_seg,
                l_align,
                l_total: l_seg + l_align,
                terms,
            },
            predictions,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Trainer<T: Scalar> {
    pub model: ApgNet<T>,
    pub optimizer: Adam<T>,
    pub scheme: Scheme,
    /// Also align the rough maps of the two branches.
    pub align_on_m1: bool,
    rng: ChaCha8Rng,
    step: usize,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: ApgNet<T>, adam: AdamConfig, scheme: Scheme, align_on_m1: bool, seed: u64) -> Self {
        Self {
            model,
            optimizer: Adam::new(adam),
            scheme,
            align_on_m1,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_a11),
            step: 0,
        }
    }

    /// Optimizer steps taken so far.
    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn set_step_count(&mut self, step: usize) {
        self.step = step;
    }

    /// Trainable parameters; identical to the single-branch model since the
    /// branches share weights.
    pub fn param_count(&self) -> usize {
        param_count(&self.model)
    }

    /// Siamese loss: both branches supervised on M1 and M2, plus MSE between
    /// the branches' M2 probabilities.
    pub fn siamese_loss(&self, originals: &Tensor<T>, enhanced: &Tensor<T>, masks: &Tensor<T>) -> Result<LossGraph<T>> {
        self.siamese_loss_with(originals, enhanced, masks, Mode::TRAIN, ENHANCED_BRANCH_MODE)
    }

    fn siamese_loss_with(
        &self,
        originals: &Tensor<T>,
        enhanced: &Tensor<T>,
        masks: &Tensor<T>,
        orig_mode: Mode,
        enh_mode: Mode,
    ) -> Result<LossGraph<T>> {
        let weights = pixel_weight_map(masks);
        let orig = self.model.forward(originals, orig_mode)?;
        let enh = self.model.forward(enhanced, enh_mode)?;
        let mut terms = Terms::new();
        terms.seg_terms(&orig, masks, &weights, ["orig.m1", "orig.m2"])?;
        terms.seg_terms(&enh, masks, &weights, ["enh.m1", "enh.m2"])?;
        if let (Some(a), Some(b)) = (orig.m2_prob(), enh.m2_prob()) {
            terms.align.push(("align.m2", alignment_loss(&a, &b)?));
        }
        if self.align_on_m1 || orig.m2_logits.is_none() {
            terms.align.push(("align.m1", alignment_loss(&orig.m1_prob(), &enh.m1_prob())?));
        }
        terms.finish(self.step, vec![orig, enh])
    }

    /// Single-branch loss on `images`.
    pub fn single_loss(&self, images: &Tensor<T>, masks: &Tensor<T>, mode: Mode) -> Result<LossGraph<T>> {
        let weights = pixel_weight_map(masks);
        let pred = self.model.forward(images, mode)?;
        let mut terms = Terms::new();
        terms.seg_terms(&pred, masks, &weights, ["m1", "m2"])?;
        terms.finish(self.step, vec![pred])
    }

    /// Per-sample choice between original and enhanced images.
    fn mixed_images(&mut self, batch: &Batch) -> Tensor<T> {
        let per = 3 * batch.size * batch.size;
        let mut data = Vec::with_capacity(batch.originals.len());
        for i in 0..batch.batch_size {
            let src = if self.rng.random_bool(MIX_PROBABILITY) {
                &batch.enhanced
            } else {
                &batch.originals
            };
            data.extend(src[i * per..(i + 1) * per].iter().map(|&v| T::of(f64::from(v))));
        }
        Tensor::constant(batch.image_shape(), data)
    }

    /// Loss of the configured scheme without updating anything.
    pub fn evaluate_loss(&self, batch: &Batch) -> Result<LossReport> {
        let (orig, enh, masks) = batch_tensors::<T>(batch);
        let frozen = Mode::Train { update_stats: false };
        let graph = match self.scheme {
            Scheme::Siamese => self.siamese_loss_with(&orig, &enh, &masks, frozen, frozen)?,
            _ => self.single_loss(&orig, &masks, frozen)?,
        };
        Ok(graph.report)
    }

    /// One optimizer update under the configured scheme.
    pub fn step(&mut self, batch: &Batch) -> Result<LossReport> {
        let (orig, enh, masks) = batch_tensors::<T>(batch);
        let graph = match self.scheme {
            Scheme::Siamese => self.siamese_loss(&orig, &enh, &masks)?,
            Scheme::Single => self.single_loss(&orig, &masks, Mode::TRAIN)?,
            Scheme::MixedAugment => {
                let images = self.mixed_images(batch);
                self.single_loss(&images, &masks, Mode::TRAIN)?
            }
        };
        self.apply(graph)
    }

    /// One Siamese update regardless of the configured scheme.
    pub fn siamese_step(&mut self, batch: &Batch) -> Result<LossReport> {
        let (orig, enh, masks) = batch_tensors::<T>(batch);
        let graph = self.siamese_loss(&orig, &enh, &masks)?;
        self.apply(graph)
    }

    fn apply(&mut self, graph: LossGraph<T>) -> Result<LossReport> {
        let grads = graph.total.backward();
        self.optimizer.step(&self.model, &grads);
        self.step += 1;
        Ok(graph.report)
    }

    /// Sigmoid of the final map in inference mode.
    pub fn predict(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.model.forward(images, Mode::Eval)?.final_logits().sigmoid())
    }
}
