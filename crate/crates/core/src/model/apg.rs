//! Prior-guided refinement: position priors steer high-level features through
//! channel and spatial attention, boundary priors steer low-level features
//! through a deformable convolution, and each level is rescaled by a learned
//! weight `λ`.

use apgnet_autograd::{Conv2d, ConvOptions, Mode, Module, Param, Scalar, Tensor, Visitor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mpd::PriorPair;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorKind {
    Position,
    Boundary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ApgConfig {
    /// Prior used at each level, shallowest first.
    pub routing: [PriorKind; 4],
    pub lambda_init: f64,
    /// Channel bottleneck ratio of the attention gate.
    pub cam_reduction: usize,
}

impl Default for ApgConfig {
    fn default() -> Self {
        use PriorKind::*;
        Self {
            routing: [Boundary, Boundary, Position, Position],
            lambda_init: 1.0,
            cam_reduction: 4,
        }
    }
}

impl ApgConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.lambda_init.is_finite() {
            return Err(Error::Config("model.apg.lambda_init must be finite".into()));
        }
        if self.cam_reduction == 0 {
            return Err(Error::Config("model.apg.cam_reduction must be positive".into()));
        }
        Ok(())
    }
}

/// Channel gate from a pooled descriptor, then a spatial gate from channel
/// statistics and the resized position prior.
#[derive(Debug, Clone)]
pub struct Cam<T: Scalar> {
    pub squeeze: Conv2d<T>,
    pub excite: Conv2d<T>,
    pub spatial: Conv2d<T>,
}

impl<T: Scalar> Cam<T> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, channels: usize, reduction: usize) -> Self {
        let hidden = (channels / reduction).max(1);
        Self {
            squeeze: Conv2d::new(rng, channels, hidden, (1, 1), ConvOptions::default(), true),
            excite: Conv2d::new(rng, hidden, channels, (1, 1), ConvOptions::default(), true),
            spatial: Conv2d::new(rng, 3, 1, (7, 7), ConvOptions::same((7, 7), (1, 1)), true),
        }
    }

    pub fn zeroed(channels: usize, reduction: usize) -> Self {
        let hidden = (channels / reduction).max(1);
        Self {
            squeeze: Conv2d::zeros(channels, hidden, (1, 1), ConvOptions::default(), true),
            excite: Conv2d::zeros(hidden, channels, (1, 1), ConvOptions::default(), true),
            spatial: Conv2d::zeros(3, 1, (7, 7), ConvOptions::same((7, 7), (1, 1)), true),
        }
    }

    /// Channel gate `[B,C,1,1]` and spatial gate `[B,1,h,w]`.
    pub fn gates(&self, feature: &Tensor<T>, prior: &Tensor<T>, mode: Mode) -> (Tensor<T>, Tensor<T>) {
        let [_, _, h, w] = feature.shape();
        let desc = feature.mean_spatial();
        let channel = self
            .excite
            .forward(&self.squeeze.forward(&desc, mode).relu(), mode)
            .sigmoid();
        let gated = feature.mul(&channel);
        let prior = prior.resize_bilinear(h, w);
        let stats = Tensor::cat_channels(&[&gated.mean_channels(), &gated.max_channels(), &prior]);
        let spatial = self.spatial.forward(&stats, mode).sigmoid();
        (channel, spatial)
    }

    pub fn forward(&self, feature: &Tensor<T>, prior: &Tensor<T>, mode: Mode) -> Tensor<T> {
        let (channel, spatial) = self.gates(feature, prior, mode);
        feature.mul(&channel).mul(&spatial)
    }
}

impl<T: Scalar> Module<T> for Cam<T> {
    fn visit<'m>(&'m self, v: &mut Visitor<'m, '_, T>) {
        v.module("squeeze", &self.squeeze);
        v.module("excite", &self.excite);
        v.module("spatial", &self.spatial);
    }
}

/// 3×3 deformable convolution whose offsets are predicted from the feature
/// and the resized boundary prior. The offset predictor starts at zero.
#[derive(Debug, Clone)]
pub struct DeformRefine<T: Scalar> {
    pub offset: Conv2d<T>,
    pub conv: Conv2d<T>,
}

impl<T: Scalar> DeformRefine<T> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, channels: usize) -> Self {
        let same = ConvOptions::same((3, 3), (1, 1));
        Self {
            offset: Conv2d::zeros(channels + 1, 18, (3, 3), same, true),
            conv: Conv2d::new(rng, channels, channels, (3, 3), same, true),
        }
    }

    pub fn offsets(&self, feature: &Tensor<T>, prior: &Tensor<T>, mode: Mode) -> Tensor<T> {
        let [_, _, h, w] = feature.shape();
        let prior = prior.resize_bilinear(h, w);
        self.offset.forward(&Tensor::cat_channels(&[feature, &prior]), mode)
    }

    pub fn forward(&self, feature: &Tensor<T>, prior: &Tensor<T>, mode: Mode) -> Tensor<T> {
        let off = self.offsets(feature, prior, mode);
        self.conv.forward_deformable(feature, &off, mode)
    }
}

impl<T: Scalar> Module<T> for DeformRefine<T> {
    fn visit<'m>(&'m self, v: &mut Visitor<'m, '_, T>) {
        v.module("offset", &self.offset);
        v.module("conv", &self.conv);
    }
}

#[derive(Debug, Clone)]
pub enum GuideUnit<T: Scalar> {
    Position(Cam<T>),
    Boundary(DeformRefine<T>),
}

impl<T: Scalar> GuideUnit<T> {
    pub fn kind(&self) -> PriorKind {
        match self {
            GuideUnit::Position(_) => PriorKind::Position,
            GuideUnit::Boundary(_) => PriorKind::Boundary,
        }
    }
}

impl<T: Scalar> Module<T> for GuideUnit<T> {
    fn visit<'m>(&'m self, v: &mut Visitor<'m, '_, T>) {
        match self {
            GuideUnit::Position(m) => v.module("cam", m),
            GuideUnit::Boundary(m) => v.module("deform", m),
        }
    }
}

/// `λ · (f(feature, prior) + feature)` with `f` chosen by `kind`.
pub fn apg_forward<T: Scalar>(
    unit: &GuideUnit<T>,
    feature: &Tensor<T>,
    prior: &Tensor<T>,
    kind: PriorKind,
    lambda: &Tensor<T>,
    mode: Mode,
) -> Result<Tensor<T>> {
    if unit.kind() != kind {
        return Err(Error::InvalidArgument(format!(
            "{kind:?} prior routed to a level that expects a {:?} prior",
            unit.kind()
        )));
    }
    let guided = match unit {
        GuideUnit::Position(cam) => cam.forward(feature, prior, mode),
        GuideUnit::Boundary(def) => def.forward(feature, prior, mode),
    };
    Ok(guided.add(feature).mul(lambda))
}

/// The four per-level guidance units and their fusion weights.
#[derive(Debug, Clone)]
pub struct ApgStage<T: Scalar> {
    pub units: Vec<GuideUnit<T>>,
    pub lambdas: Vec<Param<T>>,
}

impl<T: Scalar> ApgStage<T> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, channels: usize, config: &ApgConfig) -> Self {
        let units = config
            .routing
            .iter()
            .map(|kind| match kind {
                PriorKind::Position => GuideUnit::Position(Cam::new(rng, channels, config.cam_reduction)),
                PriorKind::Boundary => GuideUnit::Boundary(DeformRefine::new(rng, channels)),
            })
            .collect();
        let lambdas = (0..4)
            .map(|_| Param::new([1, 1, 1, 1], vec![T::of(config.lambda_init)]))
            .collect();
        Self { units, lambdas }
    }

    pub fn forward(&self, levels: &[Tensor<T>; 4], priors: &PriorPair<T>, mode: Mode) -> Result<[Tensor<T>; 4]> {
        let mut out = Vec::with_capacity(4);
        for (i, unit) in self.units.iter().enumerate() {
            let kind = unit.kind();
            let prior = match kind {
                PriorKind::Position => &priors.position,
                PriorKind::Boundary => &priors.boundary,
            };
            let lambda = self.lambdas[i].tensor(mode.is_train());
            out.push(apg_forward(unit, &levels[i], prior, kind, &lambda, mode)?);
        }
        Ok(out.try_into().expect("four levels"))
    }
}

impl<T: Scalar> Module<T> for ApgStage<T> {
    fn visit<'m>(&'m self, v: &mut Visitor<'m, '_, T>) {
        for (i, (unit, lambda)) in self.units.iter().zip(&self.lambdas).enumerate() {
            v.scope(format!("level{}", i + 1), |v| {
                v.module("unit", unit);
                v.param("lambda", lambda);
            });
        }
    }
}
