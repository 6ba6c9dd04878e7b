//! Four-stage feature pyramid encoder.

use std::path::PathBuf;

use apgnet_autograd::{ConvOptions, Mode, Module, Scalar, Tensor, Visitor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::blocks::ConvBn;
use crate::error::{Error, Result};

/// Total downsampling of the deepest level.
pub const MAX_STRIDE: usize = 32;
pub const LEVEL_STRIDES: [usize; 4] = [4, 8, 16, 32];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneVariant {
    Tiny,
    PretrainedPvt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneConfig {
    pub variant: BackboneVariant,
    pub channels: [usize; 4],
    /// External weight file for the pretrained variant.
    pub weights: Option<PathBuf>,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            variant: BackboneVariant::Tiny,
            channels: [16, 32, 64, 128],
            weights: None,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels[0] == 0 || self.channels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(format!(
                "backbone channels {:?} must be positive and strictly increasing",
                self.channels
            )));
        }
        if self.variant == BackboneVariant::PretrainedPvt {
            let hint = match &self.weights {
                Some(p) => format!("weights file {}", p.display()),
                None => "no model.backbone.weights given".to_string(),
            };
            return Err(Error::Config(format!(
                "pretrained_pvt needs an external pyramid-transformer implementation and weights ({hint}); \
                 only the tiny backbone is built in"
            )));
        }
        Ok(())
    }
}

/// Four feature maps at strides 4/8/16/32, shallowest first.
#[derive(Debug, Clone)]
pub struct FeaturePyramid<T: Scalar> {
    pub levels: [Tensor<T>; 4],
}

impl<T: Scalar> FeaturePyramid<T> {
    pub fn shapes(&self) -> [[usize; 4]; 4] {
        [0, 1, 2, 3].map(|i| self.levels[i].shape())
    }
}

pub fn check_input_size(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 || height % MAX_STRIDE != 0 || width % MAX_STRIDE != 0 {
        return Err(Error::InvalidArgument(format!(
            "input {height}x{width} must be a positive multiple of {MAX_STRIDE} on both sides"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
struct ResBlock<T: Scalar> {
    a: ConvBn<T>,
    b: ConvBn<T>,
}

impl<T: Scalar> ResBlock<T> {
    fn forward(&self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        self.b.forward(&self.a.forward(x, mode), mode).add(x).relu()
    }
}

#[derive(Debug, Clone)]
struct Stage<T: Scalar> {
    down: ConvBn<T>,
    blocks: Vec<ResBlock<T>>,
}

/// Stride-2 stem followed by four stages, each a stride-2 convolution and
/// two residual blocks.
#[derive(Debug, Clone)]
pub struct TinyBackbone<T: Scalar> {
    stem: ConvBn<T>,
    stages: Vec<Stage<T>>,
    channels: [usize; 4],
}

const BLOCKS_PER_STAGE: usize = 2;

impl<T: Scalar> TinyBackbone<T> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, channels: [usize; 4]) -> Self {
        let down = ConvOptions {
            stride: (2, 2),
            padding: (1, 1),
            dilation: (1, 1),
        };
        let stem = ConvBn::new(rng, 3, channels[0], (3, 3), down, true);
        let mut stages = Vec::with_capacity(4);
        let mut prev = channels[0];
        for &c in &channels {
            let down = ConvBn::new(rng, prev, c, (3, 3), down, true);
            let blocks = (0..BLOCKS_PER_STAGE)
                .map(|_| ResBlock {
                    a: ConvBn::same(rng, c, c, (3, 3), true),
                    b: ConvBn::same(rng, c, c, (3, 3), false),
                })
                .collect();
            stages.push(Stage { down, blocks });
            prev = c;
        }
        Self { stem, stages, channels }
    }

    pub fn channels(&self) -> [usize; 4] {
        self.channels
    }

    pub fn forward(&self, images: &Tensor<T>, mode: Mode) -> Result<FeaturePyramid<T>> {
        let [_, c, h, w] = images.shape();
        if c != 3 {
            return Err(Error::ShapeMismatch(format!("expected 3 input channels, got {c}")));
        }
        check_input_size(h, w)?;
        let mut x = self.stem.forward(images, mode);
        let mut levels = Vec::with_capacity(4);
        for stage in &self.stages {
            x = stage.down.forward(&x, mode);
            for block in &stage.blocks {
                x = block.forward(&x, mode);
            }
            levels.push(x.clone());
        }
        let levels: [Tensor<T>; 4] = levels.try_into().expect("four stages");
        Ok(FeaturePyramid { levels })
    }
}

impl<T: Scalar> Module<T> for TinyBackbone<T> {
    fn visit<'m>(&'m self, v: &mut Visitor<'m, '_, T>) {
        v.module("stem", &self.stem);
        for (i, stage) in self.stages.iter().enumerate() {
            v.scope(format!("stage{}", i + 1), |v| {
                v.module("down", &stage.down);
                for (j, block) in stage.blocks.iter().enumerate() {
                    v.scope(format!("block{j}"), |v| {
                        v.module("a", &block.a);
                        v.module("b", &block.b);
                    });
                }
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn backbone() -> TinyBackbone<f32> {
        TinyBackbone::new(&mut ChaCha8Rng::seed_from_u64(0), BackboneConfig::default().channels)
    }

    #[test]
    fn strides_and_channels() {
        let net = backbone();
        let pyr = net.forward(&Tensor::zeros([2, 3, 352, 352]), Mode::Eval).unwrap();
        assert_eq!(
            pyr.shapes(),
            [[2, 16, 88, 88], [2, 32, 44, 44], [2, 64, 22, 22], [2, 128, 11, 11]]
        );
        for (h, w) in [(64, 96), (32, 32)] {
            let pyr = net.forward(&Tensor::zeros([1, 3, h, w]), Mode::Eval).unwrap();
            for (s, shape) in LEVEL_STRIDES.iter().zip(pyr.shapes()) {
                assert_eq!((shape[2], shape[3]), (h / s, w / s));
            }
        }
    }

    #[test]
    fn indivisible_input_is_rejected() {
        let net = backbone();
        let err = net.forward(&Tensor::zeros([1, 3, 350, 350]), Mode::Eval).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
        assert!(net.forward(&Tensor::zeros([1, 1, 64, 64]), Mode::Eval).is_err());
    }

    #[test]
    fn impulse_reaches_deepest_level() {
        let net = backbone();
        let zero = net.forward(&Tensor::zeros([1, 3, 64, 64]), Mode::Eval).unwrap();
        let mut data = vec![0.0f32; 3 * 64 * 64];
        data[32 * 64 + 32] = 1.0;
        let imp = net.forward(&Tensor::constant([1, 3, 64, 64], data), Mode::Eval).unwrap();
        assert_ne!(zero.levels[3].to_vec(), imp.levels[3].to_vec());
    }

    #[test]
    fn config_validation() {
        let mut c = BackboneConfig::default();
        assert!(c.validate().is_ok());
        c.channels = [16, 16, 32, 64];
        assert!(c.validate().is_err());
        let c = BackboneConfig {
            variant: BackboneVariant::PretrainedPvt,
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }
}
