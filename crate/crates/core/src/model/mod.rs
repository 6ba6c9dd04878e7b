//! The segmentation network and its ablation variants.
//!
//! Data flow for the full model:
//!
//! ```text
//! image ─ backbone ─ f1..f4 ─ ERF ─ f'1..f'4 ─ progressive decoder ─ M1
//!                                      │                              │
//!                                      │            P_l = σ(M1), P_b = |∇²P_l|
//!                                      │                              │
//!                                      └──── prior guidance (λ) ──────┘
//!                                                    │
//!                                          refinement decoder ─ M2
//! ```

pub mod apg;
pub mod backbone;
pub mod blocks;
pub mod erf;
pub mod mpd;

use apgnet_autograd::{Mode, Module, Scalar, Tensor, Visitor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use apg::{apg_forward, ApgConfig, ApgStage, Cam, DeformRefine, GuideUnit, PriorKind};
pub use backbone::{check_input_size, BackboneConfig, BackboneVariant, FeaturePyramid, TinyBackbone};
pub use erf::{Erf, ErfConfig};
pub use mpd::{
    derive_boundary_prior, derive_position_prior, derive_priors, gate_term, mpd_fuse_step, PlainDecoder,
    PriorPair, ProgressiveDecoder,
};

use crate::error::Result;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub erf: ErfConfig,
    pub apg: ApgConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.erf.validate()?;
        self.apg.validate()
    }
}

/// Which decoder stack is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// Concatenate-and-fuse decoder, rough map only.
    Plain,
    /// Progressive gated decoder, rough map only.
    Progressive,
    /// Progressive decoder, prior guidance and refinement decoder.
    PriorGuided,
}

#[derive(Debug, Clone)]
enum Decoder<T: Scalar> {
    Plain(PlainDecoder<T>),
    Progressive(ProgressiveDecoder<T>),
}

#[derive(Debug, Clone)]
struct Guidance<T: Scalar> {
    apg: ApgStage<T>,
    refine: ProgressiveDecoder<T>,
}

/// Outputs of one forward pass, all at input resolution.
#[derive(Debug, Clone)]
pub struct PredictionSet<T: Scalar> {
    pub m1_logits: Tensor<T>,
    pub m2_logits: Option<Tensor<T>>,
    pub priors: Option<PriorPair<T>>,
}

impl<T: Scalar> PredictionSet<T> {
    /// The refined map when present, otherwise the rough map.
    pub fn final_logits(&self) -> &Tensor<T> {
        self.m2_logits.as_ref().unwrap_or(&self.m1_logits)
    }

    pub fn m1_prob(&self) -> Tensor<T> {
        self.m1_logits.sigmoid()
    }

    pub fn m2_prob(&self) -> Option<Tensor<T>> {
        self.m2_logits.as_ref().map(Tensor::sigmoid)
    }
}

#[derive(Debug, Clone)]
pub struct ApgNet<T: Scalar> {
    architecture: Architecture,
    backbone: TinyBackbone<T>,
    erf: Vec<Erf<T>>,
    decoder: Decoder<T>,
    guidance: Option<Guidance<T>>,
}

impl<T: Scalar> ApgNet<T> {
    /// Builds a freshly initialized network; identical seeds give identical
    /// weights.
    pub fn new(config: &ModelConfig, architecture: Architecture, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let channels = config.backbone.channels;
        let width = config.erf.channels;
        let backbone = TinyBackbone::new(&mut rng, channels);
        let erf = channels.iter().map(|&c| Erf::new(&mut rng, c, &config.erf)).collect();
        let decoder = match architecture {
            Architecture::Plain => Decoder::Plain(PlainDecoder::new(&mut rng, width)),
            _ => Decoder::Progressive(ProgressiveDecoder::new(&mut rng, width)),
        };
        let guidance = (architecture == Architecture::PriorGuided).then(|| Guidance {
            apg: ApgStage::new(&mut rng, width, &config.apg),
            refine: ProgressiveDecoder::new(&mut rng, width),
        });
        Ok(Self {
            architecture,
            backbone,
            erf,
            decoder,
            guidance,
        })
    }

    pub fn architecture(&self) -> Architecture {
        self.architecture
    }

    pub fn backbone(&self) -> &TinyBackbone<T> {
        &self.backbone
    }

    pub fn erf(&self, level: usize) -> &Erf<T> {
        &self.erf[level]
    }

    pub fn progressive_decoder(&self) -> Option<&ProgressiveDecoder<T>> {
        match &self.decoder {
            Decoder::Progressive(d) => Some(d),
            Decoder::Plain(_) => None,
        }
    }

    pub fn apg(&self) -> Option<&ApgStage<T>> {
        self.guidance.as_ref().map(|g| &g.apg)
    }

    pub fn refine_decoder(&self) -> Option<&ProgressiveDecoder<T>> {
        self.guidance.as_ref().map(|g| &g.refine)
    }

    pub fn extract_pyramid(&self, images: &Tensor<T>, mode: Mode) -> Result<FeaturePyramid<T>> {
        self.backbone.forward(images, mode)
    }

    /// ERF on every level, giving equal-width features.
    pub fn unify(&self, pyramid: &FeaturePyramid<T>, mode: Mode) -> [Tensor<T>; 4] {
        [0, 1, 2, 3].map(|i| self.erf[i].forward(&pyramid.levels[i], mode))
    }

    /// Rough logits M1 at `out` resolution.
    pub fn rough(&self, levels: &[Tensor<T>; 4], out: (usize, usize), mode: Mode) -> Result<Tensor<T>> {
        match &self.decoder {
            Decoder::Plain(d) => Ok(d.forward(levels, out, mode)),
            Decoder::Progressive(d) => d.forward(levels, out, mode),
        }
    }

    /// Refined logits M2; `None` for variants without prior guidance.
    pub fn refine(
        &self,
        levels: &[Tensor<T>; 4],
        priors: &PriorPair<T>,
        out: (usize, usize),
        mode: Mode,
    ) -> Result<Option<Tensor<T>>> {
        let Some(g) = &self.guidance else {
            return Ok(None);
        };
        let guided = g.apg.forward(levels, priors, mode)?;
        g.refine.forward(&guided, out, mode).map(Some)
    }

    pub fn forward(&self, images: &Tensor<T>, mode: Mode) -> Result<PredictionSet<T>> {
        let [_, _, h, w] = images.shape();
        let pyramid = self.extract_pyramid(images, mode)?;
        let levels = self.unify(&pyramid, mode);
        let m1_logits = self.rough(&levels, (h, w), mode)?;
        if self.guidance.is_none() {
            return Ok(PredictionSet {
                m1_logits,
                m2_logits: None,
                priors: None,
            });
        }
        let priors = derive_priors(&m1_logits);
        let m2_logits = self.refine(&levels, &priors, (h, w), mode)?;
        Ok(PredictionSet {
            m1_logits,
            m2_logits,
            priors: Some(priors),
        })
    }
}

impl<T: Scalar> Module<T> for ApgNet<T> {
    fn visit<'m>(&'m self, v: &mut Visitor<'m, '_, T>) {
        v.module("backbone", &self.backbone);
        for (i, e) in self.erf.iter().enumerate() {
            v.module(format!("erf{}", i + 1), e);
        }
        match &self.decoder {
            Decoder::Plain(d) => v.module("decoder", d),
            Decoder::Progressive(d) => v.module("decoder", d),
        }
        if let Some(g) = &self.guidance {
            v.module("apg", &g.apg);
            v.module("refine", &g.refine);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use apgnet_autograd::{named_params, param_count};
    use rand::{Rng, SeedableRng};

    fn small_config() -> ModelConfig {
        let mut c = ModelConfig::default();
        c.backbone.channels = [4, 8, 12, 16];
        c.erf.channels = 8;
        c
    }

    fn image(seed: u64, b: usize, size: usize) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::constant([b, 3, size, size], (0..b * 3 * size * size).map(|_| rng.random()).collect())
    }

    #[test]
    fn every_variant_predicts_at_input_resolution() {
        for arch in [Architecture::Plain, Architecture::Progressive, Architecture::PriorGuided] {
            let net = ApgNet::<f64>::new(&small_config(), arch, 0).unwrap();
            let out = net.forward(&image(0, 2, 64), Mode::TRAIN).unwrap();
            assert_eq!(out.m1_logits.shape(), [2, 1, 64, 64]);
            assert_eq!(out.m2_logits.is_some(), arch == Architecture::PriorGuided);
            if let Some(m2) = out.m2_prob() {
                assert_eq!(m2.shape(), [2, 1, 64, 64]);
                assert!(m2.data().iter().all(|&p| p > 0.0 && p < 1.0));
            }
        }
    }

    #[test]
    fn same_seed_same_weights() {
        let a = ApgNet::<f32>::new(&small_config(), Architecture::PriorGuided, 3).unwrap();
        let b = ApgNet::<f32>::new(&small_config(), Architecture::PriorGuided, 3).unwrap();
        let c = ApgNet::<f32>::new(&small_config(), Architecture::PriorGuided, 4).unwrap();
        let vals = |n: &ApgNet<f32>| named_params(n).into_iter().map(|(_, p)| p.values().to_vec()).collect::<Vec<_>>();
        assert_eq!(vals(&a), vals(&b));
        assert_ne!(vals(&a), vals(&c));
    }

    #[test]
    fn parameter_counts_grow_along_the_ladder() {
        let count = |arch| param_count(&ApgNet::<f32>::new(&small_config(), arch, 0).unwrap());
        let (plain, prog, guided) = (
            count(Architecture::Plain),
            count(Architecture::Progressive),
            count(Architecture::PriorGuided),
        );
        assert!(prog > plain, "{prog} <= {plain}");
        assert!(guided > prog, "{guided} <= {prog}");
    }

    #[test]
    fn zero_lambdas_give_constant_refined_map() {
        let net = ApgNet::<f64>::new(&small_config(), Architecture::PriorGuided, 1).unwrap();
        for l in &net.apg().unwrap().lambdas {
            l.fill(0.0);
        }
        let m2 = net.forward(&image(1, 1, 64), Mode::Eval).unwrap().m2_logits.unwrap();
        let first = m2.data()[0];
        assert!(m2.data().iter().all(|&v| v == first));
    }

    #[test]
    fn refined_map_depends_on_both_priors() {
        let net = ApgNet::<f64>::new(&small_config(), Architecture::PriorGuided, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for unit in &net.apg().unwrap().units {
            if let GuideUnit::Boundary(d) = unit {
                let n = d.offset.weight.len();
                d.offset.weight.set((0..n).map(|_| rng.random_range(-0.5..0.5)).collect());
            }
        }
        let mode = Mode::Eval;
        let levels = net.unify(&net.extract_pyramid(&image(2, 1, 64), mode).unwrap(), mode);
        let m1 = net.rough(&levels, (64, 64), mode).unwrap();
        let priors = derive_priors(&m1);
        let base = net.refine(&levels, &priors, (64, 64), mode).unwrap().unwrap();
        let bump = |t: &Tensor<f64>| Tensor::constant(t.shape(), t.data().iter().map(|v| v + 0.3).collect());
        let moved_b = PriorPair { position: priors.position.clone(), boundary: bump(&priors.boundary) };
        let moved_l = PriorPair { position: bump(&priors.position), boundary: priors.boundary.clone() };
        for moved in [moved_b, moved_l] {
            let other = net.refine(&levels, &moved, (64, 64), mode).unwrap().unwrap();
            let diff = base.data().iter().zip(other.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(diff > 0.0);
        }
    }

    #[test]
    fn parameter_names_are_unique() {
        let net = ApgNet::<f32>::new(&small_config(), Architecture::PriorGuided, 0).unwrap();
        let names: Vec<String> = named_params(&net).into_iter().map(|(n, _)| n).collect();
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
        assert!(names.iter().any(|n| n.starts_with("erf4.")));
        assert!(names.iter().any(|n| n.starts_with("refine.head")));
    }
}
