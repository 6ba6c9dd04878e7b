//! Top-down decoders and the priors derived from the rough prediction.

use apgnet_autograd::{conv2d, Conv2d, ConvOptions, Mode, Module, Scalar, Tensor, Visitor};
use rand::Rng;

use super::blocks::ConvBn;
use crate::error::{Error, Result};

/// Fixed 4-neighbour Laplacian used for the boundary prior.
pub const LAPLACIAN: [f64; 9] = [0.0, 1.0, 0.0, 1.0, -4.0, 1.0, 0.0, 1.0, 0.0];

/// `shallow ⊗ up(deep_raw) ⊕ shallow`, the gated term of one fusion step.
pub fn gate_term<T: Scalar>(shallow: &Tensor<T>, deep_raw: &Tensor<T>) -> Result<Tensor<T>> {
    check_pair(shallow, deep_raw, "deep_raw")?;
    let [_, _, h, w] = shallow.shape();
    let up = deep_raw.resize_bilinear(h, w);
    Ok(shallow.mul(&up).add(shallow))
}

fn check_pair<T: Scalar>(shallow: &Tensor<T>, deep: &Tensor<T>, what: &str) -> Result<()> {
    let [b, c, h, w] = shallow.shape();
    let [db, dc, dh, dw] = deep.shape();
    if c != dc {
        return Err(Error::InvalidArgument(format!(
            "{what} has {dc} channels but the shallow feature has {c}"
        )));
    }
    if b != db || h != 2 * dh || w != 2 * dw {
        return Err(Error::ShapeMismatch(format!(
            "{what} is {dh}x{dw}, expected half of {h}x{w}"
        )));
    }
    Ok(())
}

/// One top-down step: `Conv(Concat(up(deep_hat), gate_term(shallow, deep_raw)))`.
pub fn mpd_fuse_step<T: Scalar>(
    fuse: &ConvBn<T>,
    shallow: &Tensor<T>,
    deep_hat: &Tensor<T>,
    deep_raw: &Tensor<T>,
    mode: Mode,
) -> Result<Tensor<T>> {
    check_pair(shallow, deep_hat, "deep_hat")?;
    let gate = gate_term(shallow, deep_raw)?;
    let [_, _, h, w] = shallow.shape();
    let up = deep_hat.resize_bilinear(h, w);
    Ok(fuse.forward(&Tensor::cat_channels(&[&up, &gate]), mode))
}

/// Progressive decoder over four equal-width levels: the deepest level is
/// refined by a 3×3 convolution, then fused into each shallower level in
/// turn; a 1×1 head gives logits at stride 4, upsampled to `out` size.
#[derive(Debug, Clone)]
pub struct ProgressiveDecoder<T: Scalar> {
    pub top: ConvBn<T>,
    /// Fusion convolutions for levels 1, 2, 3.
    pub fuse: Vec<ConvBn<T>>,
    pub head: Conv2d<T>,
}

impl<T: Scalar> ProgressiveDecoder<T> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, channels: usize) -> Self {
        Self {
            top: ConvBn::same(rng, channels, channels, (3, 3), true),
            fuse: (0..3)
                .map(|_| ConvBn::same(rng, 2 * channels, channels, (3, 3), true))
                .collect(),
            head: Conv2d::new(rng, channels, 1, (1, 1), ConvOptions::default(), true),
        }
    }

    pub fn forward(&self, levels: &[Tensor<T>; 4], out: (usize, usize), mode: Mode) -> Result<Tensor<T>> {
        let mut hat = self.top.forward(&levels[3], mode);
        for i in (0..3).rev() {
            hat = mpd_fuse_step(&self.fuse[i], &levels[i], &hat, &levels[i + 1], mode)?;
        }
        Ok(self.head.forward(&hat, mode).resize_bilinear(out.0, out.1))
    }
}

impl<T: Scalar> Module<T> for ProgressiveDecoder<T> {
    fn visit<'m>(&'m self, v: &mut Visitor<'m, '_, T>) {
        v.module("top", &self.top);
        for (i, f) in self.fuse.iter().enumerate() {
            v.module(format!("fuse{}", i + 1), f);
        }
        v.module("head", &self.head);
    }
}

/// Baseline decoder: every level upsampled to stride 4, concatenated and
/// fused by one 3×3 convolution before the head.
#[derive(Debug, Clone)]
pub struct PlainDecoder<T: Scalar> {
    pub fuse: ConvBn<T>,
    pub head: Conv2d<T>,
}

impl<T: Scalar> PlainDecoder<T> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, channels: usize) -> Self {
        Self {
            fuse: ConvBn::same(rng, 4 * channels, channels, (3, 3), true),
            head: Conv2d::new(rng, channels, 1, (1, 1), ConvOptions::default(), true),
        }
    }

    pub fn forward(&self, levels: &[Tensor<T>; 4], out: (usize, usize), mode: Mode) -> Tensor<T> {
        let [_, _, h, w] = levels[0].shape();
        let ups: Vec<Tensor<T>> = levels.iter().map(|l| l.resize_bilinear(h, w)).collect();
        let refs: Vec<&Tensor<T>> = ups.iter().collect();
        let x = self.fuse.forward(&Tensor::cat_channels(&refs), mode);
        self.head.forward(&x, mode).resize_bilinear(out.0, out.1)
    }
}

impl<T: Scalar> Module<T> for PlainDecoder<T> {
    fn visit<'m>(&'m self, v: &mut Visitor<'m, '_, T>) {
        v.module("fuse", &self.fuse);
        v.module("head", &self.head);
    }
}

/// Position and boundary priors at input resolution.
#[derive(Debug, Clone)]
pub struct PriorPair<T: Scalar> {
    pub position: Tensor<T>,
    pub boundary: Tensor<T>,
}

/// `P_l = sigmoid(M1)`.
pub fn derive_position_prior<T: Scalar>(m1_logits: &Tensor<T>) -> Tensor<T> {
    m1_logits.sigmoid()
}

/// `P_b = |Laplacian ⊛ P_l|` with reflect padding; the kernel is frozen.
pub fn derive_boundary_prior<T: Scalar>(position: &Tensor<T>) -> Tensor<T> {
    let kernel = Tensor::constant([1, 1, 3, 3], LAPLACIAN.iter().map(|&v| T::of(v)).collect());
    conv2d(&position.reflect_pad(1), &kernel, None, ConvOptions::default()).abs()
}

pub fn derive_priors<T: Scalar>(m1_logits: &Tensor<T>) -> PriorPair<T> {
    let position = derive_position_prior(m1_logits);
    let boundary = derive_boundary_prior(&position);
    PriorPair { position, boundary }
}
