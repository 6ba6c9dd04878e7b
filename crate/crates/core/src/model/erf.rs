//! Extended receptive field module: parallel asymmetric and dilated
//! convolution branches, concatenated and fused, plus a projected residual.

use apgnet_autograd::{ConvOptions, Mode, Module, Scalar, Tensor, Visitor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::blocks::ConvBn;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ErfConfig {
    #[serde(alias = "out_channels")]
    pub channels: usize,
    pub dilations: Vec<usize>,
    /// Odd length `k` of the 1×k / k×1 pair.
    pub asym_kernel: usize,
}

impl Default for ErfConfig {
    fn default() -> Self {
        Self {
            channels: 64,
            dilations: vec![1, 3, 5, 7],
            asym_kernel: 3,
        }
    }
}

impl ErfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels < 4 {
            return Err(Error::Config("model.erf.channels must be at least 4".into()));
        }
        if self.dilations.is_empty() || self.dilations.contains(&0) {
            return Err(Error::Config("model.erf.dilations must be non-empty and ≥ 1".into()));
        }
        let mut sorted = self.dilations.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.dilations.len() {
            return Err(Error::Config("model.erf.dilations must be distinct".into()));
        }
        if self.asym_kernel % 2 == 0 {
            return Err(Error::Config("model.erf.asym_kernel must be odd".into()));
        }
        Ok(())
    }

    pub fn branch_width(&self) -> usize {
        (self.channels / 4).max(1)
    }
}

#[derive(Debug, Clone)]
struct Branch<T: Scalar> {
    reduce: ConvBn<T>,
    row: ConvBn<T>,
    col: ConvBn<T>,
    dilated: ConvBn<T>,
}

impl<T: Scalar> Branch<T> {
    fn forward(&self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        let y = self.reduce.forward(x, mode);
        let y = self.row.forward(&y, mode);
        let y = self.col.forward(&y, mode);
        self.dilated.forward(&y, mode)
    }
}

#[derive(Debug, Clone)]
pub struct Erf<T: Scalar> {
    branches: Vec<Branch<T>>,
    fuse_pointwise: ConvBn<T>,
    fuse_spatial: ConvBn<T>,
    residual: ConvBn<T>,
}

impl<T: Scalar> Erf<T> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, in_ch: usize, config: &ErfConfig) -> Self {
        let (out, width, k) = (config.channels, config.branch_width(), config.asym_kernel);
        let branches = config
            .dilations
            .iter()
            .map(|&d| Branch {
                reduce: ConvBn::same(rng, in_ch, width, (1, 1), true),
                row: ConvBn::same(rng, width, width, (1, k), true),
                col: ConvBn::same(rng, width, width, (k, 1), true),
                dilated: ConvBn::new(rng, width, width, (3, 3), ConvOptions::same((3, 3), (d, d)), true),
            })
            .collect();
        let concat = width * config.dilations.len();
        Self {
            branches,
            fuse_pointwise: ConvBn::same(rng, concat, out, (1, 1), true),
            fuse_spatial: ConvBn::same(rng, out, out, (3, 3), false),
            residual: ConvBn::same(rng, in_ch, out, (1, 1), false),
        }
    }

    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        let outs: Vec<Tensor<T>> = self.branches.iter().map(|b| b.forward(x, mode)).collect();
        let refs: Vec<&Tensor<T>> = outs.iter().collect();
        let fused = self
            .fuse_spatial
            .forward(&self.fuse_pointwise.forward(&Tensor::cat_channels(&refs), mode), mode);
        fused.add(&self.residual.forward(x, mode)).relu()
    }
}

impl<T: Scalar> Module<T> for Erf<T> {
    fn visit<'m>(&'m self, v: &mut Visitor<'m, '_, T>) {
        for (i, b) in self.branches.iter().enumerate() {
            v.scope(format!("branch{i}"), |v| {
                v.module("reduce", &b.reduce);
                v.module("row", &b.row);
                v.module("col", &b.col);
                v.module("dilated", &b.dilated);
            });
        }
        v.module("fuse_pointwise", &self.fuse_pointwise);
        v.module("fuse_spatial", &self.fuse_spatial);
        v.module("residual", &self.residual);
    }
}
