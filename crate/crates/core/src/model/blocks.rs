use apgnet_autograd::{BatchNorm2d, Conv2d, ConvOptions, Mode, Module, Scalar, Tensor, Visitor};
use rand::Rng;

/// Convolution without bias, batch normalization, optional ReLU.
#[derive(Debug, Clone)]
pub struct ConvBn<T: Scalar> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm2d<T>,
    pub relu: bool,
}

impl<T: Scalar> ConvBn<T> {
    pub fn new<R: Rng + ?Sized>(
        rng: &mut R,
        in_ch: usize,
        out_ch: usize,
        kernel: (usize, usize),
        opts: ConvOptions,
        relu: bool,
    ) -> Self {
        Self {
            conv: Conv2d::new(rng, in_ch, out_ch, kernel, opts, false),
            bn: BatchNorm2d::new(out_ch),
            relu,
        }
    }

    /// Stride-1 "same" convolution.
    pub fn same<R: Rng + ?Sized>(rng: &mut R, in_ch: usize, out_ch: usize, kernel: (usize, usize), relu: bool) -> Self {
        Self::new(rng, in_ch, out_ch, kernel, ConvOptions::same(kernel, (1, 1)), relu)
    }

    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        let y = self.bn.forward(&self.conv.forward(x, mode), mode);
        if self.relu {
            y.relu()
        } else {
            y
        }
    }
}

impl<T: Scalar> Module<T> for ConvBn<T> {
    fn visit<'m>(&'m self, v: &mut Visitor<'m, '_, T>) {
        v.module("conv", &self.conv);
        v.module("bn", &self.bn);
    }
}
