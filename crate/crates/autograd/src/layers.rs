//! Parameterized building blocks.

use rand::Rng;

use crate::module::{Buffer, Mode, Module, Param, Visitor};
use crate::ops::conv::{conv2d, ConvOptions};
use crate::ops::deform::deform_conv2d;
use crate::ops::norm::{batch_norm_eval, batch_norm_train};
use crate::scalar::Scalar;
use crate::tensor::{numel, Shape, Tensor};

/// Uniform values in `(-bound, bound)`.
pub fn uniform<T: Scalar, R: Rng + ?Sized>(rng: &mut R, shape: Shape, bound: f64) -> Param<T> {
    let data = (0..numel(&shape))
        .map(|_| T::of(rng.random_range(-bound..bound)))
        .collect();
    Param::new(shape, data)
}

/// Convolution weights and optional bias. Default initialization draws both
/// from `U(-1/√fan_in, 1/√fan_in)`.
#[derive(Debug, Clone)]
pub struct Conv2d<T: Scalar> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub opts: ConvOptions,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new<R: Rng + ?Sized>(
        rng: &mut R,
        in_ch: usize,
        out_ch: usize,
        kernel: (usize, usize),
        opts: ConvOptions,
        bias: bool,
    ) -> Self {
        let bound = 1.0 / ((in_ch * kernel.0 * kernel.1) as f64).sqrt();
        let weight = uniform(rng, [out_ch, in_ch, kernel.0, kernel.1], bound);
        let bias = bias.then(|| uniform(rng, [1, out_ch, 1, 1], bound));
        Self { weight, bias, opts }
    }

    /// All-zero weights and bias.
    pub fn zeros(in_ch: usize, out_ch: usize, kernel: (usize, usize), opts: ConvOptions, bias: bool) -> Self {
        Self {
            weight: Param::zeros([out_ch, in_ch, kernel.0, kernel.1]),
            bias: bias.then(|| Param::zeros([1, out_ch, 1, 1])),
            opts,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        let track = mode.is_train();
        let w = self.weight.tensor(track);
        let b = self.bias.as_ref().map(|b| b.tensor(track));
        conv2d(x, &w, b.as_ref(), self.opts)
    }

    /// Deformable variant sharing this layer's weights.
    pub fn forward_deformable(&self, x: &Tensor<T>, offset: &Tensor<T>, mode: Mode) -> Tensor<T> {
        let track = mode.is_train();
        let w = self.weight.tensor(track);
        let b = self.bias.as_ref().map(|b| b.tensor(track));
        deform_conv2d(x, offset, &w, b.as_ref(), self.opts)
    }
}

impl<T: Scalar> Module<T> for Conv2d<T> {
    fn visit<'m>(&'m self, v: &mut Visitor<'m, '_, T>) {
        v.param("weight", &self.weight);
        if let Some(b) = &self.bias {
            v.param("bias", b);
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d<T: Scalar> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Buffer<T>,
    pub running_var: Buffer<T>,
    pub eps: f64,
    pub momentum: f64,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        let shape = [1, channels, 1, 1];
        Self {
            gamma: Param::new(shape, vec![T::ONE; channels]),
            beta: Param::zeros(shape),
            running_mean: Buffer::new(shape, vec![T::ZERO; channels]),
            running_var: Buffer::new(shape, vec![T::ONE; channels]),
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        let track = mode.is_train();
        let (g, b) = (self.gamma.tensor(track), self.beta.tensor(track));
        match mode {
            Mode::Train { update_stats } => {
                let (y, mean, var) = batch_norm_train(x, &g, &b, T::of(self.eps));
                if update_stats {
                    let [bs, _, h, w] = x.shape();
                    let n = (bs * h * w) as f64;
                    let unbias = if n > 1.0 { T::of(n / (n - 1.0)) } else { T::ONE };
                    let m = T::of(self.momentum);
                    let keep = T::ONE - m;
                    self.running_mean.update(|r| {
                        r.iter_mut().zip(&mean).for_each(|(r, &v)| *r = keep * *r + m * v)
                    });
                    self.running_var.update(|r| {
                        r.iter_mut()
                            .zip(&var)
                            .for_each(|(r, &v)| *r = keep * *r + m * v * unbias)
                    });
                }
                y
            }
            Mode::Eval => batch_norm_eval(
                x,
                &g,
                &b,
                &self.running_mean.values(),
                &self.running_var.values(),
                T::of(self.eps),
            ),
        }
    }
}

impl<T: Scalar> Module<T> for BatchNorm2d<T> {
    fn visit<'m>(&'m self, v: &mut Visitor<'m, '_, T>) {
        v.param("weight", &self.gamma);
        v.param("bias", &self.beta);
        v.buffer("running_mean", &self.running_mean);
        v.buffer("running_var", &self.running_var);
    }
}
