//! Batch normalization over `(B, H, W)` per channel.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Per-channel statistics of a `[B,C,H,W]` tensor: mean and biased variance.
pub fn channel_moments<T: Scalar>(x: &Tensor<T>) -> (Vec<T>, Vec<T>) {
    let [b, c, h, w] = x.shape();
    let hw = h * w;
    let count = T::of((b * hw) as f64);
    let d = x.data();
    let mut mean = vec![T::ZERO; c];
    let mut var = vec![T::ZERO; c];
    for ci in 0..c {
        let mut s = T::ZERO;
        for bi in 0..b {
            s += d[(bi * c + ci) * hw..(bi * c + ci + 1) * hw].iter().copied().sum::<T>();
        }
        let m = s / count;
        let mut q = T::ZERO;
        for bi in 0..b {
            for &v in &d[(bi * c + ci) * hw..(bi * c + ci + 1) * hw] {
                q += (v - m) * (v - m);
            }
        }
        mean[ci] = m;
        var[ci] = q / count;
    }
    (mean, var)
}

/// Normalizes with batch statistics and returns them alongside the output.
pub fn batch_norm_train<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> (Tensor<T>, Vec<T>, Vec<T>) {
    let [b, c, h, w] = x.shape();
    assert_eq!(gamma.numel(), c, "batch_norm: gamma size");
    assert_eq!(beta.numel(), c, "batch_norm: beta size");
    let hw = h * w;
    let (mean, var) = channel_moments(x);
    let inv_std: Vec<T> = var.iter().map(|&v| T::ONE / (v + eps).sqrt()).collect();
    let xd = x.data();
    let (gd, bd) = (gamma.data(), beta.data());
    let mut xhat = vec![T::ZERO; xd.len()];
    let mut out = vec![T::ZERO; xd.len()];
    for bi in 0..b {
        for ci in 0..c {
            let r = (bi * c + ci) * hw..(bi * c + ci + 1) * hw;
            for i in r {
                let n = (xd[i] - mean[ci]) * inv_std[ci];
                xhat[i] = n;
                out[i] = gd[ci] * n + bd[ci];
            }
        }
    }
    let gv = gamma.shared_data();
    let count = T::of((b * hw) as f64);
    let y = Tensor::from_op(
        x.shape(),
        out,
        vec![x.clone(), gamma.clone(), beta.clone()],
        move |g, _, needs| {
            let mut sum_g = vec![T::ZERO; c];
            let mut sum_gx = vec![T::ZERO; c];
            for bi in 0..b {
                for ci in 0..c {
                    for i in (bi * c + ci) * hw..(bi * c + ci + 1) * hw {
                        sum_g[ci] += g[i];
                        sum_gx[ci] += g[i] * xhat[i];
                    }
                }
            }
            let gx = needs[0].then(|| {
                let mut gx = vec![T::ZERO; g.len()];
                for bi in 0..b {
                    for ci in 0..c {
                        let k = gv[ci] * inv_std[ci];
                        let (mg, mgx) = (sum_g[ci] / count, sum_gx[ci] / count);
                        for i in (bi * c + ci) * hw..(bi * c + ci + 1) * hw {
                            gx[i] = k * (g[i] - mg - xhat[i] * mgx);
                        }
                    }
                }
                gx
            });
            vec![gx, needs[1].then(|| sum_gx.clone()), needs[2].then(|| sum_g.clone())]
        },
    );
    (y, mean, var)
}

/// Normalizes with fixed statistics.
pub fn batch_norm_eval<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    mean: &[T],
    var: &[T],
    eps: T,
) -> Tensor<T> {
    let c = x.shape()[1];
    assert!(gamma.numel() == c && beta.numel() == c && mean.len() == c && var.len() == c);
    let scale: Vec<T> = (0..c)
        .map(|ci| gamma.data()[ci] / (var[ci] + eps).sqrt())
        .collect();
    let shift: Vec<T> = (0..c)
        .map(|ci| beta.data()[ci] - mean[ci] * scale[ci])
        .collect();
    let scale = Tensor::constant([1, c, 1, 1], scale);
    let shift = Tensor::constant([1, c, 1, 1], shift);
    if gamma.requires_grad() || beta.requires_grad() {
        // keep affine parameters differentiable
        let inv: Vec<T> = var.iter().map(|&v| T::ONE / (v + eps).sqrt()).collect();
        let m = Tensor::constant([1, c, 1, 1], mean.to_vec());
        let inv = Tensor::constant([1, c, 1, 1], inv);
        return x.sub(&m).mul(&inv).mul(gamma).add(beta);
    }
    x.mul(&scale).add(&shift)
}
