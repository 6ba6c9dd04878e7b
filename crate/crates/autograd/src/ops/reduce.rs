//! Sums, means and channel statistics.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

impl<T: Scalar> Tensor<T> {
    pub fn sum(&self) -> Tensor<T> {
        let total: T = self.data().iter().copied().sum();
        let n = self.numel();
        Tensor::from_op([1, 1, 1, 1], vec![total], vec![self.clone()], move |g, _, _| {
            vec![Some(vec![g[0]; n])]
        })
    }

    pub fn mean(&self) -> Tensor<T> {
        let n = self.numel();
        self.sum().scale(T::ONE / T::of(n as f64))
    }

    /// Sum over channels and space: `[B,C,H,W] → [B,1,1,1]`.
    pub fn sum_per_sample(&self) -> Tensor<T> {
        let [b, c, h, w] = self.shape();
        let chunk = c * h * w;
        let out: Vec<T> = self.data().chunks(chunk).map(|s| s.iter().copied().sum()).collect();
        Tensor::from_op([b, 1, 1, 1], out, vec![self.clone()], move |g, _, _| {
            vec![Some(g.iter().flat_map(|&v| std::iter::repeat_n(v, chunk)).collect())]
        })
    }

    /// Global average pooling: `[B,C,H,W] → [B,C,1,1]`.
    pub fn mean_spatial(&self) -> Tensor<T> {
        let [b, c, h, w] = self.shape();
        let hw = h * w;
        let inv = T::ONE / T::of(hw as f64);
        let out: Vec<T> = self
            .data()
            .chunks(hw)
            .map(|s| s.iter().copied().sum::<T>() * inv)
            .collect();
        Tensor::from_op([b, c, 1, 1], out, vec![self.clone()], move |g, _, _| {
            vec![Some(g.iter().flat_map(|&v| std::iter::repeat_n(v * inv, hw)).collect())]
        })
    }

    /// Mean over channels: `[B,C,H,W] → [B,1,H,W]`.
    pub fn mean_channels(&self) -> Tensor<T> {
        let [b, c, h, w] = self.shape();
        let hw = h * w;
        let inv = T::ONE / T::of(c as f64);
        let x = self.data();
        let mut out = vec![T::ZERO; b * hw];
        for bi in 0..b {
            let dst = &mut out[bi * hw..(bi + 1) * hw];
            for ci in 0..c {
                let src = &x[(bi * c + ci) * hw..(bi * c + ci + 1) * hw];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
            dst.iter_mut().for_each(|d| *d *= inv);
        }
        Tensor::from_op([b, 1, h, w], out, vec![self.clone()], move |g, _, _| {
            let mut gx = Vec::with_capacity(b * c * hw);
            for bi in 0..b {
                for _ in 0..c {
                    gx.extend(g[bi * hw..(bi + 1) * hw].iter().map(|&v| v * inv));
                }
            }
            vec![Some(gx)]
        })
    }

    /// Max over channels: `[B,C,H,W] → [B,1,H,W]`. The gradient goes to the
    /// first maximal channel.
    pub fn max_channels(&self) -> Tensor<T> {
        let [b, c, h, w] = self.shape();
        let hw = h * w;
        let x = self.data();
        let mut out = vec![T::ZERO; b * hw];
        let mut arg = vec![0usize; b * hw];
        for bi in 0..b {
            for p in 0..hw {
                let mut best = x[bi * c * hw + p];
                let mut at = 0;
                for ci in 1..c {
                    let v = x[(bi * c + ci) * hw + p];
                    if v > best {
                        best = v;
                        at = ci;
                    }
                }
                out[bi * hw + p] = best;
                arg[bi * hw + p] = at;
            }
        }
        Tensor::from_op([b, 1, h, w], out, vec![self.clone()], move |g, _, _| {
            let mut gx = vec![T::ZERO; b * c * hw];
            for bi in 0..b {
                for p in 0..hw {
                    gx[(bi * c + arg[bi * hw + p]) * hw + p] = g[bi * hw + p];
                }
            }
            vec![Some(gx)]
        })
    }
}
