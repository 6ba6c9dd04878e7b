//! Resampling, padding and channel concatenation.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Source taps of one output coordinate under half-pixel alignment.
fn taps(n_out: usize, n_in: usize) -> Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// `i` reflected into `[0, len)` without repeating the edge sample.
fn reflect(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = i.rem_euclid(period);
    (if m < len as isize { m } else { period - m }) as usize
}

impl<T: Scalar> Tensor<T> {
    /// Bilinear resize with half-pixel centers and edge clamping, no
    /// anti-aliasing.
    pub fn resize_bilinear(&self, h_out: usize, w_out: usize) -> Tensor<T> {
        let [b, c, h, w] = self.shape();
        if (h, w) == (h_out, w_out) {
            return self.clone();
        }
        let ty = taps(h_out, h);
        let tx = taps(w_out, w);
        let x = self.data();
        let planes = b * c;
        let mut out = vec![T::ZERO; planes * h_out * w_out];
        for p in 0..planes {
            let src = &x[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * h_out * w_out..(p + 1) * h_out * w_out];
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                let fy = T::of(fy);
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let fx = T::of(fx);
                    let top = src[y0 * w + x0] * (T::ONE - fx) + src[y0 * w + x1] * fx;
                    let bot = src[y1 * w + x0] * (T::ONE - fx) + src[y1 * w + x1] * fx;
                    dst[oy * w_out + ox] = top * (T::ONE - fy) + bot * fy;
                }
            }
        }
        Tensor::from_op([b, c, h_out, w_out], out, vec![self.clone()], move |g, _, _| {
            let mut gx = vec![T::ZERO; planes * h * w];
            for p in 0..planes {
                let gs = &g[p * h_out * w_out..(p + 1) * h_out * w_out];
                let dst = &mut gx[p * h * w..(p + 1) * h * w];
                for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                    let fy = T::of(fy);
                    for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                        let fx = T::of(fx);
                        let v = gs[oy * w_out + ox];
                        let (top, bot) = (v * (T::ONE - fy), v * fy);
                        dst[y0 * w + x0] += top * (T::ONE - fx);
                        dst[y0 * w + x1] += top * fx;
                        dst[y1 * w + x0] += bot * (T::ONE - fx);
                        dst[y1 * w + x1] += bot * fx;
                    }
                }
            }
            vec![Some(gx)]
        })
    }

    /// Mirror padding by `pad` pixels on every side (edge not repeated).
    pub fn reflect_pad(&self, pad: usize) -> Tensor<T> {
        let [b, c, h, w] = self.shape();
        let (hp, wp) = (h + 2 * pad, w + 2 * pad);
        let map: Vec<usize> = (0..hp * wp)
            .map(|i| {
                let r = reflect((i / wp) as isize - pad as isize, h);
                let q = reflect((i % wp) as isize - pad as isize, w);
                r * w + q
            })
            .collect();
        let planes = b * c;
        let x = self.data();
        let mut out = Vec::with_capacity(planes * hp * wp);
        for p in 0..planes {
            let src = &x[p * h * w..(p + 1) * h * w];
            out.extend(map.iter().map(|&j| src[j]));
        }
        Tensor::from_op([b, c, hp, wp], out, vec![self.clone()], move |g, _, _| {
            let mut gx = vec![T::ZERO; planes * h * w];
            for p in 0..planes {
                let dst = &mut gx[p * h * w..(p + 1) * h * w];
                for (i, &j) in map.iter().enumerate() {
                    dst[j] += g[p * hp * wp + i];
                }
            }
            vec![Some(gx)]
        })
    }

    /// Concatenation along the channel axis.
    pub fn cat_channels(parts: &[&Tensor<T>]) -> Tensor<T> {
        assert!(!parts.is_empty(), "cat_channels of nothing");
        let [b, _, h, w] = parts[0].shape();
        let hw = h * w;
        let chans: Vec<usize> = parts
            .iter()
            .map(|t| {
                let s = t.shape();
                assert_eq!((s[0], s[2], s[3]), (b, h, w), "cat_channels: shape mismatch");
                s[1]
            })
            .collect();
        let total: usize = chans.iter().sum();
        let mut out = Vec::with_capacity(b * total * hw);
        for bi in 0..b {
            for (t, &ch) in parts.iter().zip(&chans) {
                out.extend_from_slice(&t.data()[bi * ch * hw..(bi + 1) * ch * hw]);
            }
        }
        let parents: Vec<Tensor<T>> = parts.iter().map(|&t| t.clone()).collect();
        Tensor::from_op([b, total, h, w], out, parents, move |g, _, needs| {
            let mut grads: Vec<Option<Vec<T>>> = needs
                .iter()
                .zip(&chans)
                .map(|(&need, &ch)| need.then(|| Vec::with_capacity(b * ch * hw)))
                .collect();
            for bi in 0..b {
                let mut at = bi * total * hw;
                for (slot, &ch) in grads.iter_mut().zip(&chans) {
                    if let Some(v) = slot {
                        v.extend_from_slice(&g[at..at + ch * hw]);
                    }
                    at += ch * hw;
                }
            }
            grads
        })
    }
}
