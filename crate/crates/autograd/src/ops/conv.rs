//! 2-D convolution via im2col and GEMM.

use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvOptions {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub dilation: (usize, usize),
}

impl Default for ConvOptions {
    fn default() -> Self {
        Self {
            stride: (1, 1),
            padding: (0, 0),
            dilation: (1, 1),
        }
    }
}

impl ConvOptions {
    /// Stride 1 with "same" padding for an odd kernel.
    pub fn same(kernel: (usize, usize), dilation: (usize, usize)) -> Self {
        Self {
            stride: (1, 1),
            padding: (dilation.0 * (kernel.0 / 2), dilation.1 * (kernel.1 / 2)),
            dilation,
        }
    }

    pub fn output_size(&self, input: (usize, usize), kernel: (usize, usize)) -> (usize, usize) {
        let span = |n: usize, k: usize, s: usize, p: usize, d: usize| {
            let reach = d * (k - 1) + 1;
            assert!(n + 2 * p >= reach, "kernel extent {reach} exceeds padded input {}", n + 2 * p);
            (n + 2 * p - reach) / s + 1
        };
        (
            span(input.0, kernel.0, self.stride.0, self.padding.0, self.dilation.0),
            span(input.1, kernel.1, self.stride.1, self.padding.1, self.dilation.1),
        )
    }

    fn is_pointwise(&self, kernel: (usize, usize)) -> bool {
        kernel == (1, 1) && self.stride == (1, 1) && self.padding == (0, 0)
    }
}

/// Geometry shared by the forward and backward passes.
#[derive(Clone, Copy)]
pub(crate) struct Geometry {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub ho: usize,
    pub wo: usize,
    pub opts: ConvOptions,
}

impl Geometry {
    pub fn new(input: Shape, kernel: (usize, usize), opts: ConvOptions) -> Self {
        let (ho, wo) = opts.output_size((input[2], input[3]), kernel);
        Self {
            c: input[1],
            h: input[2],
            w: input[3],
            kh: kernel.0,
            kw: kernel.1,
            ho,
            wo,
            opts,
        }
    }

    pub fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    pub fn cols(&self) -> usize {
        self.ho * self.wo
    }

    /// Output columns `[lo, hi)` whose input column `ox·s − p + kx·d` is
    /// inside the image.
    fn valid_range(n_out: usize, n_in: usize, s: usize, p: usize, offset: usize) -> (usize, usize) {
        // need 0 <= o*s + offset - p < n_in
        let lo = if p > offset { (p - offset).div_ceil(s) } else { 0 };
        let hi = if n_in + p > offset {
            ((n_in + p - offset - 1) / s + 1).min(n_out)
        } else {
            0
        };
        (lo.min(hi), hi)
    }

    /// Unfolds one image `[C,H,W]` into `[C·kh·kw, Ho·Wo]`.
    pub fn im2col<T: Scalar>(&self, x: &[T], col: &mut [T]) {
        let g = *self;
        let (sh, sw) = g.opts.stride;
        let (ph, pw) = g.opts.padding;
        let (dh, dw) = g.opts.dilation;
        let n = g.cols();
        col.fill(T::ZERO);
        for ci in 0..g.c {
            let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            for ky in 0..g.kh {
                let (oy_lo, oy_hi) = Self::valid_range(g.ho, g.h, sh, ph, ky * dh);
                for kx in 0..g.kw {
                    let row = (ci * g.kh + ky) * g.kw + kx;
                    let dst = &mut col[row * n..(row + 1) * n];
                    let (ox_lo, ox_hi) = Self::valid_range(g.wo, g.w, sw, pw, kx * dw);
                    if ox_lo == ox_hi {
                        continue;
                    }
                    for oy in oy_lo..oy_hi {
                        let iy = oy * sh + ky * dh - ph;
                        let src = &plane[iy * g.w..(iy + 1) * g.w];
                        let out = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                        if sw == 1 {
                            let ix0 = ox_lo + kx * dw - pw;
                            out[ox_lo..ox_hi].copy_from_slice(&src[ix0..ix0 + (ox_hi - ox_lo)]);
                        } else {
                            for ox in ox_lo..ox_hi {
                                out[ox] = src[ox * sw + kx * dw - pw];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Geometry::im2col`]: accumulates columns into `dx`.
    pub fn col2im<T: Scalar>(&self, col: &[T], dx: &mut [T]) {
        let g = *self;
        let (sh, sw) = g.opts.stride;
        let (ph, pw) = g.opts.padding;
        let (dh, dw) = g.opts.dilation;
        let n = g.cols();
        for ci in 0..g.c {
            let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            for ky in 0..g.kh {
                let (oy_lo, oy_hi) = Self::valid_range(g.ho, g.h, sh, ph, ky * dh);
                for kx in 0..g.kw {
                    let row = (ci * g.kh + ky) * g.kw + kx;
                    let src = &col[row * n..(row + 1) * n];
                    let (ox_lo, ox_hi) = Self::valid_range(g.wo, g.w, sw, pw, kx * dw);
                    for oy in oy_lo..oy_hi {
                        let iy = oy * sh + ky * dh - ph;
                        let dst = &mut plane[iy * g.w..(iy + 1) * g.w];
                        let line = &src[oy * g.wo..(oy + 1) * g.wo];
                        for ox in ox_lo..ox_hi {
                            dst[ox * sw + kx * dw - pw] += line[ox];
                        }
                    }
                }
            }
        }
    }
}

/// Adds the per-channel bias `[O]` to an output block `[O, N]`.
pub(crate) fn add_bias<T: Scalar>(out: &mut [T], bias: &[T], n: usize) {
    for (o, &b) in bias.iter().enumerate() {
        out[o * n..(o + 1) * n].iter_mut().for_each(|v| *v += b);
    }
}

pub(crate) fn bias_grad<T: Scalar>(g: &[T], batch: usize, o: usize, n: usize) -> Vec<T> {
    let mut gb = vec![T::ZERO; o];
    for bi in 0..batch {
        for (oi, acc) in gb.iter_mut().enumerate() {
            let s = (bi * o + oi) * n;
            *acc += g[s..s + n].iter().copied().sum::<T>();
        }
    }
    gb
}

/// `x: [B,C,H,W]`, `weight: [O,C,kh,kw]`, `bias: [1,O,1,1]`.
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    opts: ConvOptions,
) -> Tensor<T> {
    let [b, c, _, _] = x.shape();
    let [o, wc, kh, kw] = weight.shape();
    assert_eq!(c, wc, "conv2d: input has {c} channels, weight expects {wc}");
    if let Some(bias) = bias {
        assert_eq!(bias.numel(), o, "conv2d: bias size");
    }
    let geo = Geometry::new(x.shape(), (kh, kw), opts);
    let (k, n) = (geo.rows(), geo.cols());
    let pointwise = opts.is_pointwise((kh, kw));
    let in_len = c * geo.h * geo.w;

    let xd = x.data();
    let wd = weight.data();
    let mut out = vec![T::ZERO; b * o * n];
    let mut col = if pointwise { Vec::new() } else { vec![T::ZERO; k * n] };
    for bi in 0..b {
        let xb = &xd[bi * in_len..(bi + 1) * in_len];
        let cols: &[T] = if pointwise {
            xb
        } else {
            geo.im2col(xb, &mut col);
            &col
        };
        let ob = &mut out[bi * o * n..(bi + 1) * o * n];
        T::gemm(o, k, n, T::ONE, wd, (k as isize, 1), cols, (n as isize, 1), T::ZERO, ob, n);
        if let Some(bias) = bias {
            add_bias(ob, bias.data(), n);
        }
    }

    let mut parents = vec![x.clone(), weight.clone()];
    if let Some(bias) = bias {
        parents.push(bias.clone());
    }
    let (xv, wv) = (x.shared_data(), weight.shared_data());
    Tensor::from_op([b, o, geo.ho, geo.wo], out, parents, move |g, _, needs| {
        let mut gx = needs[0].then(|| vec![T::ZERO; xv.len()]);
        let mut gw = needs[1].then(|| vec![T::ZERO; wv.len()]);
        let mut col = if pointwise { Vec::new() } else { vec![T::ZERO; k * n] };
        let mut dcol = vec![T::ZERO; if pointwise { 0 } else { k * n }];
        for bi in 0..b {
            let gb = &g[bi * o * n..(bi + 1) * o * n];
            if let Some(gw) = gw.as_mut() {
                let xb = &xv[bi * in_len..(bi + 1) * in_len];
                let cols: &[T] = if pointwise {
                    xb
                } else {
                    geo.im2col(xb, &mut col);
                    &col
                };
                // dW[O,K] += g[O,N] · colsᵀ
                T::gemm(o, n, k, T::ONE, gb, (n as isize, 1), cols, (1, n as isize), T::ONE, gw, k);
            }
            if let Some(gx) = gx.as_mut() {
                let dst = &mut gx[bi * in_len..(bi + 1) * in_len];
                // dcol[K,N] = Wᵀ · g
                if pointwise {
                    T::gemm(k, o, n, T::ONE, &wv, (1, k as isize), gb, (n as isize, 1), T::ZERO, dst, n);
                } else {
                    T::gemm(k, o, n, T::ONE, &wv, (1, k as isize), gb, (n as isize, 1), T::ZERO, &mut dcol, n);
                    geo.col2im(&dcol, dst);
                }
            }
        }
        let mut grads = vec![gx, gw];
        if needs.len() == 3 {
            grads.push(needs[2].then(|| bias_grad(g, b, o, n)));
        }
        grads
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(x: &[f64], xs: Shape, w: &[f64], ws: Shape, opts: ConvOptions) -> (Vec<f64>, (usize, usize)) {
        let [b, c, h, wd] = xs;
        let [o, _, kh, kw] = ws;
        let (ho, wo) = opts.output_size((h, wd), (kh, kw));
        let mut out = vec![0.0; b * o * ho * wo];
        for bi in 0..b {
            for oi in 0..o {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = 0.0;
                        for ci in 0..c {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = (oy * opts.stride.0 + ky * opts.dilation.0) as isize - opts.padding.0 as isize;
                                    let ix = (ox * opts.stride.1 + kx * opts.dilation.1) as isize - opts.padding.1 as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    acc += x[((bi * c + ci) * h + iy as usize) * wd + ix as usize]
                                        * w[((oi * c + ci) * kh + ky) * kw + kx];
                                }
                            }
                        }
                        out[((bi * o + oi) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        (out, (ho, wo))
    }

    #[test]
    fn matches_direct_loops() {
        let cases = [
            ([2, 3, 7, 6], [4, 3, 3, 3], ConvOptions::same((3, 3), (1, 1))),
            ([1, 2, 9, 9], [2, 2, 3, 3], ConvOptions { stride: (2, 2), padding: (1, 1), dilation: (1, 1) }),
            ([1, 2, 8, 8], [3, 2, 3, 3], ConvOptions::same((3, 3), (3, 3))),
            ([1, 2, 5, 6], [2, 2, 1, 3], ConvOptions::same((1, 3), (1, 1))),
            ([2, 4, 4, 4], [3, 4, 1, 1], ConvOptions::default()),
            ([1, 2, 4, 4], [2, 2, 3, 3], ConvOptions::same((3, 3), (7, 7))),
        ];
        for (xs, ws, opts) in cases {
            let x: Vec<f64> = (0..crate::tensor::numel(&xs)).map(|i| ((i * 7919) % 23) as f64 / 7.0 - 1.5).collect();
            let w: Vec<f64> = (0..crate::tensor::numel(&ws)).map(|i| ((i * 104729) % 17) as f64 / 9.0 - 0.9).collect();
            let (expect, _) = naive(&x, xs, &w, ws, opts);
            let y = conv2d(&Tensor::constant(xs, x), &Tensor::constant(ws, w), None, opts);
            for (a, e) in y.data().iter().zip(&expect) {
                assert!((a - e).abs() < 1e-12, "{xs:?} {opts:?}");
            }
        }
    }
}
