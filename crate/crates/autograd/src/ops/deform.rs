//! Deformable convolution: every kernel tap samples the input at a learned
//! fractional offset with bilinear interpolation. Offsets are laid out as
//! `[B, 2·kh·kw, Ho, Wo]` with `(dy, dx)` pairs per tap in row-major tap
//! order.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::conv::{add_bias, bias_grad, ConvOptions, Geometry};

/// Corner indices and weights of one bilinear sample. Corners outside the
/// plane have weight zero.
#[derive(Clone, Copy)]
struct Sample<T> {
    idx: [usize; 4],
    wt: [T; 4],
    valid: [bool; 4],
    /// Fractional parts `(ly, lx)`.
    frac: (T, T),
}

fn sample_at<T: Scalar>(h: usize, w: usize, y: T, x: T) -> Option<Sample<T>> {
    let (hf, wf) = (T::of(h as f64), T::of(w as f64));
    if !(y > -T::ONE && y < hf && x > -T::ONE && x < wf) {
        return None;
    }
    let (y0, x0) = (y.floor(), x.floor());
    let (ly, lx) = (y - y0, x - x0);
    let (hy, hx) = (T::ONE - ly, T::ONE - lx);
    let (y0, x0) = (y0.to_f64() as isize, x0.to_f64() as isize);
    let mut s = Sample {
        idx: [0; 4],
        wt: [hy * hx, hy * lx, ly * hx, ly * lx],
        valid: [false; 4],
        frac: (ly, lx),
    };
    for (k, (dy, dx)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
        let (yy, xx) = (y0 + dy, x0 + dx);
        if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
            s.valid[k] = true;
            s.idx[k] = yy as usize * w + xx as usize;
        }
    }
    Some(s)
}

impl<T: Scalar> Sample<T> {
    fn corners(&self, plane: &[T]) -> [T; 4] {
        let mut v = [T::ZERO; 4];
        for k in 0..4 {
            if self.valid[k] {
                v[k] = plane[self.idx[k]];
            }
        }
        v
    }

    fn value(&self, plane: &[T]) -> T {
        let v = self.corners(plane);
        (0..4).map(|k| self.wt[k] * v[k]).sum()
    }

    /// Partial derivatives of the sampled value with respect to `(y, x)`.
    fn slope(&self, plane: &[T]) -> (T, T) {
        let v = self.corners(plane);
        let (ly, lx) = self.frac;
        let (hy, hx) = (T::ONE - ly, T::ONE - lx);
        (hx * (v[2] - v[0]) + lx * (v[3] - v[1]), hy * (v[1] - v[0]) + ly * (v[3] - v[2]))
    }
}

struct Layout {
    geo: Geometry,
    taps: usize,
}

impl Layout {
    /// Sampling position of tap `t` for output pixel `p` of image `bi`.
    fn position<T: Scalar>(&self, off: &[T], bi: usize, t: usize, p: usize) -> (T, T) {
        let g = &self.geo;
        let n = g.cols();
        let (oy, ox) = (p / g.wo, p % g.wo);
        let (ky, kx) = (t / g.kw, t % g.kw);
        let base = (bi * 2 * self.taps + 2 * t) * n;
        let y = (oy * g.opts.stride.0 + ky * g.opts.dilation.0) as f64 - g.opts.padding.0 as f64;
        let x = (ox * g.opts.stride.1 + kx * g.opts.dilation.1) as f64 - g.opts.padding.1 as f64;
        (T::of(y) + off[base + p], T::of(x) + off[base + n + p])
    }

    /// Deformable im2col for image `bi`; also returns the per-(tap, pixel)
    /// samples for reuse in the backward pass.
    fn columns<T: Scalar>(&self, x: &[T], off: &[T], bi: usize, col: &mut [T]) -> Vec<Option<Sample<T>>> {
        let g = &self.geo;
        let (n, hw) = (g.cols(), g.h * g.w);
        let samples: Vec<Option<Sample<T>>> = (0..self.taps * n)
            .map(|i| {
                let (y, xx) = self.position(off, bi, i / n, i % n);
                sample_at(g.h, g.w, y, xx)
            })
            .collect();
        let xb = &x[bi * g.c * hw..(bi + 1) * g.c * hw];
        for ci in 0..g.c {
            let plane = &xb[ci * hw..(ci + 1) * hw];
            for t in 0..self.taps {
                let row = &mut col[(ci * self.taps + t) * n..(ci * self.taps + t + 1) * n];
                for (p, dst) in row.iter_mut().enumerate() {
                    *dst = samples[t * n + p].map_or(T::ZERO, |s| s.value(plane));
                }
            }
        }
        samples
    }
}

/// `x: [B,C,H,W]`, `offset: [B, 2·kh·kw, Ho, Wo]`, `weight: [O,C,kh,kw]`.
pub fn deform_conv2d<T: Scalar>(
    x: &Tensor<T>,
    offset: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    opts: ConvOptions,
) -> Tensor<T> {
    let [b, c, _, _] = x.shape();
    let [o, wc, kh, kw] = weight.shape();
    assert_eq!(c, wc, "deform_conv2d: input has {c} channels, weight expects {wc}");
    let geo = Geometry::new(x.shape(), (kh, kw), opts);
    let layout = Layout { geo, taps: kh * kw };
    assert_eq!(
        offset.shape(),
        [b, 2 * layout.taps, geo.ho, geo.wo],
        "deform_conv2d: offset shape"
    );
    let (k, n, hw) = (geo.rows(), geo.cols(), geo.h * geo.w);

    let mut out = vec![T::ZERO; b * o * n];
    let mut col = vec![T::ZERO; k * n];
    for bi in 0..b {
        layout.columns(x.data(), offset.data(), bi, &mut col);
        let ob = &mut out[bi * o * n..(bi + 1) * o * n];
        T::gemm(o, k, n, T::ONE, weight.data(), (k as isize, 1), &col, (n as isize, 1), T::ZERO, ob, n);
        if let Some(bias) = bias {
            add_bias(ob, bias.data(), n);
        }
    }

    let mut parents = vec![x.clone(), offset.clone(), weight.clone()];
    if let Some(bias) = bias {
        parents.push(bias.clone());
    }
    let (xv, ov, wv) = (x.shared_data(), offset.shared_data(), weight.shared_data());
    Tensor::from_op([b, o, geo.ho, geo.wo], out, parents, move |g, _, needs| {
        let mut gx = needs[0].then(|| vec![T::ZERO; xv.len()]);
        let mut goff = needs[1].then(|| vec![T::ZERO; ov.len()]);
        let mut gw = needs[2].then(|| vec![T::ZERO; wv.len()]);
        let mut col = vec![T::ZERO; k * n];
        let mut dcol = vec![T::ZERO; k * n];
        for bi in 0..b {
            let gb = &g[bi * o * n..(bi + 1) * o * n];
            let samples = layout.columns(&xv, &ov, bi, &mut col);
            if let Some(gw) = gw.as_mut() {
                T::gemm(o, n, k, T::ONE, gb, (n as isize, 1), &col, (1, n as isize), T::ONE, gw, k);
            }
            if gx.is_none() && goff.is_none() {
                continue;
            }
            T::gemm(k, o, n, T::ONE, &wv, (1, k as isize), gb, (n as isize, 1), T::ZERO, &mut dcol, n);
            let xb = &xv[bi * c * hw..(bi + 1) * c * hw];
            for ci in 0..c {
                let plane = &xb[ci * hw..(ci + 1) * hw];
                for t in 0..layout.taps {
                    let drow = &dcol[(ci * layout.taps + t) * n..(ci * layout.taps + t + 1) * n];
                    for (p, &d) in drow.iter().enumerate() {
                        let Some(s) = samples[t * n + p] else { continue };
                        if let Some(gx) = gx.as_mut() {
                            let dst = &mut gx[(bi * c + ci) * hw..(bi * c + ci + 1) * hw];
                            for q in 0..4 {
                                if s.valid[q] {
                                    dst[s.idx[q]] += d * s.wt[q];
                                }
                            }
                        }
                        if let Some(goff) = goff.as_mut() {
                            let (sy, sx) = s.slope(plane);
                            let base = (bi * 2 * layout.taps + 2 * t) * n;
                            goff[base + p] += d * sy;
                            goff[base + n + p] += d * sx;
                        }
                    }
                }
            }
        }
        let mut grads = vec![gx, goff, gw];
        if needs.len() == 4 {
            grads.push(needs[3].then(|| bias_grad(g, b, o, n)));
        }
        grads
    })
}
