//! Element-wise arithmetic with NumPy-style broadcasting over the four axes.

use crate::scalar::Scalar;
use crate::tensor::{numel, Shape, Tensor};

fn broadcast_shape(a: Shape, b: Shape) -> Shape {
    let mut out = [0; 4];
    for d in 0..4 {
        out[d] = match (a[d], b[d]) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => panic!("shapes {a:?} and {b:?} do not broadcast"),
        };
    }
    out
}

fn strides(shape: Shape, out: Shape) -> [usize; 4] {
    let mut s = [0; 4];
    let mut acc = 1;
    for d in (0..4).rev() {
        s[d] = if shape[d] == 1 && out[d] != 1 { 0 } else { acc };
        acc *= shape[d];
    }
    s
}

/// Calls `f(out_index, a_index, b_index)` for every output element.
#[inline]
fn for_each_pair(a: Shape, b: Shape, out: Shape, mut f: impl FnMut(usize, usize, usize)) {
    if a == b {
        for i in 0..numel(&out) {
            f(i, i, i);
        }
        return;
    }
    let (sa, sb) = (strides(a, out), strides(b, out));
    let mut o = 0;
    for i0 in 0..out[0] {
        for i1 in 0..out[1] {
            for i2 in 0..out[2] {
                let ba = i0 * sa[0] + i1 * sa[1] + i2 * sa[2];
                let bb = i0 * sb[0] + i1 * sb[1] + i2 * sb[2];
                for i3 in 0..out[3] {
                    f(o, ba + i3 * sa[3], bb + i3 * sb[3]);
                    o += 1;
                }
            }
        }
    }
}

#[derive(Clone, Copy)]
enum Bin {
    Add,
    Sub,
    Mul,
    Div,
}

fn binary<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, op: Bin) -> Tensor<T> {
    let (sa, sb) = (a.shape(), b.shape());
    let so = broadcast_shape(sa, sb);
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![T::ZERO; numel(&so)];
    match op {
        Bin::Add => for_each_pair(sa, sb, so, |o, i, j| out[o] = ad[i] + bd[j]),
        Bin::Sub => for_each_pair(sa, sb, so, |o, i, j| out[o] = ad[i] - bd[j]),
        Bin::Mul => for_each_pair(sa, sb, so, |o, i, j| out[o] = ad[i] * bd[j]),
        Bin::Div => for_each_pair(sa, sb, so, |o, i, j| out[o] = ad[i] / bd[j]),
    }
    let (av, bv) = (a.shared_data(), b.shared_data());
    Tensor::from_op(so, out, vec![a.clone(), b.clone()], move |g, _, needs| {
        let mut ga = needs[0].then(|| vec![T::ZERO; av.len()]);
        let mut gb = needs[1].then(|| vec![T::ZERO; bv.len()]);
        for_each_pair(sa, sb, so, |o, i, j| {
            let (da, db) = match op {
                Bin::Add => (T::ONE, T::ONE),
                Bin::Sub => (T::ONE, -T::ONE),
                Bin::Mul => (bv[j], av[i]),
                Bin::Div => (T::ONE / bv[j], -av[i] / (bv[j] * bv[j])),
            };
            if let Some(ga) = ga.as_mut() {
                ga[i] += g[o] * da;
            }
            if let Some(gb) = gb.as_mut() {
                gb[j] += g[o] * db;
            }
        });
        vec![ga, gb]
    })
}

/// Applies `f` element-wise; `df(x, y)` is the derivative at input `x` with
/// output `y`.
pub(crate) fn unary<T: Scalar>(
    x: &Tensor<T>,
    f: impl Fn(T) -> T,
    df: impl Fn(T, T) -> T + Send + Sync + 'static,
) -> Tensor<T> {
    let out: Vec<T> = x.data().iter().map(|&v| f(v)).collect();
    let xv = x.shared_data();
    Tensor::from_op(x.shape(), out, vec![x.clone()], move |g, y, _| {
        vec![Some(
            g.iter()
                .zip(xv.iter())
                .zip(y)
                .map(|((&g, &x), &y)| g * df(x, y))
                .collect(),
        )]
    })
}

pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::ZERO {
        T::ONE / (T::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::ONE + e)
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn add(&self, other: &Tensor<T>) -> Tensor<T> {
        binary(self, other, Bin::Add)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Tensor<T> {
        binary(self, other, Bin::Sub)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Tensor<T> {
        binary(self, other, Bin::Mul)
    }

    pub fn div(&self, other: &Tensor<T>) -> Tensor<T> {
        binary(self, other, Bin::Div)
    }

    pub fn scale(&self, k: T) -> Tensor<T> {
        unary(self, move |v| v * k, move |_, _| k)
    }

    pub fn add_scalar(&self, k: T) -> Tensor<T> {
        unary(self, move |v| v + k, |_, _| T::ONE)
    }

    /// `k − x`
    pub fn rsub_scalar(&self, k: T) -> Tensor<T> {
        unary(self, move |v| k - v, |_, _| -T::ONE)
    }

    pub fn relu(&self) -> Tensor<T> {
        unary(
            self,
            |v| if v > T::ZERO { v } else { T::ZERO },
            |x, _| if x > T::ZERO { T::ONE } else { T::ZERO },
        )
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        unary(self, sigmoid_scalar, |_, y| y * (T::ONE - y))
    }

    /// Absolute value; the subgradient at 0 is taken as 0.
    pub fn abs(&self) -> Tensor<T> {
        unary(self, Scalar::abs, |x, _| {
            if x > T::ZERO {
                T::ONE
            } else if x < T::ZERO {
                -T::ONE
            } else {
                T::ZERO
            }
        })
    }

    pub fn square(&self) -> Tensor<T> {
        unary(self, |v| v * v, |x, _| x + x)
    }

    /// Numerically stable binary cross-entropy of logits against constant
    /// targets, per element.
    pub fn bce_with_logits(&self, target: &[T]) -> Tensor<T> {
        assert_eq!(target.len(), self.numel(), "target does not match logits");
        let out: Vec<T> = self
            .data()
            .iter()
            .zip(target)
            .map(|(&x, &t)| x.max(T::ZERO) - x * t + (T::ONE + (-x.abs()).exp()).ln())
            .collect();
        let xv = self.shared_data();
        let tv = target.to_vec();
        Tensor::from_op(self.shape(), out, vec![self.clone()], move |g, _, _| {
            vec![Some(
                g.iter()
                    .zip(xv.iter())
                    .zip(&tv)
                    .map(|((&g, &x), &t)| g * (sigmoid_scalar(x) - t))
                    .collect(),
            )]
        })
    }
}
