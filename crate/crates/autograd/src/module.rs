use std::sync::{Arc, RwLock};

use crate::scalar::Scalar;
use crate::tensor::{fresh_id, numel, Shape, Tensor};

/// Forward-pass mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in normalization layers and gradient tracking on
    /// parameters. `update_stats` controls whether running statistics move.
    Train { update_stats: bool },
    /// Running statistics, parameters treated as constants.
    Eval,
}

impl Mode {
    pub const TRAIN: Mode = Mode::Train { update_stats: true };

    pub fn is_train(self) -> bool {
        matches!(self, Mode::Train { .. })
    }
}

/// Trainable tensor with interior mutability so that optimizers can update
/// a model through a shared reference.
#[derive(Debug)]
pub struct Param<T: Scalar> {
    id: u64,
    shape: Shape,
    data: RwLock<Arc<Vec<T>>>,
}

impl<T: Scalar> Param<T> {
    pub fn new(shape: Shape, data: Vec<T>) -> Self {
        assert_eq!(numel(&shape), data.len(), "parameter data does not match shape {shape:?}");
        Self {
            id: fresh_id(),
            shape,
            data: RwLock::new(Arc::new(data)),
        }
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::new(shape, vec![T::ZERO; numel(&shape)])
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        numel(&self.shape)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn values(&self) -> Arc<Vec<T>> {
        Arc::clone(&self.data.read().expect("parameter lock poisoned"))
    }

    /// Graph node for this parameter; tracked leaves report gradients.
    pub fn tensor(&self, track: bool) -> Tensor<T> {
        let data = self.values();
        if track {
            Tensor::param_leaf(self.shape, data, self.id)
        } else {
            Tensor::constant_shared(self.shape, data)
        }
    }

    pub fn set(&self, data: Vec<T>) {
        assert_eq!(data.len(), self.len(), "parameter size changed");
        *self.data.write().expect("parameter lock poisoned") = Arc::new(data);
    }

    pub fn fill(&self, value: T) {
        self.set(vec![value; self.len()]);
    }
}

impl<T: Scalar> Clone for Param<T> {
    /// Deep copy with a fresh identity.
    fn clone(&self) -> Self {
        Self::new(self.shape, self.values().to_vec())
    }
}

/// Non-trainable state, e.g. normalization running statistics.
#[derive(Debug)]
pub struct Buffer<T: Scalar> {
    shape: Shape,
    data: RwLock<Vec<T>>,
}

impl<T: Scalar> Buffer<T> {
    pub fn new(shape: Shape, data: Vec<T>) -> Self {
        assert_eq!(numel(&shape), data.len(), "buffer data does not match shape {shape:?}");
        Self {
            shape,
            data: RwLock::new(data),
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn values(&self) -> Vec<T> {
        self.data.read().expect("buffer lock poisoned").clone()
    }

    pub fn set(&self, data: Vec<T>) {
        let mut guard = self.data.write().expect("buffer lock poisoned");
        assert_eq!(data.len(), guard.len(), "buffer size changed");
        *guard = data;
    }

    pub(crate) fn update(&self, f: impl FnOnce(&mut [T])) {
        f(&mut self.data.write().expect("buffer lock poisoned"));
    }
}

impl<T: Scalar> Clone for Buffer<T> {
    fn clone(&self) -> Self {
        Self::new(self.shape, self.values())
    }
}

pub enum Slot<'m, T: Scalar> {
    Param(&'m Param<T>),
    Buffer(&'m Buffer<T>),
}

/// Walks a module tree, handing out dotted names such as
/// `decoder.fuse.0.conv.weight`.
pub struct Visitor<'m, 'f, T: Scalar> {
    path: Vec<String>,
    f: &'f mut dyn FnMut(&str, Slot<'m, T>),
}

impl<'m, 'f, T: Scalar> Visitor<'m, 'f, T> {
    pub fn new(f: &'f mut dyn FnMut(&str, Slot<'m, T>)) -> Self {
        Self { path: Vec::new(), f }
    }

    fn name(&self, leaf: &str) -> String {
        let mut s = self.path.join(".");
        if !s.is_empty() {
            s.push('.');
        }
        s.push_str(leaf);
        s
    }

    pub fn param(&mut self, name: &str, p: &'m Param<T>) {
        let full = self.name(name);
        (self.f)(&full, Slot::Param(p));
    }

    pub fn buffer(&mut self, name: &str, b: &'m Buffer<T>) {
        let full = self.name(name);
        (self.f)(&full, Slot::Buffer(b));
    }

    pub fn scope(&mut self, name: impl Into<String>, body: impl FnOnce(&mut Self)) {
        self.path.push(name.into());
        body(self);
        self.path.pop();
    }

    pub fn module(&mut self, name: impl Into<String>, m: &'m dyn Module<T>) {
        self.scope(name, |v| m.visit(v));
    }
}

pub trait Module<T: Scalar> {
    fn visit<'m>(&'m self, v: &mut Visitor<'m, '_, T>);
}

/// Named parameters in visiting order.
pub fn named_params<'m, T: Scalar>(m: &'m dyn Module<T>) -> Vec<(String, &'m Param<T>)> {
    let mut out = Vec::new();
    let mut f = |name: &str, slot: Slot<'m, T>| {
        if let Slot::Param(p) = slot {
            out.push((name.to_string(), p));
        }
    };
    m.visit(&mut Visitor::new(&mut f));
    out
}

/// Named buffers in visiting order.
pub fn named_buffers<'m, T: Scalar>(m: &'m dyn Module<T>) -> Vec<(String, &'m Buffer<T>)> {
    let mut out = Vec::new();
    let mut f = |name: &str, slot: Slot<'m, T>| {
        if let Slot::Buffer(b) = slot {
            out.push((name.to_string(), b));
        }
    };
    m.visit(&mut Visitor::new(&mut f));
    out
}

/// Total number of trainable scalars.
pub fn param_count<T: Scalar>(m: &dyn Module<T>) -> usize {
    named_params(m).iter().map(|(_, p)| p.len()).sum()
}
