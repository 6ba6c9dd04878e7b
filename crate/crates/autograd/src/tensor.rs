use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::scalar::Scalar;

/// Every tensor is 4-D: `[batch, channels, height, width]`. Scalars are
/// `[1, 1, 1, 1]`.
pub type Shape = [usize; 4];

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

pub(crate) fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

pub fn numel(shape: &Shape) -> usize {
    shape.iter().product()
}

/// Maps the upstream gradient (and the op output) to one gradient per
/// parent. Parents that do not need a gradient may be given `None`.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&[T], &[T], &[bool]) -> Vec<Option<Vec<T>>> + Send + Sync>;

enum Origin<T: Scalar> {
    Constant,
    Leaf { param: Option<u64> },
    Op { parents: Vec<Tensor<T>>, backward: BackwardFn<T> },
}

struct Node<T: Scalar> {
    id: u64,
    shape: Shape,
    data: Arc<Vec<T>>,
    origin: Origin<T>,
}

/// Immutable 4-D tensor that remembers how it was computed.
pub struct Tensor<T: Scalar> {
    node: Arc<Node<T>>,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Self {
            node: Arc::clone(&self.node),
        }
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.node.shape)
            .field("requires_grad", &self.requires_grad())
            .finish()
    }
}

impl<T: Scalar> Tensor<T> {
    fn with_origin(shape: Shape, data: Arc<Vec<T>>, origin: Origin<T>) -> Self {
        assert_eq!(numel(&shape), data.len(), "tensor data does not match shape {shape:?}");
        Self {
            node: Arc::new(Node {
                id: fresh_id(),
                shape,
                data,
                origin,
            }),
        }
    }

    /// A tensor that never receives a gradient.
    pub fn constant(shape: Shape, data: Vec<T>) -> Self {
        Self::with_origin(shape, Arc::new(data), Origin::Constant)
    }

    pub(crate) fn constant_shared(shape: Shape, data: Arc<Vec<T>>) -> Self {
        Self::with_origin(shape, data, Origin::Constant)
    }

    /// A leaf whose gradient is reported by [`Tensor::backward`].
    pub fn variable(shape: Shape, data: Vec<T>) -> Self {
        Self::with_origin(shape, Arc::new(data), Origin::Leaf { param: None })
    }

    pub(crate) fn param_leaf(shape: Shape, data: Arc<Vec<T>>, param: u64) -> Self {
        Self::with_origin(shape, data, Origin::Leaf { param: Some(param) })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::constant(shape, vec![T::ZERO; numel(&shape)])
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Self::constant(shape, vec![value; numel(&shape)])
    }

    pub fn scalar(value: T) -> Self {
        Self::constant([1, 1, 1, 1], vec![value])
    }

    /// Builds the output of a differentiable op. The backward closure is
    /// dropped when no parent needs a gradient.
    pub(crate) fn from_op(
        shape: Shape,
        data: Vec<T>,
        parents: Vec<Tensor<T>>,
        backward: impl Fn(&[T], &[T], &[bool]) -> Vec<Option<Vec<T>>> + Send + Sync + 'static,
    ) -> Self {
        if parents.iter().any(Tensor::requires_grad) {
            Self::with_origin(
                shape,
                Arc::new(data),
                Origin::Op {
                    parents,
                    backward: Box::new(backward),
                },
            )
        } else {
            Self::constant(shape, data)
        }
    }

    pub fn id(&self) -> u64 {
        self.node.id
    }

    pub fn shape(&self) -> Shape {
        self.node.shape
    }

    pub fn numel(&self) -> usize {
        self.node.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.node.data
    }

    pub(crate) fn shared_data(&self) -> Arc<Vec<T>> {
        Arc::clone(&self.node.data)
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.node.data.to_vec()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.node.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        !matches!(self.node.origin, Origin::Constant)
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Self {
        Self::constant_shared(self.shape(), self.shared_data())
    }

    pub fn all_finite(&self) -> bool {
        self.data().iter().all(|v| v.is_finite())
    }

    /// Reverse-mode sweep seeded with ones.
    pub fn backward(&self) -> Gradients<T> {
        let order = self.topological_order();
        let mut pending: HashMap<u64, Vec<T>> = HashMap::new();
        let mut out = Gradients::default();
        if !self.requires_grad() {
            return out;
        }
        pending.insert(self.id(), vec![T::ONE; self.numel()]);
        for node in order.iter().rev() {
            let Some(grad) = pending.remove(&node.id) else {
                continue;
            };
            match &node.origin {
                Origin::Constant => {}
                Origin::Leaf { param } => {
                    let slot = match param {
                        Some(p) => out.by_param.entry(*p),
                        None => out.by_tensor.entry(node.id),
                    };
                    match slot {
                        std::collections::hash_map::Entry::Occupied(mut e) => add_into(e.get_mut(), &grad),
                        std::collections::hash_map::Entry::Vacant(e) => {
                            e.insert(grad);
                        }
                    }
                }
                Origin::Op { parents, backward } => {
                    let needs: Vec<bool> = parents.iter().map(Tensor::requires_grad).collect();
                    let grads = backward(&grad, &node.data, &needs);
                    debug_assert_eq!(grads.len(), parents.len());
                    for ((parent, g), need) in parents.iter().zip(grads).zip(&needs) {
                        let (Some(g), true) = (g, *need) else {
                            continue;
                        };
                        debug_assert_eq!(g.len(), parent.numel());
                        match pending.get_mut(&parent.id()) {
                            Some(acc) => add_into(acc, &g),
                            None => {
                                pending.insert(parent.id(), g);
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Nodes that can carry a gradient, parents before children.
    fn topological_order(&self) -> Vec<Arc<Node<T>>> {
        let mut order = Vec::new();
        let mut seen = HashSet::new();
        let mut stack: Vec<(Arc<Node<T>>, bool)> = vec![(Arc::clone(&self.node), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !seen.insert(node.id) {
                continue;
            }
            stack.push((Arc::clone(&node), true));
            if let Origin::Op { parents, .. } = &node.origin {
                for p in parents {
                    if p.requires_grad() && !seen.contains(&p.id()) {
                        stack.push((Arc::clone(&p.node), false));
                    }
                }
            }
        }
        order
    }
}

pub(crate) fn add_into<T: Scalar>(acc: &mut [T], g: &[T]) {
    for (a, &b) in acc.iter_mut().zip(g) {
        *a += b;
    }
}

/// Gradients produced by one backward sweep.
#[derive(Debug)]
pub struct Gradients<T: Scalar> {
    by_param: HashMap<u64, Vec<T>>,
    by_tensor: HashMap<u64, Vec<T>>,
}

impl<T: Scalar> Default for Gradients<T> {
    fn default() -> Self {
        Self {
            by_param: HashMap::new(),
            by_tensor: HashMap::new(),
        }
    }
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a [`Tensor::variable`] leaf.
    pub fn wrt(&self, t: &Tensor<T>) -> Option<&[T]> {
        self.by_tensor.get(&t.id()).map(Vec::as_slice)
    }

    /// Gradient of a parameter, summed over every use in the graph.
    pub fn param(&self, p: &crate::module::Param<T>) -> Option<&[T]> {
        self.by_param.get(&p.id()).map(Vec::as_slice)
    }

    pub fn is_empty(&self) -> bool {
        self.by_param.is_empty() && self.by_tensor.is_empty()
    }
}
