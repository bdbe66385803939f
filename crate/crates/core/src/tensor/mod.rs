//! Dense n-dimensional tensors with reverse-mode differentiation.
//!
//! A tensor is an immutable value; operations build a dynamic backward graph
//! on the fly. Calling [`Tensor::backward`] on a scalar walks that graph in
//! reverse topological order and accumulates gradients into every leaf that
//! was created with [`Tensor::parameter`].

pub(crate) mod gradcheck;
mod ops;
pub mod shape;

pub use gradcheck::{
    grad_check, op_suite, sign_flip_fixture_report, GradCheckReport, FD_EPSILON, OP_TOLERANCE,
};
pub use ops::{dropout, embedding};

use std::cell::Cell;
use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// True when ops on this thread record backward nodes.
pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Runs `f` with backward-graph recording disabled on this thread.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    let out = f();
    GRAD_ENABLED.with(|g| g.set(prev));
    out
}

/// Backward rule: `(out_data, out_grad) ->` one gradient per parent.
type BackwardFn<T> = Box<dyn Fn(&[T], &[T]) -> Vec<Option<Vec<T>>> + Send + Sync>;

struct Node<T: Scalar> {
    parents: Vec<Tensor<T>>,
    backward: BackwardFn<T>,
}

struct Inner<T: Scalar> {
    id: u64,
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<T>>>,
    node: Option<Node<T>>,
}

/// Shared handle to an immutable tensor value.
pub struct Tensor<T: Scalar = f32> {
    inner: Arc<Inner<T>>,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Arc::clone(&self.inner),
        }
    }
}

impl<T: Scalar> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

impl<T: Scalar> Tensor<T> {
    fn build(shape: Vec<usize>, data: Vec<T>, requires_grad: bool, node: Option<Node<T>>) -> Self {
        assert_eq!(
            shape::numel(&shape),
            data.len(),
            "shape {shape:?} does not match data length {}",
            data.len()
        );
        Tensor {
            inner: Arc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                requires_grad,
                grad: Mutex::new(None),
                node,
            }),
        }
    }

    /// Constant leaf; never receives a gradient.
    pub fn new(shape: &[usize], data: Vec<T>) -> Self {
        Self::build(shape.to_vec(), data, false, None)
    }

    /// Trainable leaf; `backward` populates its gradient.
    pub fn parameter(shape: &[usize], data: Vec<T>) -> Self {
        Self::build(shape.to_vec(), data, true, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(shape, vec![T::zero(); shape::numel(shape)])
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self::new(shape, vec![value; shape::numel(shape)])
    }

    pub fn scalar(value: T) -> Self {
        Self::new(&[], vec![value])
    }

    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<T>,
        parents: Vec<Tensor<T>>,
        backward: impl Fn(&[T], &[T]) -> Vec<Option<Vec<T>>> + Send + Sync + 'static,
    ) -> Self {
        let tracked = grad_enabled() && parents.iter().any(|p| p.in_graph());
        let node = tracked.then(|| Node {
            parents,
            backward: Box::new(backward),
        });
        Self::build(shape, data, false, node)
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.inner.data
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.inner.data[0]
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// Part of a backward graph, either as a trainable leaf or an op output.
    pub fn in_graph(&self) -> bool {
        self.inner.requires_grad || self.inner.node.is_some()
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.grad.lock().unwrap().clone()
    }

    pub fn take_grad(&self) -> Option<Vec<T>> {
        self.inner.grad.lock().unwrap().take()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.lock().unwrap() = None;
    }

    pub fn is_finite(&self) -> bool {
        self.inner.data.iter().all(|v| v.is_finite())
    }

    /// Same values as a fresh constant leaf, cut off from the graph.
    pub fn detach(&self) -> Self {
        Self::new(&self.inner.shape, self.inner.data.clone())
    }

    /// Reverse-mode gradient accumulation from a scalar loss.
    ///
    /// Gradients of shared subexpressions sum over all paths. Leaves created
    /// with `parameter` get their `grad` buffer populated (added onto any
    /// existing gradient, so callers zero between steps).
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward() requires a scalar loss, got shape {:?}",
                self.shape()
            )));
        }

        // Iterative post-order over the graph.
        let mut order: Vec<Tensor<T>> = Vec::new();
        let mut visited: HashMap<u64, ()> = HashMap::new();
        let mut stack: Vec<(Tensor<T>, usize)> = vec![(self.clone(), 0)];
        visited.insert(self.id(), ());
        while let Some((t, child)) = stack.pop() {
            let n_parents = t.inner.node.as_ref().map_or(0, |n| n.parents.len());
            if child < n_parents {
                stack.push((t.clone(), child + 1));
                let parent = t.inner.node.as_ref().unwrap().parents[child].clone();
                if parent.inner.node.is_some() && !visited.contains_key(&parent.id()) {
                    visited.insert(parent.id(), ());
                    stack.push((parent, 0));
                }
            } else {
                order.push(t);
            }
        }

        let mut grads: HashMap<u64, Vec<T>> = HashMap::new();
        grads.insert(self.id(), vec![T::one()]);

        for t in order.iter().rev() {
            let Some(node) = t.inner.node.as_ref() else {
                continue;
            };
            let Some(out_grad) = grads.remove(&t.id()) else {
                continue;
            };
            let parent_grads = (node.backward)(&t.inner.data, &out_grad);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (parent, pg) in node.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !parent.in_graph() {
                    continue;
                }
                debug_assert_eq!(pg.len(), parent.numel());
                if parent.inner.requires_grad {
                    let mut slot = parent.inner.grad.lock().unwrap();
                    match slot.as_mut() {
                        Some(existing) => {
                            for (e, g) in existing.iter_mut().zip(&pg) {
                                *e += *g;
                            }
                        }
                        None => *slot = Some(pg),
                    }
                } else {
                    match grads.get_mut(&parent.id()) {
                        Some(existing) => {
                            for (e, g) in existing.iter_mut().zip(&pg) {
                                *e += *g;
                            }
                        }
                        None => {
                            grads.insert(parent.id(), pg);
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
