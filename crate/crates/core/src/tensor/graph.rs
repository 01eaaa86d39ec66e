use std::cell::{Cell, RefCell};
use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::rc::Rc;

use super::{Real, Tensor};
use crate::error::{Error, Result};

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(Cell::get)
}

/// Run `f` without recording any operation for differentiation.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|c| c.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|c| c.replace(false)));
    f()
}

/// Maps the output gradient to one optional gradient per parent.
pub(crate) type BackwardFn<T> = dyn Fn(&[T], &[Var<T>], &Tensor<T>) -> Vec<Option<Vec<T>>>;

struct OpRecord<T: Real> {
    name: &'static str,
    parents: Vec<Var<T>>,
    backward: Box<BackwardFn<T>>,
}

struct Node<T: Real> {
    // Creation order; parents always have smaller ids than their children.
    id: u64,
    value: Tensor<T>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<T>>>,
    op: Option<OpRecord<T>>,
}

/// A tensor participating in the computation graph.
///
/// Cloning is cheap and yields a handle to the same node.
pub struct Var<T: Real>(Rc<Node<T>>);

impl<T: Real> Clone for Var<T> {
    fn clone(&self) -> Self {
        Var(Rc::clone(&self.0))
    }
}

impl<T: Real> fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = self.0.op.as_ref().map_or("leaf", |op| op.name);
        write!(f, "Var#{}({op}, grad={}) {:?}", self.0.id, self.0.requires_grad, self.0.value)
    }
}

impl<T: Real> Var<T> {
    fn leaf(value: Tensor<T>, requires_grad: bool) -> Self {
        Var(Rc::new(Node {
            id: next_id(),
            value,
            requires_grad,
            grad: RefCell::new(None),
            op: None,
        }))
    }

    /// A value that never receives a gradient.
    pub fn constant(value: Tensor<T>) -> Self {
        Self::leaf(value, false)
    }

    /// A leaf whose gradient is accumulated by [`Var::backward`].
    ///
    /// Under [`no_grad`] the leaf is created without gradient tracking.
    pub fn param(value: Tensor<T>) -> Self {
        Self::leaf(value, is_grad_enabled())
    }

    pub(crate) fn from_op(
        value: Tensor<T>,
        name: &'static str,
        parents: &[&Var<T>],
        backward: impl Fn(&[T], &[Var<T>], &Tensor<T>) -> Vec<Option<Vec<T>>> + 'static,
    ) -> Self {
        let tracked = is_grad_enabled() && parents.iter().any(|p| p.requires_grad());
        let op = tracked.then(|| OpRecord {
            name,
            parents: parents.iter().map(|&p| p.clone()).collect(),
            backward: Box::new(backward),
        });
        Var(Rc::new(Node {
            id: next_id(),
            value,
            requires_grad: tracked,
            grad: RefCell::new(None),
            op,
        }))
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn data(&self) -> &[T] {
        self.0.value.data()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self) -> Option<Tensor<T>> {
        let grad = self.0.grad.borrow();
        grad.as_ref().map(|g| {
            Tensor::new(self.shape(), g.clone()).expect("gradient matches value shape")
        })
    }

    pub fn zero_grad(&self) {
        self.0.grad.borrow_mut().take();
    }

    /// Back-propagate from this scalar into every reachable leaf.
    ///
    /// Leaf gradients accumulate across calls until [`Var::zero_grad`].
    pub fn backward(&self) -> Result<()> {
        if !self.0.value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }

        // Collect every tracked node reachable from the loss.
        let mut nodes: BTreeMap<u64, Var<T>> = BTreeMap::new();
        let mut seen = HashSet::new();
        let mut stack = vec![self.clone()];
        while let Some(v) = stack.pop() {
            if !seen.insert(v.id()) {
                continue;
            }
            if let Some(op) = &v.0.op {
                stack.extend(op.parents.iter().filter(|p| p.requires_grad()).cloned());
            }
            nodes.insert(v.id(), v);
        }

        let mut upstream: BTreeMap<u64, Vec<T>> = BTreeMap::new();
        upstream.insert(self.id(), vec![T::one()]);
        // Descending id is a reverse topological order.
        for (id, node) in nodes.iter().rev() {
            let Some(grad_out) = upstream.remove(id) else { continue };
            match &node.0.op {
                None => {
                    let mut slot = node.0.grad.borrow_mut();
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&grad_out).for_each(|(a, g)| *a = *a + *g),
                        None => *slot = Some(grad_out),
                    }
                }
                Some(op) => {
                    let grads = (op.backward)(&grad_out, &op.parents, &node.0.value);
                    debug_assert_eq!(grads.len(), op.parents.len(), "backward of {}", op.name);
                    for (parent, grad) in op.parents.iter().zip(grads) {
                        let Some(grad) = grad else { continue };
                        if !parent.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(grad.len(), parent.value().numel(), "grad of {}", op.name);
                        match upstream.get_mut(&parent.id()) {
                            Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, g)| *a = *a + *g),
                            None => {
                                upstream.insert(parent.id(), grad);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
