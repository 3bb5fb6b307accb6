use std::cell::{Cell, Ref, RefCell};
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;

use crate::error::{Result, TensorError};

/// Element type of the engine: `f32` for training, `f64` for verification.
pub trait Real:
    num_traits::Float + num_traits::NumAssignOps + Default + fmt::Debug + fmt::Display + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Real for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// Backward closure: receives the node's accumulated output gradient.
pub(crate) type BackwardFn<T> = Box<dyn FnOnce(&[T]) -> Result<()>>;

pub(crate) struct Node<T: Real> {
    id: u64,
    shape: Vec<usize>,
    data: Vec<T>,
    grad: Option<Vec<T>>,
    /// True if gradients must flow into or through this node.
    tracked: bool,
    parents: Vec<Tensor<T>>,
    backward: Option<BackwardFn<T>>,
}

/// Dense N-dimensional array with gradient buffer, shared by handle.
///
/// Cloning a `Tensor` clones the handle, not the storage. The parent
/// links form a DAG; `backward` walks it once in reverse topological
/// order, so shared subexpressions and shared weights accumulate
/// gradients correctly.
pub struct Tensor<T: Real> {
    inner: Rc<RefCell<Node<T>>>,
}

impl<T: Real> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<T: Real> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.inner.borrow();
        write!(
            f,
            "Tensor(id={}, shape={:?}, tracked={})",
            n.id, n.shape, n.tracked
        )
    }
}

fn check_finite<T: Real>(op: &'static str, data: &[T]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(TensorError::NonFinite { op })
    }
}

impl<T: Real> Tensor<T> {
    fn new_node(
        shape: Vec<usize>,
        data: Vec<T>,
        tracked: bool,
        parents: Vec<Tensor<T>>,
        backward: Option<BackwardFn<T>>,
    ) -> Self {
        Tensor {
            inner: Rc::new(RefCell::new(Node {
                id: next_id(),
                shape,
                data,
                grad: None,
                tracked,
                parents,
                backward,
            })),
        }
    }

    /// Leaf tensor without gradient tracking.
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        Self::leaf(shape, data, false)
    }

    /// Leaf tensor; `requires_grad` makes it a trainable parameter.
    pub fn leaf(shape: &[usize], data: Vec<T>, requires_grad: bool) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() || shape.iter().any(|&d| d == 0) {
            return Err(TensorError::shape(
                "leaf",
                format!("shape {:?} incompatible with {} values", shape, data.len()),
            ));
        }
        check_finite("leaf", &data)?;
        Ok(Self::new_node(shape.to_vec(), data, requires_grad, Vec::new(), None))
    }

    pub fn parameter(shape: &[usize], data: Vec<T>) -> Result<Self> {
        Self::leaf(shape, data, true)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self::new_node(shape.to_vec(), vec![T::zero(); numel], false, Vec::new(), None)
    }

    pub fn full(shape: &[usize], value: T) -> Result<Self> {
        let numel = shape.iter().product();
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: "full" });
        }
        Ok(Self::new_node(shape.to_vec(), vec![value; numel], false, Vec::new(), None))
    }

    pub fn scalar(value: T) -> Result<Self> {
        Self::full(&[1], value)
    }

    /// Interior node produced by an operation. Untracked results drop
    /// their closure and parent links so inference builds no graph.
    pub(crate) fn from_op(
        op: &'static str,
        shape: Vec<usize>,
        data: Vec<T>,
        parents: Vec<Tensor<T>>,
        backward: BackwardFn<T>,
    ) -> Result<Self> {
        check_finite(op, &data)?;
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let tracked = parents.iter().any(Tensor::tracked);
        if tracked {
            Ok(Self::new_node(shape, data, true, parents, Some(backward)))
        } else {
            Ok(Self::new_node(shape, data, false, Vec::new(), None))
        }
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.inner.borrow().data.len()
    }

    pub fn ndim(&self) -> usize {
        self.inner.borrow().shape.len()
    }

    /// Extent of dimension `i`.
    pub fn dim(&self, i: usize) -> usize {
        self.inner.borrow().shape[i]
    }

    pub fn data(&self) -> Ref<'_, [T]> {
        Ref::map(self.inner.borrow(), |n| n.data.as_slice())
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.inner.borrow().data.clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        let n = self.inner.borrow();
        assert_eq!(n.data.len(), 1, "item() on non-scalar tensor");
        n.data[0]
    }

    pub fn tracked(&self) -> bool {
        self.inner.borrow().tracked
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        self.inner.borrow_mut().grad = None;
    }

    /// Replace the stored values in place (used by the optimizer and
    /// checkpoint loading). Shape must match.
    pub fn set_data(&self, data: Vec<T>) -> Result<()> {
        check_finite("set_data", &data)?;
        let mut n = self.inner.borrow_mut();
        if n.data.len() != data.len() {
            return Err(TensorError::shape(
                "set_data",
                format!("expected {} values, got {}", n.data.len(), data.len()),
            ));
        }
        n.data = data;
        Ok(())
    }

    /// Overwrite one element (used by the finite-difference checker).
    pub fn set_element(&self, index: usize, value: T) {
        self.inner.borrow_mut().data[index] = value;
    }

    /// Mutate data in place through a closure (optimizer fast path).
    pub(crate) fn update_data(&self, f: impl FnOnce(&mut [T])) {
        f(&mut self.inner.borrow_mut().data);
    }

    /// New untracked leaf sharing this tensor's current values.
    pub fn detach(&self) -> Tensor<T> {
        let n = self.inner.borrow();
        Self::new_node(n.shape.clone(), n.data.clone(), false, Vec::new(), None)
    }

    /// Add a contribution into the gradient buffer (no-op for
    /// untracked tensors). Ops call this from backward closures; tests
    /// use it to inject synthetic gradients.
    pub fn accumulate_grad(&self, contrib: &[T]) {
        let mut n = self.inner.borrow_mut();
        if !n.tracked {
            return;
        }
        debug_assert_eq!(n.data.len(), contrib.len());
        match n.grad.as_mut() {
            Some(g) => {
                for (gi, ci) in g.iter_mut().zip(contrib) {
                    *gi += *ci;
                }
            }
            None => n.grad = Some(contrib.to_vec()),
        }
    }

    fn id(&self) -> u64 {
        self.inner.borrow().id
    }

    /// Reverse-mode sweep from a scalar output. Each node's backward
    /// closure runs exactly once, after all of its consumers.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::invalid(
                "backward",
                format!("output has {} elements, expected scalar", self.numel()),
            ));
        }
        if !self.tracked() {
            return Err(TensorError::invalid(
                "backward",
                "output does not depend on any tracked tensor",
            ));
        }
        self.accumulate_grad(&[T::one()]);

        // Iterative DFS post-order: dependencies first, so the reversed
        // list processes every consumer before its producers.
        let mut order: Vec<Tensor<T>> = Vec::new();
        let mut visited: HashSet<u64> = HashSet::new();
        let mut stack: Vec<(Tensor<T>, usize)> = vec![(self.clone(), 0)];
        visited.insert(self.id());
        while let Some((node, pi)) = stack.last().cloned() {
            let parent = {
                let n = node.inner.borrow();
                n.parents.get(pi).cloned()
            };
            match parent {
                Some(p) => {
                    stack.last_mut().unwrap().1 += 1;
                    if p.tracked() && visited.insert(p.id()) {
                        stack.push((p, 0));
                    }
                }
                None => {
                    order.push(node);
                    stack.pop();
                }
            }
        }

        for node in order.iter().rev() {
            let (grad, f) = {
                let mut n = node.inner.borrow_mut();
                (n.grad.clone(), n.backward.take())
            };
            if let (Some(g), Some(f)) = (grad, f) {
                f(&g)?;
            }
        }
        Ok(())
    }
}
