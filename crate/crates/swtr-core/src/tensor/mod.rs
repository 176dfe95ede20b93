//! Dense n-d tensor with reverse-mode automatic differentiation.
//!
//! A `Tensor<T>` is a cheaply clonable handle onto a node of a dynamically
//! built computation graph. Ops allocate a fresh node holding the result
//! plus a backward closure; `backward()` on a scalar walks the graph in
//! reverse topological order and accumulates gradients into every
//! `requires_grad` leaf. Nodes whose inputs carry no gradient record
//! nothing, so pure inference builds no graph.
//!
//! Determinism contract: every reduction (matmul contractions, sums,
//! normalization statistics, gradient accumulation) runs in a fixed
//! sequential order per output element. Rayon is only used across disjoint
//! output regions, so results are bit-identical for any worker count.

mod elementwise;
mod gradcheck;
mod image;
mod matmul;
mod nn;
mod reduce;
mod shape;

pub use gradcheck::{grad_check, GradCheckReport};
pub use shape::{contiguous_strides, Axis};

use crate::error::{Result, SwtrError};
use rand_chacha::ChaCha12Rng;
use std::cell::{Ref, RefCell};
use std::fmt;
use std::rc::Rc;

/// Element type of a tensor: f32 for training, f64 for gradient checks.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + std::iter::Sum
    + Send
    + Sync
    + fmt::Debug
    + fmt::Display
    + 'static
{
    const DTYPE: &'static str;
    fn from_f64c(x: f64) -> Self {
        Self::from_f64(x).expect("constant representable")
    }
    fn to_f64c(self) -> f64;
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";
    fn to_f64c(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";
    fn to_f64c(self) -> f64 {
        self
    }
}

/// Shorthand for converting a constant into the element type.
pub(crate) fn c<T: Scalar>(x: f64) -> T {
    T::from_f64c(x)
}

type BackwardFn<T> = Box<dyn Fn(&[T]) -> Vec<Option<Vec<T>>>>;

pub(crate) struct Node<T: Scalar> {
    shape: Vec<usize>,
    data: Rc<RefCell<Vec<T>>>,
    grad: RefCell<Option<Vec<T>>>,
    requires_grad: bool,
    parents: Vec<Tensor<T>>,
    /// Maps this node's gradient to gradients for each parent (same order).
    backward: Option<BackwardFn<T>>,
}

/// Handle onto a graph node. Clones share the node.
pub struct Tensor<T: Scalar> {
    pub(crate) node: Rc<Node<T>>,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            node: Rc::clone(&self.node),
        }
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Tensor<{}>{:?} requires_grad={}",
            T::DTYPE,
            self.node.shape,
            self.node.requires_grad
        )
    }
}

impl<T: Scalar> Tensor<T> {
    // ── Constructors ────────────────────────────────────────────────

    fn new_node(
        shape: Vec<usize>,
        data: Vec<T>,
        requires_grad: bool,
        parents: Vec<Tensor<T>>,
        backward: Option<BackwardFn<T>>,
    ) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            node: Rc::new(Node {
                shape,
                data: Rc::new(RefCell::new(data)),
                grad: RefCell::new(None),
                requires_grad,
                parents,
                backward,
            }),
        }
    }

    /// Constant tensor (no gradient tracking).
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(SwtrError::BadShape {
                op: "from_vec",
                shape: shape.to_vec(),
                reason: format!("shape implies {} elements, got {}", shape.iter().product::<usize>(), data.len()),
            });
        }
        Ok(Self::new_node(shape.to_vec(), data, false, vec![], None))
    }

    /// Leaf with gradient tracking (a learnable parameter or probe input).
    pub fn param(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let t = Self::from_vec(shape, data)?;
        Ok(Tensor {
            node: Rc::new(Node {
                shape: t.node.shape.clone(),
                data: Rc::clone(&t.node.data),
                grad: RefCell::new(None),
                requires_grad: true,
                parents: vec![],
                backward: None,
            }),
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::new_node(shape.to_vec(), vec![T::zero(); n], false, vec![], None)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        let n = shape.iter().product();
        Self::new_node(shape.to_vec(), vec![v; n], false, vec![], None)
    }

    pub fn scalar(v: T) -> Self {
        Self::new_node(vec![], vec![v], false, vec![], None)
    }

    /// Standard-normal fill scaled by `std` (always sampled at f64).
    pub fn randn(shape: &[usize], std: f64, rng: &mut ChaCha12Rng) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| c::<T>(crate::rng::normal_f64(rng) * std))
            .collect();
        Self::new_node(shape.to_vec(), data, false, vec![], None)
    }

    /// Result node of an op. `requires_grad` is inherited from parents; if no
    /// parent tracks gradients the graph edges are dropped.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<T>,
        parents: Vec<Tensor<T>>,
        backward: BackwardFn<T>,
    ) -> Self {
        let requires_grad = parents.iter().any(|p| p.node.requires_grad);
        if requires_grad {
            Self::new_node(shape, data, true, parents, Some(backward))
        } else {
            Self::new_node(shape, data, false, vec![], None)
        }
    }

    /// Like `from_op` but the output shares the parent's buffer (reshape).
    pub(crate) fn view_op(shape: Vec<usize>, parent: &Tensor<T>, backward: BackwardFn<T>) -> Self {
        let requires_grad = parent.node.requires_grad;
        Tensor {
            node: Rc::new(Node {
                shape,
                data: Rc::clone(&parent.node.data),
                grad: RefCell::new(None),
                requires_grad,
                parents: if requires_grad { vec![parent.clone()] } else { vec![] },
                backward: if requires_grad { Some(backward) } else { None },
            }),
        }
    }

    // ── Accessors ───────────────────────────────────────────────────

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn rank(&self) -> usize {
        self.node.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.node.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub(crate) fn data(&self) -> Ref<'_, Vec<T>> {
        self.node.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.node.data.borrow().clone()
    }

    /// Scalar value of a 0-d or single-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return Err(SwtrError::BadShape {
                op: "item",
                shape: self.node.shape.clone(),
                reason: "expected a single element".into(),
            });
        }
        Ok(self.node.data.borrow()[0])
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.node.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.borrow_mut() = None;
    }

    /// Overwrite the raw values of a leaf (optimizer step, weight load).
    /// Requires exclusive logical access per the concurrency contract.
    pub fn set_data(&self, values: &[T]) -> Result<()> {
        if values.len() != self.numel() {
            return Err(SwtrError::BadShape {
                op: "set_data",
                shape: self.node.shape.clone(),
                reason: format!("got {} values", values.len()),
            });
        }
        self.node.data.borrow_mut().copy_from_slice(values);
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.node.data.borrow().iter().all(|v| v.is_finite())
    }

    // ── Backward engine ─────────────────────────────────────────────

    /// Reverse-mode sweep from a scalar loss. Populates `grad` on every
    /// reachable `requires_grad` leaf; interior gradients are freed as soon
    /// as they have been consumed. Each node is visited exactly once, so
    /// gradients of shared subexpressions accumulate by summation.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(SwtrError::Grad(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.node.shape
            )));
        }
        if !self.node.requires_grad {
            return Err(SwtrError::Grad(
                "backward on a tensor with no gradient-tracked inputs".into(),
            ));
        }

        // Post-order DFS (iterative) over grad-requiring nodes.
        let mut order: Vec<Tensor<T>> = Vec::new();
        let mut visited: std::collections::HashSet<*const Node<T>> = std::collections::HashSet::new();
        let mut stack: Vec<(Tensor<T>, usize)> = vec![(self.clone(), 0)];
        visited.insert(Rc::as_ptr(&self.node));
        while let Some((t, child_idx)) = stack.pop() {
            if child_idx < t.node.parents.len() {
                let parent = t.node.parents[child_idx].clone();
                stack.push((t, child_idx + 1));
                if parent.node.requires_grad && visited.insert(Rc::as_ptr(&parent.node)) {
                    stack.push((parent, 0));
                }
            } else {
                order.push(t);
            }
        }

        *self.node.grad.borrow_mut() = Some(vec![T::one()]);

        for t in order.iter().rev() {
            let Some(backward) = &t.node.backward else { continue };
            let grad = t.node.grad.borrow_mut().take();
            let Some(grad) = grad else { continue };
            let parent_grads = backward(&grad);
            debug_assert_eq!(parent_grads.len(), t.node.parents.len());
            for (parent, pg) in t.node.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !parent.node.requires_grad {
                    continue;
                }
                debug_assert_eq!(pg.len(), parent.numel());
                let mut slot = parent.node.grad.borrow_mut();
                match slot.as_mut() {
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&pg) {
                            *a = *a + *g;
                        }
                    }
                    None => *slot = Some(pg),
                }
            }
        }
        Ok(())
    }
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaf_sum_grad_is_ones() {
        let w = Tensor::<f64>::param(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let loss = w.sum_all();
        loss.backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![1.0; 4]);
    }

    #[test]
    fn half_sum_of_squares_grad_is_w() {
        let w = Tensor::<f64>::param(&[3], vec![0.5, -1.0, 2.0]).unwrap();
        let loss = w.mul(&w).unwrap().sum_all().mul_scalar(0.5);
        loss.backward().unwrap();
        let g = w.grad().unwrap();
        for (gv, wv) in g.iter().zip(w.to_vec()) {
            assert!((gv - wv).abs() < 1e-12);
        }
    }

    #[test]
    fn shared_subexpression_accumulates() {
        // loss = sum(x + x) -> dx = 2
        let x = Tensor::<f64>::param(&[2], vec![1.0, 1.0]).unwrap();
        let loss = x.add(&x).unwrap().sum_all();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 2.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let x = Tensor::<f64>::param(&[2], vec![1.0, 1.0]).unwrap();
        assert!(x.backward().is_err());
    }

    #[test]
    fn constant_graph_records_nothing() {
        let a = Tensor::<f32>::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let b = a.add(&a).unwrap();
        assert!(!b.requires_grad());
        assert!(b.node.parents.is_empty());
    }
}
