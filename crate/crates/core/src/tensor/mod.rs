//! Dense tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is an immutable, reference-counted buffer. Every op that has at
//! least one input requiring a gradient records a node holding its inputs and
//! a backward closure. Node ids are drawn from a monotonically increasing
//! counter, so sorting the reachable nodes by id in descending order yields the
//! reverse recording order used by [`Tensor::backward`].
//!
//! Everything here is single-threaded; results are bit-reproducible for a
//! fixed sequence of ops.

mod conv;
mod elementwise;
pub(crate) mod linalg;
mod nn;
mod reduce;
mod shape;

use std::cell::RefCell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

pub use conv::Conv2dParams;
pub use nn::BatchStats;

/// Element type tag, carried in checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Floating-point element type supported by the engine.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + fmt::Debug
    + fmt::Display
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + 'static
{
    const DTYPE: DType;

    /// Literal conversion; every value used this way is representable.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal out of range")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("float conversion")
    }

    /// `c = alpha * a·b + beta * c` on strided row/column views.
    ///
    /// # Safety
    /// All pointers must be valid for the index range implied by the
    /// dimensions and strides, and `c` must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Real for f32 {
    const DTYPE: DType = DType::F32;

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> f32 {
        f32::from_le_bytes(bytes[..4].try_into().expect("4 bytes"))
    }
}

impl Real for f64 {
    const DTYPE: DType = DType::F64;

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> f64 {
        f64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
    }
}

/// Backward rule: given the output gradient and which inputs need one,
/// returns one optional gradient per input (same order, same shapes).
pub(crate) type BackwardFn<T> = Box<dyn Fn(&[T], &[bool]) -> Vec<Option<Vec<T>>>>;

pub(crate) struct OpRecord<T: Real> {
    name: &'static str,
    inputs: Vec<Tensor<T>>,
    backward: BackwardFn<T>,
}

struct Node<T: Real> {
    id: u64,
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<T>>>,
    op: Option<OpRecord<T>>,
}

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

fn next_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Dense row-major tensor. Cloning is cheap (shared storage).
pub struct Tensor<T: Real> {
    node: Rc<Node<T>>,
}

impl<T: Real> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            node: Rc::clone(&self.node),
        }
    }
}

impl<T: Real> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<T> = self.node.data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.node.shape)
            .field("requires_grad", &self.node.requires_grad)
            .field("op", &self.node.op.as_ref().map(|o| o.name))
            .field("data", &preview)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.is_empty() {
        return shape_err("tensor", "shape must have at least one axis");
    }
    if shape.iter().any(|&d| d == 0) {
        return shape_err("tensor", format!("extents must be positive, got {shape:?}"));
    }
    if numel(shape) != len {
        return shape_err(
            "tensor",
            format!("shape {shape:?} holds {} values, data has {len}", numel(shape)),
        );
    }
    Ok(())
}

impl<T: Real> Tensor<T> {
    fn from_node(node: Node<T>) -> Self {
        Tensor {
            node: Rc::new(node),
        }
    }

    /// Constant tensor (no gradient).
    pub fn new(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        check_shape(shape, data.len())?;
        Ok(Self::raw(data, shape.to_vec(), false))
    }

    /// Trainable leaf.
    pub fn param(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        check_shape(shape, data.len())?;
        Ok(Self::raw(data, shape.to_vec(), true))
    }

    pub(crate) fn raw(data: Vec<T>, shape: Vec<usize>, requires_grad: bool) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Self::from_node(Node {
            id: next_id(),
            shape,
            data,
            requires_grad,
            grad: RefCell::new(None),
            op: None,
        })
    }

    /// Builds an op output, recording a tape node only when some input
    /// requires a gradient.
    pub(crate) fn from_op(
        data: Vec<T>,
        shape: Vec<usize>,
        name: &'static str,
        inputs: Vec<Tensor<T>>,
        backward: BackwardFn<T>,
    ) -> Self {
        debug_assert_eq!(numel(&shape), data.len(), "op {name}");
        let requires_grad = inputs.iter().any(|t| t.requires_grad());
        let op = requires_grad.then(|| OpRecord {
            name,
            inputs,
            backward,
        });
        Self::from_node(Node {
            id: next_id(),
            shape,
            data,
            requires_grad,
            grad: RefCell::new(None),
            op,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        check_shape(shape, numel(shape)).expect("positive extents");
        Self::raw(vec![value; numel(shape)], shape.to_vec(), false)
    }

    pub fn scalar(value: T) -> Self {
        Self::raw(vec![value], vec![1], false)
    }

    /// Normal(0, std²) samples.
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let data = (0..numel(shape))
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                T::lit(z * std)
            })
            .collect();
        Self::raw(data, shape.to_vec(), false)
    }

    /// Uniform samples on `[lo, hi)`.
    pub fn rand_uniform<R: Rng + ?Sized>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        let data = (0..numel(shape))
            .map(|_| T::lit(rng.random_range(lo..hi)))
            .collect();
        Self::raw(data, shape.to_vec(), false)
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn ndim(&self) -> usize {
        self.node.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.node.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.node.data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.node.data.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.node.op.is_none()
    }

    pub fn id(&self) -> u64 {
        self.node.id
    }

    /// Name of the op that produced this tensor, if it was recorded.
    pub fn op_name(&self) -> Option<&'static str> {
        self.node.op.as_ref().map(|o| o.name)
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return shape_err("item", format!("expected one element, shape {:?}", self.shape()));
        }
        Ok(self.node.data[0])
    }

    /// Accumulated gradient of a leaf.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.node.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.borrow_mut() = None;
    }

    /// Copy of the values cut off from the tape.
    pub fn detach(&self) -> Self {
        Self::raw(self.node.data.clone(), self.node.shape.clone(), false)
    }

    /// Fresh leaf sharing no history, with the requested gradient flag.
    pub fn to_leaf(&self, requires_grad: bool) -> Self {
        Self::raw(self.node.data.clone(), self.node.shape.clone(), requires_grad)
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        let data = self.node.data.iter().map(|v| U::lit(v.as_f64())).collect();
        Tensor::raw(data, self.node.shape.clone(), self.node.requires_grad && self.is_leaf())
    }

    /// True when shapes match and every element compares equal bitwise.
    pub fn bit_eq(&self, other: &Tensor<T>) -> bool {
        self.shape() == other.shape()
            && self
                .data()
                .iter()
                .zip(other.data())
                .all(|(a, b)| a.to_f64().map(f64::to_bits) == b.to_f64().map(f64::to_bits))
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        self.data()
            .iter()
            .zip(other.data())
            .map(|(a, b)| (*a - *b).abs().as_f64())
            .fold(0.0, f64::max)
    }

    /// Reverse-mode sweep from a scalar root.
    ///
    /// Gradients of leaves that require them are accumulated into the leaf's
    /// gradient slot; calling twice without [`Tensor::zero_grad`] sums both.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Err(Error::Contract(
                "backward root does not depend on any trainable tensor".into(),
            ));
        }
        let tape = Tape::record(self);
        let mut pending: HashMap<u64, Vec<T>> = HashMap::new();
        pending.insert(self.id(), vec![T::one()]);
        for node in &tape.nodes {
            let Some(g) = pending.remove(&node.id()) else {
                continue;
            };
            match &node.node.op {
                None => {
                    let mut slot = node.node.grad.borrow_mut();
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                        None => *slot = Some(g),
                    }
                }
                Some(op) => {
                    let needs: Vec<bool> = op.inputs.iter().map(|t| t.requires_grad()).collect();
                    let grads = (op.backward)(&g, &needs);
                    debug_assert_eq!(grads.len(), op.inputs.len(), "op {}", op.name);
                    for ((input, grad), need) in op.inputs.iter().zip(grads).zip(needs) {
                        let Some(grad) = grad else { continue };
                        if !need {
                            continue;
                        }
                        debug_assert_eq!(grad.len(), input.numel(), "op {}", op.name);
                        match pending.get_mut(&input.id()) {
                            Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, b)| *a += *b),
                            None => {
                                pending.insert(input.id(), grad);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Nodes reachable from a root, in reverse recording order.
pub struct Tape<T: Real> {
    nodes: Vec<Tensor<T>>,
}

impl<T: Real> Tape<T> {
    pub fn record(root: &Tensor<T>) -> Self {
        let mut seen = HashSet::new();
        let mut stack = vec![root.clone()];
        let mut nodes = Vec::new();
        while let Some(t) = stack.pop() {
            if !t.requires_grad() || !seen.insert(t.id()) {
                continue;
            }
            if let Some(op) = &t.node.op {
                stack.extend(op.inputs.iter().cloned());
            }
            nodes.push(t);
        }
        nodes.sort_by(|a, b| b.id().cmp(&a.id()));
        Tape { nodes }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Op names in traversal order (`"leaf"` for leaves).
    pub fn op_names(&self) -> Vec<&'static str> {
        self.nodes
            .iter()
            .map(|t| t.op_name().unwrap_or("leaf"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::<f64>::new(vec![1.0; 5], &[2, 3]).is_err());
        assert!(Tensor::<f64>::new(vec![], &[0]).is_err());
        assert!(Tensor::<f64>::new(vec![1.0; 6], &[2, 3]).is_ok());
    }

    #[test]
    fn linear_gradient_equals_input() {
        let x = Tensor::<f64>::new(vec![1.5, -2.0, 0.25], &[3]).unwrap();
        let w = Tensor::<f64>::param(vec![0.1, 0.2, 0.3], &[3]).unwrap();
        w.mul(&x).unwrap().sum().backward().unwrap();
        assert_eq!(w.grad().unwrap(), x.to_vec());
    }

    #[test]
    fn repeated_backward_accumulates() {
        let w = Tensor::<f64>::param(vec![1.0, 2.0], &[2]).unwrap();
        let loss = w.square().sum();
        loss.backward().unwrap();
        loss.backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![4.0, 8.0]);
        w.zero_grad();
        loss.backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![2.0, 4.0]);
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let w = Tensor::<f64>::param(vec![1.0, 2.0], &[2]).unwrap();
        let y = w.scale(2.0);
        assert!(matches!(y.backward(), Err(Error::Contract(_))));
    }

    #[test]
    fn shared_subexpression_visited_once() {
        // y = (w*w) used twice: d/dw (2 w^2) = 4w
        let w = Tensor::<f64>::param(vec![3.0], &[1]).unwrap();
        let sq = w.mul(&w).unwrap();
        let y = sq.add(&sq).unwrap();
        let tape = Tape::record(&y);
        assert_eq!(tape.len(), 3);
        y.backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![12.0]);
    }

    #[test]
    fn tape_is_reverse_topological() {
        let w = Tensor::<f64>::param(vec![0.5, 1.0], &[2]).unwrap();
        let y = w.tanh().silu().sum();
        let tape = Tape::record(&y);
        assert_eq!(tape.op_names(), vec!["sum", "silu", "tanh", "leaf"]);
    }
}
