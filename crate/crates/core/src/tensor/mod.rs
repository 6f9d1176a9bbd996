//! Dense `f64` tensors with reverse-mode automatic differentiation.
//!
//! Every tensor is a flat row-major buffer plus a shape. Operations build a
//! graph as they run: each derived tensor keeps handles to its inputs and a
//! closure implementing its backward rule. Calling [`Tensor::backward`] on a
//! scalar walks that graph once and adds this call's contribution into each
//! tensor's `grad` buffer, so gradients accumulate across calls until
//! [`Tensor::zero_grad`] is invoked — the behaviour gradient accumulation
//! relies on.
//!
//! Everything is `f64` end to end; determinism matters more here than speed.

use std::cell::{Ref, RefCell};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;

mod ops;

// ── Errors ──────────────────────────────────────────────────────────────────

/// Failure modes of tensor construction and tensor operations.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorError {
    /// Two operands had incompatible shapes for the requested operation.
    ShapeMismatch { lhs: Vec<usize>, rhs: Vec<usize> },
    /// The operation needed a tensor of a different rank.
    RankMismatch { expected: usize, got: usize },
    /// The value buffer length does not match the shape's element count.
    ValueCount { expected: usize, got: usize },
    /// `backward` was called on a tensor that is not a single scalar.
    NotScalar { shape: Vec<usize> },
    /// A softmax lane had every position masked out.
    AllMasked { lane: usize },
    /// The requested axis does not exist for this shape.
    InvalidAxis { axis: usize, ndim: usize },
    /// A row index was outside the tensor's row count.
    RowOutOfRange { row: usize, rows: usize },
    /// A class index was outside the logit width.
    ClassOutOfRange { class: usize, classes: usize },
    /// Target count does not match the number of logit rows.
    TargetCount { expected: usize, got: usize },
    /// A dropout probability outside `[0, 1)`.
    BadProbability { p: f64 },
    /// A row slice with `start > end` or `end` past the row count.
    BadSlice { start: usize, end: usize, rows: usize },
    /// Concatenation was asked to join zero parts.
    EmptyConcat,
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::ShapeMismatch { lhs, rhs } => {
                write!(f, "shape mismatch: {lhs:?} vs {rhs:?}")
            }
            TensorError::RankMismatch { expected, got } => {
                write!(f, "expected rank {expected}, got rank {got}")
            }
            TensorError::ValueCount { expected, got } => {
                write!(f, "shape wants {expected} values, got {got}")
            }
            TensorError::NotScalar { shape } => {
                write!(f, "backward needs a scalar, got shape {shape:?}")
            }
            TensorError::AllMasked { lane } => {
                write!(f, "softmax lane {lane} has every position masked")
            }
            TensorError::InvalidAxis { axis, ndim } => {
                write!(f, "axis {axis} invalid for rank-{ndim} tensor")
            }
            TensorError::RowOutOfRange { row, rows } => {
                write!(f, "row {row} out of range for {rows} rows")
            }
            TensorError::ClassOutOfRange { class, classes } => {
                write!(f, "class {class} out of range for {classes} classes")
            }
            TensorError::TargetCount { expected, got } => {
                write!(f, "expected {expected} targets, got {got}")
            }
            TensorError::BadProbability { p } => {
                write!(f, "drop probability {p} outside [0, 1)")
            }
            TensorError::BadSlice { start, end, rows } => {
                write!(f, "row slice {start}..{end} invalid for {rows} rows")
            }
            TensorError::EmptyConcat => write!(f, "cannot concatenate zero tensors"),
        }
    }
}

impl std::error::Error for TensorError {}

// ── Boolean masks ───────────────────────────────────────────────────────────

/// A boolean companion shape for softmax masking; `true` means *blocked*.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    shape: Vec<usize>,
    blocked: Vec<bool>,
}

impl Mask {
    /// Builds a mask; `blocked.len()` must match the shape's element count.
    pub fn new(shape: Vec<usize>, blocked: Vec<bool>) -> Result<Mask, TensorError> {
        let expected: usize = shape.iter().product();
        if blocked.len() != expected {
            return Err(TensorError::ValueCount {
                expected,
                got: blocked.len(),
            });
        }
        Ok(Mask { shape, blocked })
    }

    /// An all-clear mask of the given shape.
    pub fn clear(shape: Vec<usize>) -> Mask {
        let n: usize = shape.iter().product();
        Mask {
            shape,
            blocked: vec![false; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Flat-index lookup.
    pub fn is_blocked(&self, flat: usize) -> bool {
        self.blocked[flat]
    }

    /// Two-dimensional lookup for the common `[rows × cols]` case.
    pub fn is_blocked_at(&self, row: usize, col: usize) -> bool {
        debug_assert_eq!(self.shape.len(), 2);
        self.blocked[row * self.shape[1] + col]
    }

    pub(crate) fn flags(&self) -> &[bool] {
        &self.blocked
    }
}

// ── Tensor ──────────────────────────────────────────────────────────────────

pub(crate) struct BackCtx<'a> {
    pub out_values: &'a [f64],
    pub out_grad: &'a [f64],
    pub inputs: &'a [Tensor],
}

type BackwardFn = Box<dyn Fn(&BackCtx) -> Vec<Vec<f64>>>;

struct Node {
    inputs: Vec<Tensor>,
    backward: BackwardFn,
}

struct Inner {
    shape: Vec<usize>,
    values: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    node: Option<Node>,
}

/// A shared handle to one tensor; cloning the handle does not copy data.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<Inner>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("values", &*self.inner.values.borrow())
            .finish()
    }
}

impl Tensor {
    /// A leaf tensor from explicit values; row-major layout.
    pub fn new(shape: &[usize], values: Vec<f64>) -> Result<Tensor, TensorError> {
        let expected: usize = shape.iter().product();
        if values.len() != expected {
            return Err(TensorError::ValueCount {
                expected,
                got: values.len(),
            });
        }
        Ok(Tensor::leaf(shape.to_vec(), values))
    }

    /// A leaf tensor of zeros.
    pub fn zeros(shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::leaf(shape.to_vec(), vec![0.0; n])
    }

    /// A single-element tensor with shape `[1]`.
    pub fn scalar(v: f64) -> Tensor {
        Tensor::leaf(vec![1], vec![v])
    }

    /// A leaf 2-D tensor from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Tensor, TensorError> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut values = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(TensorError::ShapeMismatch {
                    lhs: vec![r, c],
                    rhs: vec![r, row.len()],
                });
            }
            values.extend_from_slice(row);
        }
        Ok(Tensor::leaf(vec![r, c], values))
    }

    fn leaf(shape: Vec<usize>, values: Vec<f64>) -> Tensor {
        Tensor {
            inner: Rc::new(Inner {
                shape,
                values: RefCell::new(values),
                grad: RefCell::new(None),
                node: None,
            }),
        }
    }

    pub(crate) fn from_op(
        shape: Vec<usize>,
        values: Vec<f64>,
        inputs: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        Tensor {
            inner: Rc::new(Inner {
                shape,
                values: RefCell::new(values),
                grad: RefCell::new(None),
                node: Some(Node { inputs, backward }),
            }),
        }
    }

    // ── Accessors ───────────────────────────────────────────────────────────

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn ndim(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.iter().product()
    }

    /// Row count of a 2-D tensor.
    pub fn rows(&self) -> usize {
        debug_assert_eq!(self.ndim(), 2);
        self.inner.shape[0]
    }

    /// Column count of a 2-D tensor.
    pub fn cols(&self) -> usize {
        debug_assert_eq!(self.ndim(), 2);
        self.inner.shape[1]
    }

    /// Borrows the value buffer without copying.
    pub fn values_ref(&self) -> Ref<'_, Vec<f64>> {
        self.inner.values.borrow()
    }

    /// Copies the values out.
    pub fn values(&self) -> Vec<f64> {
        self.inner.values.borrow().clone()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.numel(), 1);
        self.inner.values.borrow()[0]
    }

    /// Value at `(row, col)` of a 2-D tensor.
    pub fn at(&self, row: usize, col: usize) -> f64 {
        debug_assert_eq!(self.ndim(), 2);
        self.inner.values.borrow()[row * self.cols() + col]
    }

    /// Overwrites the values of a leaf in place (optimizer updates).
    pub fn set_values(&self, values: &[f64]) {
        debug_assert!(
            self.inner.node.is_none(),
            "only leaf tensors may be overwritten"
        );
        let mut store = self.inner.values.borrow_mut();
        assert_eq!(store.len(), values.len(), "value count must match shape");
        store.copy_from_slice(values);
    }

    /// A fresh leaf carrying a copy of this tensor's values; no graph history.
    pub fn detach(&self) -> Tensor {
        Tensor::leaf(self.inner.shape.clone(), self.values())
    }

    /// True when this tensor was produced by an operation.
    pub fn has_node(&self) -> bool {
        self.inner.node.is_some()
    }

    // ── Gradients ───────────────────────────────────────────────────────────

    /// The accumulated gradient, if any backward pass has reached this tensor.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.borrow().clone()
    }

    /// The accumulated gradient, or zeros when none has been recorded.
    pub fn grad_or_zeros(&self) -> Vec<f64> {
        self.grad().unwrap_or_else(|| vec![0.0; self.numel()])
    }

    /// Clears the accumulated gradient.
    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Overwrites the accumulated gradient (gradient clipping).
    pub fn set_grad(&self, values: &[f64]) {
        assert_eq!(self.numel(), values.len(), "gradient count must match shape");
        *self.inner.grad.borrow_mut() = Some(values.to_vec());
    }

    fn add_to_grad(&self, delta: &[f64]) {
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi += di;
                }
            }
            None => *slot = Some(delta.to_vec()),
        }
    }

    fn ptr(&self) -> *const Inner {
        Rc::as_ptr(&self.inner)
    }

    /// Reverse-mode sweep from a scalar. Adds this call's contribution into
    /// every reachable tensor's `grad`, so two sweeps over the same graph
    /// double the result.
    pub fn backward(&self) -> Result<(), TensorError> {
        if self.numel() != 1 {
            return Err(TensorError::NotScalar {
                shape: self.inner.shape.clone(),
            });
        }

        // Iterative post-order walk so deep graphs cannot overflow the stack.
        let order = self.topo_order();

        let mut local: HashMap<*const Inner, Vec<f64>> = HashMap::new();
        local.insert(self.ptr(), vec![1.0]);

        for t in order.iter().rev() {
            let Some(node) = t.inner.node.as_ref() else {
                continue;
            };
            let Some(out_grad) = local.get(&t.ptr()).cloned() else {
                continue;
            };
            let out_values = t.inner.values.borrow();
            let ctx = BackCtx {
                out_values: &out_values,
                out_grad: &out_grad,
                inputs: &node.inputs,
            };
            let contribs = (node.backward)(&ctx);
            drop(out_values);
            debug_assert_eq!(contribs.len(), node.inputs.len());
            for (input, contrib) in node.inputs.iter().zip(contribs) {
                debug_assert_eq!(contrib.len(), input.numel());
                match local.get_mut(&input.ptr()) {
                    Some(acc) => {
                        for (a, c) in acc.iter_mut().zip(&contrib) {
                            *a += c;
                        }
                    }
                    None => {
                        local.insert(input.ptr(), contrib);
                    }
                }
            }
        }

        for t in &order {
            if let Some(delta) = local.get(&t.ptr()) {
                t.add_to_grad(delta);
            }
        }
        Ok(())
    }

    /// Post-order over the graph (inputs before the tensors that use them).
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited: HashSet<*const Inner> = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.ptr()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(node) = t.inner.node.as_ref() {
                for input in &node.inputs {
                    if !visited.contains(&input.ptr()) {
                        stack.push((input.clone(), false));
                    }
                }
            }
        }
        order
    }
}

// ── Gradient checking ───────────────────────────────────────────────────────

/// Compares the analytic gradient of `f` at `x` against central finite
/// differences and returns the worst relative error. Any error or non-finite
/// value yields `f64::INFINITY` instead of a panic, so callers can treat the
/// result as a plain score.
pub fn grad_check<F, E>(f: F, x: &Tensor, eps: f64) -> f64
where
    F: Fn(&Tensor) -> Result<Tensor, E>,
    E: fmt::Debug,
{
    let probe = x.detach();
    let analytic = match f(&probe) {
        Ok(out) => {
            if out.numel() != 1 || !out.item().is_finite() {
                return f64::INFINITY;
            }
            if out.backward().is_err() {
                return f64::INFINITY;
            }
            probe.grad_or_zeros()
        }
        Err(_) => return f64::INFINITY,
    };

    let base = x.values();
    let shape = x.shape().to_vec();
    let eval = |values: Vec<f64>| -> Option<f64> {
        let leaf = Tensor::new(&shape, values).ok()?;
        let out = f(&leaf).ok()?;
        if out.numel() != 1 {
            return None;
        }
        let v = out.item();
        v.is_finite().then_some(v)
    };

    let mut worst = 0.0f64;
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += eps;
        let mut minus = base.clone();
        minus[i] -= eps;
        let (Some(fp), Some(fm)) = (eval(plus), eval(minus)) else {
            return f64::INFINITY;
        };
        let numeric = (fp - fm) / (2.0 * eps);
        let a = analytic[i];
        if !a.is_finite() || !numeric.is_finite() {
            return f64::INFINITY;
        }
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((a - numeric).abs() / denom);
    }
    worst
}
