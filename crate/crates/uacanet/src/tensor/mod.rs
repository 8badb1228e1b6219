//! Dense tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a cheap-to-clone handle onto an immutable n-dimensional
//! value. Every differentiable operation that produces a tensor also attaches
//! the operation's local backward rule and handles to its operands, so the set
//! of live tensors forms the computation record: operands always precede their
//! results, and [`Tensor::backward`] replays the record once in reverse
//! topological order, accumulating `∂loss/∂tensor` into each participating
//! tensor's `grad` buffer.
//!
//! Element type is generic: `f32` is the training default, `f64` is used for
//! finite-difference gradient checking where single precision is too noisy.
//! Reductions run in a single fixed iteration order so results are
//! reproducible bit-for-bit across runs.

use std::cell::{Cell, Ref, RefCell};
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};

use num_traits::Float;

use crate::error::{Error, Result};

pub mod gradcheck;
pub mod ops;

/// Scalar element type of a tensor: `f32` for training, `f64` for checking.
pub trait Element:
    Float + fmt::Debug + fmt::Display + std::iter::Sum + Send + Sync + 'static
{
    /// Dtype code used in checkpoint files (0 = f32, 1 = f64).
    const DTYPE_CODE: u8;
    const BYTES: usize;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Element for f32 {
    const DTYPE_CODE: u8 = 0;
    const BYTES: usize = 4;

    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }
}

impl Element for f64 {
    const DTYPE_CODE: u8 = 1;
    const BYTES: usize = 8;

    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }
}

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` with gradient recording disabled (inference mode).
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    GRAD_ENABLED.with(|g| {
        let prev = g.get();
        g.set(false);
        let out = f();
        g.set(prev);
        out
    })
}

pub(crate) fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Backward rule: given the node's output gradient, accumulate into the
/// operands captured by the closure.
type BackwardFn<E> = Box<dyn Fn(&[E])>;

struct Inner<E: Element> {
    id: usize,
    shape: Vec<usize>,
    data: RefCell<Vec<E>>,
    grad: RefCell<Option<Vec<E>>>,
    requires_grad: bool,
    parents: Vec<Tensor<E>>,
    backward_rule: Option<BackwardFn<E>>,
}

/// N-dimensional dense array of reals, the universal value type.
///
/// Cloning copies the handle, not the data. Data is immutable after forward
/// construction except for parameter updates via [`Tensor::set_data`] and
/// gradient accumulation.
pub struct Tensor<E: Element> {
    inner: Rc<Inner<E>>,
}

impl<E: Element> Clone for Tensor<E> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<E: Element> fmt::Debug for Tensor<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.inner.id)
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

fn check_len<E>(data: &[E], shape: &[usize]) -> Result<()> {
    let numel: usize = shape.iter().product();
    if data.len() != numel {
        return Err(Error::shape(
            "from_vec",
            format!("data length {} != product of shape {:?}", data.len(), shape),
        ));
    }
    Ok(())
}

impl<E: Element> Tensor<E> {
    fn new(shape: Vec<usize>, data: Vec<E>, requires_grad: bool) -> Self {
        Tensor {
            inner: Rc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
                parents: Vec::new(),
                backward_rule: None,
            }),
        }
    }

    /// Leaf tensor that does not require gradients.
    pub fn from_vec(data: Vec<E>, shape: &[usize]) -> Result<Self> {
        check_len(&data, shape)?;
        Ok(Self::new(shape.to_vec(), data, false))
    }

    /// Leaf tensor that accumulates gradients (a learnable parameter or a
    /// differentiated input).
    pub fn param(data: Vec<E>, shape: &[usize]) -> Result<Self> {
        check_len(&data, shape)?;
        Ok(Self::new(shape.to_vec(), data, true))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self::new(shape.to_vec(), vec![E::zero(); numel], false)
    }

    pub fn full(shape: &[usize], value: E) -> Self {
        let numel = shape.iter().product();
        Self::new(shape.to_vec(), vec![value; numel], false)
    }

    pub fn scalar(value: E) -> Self {
        Self::new(vec![1], vec![value], false)
    }

    /// Non-leaf tensor produced by an operation. Records the backward rule
    /// only while gradients are enabled and some operand participates.
    pub(crate) fn from_op(
        op: &'static str,
        shape: Vec<usize>,
        data: Vec<E>,
        parents: Vec<Tensor<E>>,
        rule: BackwardFn<E>,
    ) -> Self {
        debug_assert!(
            data.iter().all(|v| v.is_finite()),
            "{op}: non-finite value in output"
        );
        debug_assert_eq!(data.len(), shape.iter().product::<usize>(), "{op}: bad shape");
        let record = grad_enabled() && parents.iter().any(|p| p.participates());
        if record {
            Tensor {
                inner: Rc::new(Inner {
                    id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                    shape,
                    data: RefCell::new(data),
                    grad: RefCell::new(None),
                    requires_grad: false,
                    parents,
                    backward_rule: Some(rule),
                }),
            }
        } else {
            Self::new(shape, data, false)
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn ndim(&self) -> usize {
        self.inner.shape.len()
    }

    /// Extents of an image-like tensor, erroring otherwise.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match *self.inner.shape.as_slice() {
            [b, c, h, w] => Ok((b, c, h, w)),
            _ => Err(Error::shape(
                "dims4",
                format!("expected 4-d tensor, got {:?}", self.inner.shape),
            )),
        }
    }

    pub fn data(&self) -> Ref<'_, Vec<E>> {
        self.inner.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<E> {
        self.inner.data.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> E {
        debug_assert_eq!(self.numel(), 1, "item() on non-scalar");
        self.inner.data.borrow()[0]
    }

    /// Replaces the data in place (parameter update). Length must match.
    pub fn set_data(&self, data: Vec<E>) {
        assert_eq!(data.len(), self.numel(), "set_data: length mismatch");
        *self.inner.data.borrow_mut() = data;
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub(crate) fn participates(&self) -> bool {
        self.inner.requires_grad || self.inner.backward_rule.is_some()
    }

    pub fn grad(&self) -> Option<Vec<E>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    pub(crate) fn accum_grad(&self, contrib: &[E]) {
        debug_assert_eq!(contrib.len(), self.numel());
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, ci) in g.iter_mut().zip(contrib) {
                    *gi = *gi + *ci;
                }
            }
            None => *slot = Some(contrib.to_vec()),
        }
    }

    /// Accumulate with a callback that writes directly into the grad buffer;
    /// avoids a temporary when the rule can add in place.
    pub(crate) fn accum_grad_with(&self, f: impl FnOnce(&mut [E])) {
        let mut slot = self.inner.grad.borrow_mut();
        if slot.is_none() {
            *slot = Some(vec![E::zero(); self.numel()]);
        }
        f(slot.as_mut().unwrap());
    }

    /// Copy of the values detached from the computation record.
    pub fn detach(&self) -> Tensor<E> {
        Self::new(self.inner.shape.clone(), self.to_vec(), false)
    }

    /// Reverse-mode gradient propagation from a scalar loss.
    ///
    /// Every tensor that participated in the computation of `self` ends up
    /// with `grad = ∂self/∂tensor`; gradients accumulate across multiple uses
    /// of the same tensor and across repeated `backward` calls.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::NonScalarLoss(self.inner.shape.clone()));
        }
        if !self.participates() {
            return Err(Error::InvalidArg(
                "backward: loss is not connected to any recorded computation".into(),
            ));
        }
        self.accum_grad(&[E::one()]);

        // Reverse post-order DFS over parent edges gives a topological order
        // with every consumer ahead of its operands, so each node's gradient
        // is complete before its rule fires.
        let order = self.topo_order();
        for node in order.iter().rev() {
            if let Some(rule) = &node.inner.backward_rule {
                let grad = node.inner.grad.borrow();
                if let Some(g) = grad.as_ref() {
                    rule(g);
                }
            }
        }
        Ok(())
    }

    fn topo_order(&self) -> Vec<Tensor<E>> {
        let mut order: Vec<Tensor<E>> = Vec::new();
        let mut visited: HashSet<usize> = HashSet::new();
        // Explicit stack; graphs can be thousands of nodes deep.
        enum Step<E: Element> {
            Enter(Tensor<E>),
            Exit(Tensor<E>),
        }
        let mut stack = vec![Step::Enter(self.clone())];
        while let Some(step) = stack.pop() {
            match step {
                Step::Enter(t) => {
                    if !visited.insert(t.inner.id) {
                        continue;
                    }
                    let parents = t.inner.parents.clone();
                    stack.push(Step::Exit(t));
                    for p in parents {
                        if p.participates() && !visited.contains(&p.inner.id) {
                            stack.push(Step::Enter(p));
                        }
                    }
                }
                Step::Exit(t) => order.push(t),
            }
        }
        // Post-order: operands were pushed to `order` before consumers, so
        // `order` reversed is consumer-first.
        order
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ops;

    #[test]
    fn from_vec_rejects_bad_length() {
        let err = Tensor::from_vec(vec![1.0f32, 2.0], &[3]).unwrap_err();
        assert!(err.to_string().contains("length 2"));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let x = Tensor::param(vec![1.0f64, 2.0], &[2]).unwrap();
        let y = ops::mul(&x, &x).unwrap();
        assert!(matches!(y.backward(), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn backward_sum_gives_ones() {
        let x = Tensor::param(vec![3.0f64, -1.0, 2.0], &[3]).unwrap();
        let loss = ops::sum_all(&x);
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_quadratic_gives_2x() {
        let x = Tensor::param(vec![3.0f64, -1.0, 2.0], &[3]).unwrap();
        let loss = ops::sum_all(&ops::mul(&x, &x).unwrap());
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![6.0, -2.0, 4.0]);
    }

    #[test]
    fn grads_accumulate_across_uses() {
        let x = Tensor::param(vec![1.0f64, 2.0], &[2]).unwrap();
        let loss = ops::add(&ops::sum_all(&x), &ops::sum_all(&x)).unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 2.0]);
    }

    #[test]
    fn no_grad_suppresses_recording() {
        let x = Tensor::param(vec![1.0f64, 2.0], &[2]).unwrap();
        let y = no_grad(|| ops::sum_all(&x));
        assert!(!y.participates());
    }

    #[test]
    fn detached_loss_is_rejected() {
        let x = Tensor::from_vec(vec![1.0f64], &[1]).unwrap();
        assert!(x.backward().is_err());
    }
}
