//! Dense float tensors with reverse-mode automatic differentiation.
//!
//! Tensors are immutable after creation except for two owner-controlled
//! mutations: gradient accumulation during [`Tensor::backward`], and in-place
//! parameter updates by an optimizer through [`Tensor::set_data`]. A graph is
//! driven by one thread at a time; tensors themselves are `Send + Sync` so
//! parameters can be shared by eval-mode workers.

mod ops;

pub use ops::concat_channels;

use std::collections::HashSet;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock, RwLockReadGuard};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);
static FINITE_CHECK: AtomicBool = AtomicBool::new(cfg!(debug_assertions));

/// Enable or disable the per-op finite-value scan (panics on NaN/Inf with the
/// offending op name). Defaults to on in debug builds.
pub fn set_finite_check(on: bool) {
    FINITE_CHECK.store(on, Ordering::Relaxed);
}

pub fn finite_check_enabled() -> bool {
    FINITE_CHECK.load(Ordering::Relaxed)
}

type BackwardFn<T> = Box<dyn Fn(&[T]) + Send + Sync>;

struct Node<T: Scalar> {
    parents: Vec<Tensor<T>>,
    backward: BackwardFn<T>,
}

struct Inner<T: Scalar> {
    id: u64,
    shape: Vec<usize>,
    data: RwLock<Vec<T>>,
    grad: Mutex<Option<Vec<T>>>,
    requires_grad: bool,
    node: Mutex<Option<Node<T>>>,
    backward_ran: AtomicBool,
}

/// Handle to a tensor; clones share storage and the autodiff node.
pub struct Tensor<T: Scalar> {
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
        write!(
            f,
            "Tensor(id={}, shape={:?}, requires_grad={})",
            self.inner.id,
            self.inner.shape,
            self.inner.requires_grad
        )
    }
}

/// Read guard over a tensor's values.
pub struct Data<'a, T: Scalar>(RwLockReadGuard<'a, Vec<T>>);

impl<T: Scalar> std::ops::Deref for Data<'_, T> {
    type Target = [T];
    fn deref(&self) -> &[T] {
        &self.0
    }
}

fn check_finite<T: Scalar>(op: &'static str, data: &[T]) {
    if finite_check_enabled() && !data.iter().all(|v| v.is_finite()) {
        panic!("non-finite value produced by op `{op}`");
    }
}

impl<T: Scalar> Tensor<T> {
    fn new_inner(data: Vec<T>, shape: Vec<usize>, requires_grad: bool, node: Option<Node<T>>) -> Self {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        Tensor {
            inner: Arc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: RwLock::new(data),
                grad: Mutex::new(None),
                requires_grad,
                node: Mutex::new(node),
                backward_ran: AtomicBool::new(false),
            }),
        }
    }

    /// Leaf tensor that does not take gradients (inputs, constants).
    pub fn from_vec(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(Error::shape(
                "from_vec",
                format!("{} values cannot fill shape {:?}", data.len(), shape),
            ));
        }
        Ok(Self::new_inner(data, shape.to_vec(), false, None))
    }

    /// Leaf tensor that accumulates gradients (a learnable parameter).
    pub fn param(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(Error::shape(
                "param",
                format!("{} values cannot fill shape {:?}", data.len(), shape),
            ));
        }
        Ok(Self::new_inner(data, shape.to_vec(), true, None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::new_inner(vec![T::zero(); n], shape.to_vec(), false, None)
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self::new_inner(vec![value; n], shape.to_vec(), false, None)
    }

    pub fn scalar(value: T) -> Self {
        Self::new_inner(vec![value], vec![], false, None)
    }

    /// Output of a differentiable op. `backward` receives the output gradient
    /// and accumulates into the parents it captured.
    pub(crate) fn from_op(
        data: Vec<T>,
        shape: Vec<usize>,
        op: &'static str,
        parents: Vec<Tensor<T>>,
        backward: impl Fn(&[T]) + Send + Sync + 'static,
    ) -> Self {
        check_finite(op, &data);
        let record = parents.iter().any(|p| p.requires_grad());
        if record {
            Self::new_inner(
                data,
                shape,
                true,
                Some(Node {
                    parents,
                    backward: Box::new(backward),
                }),
            )
        } else {
            Self::new_inner(data, shape, false, None)
        }
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn data(&self) -> Data<'_, T> {
        Data(self.inner.data.read().expect("tensor data lock"))
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.data().to_vec()
    }

    /// Scalar value of a 1-element tensor.
    pub fn item(&self) -> T {
        let d = self.data();
        assert_eq!(d.len(), 1, "item() requires a single-element tensor");
        d[0]
    }

    /// In-place overwrite of the stored values. Owner-only mutation: used by
    /// optimizers and by the finite-difference probe in `grad_check`.
    pub fn set_data(&self, new: &[T]) {
        let mut d = self.inner.data.write().expect("tensor data lock");
        assert_eq!(d.len(), new.len(), "set_data length mismatch");
        d.copy_from_slice(new);
    }

    pub(crate) fn nudge(&self, index: usize, delta: T) {
        let mut d = self.inner.data.write().expect("tensor data lock");
        d[index] += delta;
    }

    /// Copy of the accumulated gradient, if any backward reached this tensor.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.grad.lock().expect("grad lock").clone()
    }

    pub fn zero_grad(&self) {
        let mut g = self.inner.grad.lock().expect("grad lock");
        match g.as_mut() {
            Some(buf) => buf.iter_mut().for_each(|v| *v = T::zero()),
            None => *g = Some(vec![T::zero(); self.numel()]),
        }
    }

    pub fn clear_grad(&self) {
        *self.inner.grad.lock().expect("grad lock") = None;
    }

    /// Add `contrib` into the gradient buffer, allocating zeros on first use.
    pub(crate) fn accumulate_grad(&self, contrib: &[T]) {
        let mut g = self.inner.grad.lock().expect("grad lock");
        let buf = g.get_or_insert_with(|| vec![T::zero(); self.numel()]);
        debug_assert_eq!(buf.len(), contrib.len());
        for (b, c) in buf.iter_mut().zip(contrib) {
            *b += *c;
        }
    }

    /// Run `f` with a zero-initialized (or existing) gradient buffer.
    pub(crate) fn with_grad_mut(&self, f: impl FnOnce(&mut [T])) {
        let mut g = self.inner.grad.lock().expect("grad lock");
        let buf = g.get_or_insert_with(|| vec![T::zero(); self.numel()]);
        f(buf);
    }

    /// Reverse-mode sweep from a scalar loss. Fills `grad` on every reachable
    /// tensor with `requires_grad`, accumulating into existing buffers.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::NonScalarLoss(self.inner.shape.clone()));
        }
        if self.inner.backward_ran.swap(true, Ordering::SeqCst) {
            return Err(Error::BackwardTwice);
        }
        if !self.requires_grad() {
            return Ok(());
        }

        // Iterative post-order DFS: children before parents in `order`.
        let mut order: Vec<Tensor<T>> = Vec::new();
        let mut visited: HashSet<u64> = HashSet::new();
        let mut stack: Vec<(Tensor<T>, usize)> = vec![(self.clone(), 0)];
        visited.insert(self.id());
        while let Some((t, child_idx)) = stack.pop() {
            let next = {
                let node = t.inner.node.lock().expect("node lock");
                node.as_ref().and_then(|n| n.parents.get(child_idx).cloned())
            };
            match next {
                Some(p) => {
                    stack.push((t, child_idx + 1));
                    if p.requires_grad() && visited.insert(p.id()) {
                        stack.push((p, 0));
                    }
                }
                None => order.push(t),
            }
        }

        self.accumulate_grad(&[T::one()]);
        for t in order.iter().rev() {
            let node = t.inner.node.lock().expect("node lock");
            if let Some(n) = node.as_ref() {
                let grad_out = t
                    .inner
                    .grad
                    .lock()
                    .expect("grad lock")
                    .clone()
                    .unwrap_or_else(|| vec![T::zero(); t.numel()]);
                (n.backward)(&grad_out);
            }
            drop(node);
            // Intermediate gradients are complete once their backward ran;
            // only leaves keep theirs (parameters read them after the sweep).
            if t.inner.node.lock().expect("node lock").is_some() {
                *t.inner.grad.lock().expect("grad lock") = None;
            }
        }
        Ok(())
    }
}

/// Max relative error between analytic and central-difference gradients of a
/// scalar-valued function at `x`. Run with `T = f64` for meaningful bounds.
pub fn grad_check<T: Scalar>(
    f: impl Fn(&Tensor<T>) -> Result<Tensor<T>>,
    x: &Tensor<T>,
    eps: T,
) -> Result<f64> {
    if eps <= T::zero() {
        return Err(Error::invalid("grad_check", "eps must be positive"));
    }
    let out = f(x)?;
    if out.numel() != 1 {
        return Err(Error::NonScalarLoss(out.shape().to_vec()));
    }
    x.clear_grad();
    out.backward()?;
    let analytic = x
        .grad()
        .ok_or_else(|| Error::invalid("grad_check", "x did not receive a gradient; pass a parameter tensor"))?;

    let mut max_rel = 0.0f64;
    for (i, a) in analytic.iter().enumerate() {
        x.nudge(i, eps);
        let plus = f(x)?.item().to_f64_c();
        x.nudge(i, -(eps + eps));
        let minus = f(x)?.item().to_f64_c();
        x.nudge(i, eps);
        let numeric = (plus - minus) / (2.0 * eps.to_f64_c());
        let rel = (a.to_f64_c() - numeric).abs() / numeric.abs().max(1.0);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}
