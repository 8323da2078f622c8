use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use crate::error::{Result, TensorError};

/// Maps the gradient of an op's output to one optional gradient per parent.
pub(crate) type BackwardFn = Box<dyn Fn(&[f64]) -> Vec<Option<Vec<f64>>> + Send + Sync>;

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` with gradient recording disabled on the current thread.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

struct Node {
    op: &'static str,
    parents: Vec<Tensor>,
    backward: BackwardFn,
}

struct Inner {
    id: usize,
    shape: Vec<usize>,
    data: RwLock<Arc<Vec<f64>>>,
    grad: Mutex<Option<Vec<f64>>>,
    requires_grad: bool,
    node: Option<Node>,
}

/// Reference-counted handle to an n-dimensional array of `f64`.
///
/// Cloning is cheap and yields another handle to the same storage. Values are
/// immutable except through [`Tensor::set_values`], which the optimizer and
/// batch-norm running statistics use; graphs recorded earlier keep the
/// snapshot they were built from.
#[derive(Clone)]
pub struct Tensor(Arc<Inner>);

impl Tensor {
    fn build(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, node: Option<Node>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor(Arc::new(Inner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data: RwLock::new(Arc::new(data)),
            grad: Mutex::new(None),
            requires_grad,
            node,
        }))
    }

    /// Constant tensor. Fails when the extents do not multiply to `data.len()`.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        check_len(shape, data.len())?;
        Ok(Self::build(shape.to_vec(), data, false, None))
    }

    /// Leaf tensor that accumulates a gradient on [`Tensor::backward`].
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        check_len(shape, data.len())?;
        Ok(Self::build(shape.to_vec(), data, true, None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::build(shape.to_vec(), vec![0.0; shape.iter().product()], false, None)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self::build(shape.to_vec(), vec![value; shape.iter().product()], false, None)
    }

    pub fn scalar(value: f64) -> Self {
        Self::build(vec![1], vec![value], false, None)
    }

    /// Result of a differentiable op. The graph edge is only recorded when
    /// gradients are enabled and some parent requires one.
    pub(crate) fn from_op(
        op: &'static str,
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: Vec<Tensor>,
        backward: impl Fn(&[f64]) -> Vec<Option<Vec<f64>>> + Send + Sync + 'static,
    ) -> Self {
        let track = is_grad_enabled() && parents.iter().any(Tensor::requires_grad);
        if !track {
            return Self::build(shape, data, false, None);
        }
        let node = Node {
            op,
            parents,
            backward: Box::new(backward),
        };
        Self::build(shape, data, true, Some(node))
    }

    pub fn id(&self) -> usize {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Name of the op that produced this tensor, `None` for leaves.
    pub fn op_name(&self) -> Option<&'static str> {
        self.0.node.as_ref().map(|n| n.op)
    }

    /// Shared snapshot of the current values.
    pub fn values(&self) -> Arc<Vec<f64>> {
        Arc::clone(&self.0.data.read().expect("tensor data lock poisoned"))
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.values().as_ref().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        let v = self.values();
        assert_eq!(v.len(), 1, "item() on tensor of shape {:?}", self.shape());
        v[0]
    }

    /// Replaces the stored values in place. Used for parameter updates and
    /// running statistics; the length must stay the same.
    pub fn set_values(&self, data: Vec<f64>) -> Result<()> {
        if data.len() != self.numel() {
            return Err(TensorError::mismatch(
                "set_values",
                self.shape(),
                &[data.len()],
            ));
        }
        *self.0.data.write().expect("tensor data lock poisoned") = Arc::new(data);
        Ok(())
    }

    /// Copy of the values without graph history.
    pub fn detach(&self) -> Tensor {
        Self::build(self.0.shape.clone(), self.to_vec(), false, None)
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.lock().expect("grad lock poisoned").clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().expect("grad lock poisoned") = None;
    }

    fn accumulate_grad(&self, g: Vec<f64>) {
        let mut slot = self.0.grad.lock().expect("grad lock poisoned");
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g),
        }
    }

    /// Reverse-mode sweep from this single-element tensor.
    ///
    /// Every node that requires a gradient and is reachable from `self` is
    /// visited exactly once, after all of its consumers, so a tensor used on
    /// several paths receives the sum of the path gradients. Leaf gradients
    /// accumulate across calls until [`Tensor::zero_grad`].
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalar(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topo_order();
        let mut pending: HashMap<usize, Vec<f64>> = HashMap::new();
        pending.insert(self.id(), vec![1.0]);
        for t in order.iter().rev() {
            let Some(g) = pending.remove(&t.id()) else {
                continue;
            };
            if let Some(node) = &t.0.node {
                let parent_grads = (node.backward)(&g);
                debug_assert_eq!(parent_grads.len(), node.parents.len(), "{}", node.op);
                for (p, pg) in node.parents.iter().zip(parent_grads) {
                    let Some(pg) = pg else { continue };
                    if !p.requires_grad() {
                        continue;
                    }
                    debug_assert_eq!(pg.len(), p.numel(), "{} parent grad", node.op);
                    match pending.get_mut(&p.id()) {
                        Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                        None => {
                            pending.insert(p.id(), pg);
                        }
                    }
                }
            }
            t.accumulate_grad(g);
        }
        Ok(())
    }

    /// Post-order over the grad-requiring subgraph rooted at `self`.
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut seen = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !seen.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(node) = &t.0.node {
                for p in &node.parents {
                    if p.requires_grad() && !seen.contains(&p.id()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        order
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = self.values();
        let preview: Vec<f64> = v.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .field("op", &self.op_name())
            .field("data", &preview)
            .finish()
    }
}

fn check_len(shape: &[usize], len: usize) -> Result<()> {
    if shape.contains(&0) {
        return Err(TensorError::shape("new", format!("zero extent in {shape:?}")));
    }
    if shape.iter().product::<usize>() != len {
        return Err(TensorError::mismatch("new", shape, &[len]));
    }
    Ok(())
}
