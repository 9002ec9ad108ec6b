//! Reverse-mode autodiff graph.
//!
//! A [`Tensor`] is a reference-counted node in a dynamically built computation
//! graph over `ndarray::ArrayD<f64>` values. Nodes are immutable once created;
//! calling [`Tensor::backward`] on a scalar output walks the graph in reverse
//! topological order and returns the gradients of every leaf that was created
//! with [`Tensor::leaf`].
//!
//! Nodes whose inputs are all constants collapse to constants themselves, so
//! frozen sub-networks cost nothing at backward time.

use ndarray::{ArrayD, IxDyn};
use std::collections::{HashMap, HashSet};
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Context handed to an op's backward closure.
pub struct BackwardCtx<'a> {
    /// Gradient of the loss with respect to this node's output.
    pub grad: &'a ArrayD<f64>,
    /// The node's forward value.
    pub out: &'a ArrayD<f64>,
    /// The node's inputs, in the order the op declared them.
    pub parents: &'a [Tensor],
}

impl BackwardCtx<'_> {
    /// Whether the gradient for parent `i` will actually be consumed.
    /// Expensive ops can skip computing gradients for constant inputs and
    /// return [`skipped_grad`] in that slot instead.
    pub fn needs(&self, i: usize) -> bool {
        self.parents[i].requires_grad()
    }
}

/// Placeholder returned by backward closures for parents whose gradient is
/// not needed (see [`BackwardCtx::needs`]).
pub fn skipped_grad() -> ArrayD<f64> {
    ArrayD::zeros(IxDyn(&[0]))
}

type BackwardFn = Box<dyn Fn(BackwardCtx<'_>) -> Vec<ArrayD<f64>>>;

struct Inner {
    id: u64,
    value: ArrayD<f64>,
    requires_grad: bool,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
}

/// A node in the computation graph. Cloning is cheap (reference count bump).
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<Inner>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.inner.id)
            .field("shape", &self.inner.value.shape())
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

impl Tensor {
    fn new(value: ArrayD<f64>, requires_grad: bool, parents: Vec<Tensor>, backward: Option<BackwardFn>) -> Self {
        Tensor {
            inner: Rc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                value,
                requires_grad,
                parents,
                backward,
            }),
        }
    }

    /// A graph input that does not take gradients (data, labels, frozen weights).
    pub fn constant(value: ArrayD<f64>) -> Self {
        Tensor::new(value, false, Vec::new(), None)
    }

    /// A graph input that accumulates a gradient during [`Tensor::backward`].
    pub fn leaf(value: ArrayD<f64>) -> Self {
        Tensor::new(value, true, Vec::new(), None)
    }

    /// Interior node produced by an op. If no parent requires a gradient the
    /// result is detached into a plain constant, which prunes frozen branches
    /// from the backward walk entirely.
    pub fn from_op(value: ArrayD<f64>, parents: Vec<Tensor>, backward: BackwardFn) -> Self {
        if parents.iter().any(|p| p.inner.requires_grad) {
            Tensor::new(value, true, parents, Some(backward))
        } else {
            Tensor::constant(value)
        }
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn value(&self) -> &ArrayD<f64> {
        &self.inner.value
    }

    /// Clone of the forward value.
    pub fn to_array(&self) -> ArrayD<f64> {
        self.inner.value.clone()
    }

    pub fn shape(&self) -> &[usize] {
        self.inner.value.shape()
    }

    pub fn len(&self) -> usize {
        self.inner.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.value.is_empty()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// The single element of a one-element tensor.
    ///
    /// Panics if the tensor holds more than one value.
    pub fn scalar(&self) -> f64 {
        assert_eq!(self.len(), 1, "scalar() called on tensor of shape {:?}", self.shape());
        *self.inner.value.iter().next().expect("one element")
    }

    /// Reverse-mode sweep from a scalar output. Returns the gradient of this
    /// output with respect to every `leaf` tensor reachable from it.
    ///
    /// Panics if called on a non-scalar tensor.
    pub fn backward(&self) -> GradStore {
        assert_eq!(self.len(), 1, "backward() requires a scalar output, got shape {:?}", self.shape());

        // Post-order DFS; reversing the order afterwards yields a topological
        // order from the output back towards the leaves.
        enum Frame {
            Enter(Tensor),
            Exit(Tensor),
        }
        let mut topo: Vec<Tensor> = Vec::new();
        let mut seen: HashSet<u64> = HashSet::new();
        let mut stack = vec![Frame::Enter(self.clone())];
        while let Some(frame) = stack.pop() {
            match frame {
                Frame::Enter(t) => {
                    if !seen.insert(t.id()) {
                        continue;
                    }
                    stack.push(Frame::Exit(t.clone()));
                    for p in &t.inner.parents {
                        if p.inner.requires_grad && !seen.contains(&p.id()) {
                            stack.push(Frame::Enter(p.clone()));
                        }
                    }
                }
                Frame::Exit(t) => topo.push(t),
            }
        }

        let mut pending: HashMap<u64, ArrayD<f64>> = HashMap::new();
        pending.insert(self.id(), ArrayD::ones(self.inner.value.raw_dim()));
        let mut store = GradStore::default();

        for node in topo.iter().rev() {
            let Some(grad) = pending.remove(&node.id()) else {
                continue;
            };
            match &node.inner.backward {
                Some(back) => {
                    let parent_grads = back(BackwardCtx {
                        grad: &grad,
                        out: &node.inner.value,
                        parents: &node.inner.parents,
                    });
                    assert_eq!(
                        parent_grads.len(),
                        node.inner.parents.len(),
                        "backward closure returned a gradient count that does not match the parent count"
                    );
                    for (parent, pg) in node.inner.parents.iter().zip(parent_grads) {
                        if !parent.inner.requires_grad {
                            continue;
                        }
                        debug_assert_eq!(
                            pg.shape(),
                            parent.inner.value.shape(),
                            "gradient shape mismatch for parent {}",
                            parent.id()
                        );
                        match pending.entry(parent.id()) {
                            std::collections::hash_map::Entry::Occupied(mut e) => {
                                *e.get_mut() += &pg;
                            }
                            std::collections::hash_map::Entry::Vacant(e) => {
                                e.insert(pg);
                            }
                        }
                    }
                }
                None => {
                    // A leaf created with `leaf()`; constants never enter the walk.
                    store.grads.insert(node.id(), grad);
                }
            }
        }
        store
    }
}

/// Gradients keyed by leaf tensor id, produced by [`Tensor::backward`].
#[derive(Default)]
pub struct GradStore {
    grads: HashMap<u64, ArrayD<f64>>,
}

impl GradStore {
    pub fn get(&self, t: &Tensor) -> Option<&ArrayD<f64>> {
        self.grads.get(&t.id())
    }

    pub fn by_id(&self, id: u64) -> Option<&ArrayD<f64>> {
        self.grads.get(&id)
    }

    pub fn take(&mut self, t: &Tensor) -> Option<ArrayD<f64>> {
        self.grads.remove(&t.id())
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}
