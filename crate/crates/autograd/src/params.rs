//! Named parameter storage and graph binding.
//!
//! A [`ParamSet`] owns the numeric state of a model: trainable weights and
//! non-trainable buffers (e.g. batch-norm running statistics), keyed by
//! dotted names in insertion order. A [`Binder`] turns those arrays into
//! graph tensors for one forward pass — as gradient-taking leaves when the
//! parameter is trainable under the binder's policy, as constants otherwise —
//! and maps leaf gradients back to parameter names after the backward sweep.

use crate::tensor::{GradStore, Tensor};
use indexmap::IndexMap;
use ndarray::ArrayD;
use std::cell::RefCell;
use std::rc::Rc;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by optimizers, bound as a leaf when trainable.
    Weight,
    /// State mutated by forward passes (running statistics); never trained.
    Buffer,
}

#[derive(Clone)]
pub struct ParamEntry {
    data: Rc<RefCell<ArrayD<f64>>>,
    kind: ParamKind,
}

impl ParamEntry {
    pub fn kind(&self) -> ParamKind {
        self.kind
    }

    pub fn value(&self) -> ArrayD<f64> {
        self.data.borrow().clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.data.borrow().shape().to_vec()
    }
}

/// Named parameter storage. Entries are shared handles, so `clone()` is a
/// cheap alias of the same storage — two clones see each other's updates.
/// Use [`ParamSet::deep_clone`] for an independent snapshot.
#[derive(Default, Clone)]
pub struct ParamSet {
    entries: IndexMap<String, ParamEntry>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_weight(&mut self, name: impl Into<String>, value: ArrayD<f64>) {
        let prev = self.entries.insert(
            name.into(),
            ParamEntry { data: Rc::new(RefCell::new(value)), kind: ParamKind::Weight },
        );
        assert!(prev.is_none(), "duplicate parameter name");
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: ArrayD<f64>) {
        let prev = self.entries.insert(
            name.into(),
            ParamEntry { data: Rc::new(RefCell::new(value)), kind: ParamKind::Buffer },
        );
        assert!(prev.is_none(), "duplicate parameter name");
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.get(name)
    }

    /// Clone of a parameter's current value.
    pub fn value(&self, name: &str) -> Option<ArrayD<f64>> {
        self.entries.get(name).map(|e| e.data.borrow().clone())
    }

    /// Overwrite a parameter in place. The replacement must match the
    /// existing shape; schema changes are not silent.
    pub fn set(&self, name: &str, value: ArrayD<f64>) {
        let entry = self.entries.get(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
        let mut data = entry.data.borrow_mut();
        assert_eq!(data.shape(), value.shape(), "parameter {name}: replacement shape differs");
        *data = value;
    }

    /// Shared handle for buffers mutated during the forward pass.
    pub fn handle(&self, name: &str) -> Rc<RefCell<ArrayD<f64>>> {
        Rc::clone(&self.entries.get(name).unwrap_or_else(|| panic!("unknown parameter {name}")).data)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamEntry)> {
        self.entries.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    /// Apply `f` to every parameter value in insertion order.
    pub fn for_each_value(&self, mut f: impl FnMut(&str, &ArrayD<f64>)) {
        for (name, entry) in &self.entries {
            f(name, &entry.data.borrow());
        }
    }

    /// A structurally independent copy: fresh storage for every entry, so
    /// later updates to either set leave the other untouched.
    pub fn deep_clone(&self) -> ParamSet {
        let mut out = ParamSet::new();
        for (name, entry) in &self.entries {
            match entry.kind() {
                ParamKind::Weight => out.add_weight(name.clone(), entry.value()),
                ParamKind::Buffer => out.add_buffer(name.clone(), entry.value()),
            }
        }
        out
    }
}

type TrainablePolicy<'a> = Box<dyn Fn(&str) -> bool + 'a>;

/// One forward pass worth of parameter bindings.
pub struct Binder<'a> {
    set: &'a ParamSet,
    grad_enabled: bool,
    trainable: Option<TrainablePolicy<'a>>,
    cache: RefCell<IndexMap<String, Tensor>>,
}

impl<'a> Binder<'a> {
    /// All parameters bound as constants; the graph is pruned to nothing.
    pub fn inference(set: &'a ParamSet) -> Self {
        Binder { set, grad_enabled: false, trainable: None, cache: RefCell::new(IndexMap::new()) }
    }

    /// Every weight bound as a gradient-taking leaf.
    pub fn training(set: &'a ParamSet) -> Self {
        Binder { set, grad_enabled: true, trainable: None, cache: RefCell::new(IndexMap::new()) }
    }

    /// Weights for which `policy` returns true are leaves; the rest are
    /// constants (frozen).
    pub fn training_filtered(set: &'a ParamSet, policy: impl Fn(&str) -> bool + 'a) -> Self {
        Binder {
            set,
            grad_enabled: true,
            trainable: Some(Box::new(policy)),
            cache: RefCell::new(IndexMap::new()),
        }
    }

    pub fn param_set(&self) -> &ParamSet {
        self.set
    }

    /// Bind a weight by name. Repeated calls return the same graph node, so a
    /// parameter used twice accumulates one gradient.
    pub fn param(&self, name: &str) -> Tensor {
        if let Some(t) = self.cache.borrow().get(name) {
            return t.clone();
        }
        let entry = self.set.entry(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
        assert_eq!(entry.kind(), ParamKind::Weight, "parameter {name} is a buffer, not a weight");
        let value = entry.data.borrow().clone();
        let trainable = self.grad_enabled
            && match &self.trainable {
                Some(policy) => policy(name),
                None => true,
            };
        let t = if trainable { Tensor::leaf(value) } else { Tensor::constant(value) };
        self.cache.borrow_mut().insert(name.to_string(), t.clone());
        t
    }

    /// Shared handle to a buffer (running statistics).
    pub fn buffer(&self, name: &str) -> Rc<RefCell<ArrayD<f64>>> {
        let entry = self.set.entry(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
        assert_eq!(entry.kind(), ParamKind::Buffer, "parameter {name} is a weight, not a buffer");
        self.set.handle(name)
    }

    /// Gradients of every bound trainable weight, keyed by name in binding
    /// order. Weights whose gradient never materialized (graph pruned) are
    /// omitted.
    pub fn collect_grads(&self, store: &GradStore) -> IndexMap<String, ArrayD<f64>> {
        let mut grads = IndexMap::new();
        for (name, tensor) in self.cache.borrow().iter() {
            if !tensor.requires_grad() {
                continue;
            }
            if let Some(g) = store.by_id(tensor.id()) {
                grads.insert(name.clone(), g.clone());
            }
        }
        grads
    }
}
