//! Shared parameter storage with per-task masks and frozen ownership.
//!
//! Every scalar of the shared network has an owner: either free, or the
//! first task whose final mask claimed it. Owned scalars are never written
//! again; later tasks may still use them through their own masks.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::bitset::BitSet;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{DenseTensor, TensorShape};

/// 1-based task index.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TaskId(pub u16);

impl TaskId {
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }

    pub fn from_index(i: usize) -> Self {
        TaskId(u16::try_from(i + 1).expect("task count exceeds u16"))
    }
}

impl fmt::Debug for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "task{}", self.0)
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

const FREE: u16 = 0;

/// How a tensor's free values are (re)drawn.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Init {
    /// U(-sqrt(6/fan_in), sqrt(6/fan_in)), He-uniform for ReLU networks.
    KaimingUniform { fan_in: usize },
    /// U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    FanInUniform { fan_in: usize },
    Constant(f32),
}

impl Init {
    /// Half-width of the uniform range, or `None` for constants.
    pub fn bound(self) -> Option<f32> {
        match self {
            Init::KaimingUniform { fan_in } => Some((6.0 / fan_in as f64).sqrt() as f32),
            Init::FanInUniform { fan_in } => Some((1.0 / fan_in as f64).sqrt() as f32),
            Init::Constant(_) => None,
        }
    }

    pub fn sample(self, rng: &mut rng::Rng) -> f32 {
        match self {
            Init::Constant(c) => c,
            _ => {
                let b = self.bound().unwrap();
                rng.random_range(-b..b)
            }
        }
    }
}

/// A trainable buffer without masking, used for task heads and norm parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub values: DenseTensor,
    pub grads: DenseTensor,
}

impl Param {
    pub fn new(values: DenseTensor) -> Self {
        let grads = DenseTensor::zeros(values.shape().clone());
        Param { values, grads }
    }

    pub fn init(shape: TensorShape, init: Init, rng: &mut rng::Rng) -> Self {
        let values = (0..shape.numel()).map(|_| init.sample(rng)).collect();
        Param::new(DenseTensor::new(shape, values).expect("numel matches"))
    }

    pub fn zero_grad(&mut self) {
        self.grads.values_mut().fill(0.0);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskedParamTensor {
    pub(crate) name: String,
    init: Init,
    pub(crate) values: DenseTensor,
    pub(crate) grads: DenseTensor,
    masks: BTreeMap<TaskId, BitSet>,
    owner: Vec<u16>,
}

impl MaskedParamTensor {
    pub fn new(name: impl Into<String>, shape: TensorShape, init: Init, rng: &mut rng::Rng) -> Self {
        let values = (0..shape.numel()).map(|_| init.sample(rng)).collect();
        let values = DenseTensor::new(shape, values).expect("numel matches");
        Self::from_values(name, values, init)
    }

    pub fn from_values(name: impl Into<String>, values: DenseTensor, init: Init) -> Self {
        let n = values.len();
        MaskedParamTensor {
            name: name.into(),
            init,
            grads: DenseTensor::zeros(values.shape().clone()),
            values,
            masks: BTreeMap::new(),
            owner: vec![FREE; n],
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn init(&self) -> Init {
        self.init
    }

    pub fn shape(&self) -> &TensorShape {
        self.values.shape()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &DenseTensor {
        &self.values
    }

    pub fn grads(&self) -> &DenseTensor {
        &self.grads
    }

    pub fn grads_mut(&mut self) -> &mut [f32] {
        self.grads.values_mut()
    }

    /// Mutable access to the values for code that respects ownership itself
    /// (optimizers, re-initialization, tests constructing fixtures).
    pub fn values_mut(&mut self) -> &mut [f32] {
        self.values.values_mut()
    }

    pub fn owner(&self, p: usize) -> Option<TaskId> {
        match self.owner[p] {
            FREE => None,
            t => Some(TaskId(t)),
        }
    }

    pub(crate) fn owners_raw(&self) -> &[u16] {
        &self.owner
    }

    pub fn mask(&self, task: TaskId) -> Option<&BitSet> {
        self.masks.get(&task)
    }

    pub fn masks(&self) -> &BTreeMap<TaskId, BitSet> {
        &self.masks
    }

    /// Scalars owned by some task.
    pub fn frozen(&self) -> BitSet {
        BitSet::from_bools(&self.owner.iter().map(|&o| o != FREE).collect::<Vec<_>>())
    }

    pub fn free_count(&self) -> usize {
        self.owner.iter().filter(|&&o| o == FREE).count()
    }

    pub fn zero_grad(&mut self) {
        self.grads.values_mut().fill(0.0);
    }

    /// Zeroes the gradient of every scalar in `frozen`.
    pub fn mask_gradients(&mut self, frozen: &BitSet) {
        assert_eq!(frozen.len(), self.len(), "frozen set layout mismatch for {}", self.name);
        let g = self.grads.values_mut();
        for p in frozen.ones() {
            g[p] = 0.0;
        }
    }

    pub(crate) fn restore(
        name: String,
        init: Init,
        values: DenseTensor,
        owner: Vec<u16>,
        masks: BTreeMap<TaskId, BitSet>,
    ) -> Result<Self> {
        if owner.len() != values.len() || masks.values().any(|m| m.len() != values.len()) {
            return Err(Error::Structure(format!("inconsistent stored tensor {name}")));
        }
        Ok(MaskedParamTensor { name, init, grads: DenseTensor::zeros(values.shape().clone()), values, masks, owner })
    }
}

/// One bitset per shared parameter tensor, describing a single subnetwork.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaskMaskSet {
    layers: Vec<BitSet>,
}

impl TaskMaskSet {
    pub fn new(layers: Vec<BitSet>) -> Self {
        TaskMaskSet { layers }
    }

    pub fn full(store: &ParamStore) -> Self {
        TaskMaskSet { layers: store.tensors.iter().map(|t| BitSet::full(t.len())).collect() }
    }

    pub fn empty(store: &ParamStore) -> Self {
        TaskMaskSet { layers: store.tensors.iter().map(|t| BitSet::empty(t.len())).collect() }
    }

    pub fn layers(&self) -> &[BitSet] {
        &self.layers
    }

    pub fn layer(&self, i: usize) -> &BitSet {
        &self.layers[i]
    }

    pub fn layer_mut(&mut self, i: usize) -> &mut BitSet {
        &mut self.layers[i]
    }

    pub fn count_ones(&self) -> usize {
        self.layers.iter().map(BitSet::count_ones).sum()
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(BitSet::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn same_layout(&self, other: &TaskMaskSet) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| a.len() == b.len())
    }

    pub fn matches(&self, store: &ParamStore) -> bool {
        self.layers.len() == store.tensors.len()
            && self.layers.iter().zip(&store.tensors).all(|(m, t)| m.len() == t.len())
    }

    pub fn union_with(&mut self, other: &TaskMaskSet) -> Result<()> {
        if !self.same_layout(other) {
            return Err(Error::Structure("mask layouts differ".into()));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.union_with(b);
        }
        Ok(())
    }

    pub fn is_subset(&self, other: &TaskMaskSet) -> bool {
        self.same_layout(other) && self.layers.iter().zip(&other.layers).all(|(a, b)| a.is_subset(b))
    }

    pub fn complement(&self) -> TaskMaskSet {
        TaskMaskSet { layers: self.layers.iter().map(BitSet::complement).collect() }
    }
}

/// The shared (backbone) parameters of one network.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: Vec<MaskedParamTensor>,
}

/// Index of a tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn push(&mut self, tensor: MaskedParamTensor) -> ParamId {
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &MaskedParamTensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut MaskedParamTensor {
        &mut self.tensors[id.0]
    }

    pub fn tensors(&self) -> &[MaskedParamTensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [MaskedParamTensor] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(MaskedParamTensor::len).sum()
    }

    pub fn free_count(&self) -> usize {
        self.tensors.iter().map(MaskedParamTensor::free_count).sum()
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(MaskedParamTensor::zero_grad);
    }

    /// Scalars owned by any registered task, per tensor.
    pub fn frozen(&self) -> TaskMaskSet {
        TaskMaskSet::new(self.tensors.iter().map(MaskedParamTensor::frozen).collect())
    }

    pub fn task_mask(&self, task: TaskId) -> Option<TaskMaskSet> {
        self.tensors.iter().map(|t| t.mask(task).cloned()).collect::<Option<Vec<_>>>().map(TaskMaskSet::new)
    }

    pub fn registered_tasks(&self) -> Vec<TaskId> {
        self.tensors.first().map(|t| t.masks.keys().copied().collect()).unwrap_or_default()
    }

    pub fn mask_gradients(&mut self, frozen: &TaskMaskSet) {
        for (t, f) in self.tensors.iter_mut().zip(frozen.layers()) {
            t.mask_gradients(f);
        }
    }
}

/// Union of the given task masks: the set of scalars no later task may update.
pub fn frozen_set(masks: &[&TaskMaskSet], store: &ParamStore) -> Result<TaskMaskSet> {
    let mut out = TaskMaskSet::empty(store);
    for m in masks {
        out.union_with(m)?;
    }
    Ok(out)
}

/// Registers `final_mask` as `task`'s subnetwork and gives every free scalar
/// inside it to `task`. Scalars already owned keep their owner. Returns the
/// number of newly frozen scalars.
pub fn claim_and_freeze(store: &mut ParamStore, final_mask: &TaskMaskSet, task: TaskId) -> Result<usize> {
    if !final_mask.matches(store) {
        return Err(Error::Structure("final mask layout does not match parameters".into()));
    }
    if store.tensors.iter().any(|t| t.masks.contains_key(&task)) {
        return Err(Error::State(format!("task {task} is already registered")));
    }
    let mut claimed = 0;
    for (tensor, mask) in store.tensors.iter_mut().zip(final_mask.layers()) {
        for p in mask.ones() {
            if tensor.owner[p] == FREE {
                tensor.owner[p] = task.0;
                claimed += 1;
            }
        }
        tensor.masks.insert(task, mask.clone());
    }
    Ok(claimed)
}

/// Redraws every free scalar from its tensor's initializer. Owned scalars are
/// left untouched.
pub fn reinit_unclaimed(store: &mut ParamStore, seed: u64) {
    let mut rng = rng::seeded(seed);
    for tensor in &mut store.tensors {
        let init = tensor.init;
        let owner = &tensor.owner;
        for (v, &o) in tensor.values.values_mut().iter_mut().zip(owner) {
            if o == FREE {
                *v = init.sample(&mut rng);
            }
        }
    }
}
