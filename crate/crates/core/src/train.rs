//! Minibatch training of one task's subnetwork, and evaluation helpers.

use serde::{Deserialize, Serialize};

use crate::data::LabeledSet;
use crate::error::{Error, Result};
use crate::graph::{ComputeGraph, NormStats};
use crate::head::{self, Head};
use crate::optim::{OptimSpec, Optimizer, ParamSlot};
use crate::params::{ParamStore, TaskMaskSet};
use crate::rng;
use crate::tensor::{argmax, DenseTensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    pub epochs: usize,
    pub batch_size: usize,
    pub optim: OptimSpec,
}

impl TrainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        self.optim.validate()
    }
}

/// Evaluation batch size; it does not affect results.
pub const EVAL_CHUNK: usize = 256;

/// The per-task state being fitted: a fresh head and normalization
/// parameters plus the task's training split.
pub struct TaskFit<'a> {
    pub graph: &'a ComputeGraph,
    pub head: Head,
    pub norm: NormStats,
    pub data: &'a LabeledSet,
    pub batch_size: usize,
    /// When false only `head` and `norm` move.
    pub train_backbone: bool,
    optim: Optimizer,
    rng: rng::Rng,
    last_loss: f64,
}

impl<'a> TaskFit<'a> {
    pub fn new(
        graph: &'a ComputeGraph,
        head: Head,
        norm: NormStats,
        data: &'a LabeledSet,
        spec: &TrainSpec,
        seed: u64,
    ) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Input("task has no training samples".into()));
        }
        Ok(TaskFit {
            graph,
            head,
            norm,
            data,
            batch_size: spec.batch_size,
            train_backbone: true,
            optim: Optimizer::new(spec.optim.clone())?,
            rng: rng::seeded(seed),
            last_loss: f64::NAN,
        })
    }

    /// Trains for `epochs` epochs with the schedule restarted at epoch 0 and
    /// fresh optimizer moments. Backbone weights outside `mask` are inactive;
    /// `locked` backbone coordinates never move. Returns the mean loss of
    /// the last epoch.
    pub fn fit(&mut self, store: &mut ParamStore, mask: &TaskMaskSet, locked: &TaskMaskSet, epochs: usize) -> Result<f64> {
        if !mask.matches(store) || !locked.matches(store) {
            return Err(Error::Structure("mask layout does not match parameters".into()));
        }
        self.optim.reset();
        let mut last = f64::NAN;
        for epoch in 0..epochs {
            let order = rng::permutation(self.data.len(), &mut self.rng);
            let (mut sum, mut seen) = (0.0, 0usize);
            for chunk in order.chunks(self.batch_size) {
                // a single sample has no batch statistics
                if chunk.len() < 2 && order.len() > 1 {
                    continue;
                }
                let x = self.data.batch(chunk)?;
                let y = self.data.batch_labels(chunk);
                store.zero_grad();
                self.head.zero_grad();
                self.norm.zero_grad();
                let loss = head::loss_and_backward(self.graph, store, &mut self.head, &mut self.norm, Some(mask), &x, &y)?;
                if !loss.is_finite() {
                    return Err(Error::Numeric { location: format!("training loss at epoch {epoch}") });
                }
                self.step(store, locked, epoch)?;
                sum += loss * chunk.len() as f64;
                seen += chunk.len();
            }
            last = sum / seen.max(1) as f64;
        }
        self.last_loss = last;
        Ok(last)
    }

    fn step(&mut self, store: &mut ParamStore, locked: &TaskMaskSet, epoch: usize) -> Result<()> {
        let mut slots = Vec::new();
        if self.train_backbone {
            for (t, l) in store.tensors_mut().iter_mut().zip(locked.layers()) {
                slots.push(ParamSlot {
                    name: &t.name,
                    values: t.values.values_mut(),
                    grads: t.grads.values_mut(),
                    locked: Some(l),
                });
            }
        }
        for n in &mut self.norm.layers {
            slots.push(ParamSlot { name: "norm.gamma", values: n.gamma.values.values_mut(), grads: n.gamma.grads.values_mut(), locked: None });
            slots.push(ParamSlot { name: "norm.beta", values: n.beta.values.values_mut(), grads: n.beta.grads.values_mut(), locked: None });
        }
        let h = &mut self.head;
        slots.push(ParamSlot { name: "head.weight", values: h.weight.values.values_mut(), grads: h.weight.grads.values_mut(), locked: None });
        slots.push(ParamSlot { name: "head.bias", values: h.bias.values.values_mut(), grads: h.bias.grads.values_mut(), locked: None });
        self.optim.step(&mut slots, epoch)
    }

    /// Mean loss of the most recent epoch.
    pub fn last_loss(&self) -> f64 {
        self.last_loss
    }

    pub fn into_parts(self) -> (Head, NormStats) {
        (self.head, self.norm)
    }
}

/// Backbone features `[N, F]` for every sample of `set`, in inference mode.
pub fn features(
    graph: &ComputeGraph,
    store: &ParamStore,
    mask: Option<&TaskMaskSet>,
    norm: &NormStats,
    set: &LabeledSet,
) -> Result<DenseTensor> {
    let mut values = Vec::with_capacity(set.len() * graph.feature_dim());
    let idx: Vec<usize> = (0..set.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let out = graph.forward(store, &set.batch(chunk)?, mask, norm)?;
        values.extend_from_slice(out.values());
    }
    DenseTensor::from_dims(vec![set.len(), graph.feature_dim()], values)
}

/// Fraction of `set` whose argmax logit equals its (task-local) label.
pub fn accuracy(
    graph: &ComputeGraph,
    store: &ParamStore,
    mask: Option<&TaskMaskSet>,
    norm: &NormStats,
    head: &Head,
    set: &LabeledSet,
) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Input("accuracy of an empty set".into()));
    }
    let logits = head.forward(&features(graph, store, mask, norm, set)?)?;
    let correct = (0..set.len()).filter(|&i| argmax(logits.row(i)) == set.labels()[i]).count();
    Ok(correct as f64 / set.len() as f64)
}
