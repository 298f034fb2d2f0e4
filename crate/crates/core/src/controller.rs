//! Sequential task learning and per-task inference.
//!
//! Learning task `t` trains every free scalar together with a new head and
//! fresh normalization parameters, prunes the result into the task's mask,
//! freezes the free scalars inside that mask, and registers the head, the
//! normalization state and the selection scores. Nothing registered is ever
//! modified afterwards.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::arch::ArchSpec;
use crate::data::TaskData;
use crate::error::{Error, Result};
use crate::graph::{ComputeGraph, NormStats};
use crate::head::{flat, Head};
use crate::params::{claim_and_freeze, reinit_unclaimed, ParamStore, TaskId, TaskMaskSet};
use crate::relief::{iterative_prune, PruneConfig};
use crate::rng::{self, streams};
use crate::select;
use crate::tensor::{DenseTensor, TensorShape};
use crate::train::{self, TaskFit, TrainSpec};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Train, prune and freeze a subnetwork per task.
    #[default]
    Standard,
    /// Task 1 trains the whole backbone; later tasks train only their
    /// normalization parameters and head.
    Frozen,
}

/// What happens to never-claimed scalars between tasks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReinitMode {
    #[default]
    Reinit,
    Keep,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerConfig {
    pub train: TrainSpec,
    #[serde(default)]
    pub prune: PruneConfig,
    #[serde(default)]
    pub variant: Variant,
    #[serde(default)]
    pub reinit: ReinitMode,
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.prune.validate()
    }
}

/// Everything task `id` needs at inference time.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskEntry {
    pub id: TaskId,
    /// Global class ids; the head's output `k` is `classes[k]`.
    pub classes: Vec<usize>,
    pub mask: TaskMaskSet,
    pub head: Head,
    pub norm: NormStats,
    /// Stored selection scores `[classes, features]`, see
    /// [`select::test_importance_scores`].
    pub scores: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TaskRegistry {
    entries: Vec<TaskEntry>,
}

impl TaskRegistry {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[TaskEntry] {
        &self.entries
    }

    pub fn get(&self, t: TaskId) -> Result<&TaskEntry> {
        if t.0 == 0 {
            return Err(Error::Input("task ids start at 1".into()));
        }
        self.entries.get(t.index()).ok_or_else(|| Error::Input(format!("task {t} is not registered")))
    }

    pub fn next_id(&self) -> TaskId {
        TaskId::from_index(self.entries.len())
    }

    fn check_new_classes(&self, classes: &[usize]) -> Result<()> {
        let mut seen: BTreeSet<usize> = self.entries.iter().flat_map(|e| e.classes.iter().copied()).collect();
        for &c in classes {
            if !seen.insert(c) {
                return Err(Error::Input(format!("class {c} already belongs to a registered task")));
            }
        }
        Ok(())
    }

    /// Appends an entry; ids must stay contiguous.
    pub fn push(&mut self, entry: TaskEntry) -> Result<()> {
        if entry.id != self.next_id() {
            return Err(Error::State(format!("expected task {}, got {}", self.next_id(), entry.id)));
        }
        self.check_new_classes(&entry.classes)?;
        self.entries.push(entry);
        Ok(())
    }
}

/// Bookkeeping from one `learn` call.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task: u16,
    pub newly_frozen: usize,
    /// Free backbone scalars left after the task was frozen.
    pub free_after: usize,
    /// Fraction of backbone scalars in the task's mask.
    pub mask_density: f64,
    /// Free fraction per backbone tensor after the task, by tensor name.
    pub free_per_tensor: Vec<(String, f64)>,
    pub final_loss: f64,
    /// Accuracy of the registered subnetwork on its own training split.
    pub train_accuracy: f64,
}

/// A shared backbone together with its registered tasks.
#[derive(Clone, Debug, PartialEq)]
pub struct Learner {
    graph: ComputeGraph,
    store: ParamStore,
    registry: TaskRegistry,
    config: LearnerConfig,
    seed: u64,
}

impl Learner {
    pub fn new(arch: &ArchSpec, input: &TensorShape, config: LearnerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (graph, store) = arch.build(input, rng::derive_seed(seed, streams::INIT))?;
        Ok(Learner { graph, store, registry: TaskRegistry::default(), config, seed })
    }

    /// Reassembles a learner from persisted parts.
    pub fn from_parts(
        graph: ComputeGraph,
        store: ParamStore,
        registry: TaskRegistry,
        config: LearnerConfig,
        seed: u64,
    ) -> Result<Self> {
        for e in registry.entries() {
            if store.task_mask(e.id).as_ref() != Some(&e.mask) {
                return Err(Error::Structure(format!("registry mask of task {} disagrees with parameters", e.id)));
            }
        }
        if store.registered_tasks().len() != registry.len() {
            return Err(Error::Structure("parameters and registry list different tasks".into()));
        }
        Ok(Learner { graph, store, registry, config, seed })
    }

    pub fn graph(&self) -> &ComputeGraph {
        &self.graph
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn registry(&self) -> &TaskRegistry {
        &self.registry
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Learns `task` with the configured variant.
    pub fn learn(&mut self, task: &TaskData) -> Result<TaskReport> {
        match self.config.variant {
            Variant::Standard => self.learn_task(task),
            Variant::Frozen => self.learn_task_frozen_variant(task),
        }
    }

    /// Train, prune, freeze and register.
    pub fn learn_task(&mut self, task: &TaskData) -> Result<TaskReport> {
        self.learn_impl(task, true, true)
    }

    /// The first task trains everything without pruning; every later task
    /// trains only its normalization parameters and head, and uses the whole
    /// backbone as its mask.
    pub fn learn_task_frozen_variant(&mut self, task: &TaskData) -> Result<TaskReport> {
        let first = self.registry.is_empty();
        self.learn_impl(task, first, false)
    }

    fn learn_impl(&mut self, task: &TaskData, train_backbone: bool, prune: bool) -> Result<TaskReport> {
        let id = self.registry.next_id();
        if task.id != id {
            return Err(Error::State(format!("expected task {id}, got task {}", task.id)));
        }
        self.registry.check_new_classes(&task.classes)?;
        if task.train.sample_shape() != self.graph.input_shape() {
            return Err(Error::Structure(format!(
                "task samples {} do not match network input {}",
                task.train.sample_shape(),
                self.graph.input_shape()
            )));
        }
        let base = rng::derive_seed(self.seed, u64::from(id.0));
        let head = Head::new(self.graph.feature_dim(), task.classes.len(), &mut rng::seeded(rng::derive_seed(base, streams::HEAD)));
        let spec = &self.config.train;
        let mut fit = TaskFit::new(
            &self.graph,
            head,
            NormStats::fresh(&self.graph),
            &task.train,
            spec,
            rng::derive_seed(base, streams::TRAIN),
        )?;
        fit.train_backbone = train_backbone;
        let frozen = self.store.frozen();
        let full = TaskMaskSet::full(&self.store);
        let locked = if train_backbone { frozen.clone() } else { full.clone() };
        fit.fit(&mut self.store, &full, &locked, spec.epochs)?;

        let sample_idx = task.train.subsample(self.config.prune.is_samples, rng::derive_seed(base, streams::IS_SAMPLE));
        let sample = task.train.select(&sample_idx);
        let mask = if prune && self.config.prune.iterations > 0 {
            let retrain = self.config.prune.retrain_epochs_for(spec.epochs);
            iterative_prune(&mut self.store, &mut fit, full, &frozen, &sample.tensor()?, &self.config.prune, retrain)?
        } else {
            full
        };
        let final_loss = fit.last_loss();
        let (head, norm) = fit.into_parts();

        let newly_frozen = claim_and_freeze(&mut self.store, &mask, id)?;
        let features = train::features(&self.graph, &self.store, Some(&mask), &norm, &sample)?;
        let scores = select::test_importance_scores(&head, &features, None);
        let train_accuracy = train::accuracy(&self.graph, &self.store, Some(&mask), &norm, &head, &task.train)?;
        let mask_density = mask.count_ones() as f64 / mask.len() as f64;
        self.registry.push(TaskEntry { id, classes: task.classes.clone(), mask, head, norm, scores })?;
        if self.config.reinit == ReinitMode::Reinit {
            reinit_unclaimed(&mut self.store, rng::derive_seed(base, streams::REINIT));
        }
        let free_per_tensor =
            self.store.tensors().iter().map(|t| (t.name().to_string(), t.free_count() as f64 / t.len() as f64)).collect();
        Ok(TaskReport {
            task: id.0,
            newly_frozen,
            free_after: self.store.free_count(),
            mask_density,
            free_per_tensor,
            final_loss,
            train_accuracy,
        })
    }

    /// Backbone features `[N, F]` of subnetwork `t`.
    pub fn features(&self, t: TaskId, batch: &DenseTensor) -> Result<DenseTensor> {
        let e = self.registry.get(t)?;
        flat(self.graph.forward(&self.store, batch, Some(&e.mask), &e.norm)?)
    }

    /// Logits of subnetwork `t`: its mask, normalization state and head.
    pub fn infer_subnetwork(&self, t: TaskId, batch: &DenseTensor) -> Result<DenseTensor> {
        self.registry.get(t)?.head.forward(&self.features(t, batch)?)
    }
}
