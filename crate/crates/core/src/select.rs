//! Task prediction for unlabeled test batches.
//!
//! A batch is assumed to come from a single unknown task. The maxoutput rule
//! picks the subnetwork whose head is most confident summed over the batch.
//! The importance-score rule compares, for every task, the head-input
//! importance estimated on the batch with the one stored at training time,
//! and picks the closest. Ties go to the lowest task id. Nothing here
//! mutates the learner.

use serde::{Deserialize, Serialize};

use crate::bitset::BitSet;
use crate::controller::{Learner, TaskEntry};
use crate::data::{LabeledSet, TaskData};
use crate::error::{Error, Result};
use crate::head::Head;
use crate::params::TaskId;
use crate::rng::{self, streams};
use crate::tensor::{argmax, DenseTensor};
use crate::train;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[serde(rename = "maxoutput")]
    MaxOutput,
    #[serde(rename = "is")]
    ImportanceScores,
    /// The true task, for task-incremental evaluation.
    Oracle,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::MaxOutput => "maxoutput",
            Strategy::ImportanceScores => "is",
            Strategy::Oracle => "oracle",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "maxoutput" => Ok(Strategy::MaxOutput),
            "is" => Ok(Strategy::ImportanceScores),
            "oracle" => Ok(Strategy::Oracle),
            _ => Err(Error::Config(format!("unknown selection strategy `{s}` (maxoutput | is | oracle)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionReport {
    pub task: TaskId,
    /// Summed max logit (maxoutput) or score distance (is), per task.
    pub statistic: Vec<f64>,
    /// Global class label per sample, from the chosen subnetwork.
    pub predictions: Vec<usize>,
}

/// Index of the largest value; the first wins ties.
pub fn argmax_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Index of the smallest value; the first wins ties.
pub fn argmin_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x < v[best] {
            best = i;
        }
    }
    best
}

/// `sum_i max_k logits[i, k]` over the given rows.
pub fn maxoutput_statistic(logits: &DenseTensor, rows: &[usize]) -> f64 {
    rows.iter().map(|&i| f64::from(logits.row(i)[argmax(logits.row(i))])).sum()
}

/// Head-input importance `w_kj * mean_i features[i, j]`, row-major
/// `[classes, features]`, over all rows of `features`. Connections outside
/// `active` score exactly zero; heads are never pruned, so callers inside
/// the crate pass `None`.
pub fn test_importance_scores(head: &Head, features: &DenseTensor, active: Option<&BitSet>) -> Vec<f64> {
    let rows: Vec<usize> = (0..features.batch()).collect();
    let mut s = importance_on_rows(head, features, &rows);
    if let Some(active) = active {
        assert_eq!(active.len(), s.len(), "head mask layout");
        for (p, v) in s.iter_mut().enumerate() {
            if !active.contains(p) {
                *v = 0.0;
            }
        }
    }
    s
}

fn importance_on_rows(head: &Head, features: &DenseTensor, rows: &[usize]) -> Vec<f64> {
    let d = head.features();
    let mut mean = vec![0.0f64; d];
    for &i in rows {
        for (m, &v) in mean.iter_mut().zip(features.row(i)) {
            *m += f64::from(v);
        }
    }
    let n = rows.len().max(1) as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    head.weight.values.values().chunks(d).flat_map(|w| w.iter().zip(&mean).map(|(&w, &m)| f64::from(w) * m)).collect()
}

/// Euclidean (Frobenius) distance.
pub fn score_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Outputs of every registered subnetwork on one fixed sample set, so that
/// many batches (and batch sizes) can be scored without recomputation.
#[derive(Clone, Debug)]
pub struct SubnetOutputs {
    features: Vec<DenseTensor>,
    logits: Vec<DenseTensor>,
}

impl SubnetOutputs {
    pub fn compute(learner: &Learner, set: &LabeledSet) -> Result<Self> {
        if learner.registry().is_empty() {
            return Err(Error::State("no registered tasks".into()));
        }
        let mut features = Vec::new();
        let mut logits = Vec::new();
        for e in learner.registry().entries() {
            let f = train::features(learner.graph(), learner.store(), Some(&e.mask), &e.norm, set)?;
            logits.push(e.head.forward(&f)?);
            features.push(f);
        }
        Ok(SubnetOutputs { features, logits })
    }

    pub fn from_batch(learner: &Learner, batch: &DenseTensor) -> Result<Self> {
        if learner.registry().is_empty() {
            return Err(Error::State("no registered tasks".into()));
        }
        let mut features = Vec::new();
        let mut logits = Vec::new();
        for e in learner.registry().entries() {
            let f = learner.features(e.id, batch)?;
            logits.push(e.head.forward(&f)?);
            features.push(f);
        }
        Ok(SubnetOutputs { features, logits })
    }

    pub fn tasks(&self) -> usize {
        self.logits.len()
    }

    pub fn logits(&self, t: TaskId) -> &DenseTensor {
        &self.logits[t.index()]
    }

    /// Chooses a task for the batch made of `rows`.
    pub fn select(&self, entries: &[TaskEntry], strategy: Strategy, rows: &[usize], truth: Option<TaskId>) -> Result<(TaskId, Vec<f64>)> {
        if rows.is_empty() {
            return Err(Error::Input("empty selection batch".into()));
        }
        match strategy {
            Strategy::MaxOutput => {
                let stat: Vec<f64> = self.logits.iter().map(|l| maxoutput_statistic(l, rows)).collect();
                Ok((TaskId::from_index(argmax_first(&stat)), stat))
            }
            Strategy::ImportanceScores => {
                let mut stat = Vec::with_capacity(entries.len());
                for (e, f) in entries.iter().zip(&self.features) {
                    if e.scores.len() != e.head.classes() * e.head.features() {
                        return Err(Error::State(format!("task {} has no stored importance scores", e.id)));
                    }
                    stat.push(score_distance(&e.scores, &importance_on_rows(&e.head, f, rows)));
                }
                Ok((TaskId::from_index(argmin_first(&stat)), stat))
            }
            Strategy::Oracle => {
                let t = truth.ok_or_else(|| Error::Input("oracle selection needs the true task".into()))?;
                Ok((t, Vec::new()))
            }
        }
    }

    /// Global class predictions of subnetwork `t` for `rows`.
    pub fn predict(&self, entries: &[TaskEntry], t: TaskId, rows: &[usize]) -> Vec<usize> {
        let l = &self.logits[t.index()];
        rows.iter().map(|&i| entries[t.index()].classes[argmax(l.row(i))]).collect()
    }
}

/// Maxoutput selection over a whole batch.
pub fn select_maxoutput(learner: &Learner, batch: &DenseTensor) -> Result<SelectionReport> {
    report(learner, batch, Strategy::MaxOutput)
}

/// Importance-score selection over a whole batch.
pub fn select_importance_scores(learner: &Learner, batch: &DenseTensor) -> Result<SelectionReport> {
    report(learner, batch, Strategy::ImportanceScores)
}

fn report(learner: &Learner, batch: &DenseTensor, strategy: Strategy) -> Result<SelectionReport> {
    let out = SubnetOutputs::from_batch(learner, batch)?;
    let rows: Vec<usize> = (0..batch.batch()).collect();
    let entries = learner.registry().entries();
    let (task, statistic) = out.select(entries, strategy, &rows, None)?;
    Ok(SelectionReport { task, statistic, predictions: out.predict(entries, task, &rows) })
}

/// Class-incremental results over the test splits of the registered tasks.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamResult {
    /// Class accuracy per task.
    pub accuracy: Vec<f64>,
    /// Fraction of batches assigned to the right task, per task.
    pub selection_accuracy: Vec<f64>,
    /// `confusion[true][chosen]` batch counts.
    pub confusion: Vec<Vec<usize>>,
}

impl StreamResult {
    /// Selection accuracy over all batches.
    pub fn overall_selection_accuracy(&self) -> f64 {
        let total: usize = self.confusion.iter().flatten().sum();
        let right: usize = (0..self.confusion.len()).map(|t| self.confusion[t][t]).sum();
        right as f64 / total.max(1) as f64
    }
}

/// Precomputed subnetwork outputs on each registered task's test split.
pub struct StreamEval<'a> {
    learner: &'a Learner,
    outputs: Vec<SubnetOutputs>,
    labels: Vec<Vec<usize>>,
}

impl<'a> StreamEval<'a> {
    /// `tasks[t]` must be the data of registered task `t + 1`.
    pub fn new(learner: &'a Learner, tasks: &[TaskData]) -> Result<Self> {
        let n = learner.registry().len();
        if tasks.len() < n {
            return Err(Error::Input(format!("{} task splits for {n} registered tasks", tasks.len())));
        }
        let mut outputs = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for task in &tasks[..n] {
            outputs.push(SubnetOutputs::compute(learner, &task.test)?);
            labels.push(task.test.labels().iter().map(|&l| task.global_label(l)).collect());
        }
        Ok(StreamEval { learner, outputs, labels })
    }

    /// Splits each test set into seeded batches of `batch_size` (the last
    /// one may be smaller), selects a task per batch and classifies with it.
    pub fn classify_stream(&self, strategy: Strategy, batch_size: usize, seed: u64) -> Result<StreamResult> {
        if batch_size == 0 {
            return Err(Error::Input("batch size must be at least 1".into()));
        }
        let entries = self.learner.registry().entries();
        let n = entries.len();
        let mut result = StreamResult { accuracy: Vec::new(), selection_accuracy: Vec::new(), confusion: vec![vec![0; n]; n] };
        for (t, (out, labels)) in self.outputs.iter().zip(&self.labels).enumerate() {
            let truth = TaskId::from_index(t);
            let order = rng::permutation(labels.len(), &mut rng::seeded(rng::derive_seed(seed, streams::EVAL ^ ((t as u64) << 8))));
            let (mut correct, mut hits, mut batches) = (0usize, 0usize, 0usize);
            for rows in order.chunks(batch_size) {
                let (chosen, _) = out.select(entries, strategy, rows, Some(truth))?;
                let pred = out.predict(entries, chosen, rows);
                correct += pred.iter().zip(rows).filter(|(p, &i)| **p == labels[i]).count();
                result.confusion[t][chosen.index()] += 1;
                hits += usize::from(chosen == truth);
                batches += 1;
            }
            result.accuracy.push(correct as f64 / labels.len().max(1) as f64);
            result.selection_accuracy.push(hits as f64 / batches.max(1) as f64);
        }
        Ok(result)
    }
}
