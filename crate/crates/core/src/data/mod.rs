//! Labeled datasets, class orderings and incremental task streams.

mod cifar;
mod idx;
mod synthetic;

pub use cifar::{load_cifar100_dir, load_cifar_binary, CIFAR_RECORD};
pub use idx::{load_idx, load_mnist_dir, parse_idx, IdxArray};
pub use synthetic::{blob_dataset, synthetic_blobs, BlobSpec};

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::params::TaskId;
use crate::rng;
use crate::tensor::{DenseTensor, TensorShape};

/// Samples of one shape with integer labels. May be empty.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSet {
    sample: TensorShape,
    values: Vec<f32>,
    labels: Vec<usize>,
}

impl LabeledSet {
    pub fn new(sample: TensorShape, values: Vec<f32>, labels: Vec<usize>) -> Result<Self> {
        if values.len() != sample.numel() * labels.len() {
            return Err(Error::Structure(format!(
                "{} values for {} samples of shape {sample}",
                values.len(),
                labels.len()
            )));
        }
        Ok(LabeledSet { sample, values, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_shape(&self) -> &TensorShape {
        &self.sample
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let n = self.sample.numel();
        &self.values[i * n..(i + 1) * n]
    }

    /// Stacks the given samples into `[len, ...sample]`.
    pub fn batch(&self, indices: &[usize]) -> Result<DenseTensor> {
        if indices.is_empty() {
            return Err(Error::Input("empty batch".into()));
        }
        let mut values = Vec::with_capacity(indices.len() * self.sample.numel());
        for &i in indices {
            values.extend_from_slice(self.sample(i));
        }
        DenseTensor::new(self.sample.batched(indices.len())?, values)
    }

    pub fn batch_labels(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }

    /// All samples as one tensor.
    pub fn tensor(&self) -> Result<DenseTensor> {
        DenseTensor::new(self.sample.batched(self.len())?, self.values.clone())
    }

    pub fn select(&self, indices: &[usize]) -> LabeledSet {
        let mut values = Vec::with_capacity(indices.len() * self.sample.numel());
        for &i in indices {
            values.extend_from_slice(self.sample(i));
        }
        LabeledSet { sample: self.sample.clone(), values, labels: self.batch_labels(indices) }
    }

    /// Keeps at most `limit` samples per label, the first ones in file order.
    pub fn take_per_class(&self, limit: usize) -> LabeledSet {
        let mut seen = std::collections::BTreeMap::<usize, usize>::new();
        let keep: Vec<usize> = (0..self.len())
            .filter(|&i| {
                let c = seen.entry(self.labels[i]).or_insert(0);
                *c += 1;
                *c <= limit
            })
            .collect();
        self.select(&keep)
    }

    /// A seeded subsample of `n` distinct samples (all of them if `n >= len`),
    /// in increasing index order.
    pub fn subsample(&self, n: usize, seed: u64) -> Vec<usize> {
        if n >= self.len() {
            return (0..self.len()).collect();
        }
        let mut idx = rng::permutation(self.len(), &mut rng::seeded(seed));
        idx.truncate(n);
        idx.sort_unstable();
        idx
    }
}

/// Train and test splits over `num_classes` labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: LabeledSet,
    pub test: LabeledSet,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(train: LabeledSet, test: LabeledSet, num_classes: usize) -> Result<Self> {
        if train.sample_shape() != test.sample_shape() {
            return Err(Error::Structure("train and test sample shapes differ".into()));
        }
        if let Some(&c) = train.labels().iter().chain(test.labels()).find(|&&c| c >= num_classes) {
            return Err(Error::Input(format!("label {c} outside {num_classes} classes")));
        }
        Ok(Dataset { train, test, num_classes })
    }
}

/// A permutation of class ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassOrdering {
    seed: Option<u64>,
    order: Vec<usize>,
}

impl ClassOrdering {
    pub fn identity(classes: usize) -> Self {
        ClassOrdering { seed: None, order: (0..classes).collect() }
    }

    pub fn seeded(classes: usize, seed: u64) -> Self {
        let order = rng::permutation(classes, &mut rng::seeded(rng::derive_seed(seed, rng::streams::ORDERING)));
        ClassOrdering { seed: Some(seed), order }
    }

    pub fn from_order(order: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; order.len()];
        for &c in &order {
            if c >= order.len() || std::mem::replace(&mut seen[c], true) {
                return Err(Error::Input(format!("class ordering is not a permutation at class {c}")));
            }
        }
        Ok(ClassOrdering { seed: None, order })
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

/// One task: its classes (global ids) and both splits with labels local to
/// the task, `0..classes.len()`.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskData {
    pub id: TaskId,
    pub classes: Vec<usize>,
    pub train: LabeledSet,
    pub test: LabeledSet,
}

impl TaskData {
    pub fn global_label(&self, local: usize) -> usize {
        self.classes[local]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskStream {
    pub tasks: Vec<TaskData>,
}

impl TaskStream {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn sample_shape(&self) -> Option<&TensorShape> {
        self.tasks.first().map(|t| t.train.sample_shape())
    }

    /// Checks that no class appears in two tasks.
    pub fn check_disjoint(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for t in &self.tasks {
            for &c in &t.classes {
                if !seen.insert(c) {
                    return Err(Error::Input(format!("class {c} appears in more than one task")));
                }
            }
        }
        Ok(())
    }
}

/// Cuts `ordering` into consecutive slices of the given sizes; each slice
/// becomes a task holding every sample of its classes.
pub fn make_task_stream(dataset: &Dataset, ordering: &ClassOrdering, sizes: &[usize]) -> Result<TaskStream> {
    if ordering.len() != dataset.num_classes {
        return Err(Error::Input(format!(
            "ordering covers {} classes, dataset has {}",
            ordering.len(),
            dataset.num_classes
        )));
    }
    let total: usize = sizes.iter().sum();
    if total > dataset.num_classes {
        return Err(Error::Input(format!("task sizes need {total} classes, dataset has {}", dataset.num_classes)));
    }
    if sizes.contains(&0) {
        return Err(Error::Input("task sizes must be positive".into()));
    }
    let mut local = vec![usize::MAX; dataset.num_classes];
    let mut start = 0;
    let mut tasks = Vec::with_capacity(sizes.len());
    for (t, &size) in sizes.iter().enumerate() {
        let classes = ordering.order()[start..start + size].to_vec();
        start += size;
        for (k, &c) in classes.iter().enumerate() {
            local[c] = k;
        }
        let split = |set: &LabeledSet| {
            let idx: Vec<usize> = (0..set.len()).filter(|&i| classes.contains(&set.labels()[i])).collect();
            let mut s = set.select(&idx);
            s.labels.iter_mut().for_each(|l| *l = local[*l]);
            s
        };
        tasks.push(TaskData { id: TaskId::from_index(t), train: split(&dataset.train), test: split(&dataset.test), classes });
    }
    Ok(TaskStream { tasks })
}
