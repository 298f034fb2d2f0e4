//! Desk-scale setups shared by integration and acceptance tests.

use cps::arch::ArchSpec;
use cps::controller::{Learner, LearnerConfig, ReinitMode, Variant};
use cps::data::{synthetic_blobs, BlobSpec, LabeledSet, TaskData, TaskStream};
use cps::optim::OptimSpec;
use cps::relief::PruneConfig;
use cps::train::TrainSpec;
use cps::TaskId;

pub fn blob_config() -> LearnerConfig {
    LearnerConfig {
        train: TrainSpec { epochs: 10, batch_size: 32, optim: OptimSpec::adam(0.01).with_weight_decay(1e-4) },
        prune: PruneConfig { is_samples: 200, ..PruneConfig::default() },
        variant: Variant::Standard,
        reinit: ReinitMode::Reinit,
    }
}

pub fn tiny_mlp() -> ArchSpec {
    ArchSpec::Mlp { hidden: vec![32, 32], batchnorm: false }
}

/// Five two-class tasks, separation 10, 100 test samples per class.
pub fn separated_stream(seed: u64) -> TaskStream {
    synthetic_blobs(&BlobSpec { test_per_class: 100, ..BlobSpec::new(5, 2, 8, 10.0, seed) }).unwrap()
}

pub fn learn_all(arch: &ArchSpec, config: LearnerConfig, stream: &TaskStream, seed: u64) -> Learner {
    let mut l = Learner::new(arch, stream.sample_shape().unwrap(), config, seed).unwrap();
    for t in &stream.tasks {
        l.learn(t).unwrap();
    }
    l
}

/// `task` again under a new id and class ids, its samples scaled by `scale`.
pub fn relabeled(task: &TaskData, id: u16, first_class: usize, scale: f32) -> TaskData {
    let scaled = |s: &LabeledSet| {
        LabeledSet::new(s.sample_shape().clone(), s.values().iter().map(|v| v * scale).collect(), s.labels().to_vec()).unwrap()
    };
    TaskData {
        id: TaskId(id),
        classes: (first_class..first_class + task.classes.len()).collect(),
        train: scaled(&task.train),
        test: scaled(&task.test),
    }
}

/// A small five-task synthetic experiment writing to `out`.
pub fn tiny_experiment(out: &std::path::Path, seeds: &[u64]) -> cps::config::ExperimentConfig {
    let text = format!(
        r#"
seeds = {seeds:?}
task_sizes = [2, 2, 2, 2, 2]
output_dir = {out:?}
batch_sizes = [1, 20]

[arch]
kind = "mlp"
hidden = [16]

[data]
source = "synthetic"
separation = 10.0
train_per_class = 60
test_per_class = 40

[train]
epochs = 5
batch_size = 32
optim = {{ kind = "adam", lr = 0.01, weight_decay = 1e-4 }}

[prune]
iterations = 2
is_samples = 100
"#
    );
    cps::config::ExperimentConfig::from_toml_str(&text).unwrap()
}

/// Every file under `root`, keyed by relative path.
pub fn tree(root: &std::path::Path) -> std::collections::BTreeMap<std::path::PathBuf, Vec<u8>> {
    let mut out = std::collections::BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}
