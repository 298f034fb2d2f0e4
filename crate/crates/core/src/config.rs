//! Declarative experiment descriptions, read from TOML.
//!
//! ```toml
//! seeds = [1, 2, 3]
//! task_sizes = [2, 2, 2, 2, 2]
//! output_dir = "runs/blobs"
//!
//! [arch]
//! kind = "mlp"
//! hidden = [32, 32]
//!
//! [data]
//! source = "synthetic"
//! separation = 10.0
//!
//! [train]
//! epochs = 10
//! batch_size = 32
//! optim = { kind = "adam", lr = 0.01, weight_decay = 1e-4 }
//! ```
//!
//! A relative `output_dir` is resolved against `$CPS_OUTPUT_ROOT` when that
//! variable is set.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::arch::ArchSpec;
use crate::controller::{LearnerConfig, ReinitMode, Variant};
use crate::data::{self, BlobSpec, ClassOrdering, Dataset, TaskStream};
use crate::error::{Error, Result};
use crate::relief::PruneConfig;
use crate::select::Strategy;
use crate::train::TrainSpec;

pub const OUTPUT_ROOT_VAR: &str = "CPS_OUTPUT_ROOT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Gaussian blobs, one class per cluster; class count is the sum of
    /// `task_sizes`.
    Synthetic {
        #[serde(default = "default_dim")]
        dim: usize,
        separation: f64,
        #[serde(default = "default_sigma")]
        sigma: f64,
        #[serde(default = "default_train")]
        train_per_class: usize,
        #[serde(default = "default_test")]
        test_per_class: usize,
        #[serde(default)]
        image: Option<[usize; 3]>,
        #[serde(default)]
        seed: u64,
    },
    /// Directory holding the four standard MNIST IDX files.
    Mnist {
        path: PathBuf,
        #[serde(default)]
        train_per_class: Option<usize>,
        #[serde(default)]
        test_per_class: Option<usize>,
    },
    /// Directory holding CIFAR-100 `train.bin` and `test.bin`.
    Cifar100 {
        path: PathBuf,
        #[serde(default)]
        train_per_class: Option<usize>,
        #[serde(default)]
        test_per_class: Option<usize>,
    },
}

fn default_dim() -> usize {
    8
}

fn default_sigma() -> f64 {
    1.0
}

fn default_train() -> usize {
    100
}

fn default_test() -> usize {
    50
}

fn default_true() -> bool {
    true
}

fn default_strategies() -> Vec<Strategy> {
    vec![Strategy::MaxOutput, Strategy::ImportanceScores]
}

fn default_batch_sizes() -> Vec<usize> {
    vec![1, 5, 10, 20]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub arch: ArchSpec,
    pub data: DataSource,
    /// Classes per task, in stream order.
    pub task_sizes: Vec<usize>,
    /// One run per seed. The seed fixes the class ordering, the initial
    /// weights and every stream derived from them.
    pub seeds: Vec<u64>,
    /// When false every run uses the identity class ordering.
    #[serde(default = "default_true")]
    pub shuffle_classes: bool,
    pub train: TrainSpec,
    #[serde(default)]
    pub prune: PruneConfig,
    #[serde(default)]
    pub variant: Variant,
    #[serde(default)]
    pub reinit: ReinitMode,
    /// Class-incremental selection rules to evaluate.
    #[serde(default = "default_strategies")]
    pub strategies: Vec<Strategy>,
    /// Test batch sizes `s` for class-incremental evaluation.
    #[serde(default = "default_batch_sizes")]
    pub batch_sizes: Vec<usize>,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks everything that can be checked without touching the data.
    pub fn validate(&self) -> Result<()> {
        self.learner().validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.task_sizes.is_empty() || self.task_sizes.contains(&0) {
            return Err(Error::Config("task_sizes must be non-empty and positive".into()));
        }
        if self.batch_sizes.is_empty() || self.batch_sizes.contains(&0) {
            return Err(Error::Config("batch_sizes must be non-empty and at least 1".into()));
        }
        if self.strategies.contains(&Strategy::Oracle) {
            return Err(Error::Config("the oracle is always evaluated as task-IL; list only maxoutput | is".into()));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        Ok(())
    }

    /// Checks that referenced files exist.
    pub fn check_inputs(&self) -> Result<()> {
        let files: &[&str] = match &self.data {
            DataSource::Synthetic { .. } => &[],
            DataSource::Mnist { .. } => {
                &["train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"]
            }
            DataSource::Cifar100 { .. } => &["train.bin", "test.bin"],
        };
        if let DataSource::Mnist { path, .. } | DataSource::Cifar100 { path, .. } = &self.data {
            for f in files {
                let p = path.join(f);
                if !p.is_file() {
                    return Err(Error::Config(format!("missing data file {}", p.display())));
                }
            }
        }
        Ok(())
    }

    pub fn learner(&self) -> LearnerConfig {
        LearnerConfig { train: self.train.clone(), prune: self.prune.clone(), variant: self.variant, reinit: self.reinit }
    }

    /// `output_dir`, under `$CPS_OUTPUT_ROOT` when relative and the variable
    /// is set.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_VAR) {
            Some(root) if self.output_dir.is_relative() => PathBuf::from(root).join(&self.output_dir),
            _ => self.output_dir.clone(),
        }
    }

    /// SHA-256 of the canonical JSON form, ignoring `output_dir` so that a
    /// moved run keeps its identity.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn num_classes(&self) -> usize {
        self.task_sizes.iter().sum()
    }

    /// Loads (or generates) the dataset.
    pub fn load_dataset(&self) -> Result<Dataset> {
        self.check_inputs()?;
        let (ds, train_limit, test_limit) = match &self.data {
            DataSource::Synthetic { dim, separation, sigma, train_per_class, test_per_class, image, seed } => {
                let spec = BlobSpec {
                    sizes: self.task_sizes.clone(),
                    dim: *dim,
                    separation: *separation,
                    sigma: *sigma,
                    train_per_class: *train_per_class,
                    test_per_class: *test_per_class,
                    image: *image,
                    seed: *seed,
                };
                (data::blob_dataset(&spec)?, None, None)
            }
            DataSource::Mnist { path, train_per_class, test_per_class } => {
                (data::load_mnist_dir(path)?, *train_per_class, *test_per_class)
            }
            DataSource::Cifar100 { path, train_per_class, test_per_class } => {
                (data::load_cifar100_dir(path)?, *train_per_class, *test_per_class)
            }
        };
        let train = train_limit.map_or_else(|| ds.train.clone(), |n| ds.train.take_per_class(n));
        let test = test_limit.map_or_else(|| ds.test.clone(), |n| ds.test.take_per_class(n));
        Dataset::new(train, test, ds.num_classes)
    }

    pub fn ordering(&self, classes: usize, seed: u64) -> ClassOrdering {
        if self.shuffle_classes {
            ClassOrdering::seeded(classes, seed)
        } else {
            ClassOrdering::identity(classes)
        }
    }

    pub fn stream(&self, dataset: &Dataset, seed: u64) -> Result<TaskStream> {
        data::make_task_stream(dataset, &self.ordering(dataset.num_classes, seed), &self.task_sizes)
    }
}
