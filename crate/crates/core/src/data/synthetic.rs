//! Gaussian blob tasks: one isotropic cluster per class.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{make_task_stream, ClassOrdering, Dataset, LabeledSet, TaskStream};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::TensorShape;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobSpec {
    /// Classes per task, in stream order.
    pub sizes: Vec<usize>,
    /// Feature length; ignored when `image` is set.
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Minimum distance between class means, in units of the cluster
    /// standard deviation.
    pub separation: f64,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_train")]
    pub train_per_class: usize,
    #[serde(default = "default_test")]
    pub test_per_class: usize,
    /// Emit `[C, H, W]` samples instead of vectors.
    #[serde(default)]
    pub image: Option<[usize; 3]>,
    pub seed: u64,
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

impl BlobSpec {
    pub fn new(n_tasks: usize, classes_per_task: usize, dim: usize, separation: f64, seed: u64) -> Self {
        BlobSpec {
            sizes: vec![classes_per_task; n_tasks],
            dim,
            separation,
            sigma: default_sigma(),
            train_per_class: default_train(),
            test_per_class: default_test(),
            image: None,
            seed,
        }
    }

    pub fn classes(&self) -> usize {
        self.sizes.iter().sum()
    }

    pub fn sample_shape(&self) -> Result<TensorShape> {
        match self.image {
            Some(d) => TensorShape::new(d.to_vec()),
            None => TensorShape::new(vec![self.dim]),
        }
    }
}

/// Class means at pairwise distance at least `separation * sigma`, drawn by
/// rejection from a Gaussian whose spread grows slowly until they fit.
fn class_means(classes: usize, dim: usize, min_dist: f64, rng: &mut rng::Rng) -> Vec<Vec<f64>> {
    // typical pairwise distance starts near 1.2x the minimum
    let mut spread = 1.2 * min_dist / (2.0 * dim as f64).sqrt();
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(classes);
    let mut failures = 0;
    while means.len() < classes {
        let m: Vec<f64> = (0..dim).map(|_| spread * rng.sample::<f64, _>(StandardNormal)).collect();
        let ok = means.iter().all(|o| o.iter().zip(&m).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() >= min_dist);
        if ok {
            means.push(m);
        } else {
            failures += 1;
            if failures % 1000 == 0 {
                spread *= 1.05;
            }
        }
    }
    means
}

/// All classes described by `spec`, labels `0..classes`.
pub fn blob_dataset(spec: &BlobSpec) -> Result<Dataset> {
    if !(spec.separation > 0.0 && spec.sigma > 0.0) {
        return Err(Error::Config("blob separation and sigma must be positive".into()));
    }
    if spec.sizes.is_empty() || spec.train_per_class == 0 || spec.test_per_class == 0 {
        return Err(Error::Config("blob spec needs tasks and samples".into()));
    }
    let shape = spec.sample_shape()?;
    let dim = shape.numel();
    let classes = spec.classes();
    let mut rng = rng::seeded(spec.seed);
    let means = class_means(classes, dim, spec.separation * spec.sigma, &mut rng);
    let mut draw = |per_class: usize| {
        let mut values = Vec::with_capacity(classes * per_class * dim);
        let mut labels = Vec::with_capacity(classes * per_class);
        for (c, mean) in means.iter().enumerate() {
            for _ in 0..per_class {
                values.extend(mean.iter().map(|&m| (m + spec.sigma * rng.sample::<f64, _>(StandardNormal)) as f32));
                labels.push(c);
            }
        }
        LabeledSet::new(shape.clone(), values, labels)
    };
    let train = draw(spec.train_per_class)?;
    let test = draw(spec.test_per_class)?;
    Dataset::new(train, test, classes)
}

/// Tasks over consecutive class ids, sized by `spec.sizes`.
pub fn synthetic_blobs(spec: &BlobSpec) -> Result<TaskStream> {
    let ds = blob_dataset(spec)?;
    make_task_stream(&ds, &ClassOrdering::identity(ds.num_classes), &spec.sizes)
}
