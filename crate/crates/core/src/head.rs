//! Task-specific linear classification heads.

use crate::error::{Error, Result};
use crate::graph::{self, ComputeGraph, NormStats};
use crate::ops;
use crate::params::{Init, Param, ParamStore, TaskMaskSet};
use crate::rng;
use crate::tensor::{DenseTensor, TensorShape};

/// One fully connected layer mapping features to a task's class scores.
#[derive(Clone, Debug, PartialEq)]
pub struct Head {
    /// `[classes, features]`.
    pub weight: Param,
    pub bias: Param,
}

impl Head {
    pub fn new(features: usize, classes: usize, rng: &mut rng::Rng) -> Self {
        let init = Init::FanInUniform { fan_in: features };
        Head {
            weight: Param::init(TensorShape::new(vec![classes, features]).unwrap(), init, rng),
            bias: Param::init(TensorShape::new(vec![classes]).unwrap(), init, rng),
        }
    }

    pub fn from_values(weight: DenseTensor, bias: DenseTensor) -> Result<Self> {
        let d = weight.dims();
        if d.len() != 2 || bias.dims() != [d[0]] {
            return Err(Error::Structure(format!("head weight {:?} / bias {:?}", weight.shape(), bias.shape())));
        }
        Ok(Head { weight: Param::new(weight), bias: Param::new(bias) })
    }

    pub fn classes(&self) -> usize {
        self.weight.values.dims()[0]
    }

    pub fn features(&self) -> usize {
        self.weight.values.dims()[1]
    }

    pub fn forward(&self, features: &DenseTensor) -> Result<DenseTensor> {
        let (batch, d) = (features.batch(), features.row_len());
        if d != self.features() {
            return Err(Error::Structure(format!("head expects {} features, got {d}", self.features())));
        }
        let y = ops::linear_forward(
            features.values(),
            self.weight.values.values(),
            self.bias.values.values(),
            batch,
            d,
            self.classes(),
        );
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric { location: "task head".into() });
        }
        DenseTensor::from_dims(vec![batch, self.classes()], y)
    }

    /// Accumulates head gradients; returns the feature gradient.
    pub fn backward(&mut self, features: &DenseTensor, grad_logits: &DenseTensor) -> DenseTensor {
        let (batch, d, k) = (features.batch(), self.features(), self.classes());
        let dx = ops::linear_backward(
            features.values(),
            self.weight.values.values(),
            grad_logits.values(),
            self.weight.grads.values_mut(),
            self.bias.grads.values_mut(),
            batch,
            d,
            k,
        );
        DenseTensor::from_dims(vec![batch, d], dx).expect("feature gradient shape")
    }

    pub fn zero_grad(&mut self) {
        self.weight.zero_grad();
        self.bias.zero_grad();
    }
}

/// Training-mode forward through backbone and head, cross-entropy loss, and
/// backward into every gradient buffer (backbone gradients restricted to
/// `mask`). Returns the mean loss.
#[allow(clippy::too_many_arguments)]
pub fn loss_and_backward(
    graph: &ComputeGraph,
    store: &mut ParamStore,
    head: &mut Head,
    norm: &mut NormStats,
    mask: Option<&TaskMaskSet>,
    input: &DenseTensor,
    labels: &[usize],
) -> Result<f64> {
    let (features, tape) = graph.forward_train(store, input, mask, norm)?;
    let features = flat(features)?;
    let logits = head.forward(&features)?;
    let (loss, dlogits) = graph::cross_entropy(&logits, labels)?;
    let dfeatures = head.backward(&features, &dlogits);
    let dfeatures = dfeatures.reshape(graph.output_shape().batched(input.batch())?.dims().to_vec())?;
    graph.backward(tape, dfeatures, store, mask, norm)?;
    Ok(loss)
}

/// Collapses per-sample dimensions: `[N, ...] -> [N, F]`.
pub fn flat(t: DenseTensor) -> Result<DenseTensor> {
    let (n, f) = (t.batch(), t.row_len());
    t.reshape(vec![n, f])
}
