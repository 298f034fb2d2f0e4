//! Importance scores and per-neuron pruning.
//!
//! The importance of connection `i -> j` is the mean absolute signal it
//! carries, `mean |w_ij x_i|`, divided by the total absolute signal reaching
//! `j` including its bias. For convolutions a "connection" is one input
//! channel's kernel slice feeding one output channel, and its signal is the
//! batch-and-position mean of the absolute partial convolution. Each neuron
//! keeps the smallest set of its strongest connections carrying at least a
//! fraction `alpha` of its total importance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{apply_mask, ComputeGraph, NormStats, PrunableKind};
use crate::ops::{axpy_run, ConvGeometry};
use crate::params::{ParamStore, TaskMaskSet};
use crate::tensor::DenseTensor;
use crate::train::{TaskFit, EVAL_CHUNK};

/// Scores for one layer: a row per receiving neuron (output channel), with
/// one entry per input plus a final bias entry.
#[derive(Clone, Debug, PartialEq)]
pub struct ImportanceMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    degenerate: Vec<bool>,
}

impl ImportanceMatrix {
    /// `signal` holds `mean |w_ij x_i|` row-major `[rows, inputs]`.
    fn normalize(rows: usize, inputs: usize, signal: &[f64], bias: &[f32]) -> Self {
        let cols = inputs + 1;
        let mut values = vec![0.0; rows * cols];
        let mut degenerate = vec![false; rows];
        for j in 0..rows {
            let s = &signal[j * inputs..(j + 1) * inputs];
            let b = f64::from(bias[j].abs());
            let denom = s.iter().sum::<f64>() + b;
            if denom > 0.0 {
                let out = &mut values[j * cols..(j + 1) * cols];
                for (o, v) in out.iter_mut().zip(s) {
                    *o = v / denom;
                }
                out[inputs] = b / denom;
            } else {
                degenerate[j] = true;
            }
        }
        ImportanceMatrix { rows, cols, values, degenerate }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Number of inputs per row, excluding the bias entry.
    pub fn inputs(&self) -> usize {
        self.cols - 1
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.values[j * self.cols..(j + 1) * self.cols]
    }

    /// Rows with zero total signal are all-zero and flagged.
    pub fn is_degenerate(&self, j: usize) -> bool {
        self.degenerate[j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Running sums of `|w_ij x_i|` over samples (and output positions).
struct SignalSums {
    rows: usize,
    inputs: usize,
    sums: Vec<f64>,
    count: usize,
}

impl SignalSums {
    fn new(rows: usize, inputs: usize) -> Self {
        SignalSums { rows, inputs, sums: vec![0.0; rows * inputs], count: 0 }
    }

    fn add_fc(&mut self, w: &[f32], x: &DenseTensor) {
        let (n, m) = (x.batch(), self.inputs);
        let mut abs_x = vec![0.0f64; m];
        for r in 0..n {
            for (a, &v) in abs_x.iter_mut().zip(x.row(r)) {
                *a += f64::from(v.abs());
            }
        }
        for j in 0..self.rows {
            for i in 0..m {
                self.sums[j * m + i] += f64::from(w[j * m + i].abs()) * abs_x[i];
            }
        }
        self.count += n;
    }

    fn add_conv(&mut self, w: &[f32], x: &DenseTensor, g: &ConvGeometry) {
        let (n, k) = (x.batch(), g.kernel);
        let (in_plane, out_plane) = (g.in_plane(), g.out_plane());
        let mut partial = vec![0.0f32; out_plane];
        for s in 0..n {
            for i in 0..g.in_channels {
                let plane = &x.values()[(s * g.in_channels + i) * in_plane..][..in_plane];
                for j in 0..g.out_channels {
                    let kern = &w[(j * g.in_channels + i) * k * k..][..k * k];
                    if kern.iter().all(|&v| v == 0.0) {
                        continue;
                    }
                    partial.fill(0.0);
                    for ky in 0..k {
                        for kx in 0..k {
                            let wv = kern[ky * k + kx];
                            if wv != 0.0 {
                                g.for_each_tap_run(ky, kx, |o, p, len| axpy_run(&mut partial, o, plane, p, len, g.stride, wv));
                            }
                        }
                    }
                    self.sums[j * self.inputs + i] += partial.iter().map(|v| f64::from(v.abs())).sum::<f64>();
                }
            }
        }
        self.count += n * out_plane;
    }

    fn finish(self, bias: &[f32]) -> ImportanceMatrix {
        let c = self.count.max(1) as f64;
        let mean: Vec<f64> = self.sums.iter().map(|s| s / c).collect();
        ImportanceMatrix::normalize(self.rows, self.inputs, &mean, bias)
    }
}

/// Scores of a fully connected layer with weight `[outputs, inputs]` on
/// layer inputs `x` of shape `[N, inputs]`.
pub fn importance_scores_fc(weight: &[f32], bias: &[f32], x: &DenseTensor) -> Result<ImportanceMatrix> {
    let (rows, inputs) = (bias.len(), x.row_len());
    if weight.len() != rows * inputs {
        return Err(Error::Structure(format!("weight has {} entries, expected {rows}x{inputs}", weight.len())));
    }
    let mut sums = SignalSums::new(rows, inputs);
    sums.add_fc(weight, x);
    Ok(sums.finish(bias))
}

/// Scores of a convolution with weight `[out, in, k, k]` on input feature
/// maps `x` of shape `[N, in, H, W]`.
pub fn importance_scores_conv(weight: &[f32], bias: &[f32], x: &DenseTensor, g: &ConvGeometry) -> Result<ImportanceMatrix> {
    if weight.len() != g.out_channels * g.in_channels * g.kernel * g.kernel || bias.len() != g.out_channels {
        return Err(Error::Structure("conv weight or bias does not match geometry".into()));
    }
    if x.row_len() != g.in_channels * g.in_plane() {
        return Err(Error::Structure(format!("conv input {:?} does not match geometry", x.shape())));
    }
    let mut sums = SignalSums::new(g.out_channels, g.in_channels);
    sums.add_conv(weight, x, g);
    Ok(sums.finish(bias))
}

/// Indices (into `row`, bias last) of the connections a neuron keeps: the
/// minimal strongest prefix whose sum reaches `alpha` of the row total, plus
/// every entry tied with its smallest member. Zero scores are never kept; an
/// all-zero row keeps nothing.
pub fn prune_neuron(row: &[f64], alpha: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    // summed in the same order as the prefix so alpha = 1 reaches it exactly
    let total: f64 = order.iter().map(|&i| row[i]).sum();
    if !(total > 0.0) {
        return Vec::new();
    }
    let target = alpha * total;
    let mut cum = 0.0;
    let mut threshold = 0.0;
    for &i in &order {
        cum += row[i];
        if cum >= target {
            threshold = row[i];
            break;
        }
    }
    (0..row.len()).filter(|&i| row[i] > 0.0 && row[i] >= threshold).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruneConfig {
    #[serde(default = "default_alpha")]
    pub alpha_fc: f64,
    #[serde(default = "default_alpha")]
    pub alpha_conv: f64,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    /// Defaults to a third of the task's training epochs.
    #[serde(default)]
    pub retrain_epochs: Option<usize>,
    /// Size of the seeded training subsample used for scoring.
    #[serde(default = "default_is_samples")]
    pub is_samples: usize,
}

fn default_alpha() -> f64 {
    0.9
}

fn default_iterations() -> usize {
    3
}

fn default_is_samples() -> usize {
    1000
}

impl Default for PruneConfig {
    fn default() -> Self {
        PruneConfig {
            alpha_fc: default_alpha(),
            alpha_conv: default_alpha(),
            iterations: default_iterations(),
            retrain_epochs: None,
            is_samples: default_is_samples(),
        }
    }
}

impl PruneConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, a) in [("alpha_fc", self.alpha_fc), ("alpha_conv", self.alpha_conv)] {
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1], got {a}")));
            }
        }
        if self.retrain_epochs == Some(0) || self.is_samples == 0 {
            return Err(Error::Config("retrain_epochs and is_samples must be positive".into()));
        }
        Ok(())
    }

    pub fn retrain_epochs_for(&self, train_epochs: usize) -> usize {
        self.retrain_epochs.unwrap_or((train_epochs / 3).max(1))
    }
}

/// Scores of every prunable layer under `mask`, estimated on `sample` in
/// inference mode. Masked-out weights and biases count as zero.
pub fn network_importance(
    graph: &ComputeGraph,
    store: &ParamStore,
    mask: &TaskMaskSet,
    norm: &NormStats,
    sample: &DenseTensor,
) -> Result<Vec<ImportanceMatrix>> {
    let layers = graph.prunable();
    let weights: Vec<Vec<f32>> =
        layers.iter().map(|l| apply_mask(store.get(l.weight).values().values(), mask.layer(l.weight.0))).collect();
    let mut sums: Vec<SignalSums> = layers
        .iter()
        .map(|l| match l.kind {
            PrunableKind::Linear { inputs, outputs } => SignalSums::new(outputs, inputs),
            PrunableKind::Conv { geometry } => SignalSums::new(geometry.out_channels, geometry.in_channels),
        })
        .collect();
    let n = sample.batch();
    for start in (0..n).step_by(EVAL_CHUNK) {
        let rows: Vec<usize> = (start..n.min(start + EVAL_CHUNK)).collect();
        let (_, inputs) = graph.forward_recording(store, &sample.select_rows(&rows)?, Some(mask), norm)?;
        for ((l, x), (s, w)) in layers.iter().zip(&inputs).zip(sums.iter_mut().zip(&weights)) {
            match l.kind {
                PrunableKind::Linear { .. } => {
                    let flat = DenseTensor::from_dims(vec![x.batch(), x.row_len()], x.values().to_vec())?;
                    s.add_fc(w, &flat);
                }
                PrunableKind::Conv { geometry } => s.add_conv(w, x, &ConvGeometry::from(geometry)),
            }
        }
    }
    Ok(layers
        .iter()
        .zip(sums)
        .map(|(l, s)| s.finish(&apply_mask(store.get(l.bias).values().values(), mask.layer(l.bias.0))))
        .collect())
}

/// Applies [`prune_neuron`] to every row of every layer, shrinking `mask`.
/// Fails if a layer is left without any active weight.
pub fn prune_mask(graph: &ComputeGraph, scores: &[ImportanceMatrix], mask: &TaskMaskSet, cfg: &PruneConfig) -> Result<TaskMaskSet> {
    let mut out = mask.clone();
    for (l, s) in graph.prunable().iter().zip(scores) {
        let (alpha, taps) = match l.kind {
            PrunableKind::Linear { .. } => (cfg.alpha_fc, 1),
            PrunableKind::Conv { geometry } => (cfg.alpha_conv, geometry.kernel * geometry.kernel),
        };
        let inputs = s.inputs();
        for j in 0..s.rows() {
            let mut keep = vec![false; inputs + 1];
            if !s.is_degenerate(j) {
                for i in prune_neuron(s.row(j), alpha) {
                    keep[i] = true;
                }
            }
            let w = out.layer_mut(l.weight.0);
            for (i, &k) in keep[..inputs].iter().enumerate() {
                if !k {
                    for t in 0..taps {
                        w.remove((j * inputs + i) * taps + t);
                    }
                }
            }
            if !keep[inputs] {
                out.layer_mut(l.bias.0).remove(j);
            }
        }
        if out.layer(l.weight.0).none() {
            return Err(Error::Saturation { layer: l.name.clone() });
        }
    }
    Ok(out)
}

/// Repeats score, prune and retrain `cfg.iterations` times, starting from
/// `mask`. Retraining only moves coordinates that are inside the current
/// mask and outside `frozen`. Returns the final mask.
pub fn iterative_prune(
    store: &mut ParamStore,
    fit: &mut TaskFit<'_>,
    mut mask: TaskMaskSet,
    frozen: &TaskMaskSet,
    sample: &DenseTensor,
    cfg: &PruneConfig,
    retrain_epochs: usize,
) -> Result<TaskMaskSet> {
    cfg.validate()?;
    for _ in 0..cfg.iterations {
        let scores = network_importance(fit.graph, store, &mask, &fit.norm, sample)?;
        mask = prune_mask(fit.graph, &scores, &mask, cfg)?;
        let mut locked = mask.complement();
        locked.union_with(frozen)?;
        fit.fit(store, &mask, &locked, retrain_epochs)?;
    }
    Ok(mask)
}
