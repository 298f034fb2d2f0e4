//! Sequential compute graphs with residual skips, forward evaluation under a
//! task mask, and reverse-mode differentiation.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use crate::bitset::BitSet;
use crate::error::{Error, Result};
use crate::ops::{self, ConvGeometry};
use crate::params::{Param, ParamId, ParamStore, TaskMaskSet};
use crate::tensor::{DenseTensor, TensorShape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    /// Weight is `[outputs, inputs]`.
    Linear { weight: ParamId, bias: ParamId, inputs: usize, outputs: usize },
    /// Weight is `[out_channels, in_channels, kernel, kernel]`.
    Conv2d {
        weight: ParamId,
        bias: ParamId,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    /// Per-channel normalization; `slot` indexes the task's [`NormStats`].
    BatchNorm { slot: usize, channels: usize },
    Relu,
    /// Non-overlapping `kernel x kernel` average pooling.
    AvgPool { kernel: usize },
    /// `[C, H, W] -> [C]`.
    GlobalAvgPool,
    Flatten,
    /// `body(x) + shortcut(x)`; an empty shortcut is the identity.
    Residual { body: Vec<Layer>, shortcut: Vec<Layer> },
}

impl Layer {
    fn kind(&self) -> &'static str {
        match self {
            Layer::Linear { .. } => "linear",
            Layer::Conv2d { .. } => "conv2d",
            Layer::BatchNorm { .. } => "batchnorm",
            Layer::Relu => "relu",
            Layer::AvgPool { .. } => "avgpool",
            Layer::GlobalAvgPool => "global-avgpool",
            Layer::Flatten => "flatten",
            Layer::Residual { .. } => "residual",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PrunableKind {
    Linear { inputs: usize, outputs: usize },
    Conv { geometry: ConvGeometrySpec },
}

/// Serializable mirror of [`ConvGeometry`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometrySpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub in_h: usize,
    pub in_w: usize,
}

impl From<ConvGeometrySpec> for ConvGeometry {
    fn from(s: ConvGeometrySpec) -> Self {
        ConvGeometry {
            in_channels: s.in_channels,
            out_channels: s.out_channels,
            kernel: s.kernel,
            stride: s.stride,
            padding: s.padding,
            in_h: s.in_h,
            in_w: s.in_w,
        }
    }
}

/// A weight-bearing layer, listed in depth-first order (residual bodies
/// before shortcuts).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrunableLayer {
    pub name: String,
    pub kind: PrunableKind,
    pub weight: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComputeGraph {
    input: TensorShape,
    output: TensorShape,
    layers: Vec<Layer>,
    norm_channels: Vec<usize>,
    prunable: Vec<PrunableLayer>,
}

/// Per-task normalization parameters and running statistics for every
/// `BatchNorm` layer of a graph.
#[derive(Clone, Debug, PartialEq)]
pub struct NormState {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct NormStats {
    pub layers: Vec<NormState>,
}

/// Running-statistics update rate.
pub const NORM_MOMENTUM: f32 = 0.1;

impl NormStats {
    pub fn fresh(graph: &ComputeGraph) -> Self {
        let layers = graph
            .norm_channels
            .iter()
            .map(|&c| {
                let shape = TensorShape::new(vec![c]).unwrap();
                NormState {
                    gamma: Param::new(DenseTensor::filled(shape.clone(), 1.0)),
                    beta: Param::new(DenseTensor::zeros(shape)),
                    running_mean: vec![0.0; c],
                    running_var: vec![1.0; c],
                }
            })
            .collect();
        NormStats { layers }
    }

    pub fn zero_grad(&mut self) {
        for l in &mut self.layers {
            l.gamma.zero_grad();
            l.beta.zero_grad();
        }
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

/// Saved intermediate values for one training-mode forward pass.
#[derive(Debug)]
pub struct Tape {
    caches: Vec<Cache>,
}

#[derive(Debug)]
enum Cache {
    Linear { input: Vec<f32>, batch: usize },
    Conv { input: Vec<f32>, batch: usize, geometry: ConvGeometry },
    Norm { xhat: Vec<f32>, inv_std: Vec<f32>, batch: usize, spatial: usize },
    Relu { output: Vec<f32> },
    Pool { planes: usize, h: usize, w: usize },
    GlobalPool { planes: usize, spatial: usize },
    Reshape,
    Residual { body: Vec<Cache>, shortcut: Vec<Cache> },
}

enum NormAccess<'a> {
    Eval(&'a NormStats),
    Train(&'a mut NormStats),
}

struct Pass<'a> {
    store: &'a ParamStore,
    mask: Option<&'a TaskMaskSet>,
    norm: NormAccess<'a>,
    record: Option<&'a mut Vec<DenseTensor>>,
}

impl ComputeGraph {
    /// Validates that the per-sample shapes chain from `input` to the end.
    pub fn new(input: TensorShape, layers: Vec<Layer>, store: &ParamStore) -> Result<Self> {
        let mut norm_channels = Vec::new();
        let mut prunable = Vec::new();
        let output = infer(&input, &layers, store, "", &mut norm_channels, &mut prunable)?;
        Ok(ComputeGraph { input, output, layers, norm_channels, prunable })
    }

    pub fn input_shape(&self) -> &TensorShape {
        &self.input
    }

    /// Per-sample output shape (the feature shape fed to task heads).
    pub fn output_shape(&self) -> &TensorShape {
        &self.output
    }

    pub fn feature_dim(&self) -> usize {
        self.output.numel()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn prunable(&self) -> &[PrunableLayer] {
        &self.prunable
    }

    pub fn norm_channels(&self) -> &[usize] {
        &self.norm_channels
    }

    fn check_input(&self, input: &DenseTensor, mask: Option<&TaskMaskSet>, store: &ParamStore) -> Result<()> {
        let per_sample = &input.dims()[1..];
        if input.dims().len() < 2 || per_sample != self.input.dims() {
            return Err(Error::Structure(format!(
                "input {:?} does not match graph input {}",
                input.shape(),
                self.input
            )));
        }
        if let Some(m) = mask {
            if !m.matches(store) {
                return Err(Error::Structure("mask layout does not match parameters".into()));
            }
        }
        Ok(())
    }

    /// Inference-mode forward pass using stored normalization statistics.
    /// Weights outside `mask` contribute exactly zero.
    pub fn forward(
        &self,
        store: &ParamStore,
        input: &DenseTensor,
        mask: Option<&TaskMaskSet>,
        norm: &NormStats,
    ) -> Result<DenseTensor> {
        self.check_input(input, mask, store)?;
        let mut pass = Pass { store, mask, norm: NormAccess::Eval(norm), record: None };
        run(&self.layers, input.clone(), &mut pass, None, "")
    }

    /// Inference-mode forward that also returns the input of every prunable
    /// layer, in [`ComputeGraph::prunable`] order.
    pub fn forward_recording(
        &self,
        store: &ParamStore,
        input: &DenseTensor,
        mask: Option<&TaskMaskSet>,
        norm: &NormStats,
    ) -> Result<(DenseTensor, Vec<DenseTensor>)> {
        self.check_input(input, mask, store)?;
        let mut record = Vec::with_capacity(self.prunable.len());
        let mut pass = Pass { store, mask, norm: NormAccess::Eval(norm), record: Some(&mut record) };
        let out = run(&self.layers, input.clone(), &mut pass, None, "")?;
        Ok((out, record))
    }

    /// Training-mode forward: normalization uses batch statistics and
    /// updates the running statistics in `norm`.
    pub fn forward_train(
        &self,
        store: &ParamStore,
        input: &DenseTensor,
        mask: Option<&TaskMaskSet>,
        norm: &mut NormStats,
    ) -> Result<(DenseTensor, Tape)> {
        self.check_input(input, mask, store)?;
        let mut caches = Vec::new();
        let mut pass = Pass { store, mask, norm: NormAccess::Train(norm), record: None };
        let out = run(&self.layers, input.clone(), &mut pass, Some(&mut caches), "")?;
        Ok((out, Tape { caches }))
    }

    /// Back-propagates `grad_output` through the pass recorded in `tape`,
    /// accumulating into the store's and `norm`'s gradient buffers. Gradients
    /// of weights outside `mask` are zero. Returns the input gradient.
    pub fn backward(
        &self,
        tape: Tape,
        grad_output: DenseTensor,
        store: &mut ParamStore,
        mask: Option<&TaskMaskSet>,
        norm: &mut NormStats,
    ) -> Result<DenseTensor> {
        let batch = grad_output.batch();
        let dx = back(&self.layers, tape.caches, grad_output.into_values(), store, mask, norm)?;
        DenseTensor::new(self.input.batched(batch)?, dx)
    }
}

fn infer(
    input: &TensorShape,
    layers: &[Layer],
    store: &ParamStore,
    prefix: &str,
    norms: &mut Vec<usize>,
    prunable: &mut Vec<PrunableLayer>,
) -> Result<TensorShape> {
    let mut shape = input.clone();
    for (i, layer) in layers.iter().enumerate() {
        let name = format!("{prefix}{i}");
        let bad = |why: String| Error::Structure(format!("layer {name} ({}): {why}", layer.kind()));
        shape = match layer {
            Layer::Linear { weight, bias, inputs, outputs } => {
                if shape.dims() != [*inputs] {
                    return Err(bad(format!("expects [{inputs}], got {shape}")));
                }
                check_param(store, *weight, &[*outputs, *inputs]).map_err(bad)?;
                check_param(store, *bias, &[*outputs]).map_err(bad)?;
                prunable.push(PrunableLayer {
                    name: name.clone(),
                    kind: PrunableKind::Linear { inputs: *inputs, outputs: *outputs },
                    weight: *weight,
                    bias: *bias,
                });
                TensorShape::new(vec![*outputs])?
            }
            Layer::Conv2d { weight, bias, in_channels, out_channels, kernel, stride, padding } => {
                let d = shape.dims();
                if d.len() != 3 || d[0] != *in_channels {
                    return Err(bad(format!("expects [{in_channels}, H, W], got {shape}")));
                }
                if *stride == 0 || d[1] + 2 * padding < *kernel || d[2] + 2 * padding < *kernel {
                    return Err(bad("kernel larger than padded input".into()));
                }
                check_param(store, *weight, &[*out_channels, *in_channels, *kernel, *kernel]).map_err(bad)?;
                check_param(store, *bias, &[*out_channels]).map_err(bad)?;
                let geometry = ConvGeometrySpec {
                    in_channels: *in_channels,
                    out_channels: *out_channels,
                    kernel: *kernel,
                    stride: *stride,
                    padding: *padding,
                    in_h: d[1],
                    in_w: d[2],
                };
                let g = ConvGeometry::from(geometry);
                prunable.push(PrunableLayer {
                    name: name.clone(),
                    kind: PrunableKind::Conv { geometry },
                    weight: *weight,
                    bias: *bias,
                });
                TensorShape::new(vec![*out_channels, g.out_h(), g.out_w()])?
            }
            Layer::BatchNorm { slot, channels } => {
                if shape.dims()[0] != *channels {
                    return Err(bad(format!("expects {channels} channels, got {shape}")));
                }
                if *slot != norms.len() {
                    return Err(bad(format!("norm slot {slot} out of order")));
                }
                norms.push(*channels);
                shape
            }
            Layer::Relu => shape,
            Layer::AvgPool { kernel } => {
                let d = shape.dims();
                if d.len() != 3 || *kernel == 0 || d[1] < *kernel || d[2] < *kernel {
                    return Err(bad(format!("cannot pool {shape} by {kernel}")));
                }
                TensorShape::new(vec![d[0], d[1] / kernel, d[2] / kernel])?
            }
            Layer::GlobalAvgPool => {
                if shape.rank() != 3 {
                    return Err(bad(format!("expects [C, H, W], got {shape}")));
                }
                TensorShape::new(vec![shape.dims()[0]])?
            }
            Layer::Flatten => TensorShape::new(vec![shape.numel()])?,
            Layer::Residual { body, shortcut } => {
                let a = infer(&shape, body, store, &format!("{name}.body."), norms, prunable)?;
                let b = infer(&shape, shortcut, store, &format!("{name}.skip."), norms, prunable)?;
                if a != b {
                    return Err(bad(format!("branch shapes differ: {a} vs {b}")));
                }
                a
            }
        };
    }
    Ok(shape)
}

fn check_param(store: &ParamStore, id: ParamId, dims: &[usize]) -> std::result::Result<(), String> {
    if id.0 >= store.len() {
        return Err(format!("parameter {} missing", id.0));
    }
    let got = store.get(id).shape().dims();
    if got != dims {
        return Err(format!("parameter {} has shape {got:?}, expected {dims:?}", store.get(id).name()));
    }
    Ok(())
}

/// Parameter values with masked-out entries replaced by zero.
fn effective<'a>(store: &'a ParamStore, mask: Option<&TaskMaskSet>, id: ParamId) -> Cow<'a, [f32]> {
    let values = store.get(id).values().values();
    match mask {
        None => Cow::Borrowed(values),
        Some(m) => Cow::Owned(apply_mask(values, m.layer(id.0))),
    }
}

pub fn apply_mask(values: &[f32], bits: &BitSet) -> Vec<f32> {
    values.iter().enumerate().map(|(p, &v)| if bits.contains(p) { v } else { 0.0 }).collect()
}

fn spatial_of(dims: &[usize]) -> usize {
    dims[2..].iter().product::<usize>().max(1)
}

fn run(
    layers: &[Layer],
    mut x: DenseTensor,
    pass: &mut Pass<'_>,
    mut tape: Option<&mut Vec<Cache>>,
    prefix: &str,
) -> Result<DenseTensor> {
    for (i, layer) in layers.iter().enumerate() {
        let batch = x.batch();
        let dims = x.dims().to_vec();
        let (values, out_dims, cache) = match layer {
            Layer::Linear { weight, bias, inputs, outputs } => {
                if let Some(r) = pass.record.as_deref_mut() {
                    r.push(x.clone());
                }
                let w = effective(pass.store, pass.mask, *weight);
                let b = effective(pass.store, pass.mask, *bias);
                let y = ops::linear_forward(x.values(), &w, &b, batch, *inputs, *outputs);
                let cache = tape.is_some().then(|| Cache::Linear { input: x.into_values(), batch });
                (y, vec![batch, *outputs], cache)
            }
            Layer::Conv2d { weight, bias, in_channels, out_channels, kernel, stride, padding } => {
                if let Some(r) = pass.record.as_deref_mut() {
                    r.push(x.clone());
                }
                let geometry = ConvGeometry {
                    in_channels: *in_channels,
                    out_channels: *out_channels,
                    kernel: *kernel,
                    stride: *stride,
                    padding: *padding,
                    in_h: dims[2],
                    in_w: dims[3],
                };
                let w = effective(pass.store, pass.mask, *weight);
                let b = effective(pass.store, pass.mask, *bias);
                let y = ops::conv_forward(x.values(), &w, &b, batch, &geometry);
                let out = vec![batch, *out_channels, geometry.out_h(), geometry.out_w()];
                let cache = tape.is_some().then(|| Cache::Conv { input: x.into_values(), batch, geometry });
                (y, out, cache)
            }
            Layer::BatchNorm { slot, channels } => {
                let spatial = spatial_of(&dims);
                match &mut pass.norm {
                    NormAccess::Eval(norm) => {
                        let st = &norm.layers[*slot];
                        let (y, _, _) = ops::norm_apply(
                            x.values(),
                            &st.running_mean,
                            &st.running_var,
                            st.gamma.values.values(),
                            st.beta.values.values(),
                            batch,
                            *channels,
                            spatial,
                        );
                        (y, dims, None)
                    }
                    NormAccess::Train(norm) => {
                        let st = &mut norm.layers[*slot];
                        let stats = ops::channel_stats(x.values(), batch, *channels, spatial);
                        let (y, xhat, inv_std) = ops::norm_apply_exact(
                            x.values(),
                            &stats.mean,
                            &stats.var,
                            st.gamma.values.values(),
                            st.beta.values.values(),
                            batch,
                            *channels,
                            spatial,
                        );
                        let m = (batch * spatial) as f32;
                        let unbias = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
                        for c in 0..*channels {
                            st.running_mean[c] = (1.0 - NORM_MOMENTUM) * st.running_mean[c] + NORM_MOMENTUM * stats.mean[c] as f32;
                            st.running_var[c] =
                                (1.0 - NORM_MOMENTUM) * st.running_var[c] + NORM_MOMENTUM * stats.var[c] * unbias;
                        }
                        let cache = tape.is_some().then(|| Cache::Norm { xhat, inv_std, batch, spatial });
                        (y, dims, cache)
                    }
                }
            }
            Layer::Relu => {
                let y: Vec<f32> = x.values().iter().map(|&v| v.max(0.0)).collect();
                let cache = tape.is_some().then(|| Cache::Relu { output: y.clone() });
                (y, dims, cache)
            }
            Layer::AvgPool { kernel } => {
                let (planes, h, w) = (dims[0] * dims[1], dims[2], dims[3]);
                let y = ops::avgpool_forward(x.values(), planes, h, w, *kernel);
                let cache = tape.is_some().then_some(Cache::Pool { planes, h, w });
                (y, vec![dims[0], dims[1], h / kernel, w / kernel], cache)
            }
            Layer::GlobalAvgPool => {
                let (planes, spatial) = (dims[0] * dims[1], dims[2] * dims[3]);
                let y: Vec<f32> = x
                    .values()
                    .chunks(spatial)
                    .map(|p| p.iter().sum::<f32>() / spatial as f32)
                    .collect();
                let cache = tape.is_some().then_some(Cache::GlobalPool { planes, spatial });
                (y, vec![dims[0], dims[1]], cache)
            }
            Layer::Flatten => {
                let cache = tape.is_some().then_some(Cache::Reshape);
                let row = x.row_len();
                (x.into_values(), vec![batch, row], cache)
            }
            Layer::Residual { body, shortcut } => {
                let name = format!("{prefix}{i}");
                let mut body_tape = tape.is_some().then(Vec::new);
                let mut skip_tape = tape.is_some().then(Vec::new);
                let a = run(body, x.clone(), pass, body_tape.as_mut(), &format!("{name}.body."))?;
                let b = run(shortcut, x, pass, skip_tape.as_mut(), &format!("{name}.skip."))?;
                let out_dims = a.dims().to_vec();
                let y: Vec<f32> = a.values().iter().zip(b.values()).map(|(p, q)| p + q).collect();
                let cache = tape
                    .is_some()
                    .then(|| Cache::Residual { body: body_tape.unwrap(), shortcut: skip_tape.unwrap() });
                (y, out_dims, cache)
            }
        };
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric { location: format!("layer {prefix}{i} ({})", layer.kind()) });
        }
        if let (Some(t), Some(c)) = (tape.as_deref_mut(), cache) {
            t.push(c);
        }
        x = DenseTensor::from_dims(out_dims, values)?;
    }
    Ok(x)
}

fn masked_grad(grad: &mut [f32], mask: Option<&TaskMaskSet>, id: ParamId) {
    if let Some(m) = mask {
        let bits = m.layer(id.0);
        for (p, g) in grad.iter_mut().enumerate() {
            if !bits.contains(p) {
                *g = 0.0;
            }
        }
    }
}

fn back(
    layers: &[Layer],
    caches: Vec<Cache>,
    mut dy: Vec<f32>,
    store: &mut ParamStore,
    mask: Option<&TaskMaskSet>,
    norm: &mut NormStats,
) -> Result<Vec<f32>> {
    if caches.len() != layers.len() {
        return Err(Error::State("tape does not match graph".into()));
    }
    for (layer, cache) in layers.iter().zip(caches).rev() {
        dy = match (layer, cache) {
            (Layer::Linear { weight, bias, inputs, outputs }, Cache::Linear { input, batch }) => {
                let w = effective(store, mask, *weight).into_owned();
                let mut dw = vec![0.0; w.len()];
                let mut db = vec![0.0; *outputs];
                let dx = ops::linear_backward(&input, &w, &dy, &mut dw, &mut db, batch, *inputs, *outputs);
                accumulate(store, mask, *weight, &mut dw);
                accumulate(store, mask, *bias, &mut db);
                dx
            }
            (Layer::Conv2d { weight, bias, out_channels, .. }, Cache::Conv { input, batch, geometry }) => {
                let w = effective(store, mask, *weight).into_owned();
                let mut dw = vec![0.0; w.len()];
                let mut db = vec![0.0; *out_channels];
                let dx = ops::conv_backward(&input, &w, &dy, &mut dw, &mut db, batch, &geometry);
                accumulate(store, mask, *weight, &mut dw);
                accumulate(store, mask, *bias, &mut db);
                dx
            }
            (Layer::BatchNorm { slot, channels }, Cache::Norm { xhat, inv_std, batch, spatial }) => {
                let st = &mut norm.layers[*slot];
                let gamma = st.gamma.values.values().to_vec();
                ops::norm_backward(
                    &xhat,
                    &inv_std,
                    &gamma,
                    &dy,
                    st.gamma.grads.values_mut(),
                    st.beta.grads.values_mut(),
                    batch,
                    *channels,
                    spatial,
                )
            }
            (Layer::Relu, Cache::Relu { output }) => {
                dy.iter().zip(&output).map(|(&g, &y)| if y > 0.0 { g } else { 0.0 }).collect()
            }
            (Layer::AvgPool { kernel }, Cache::Pool { planes, h, w }) => ops::avgpool_backward(&dy, planes, h, w, *kernel),
            (Layer::GlobalAvgPool, Cache::GlobalPool { planes, spatial }) => {
                let mut dx = vec![0.0; planes * spatial];
                for p in 0..planes {
                    let g = dy[p] / spatial as f32;
                    dx[p * spatial..(p + 1) * spatial].fill(g);
                }
                dx
            }
            (Layer::Flatten, Cache::Reshape) => dy,
            (Layer::Residual { body, shortcut }, Cache::Residual { body: bc, shortcut: sc }) => {
                let da = back(body, bc, dy.clone(), store, mask, norm)?;
                let db = back(shortcut, sc, dy, store, mask, norm)?;
                da.iter().zip(&db).map(|(p, q)| p + q).collect()
            }
            _ => return Err(Error::State("tape does not match graph".into())),
        };
    }
    Ok(dy)
}

fn accumulate(store: &mut ParamStore, mask: Option<&TaskMaskSet>, id: ParamId, grad: &mut [f32]) {
    masked_grad(grad, mask, id);
    for (g, d) in store.get_mut(id).grads_mut().iter_mut().zip(grad.iter()) {
        *g += d;
    }
}

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. the logits.
pub fn cross_entropy(logits: &DenseTensor, labels: &[usize]) -> Result<(f64, DenseTensor)> {
    let (batch, classes) = (logits.batch(), logits.row_len());
    if labels.len() != batch {
        return Err(Error::Input(format!("{} labels for a batch of {batch}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Input(format!("label {bad} out of range for {classes} classes")));
    }
    let mut grad = vec![0.0f32; batch * classes];
    let mut loss = 0.0f64;
    for (n, &label) in labels.iter().enumerate() {
        let row = logits.row(n);
        let max = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
        let exps: Vec<f64> = row.iter().map(|&v| (v as f64 - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        loss += z.ln() + max - row[label] as f64;
        for k in 0..classes {
            let p = exps[k] / z;
            let target = if k == label { 1.0 } else { 0.0 };
            grad[n * classes + k] = ((p - target) / batch as f64) as f32;
        }
    }
    Ok((loss / batch as f64, DenseTensor::from_dims(vec![batch, classes], grad)?))
}
