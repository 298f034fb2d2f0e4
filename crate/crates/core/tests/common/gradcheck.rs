use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cps::arch::ArchSpec;
use cps::graph::NormStats;
use cps::head::{loss_and_backward, Head};
use cps::{DenseTensor, TensorShape};

use super::reference::{self, Act, RefParams};

pub struct GradReport {
    pub checked: usize,
    /// Coordinates resampled because a ReLU changed sides within +-h.
    pub skipped: usize,
    pub max_rel: f64,
    /// Coordinates whose gradient vanishes (e.g. biases feeding batch
    /// normalization); relative error is undefined there, so they are
    /// compared absolutely.
    pub vanishing: usize,
    pub max_abs_vanishing: f64,
    /// Same comparison against the plain central difference at `STEP`,
    /// without extrapolation (reported, not asserted).
    pub max_rel_plain: f64,
}

impl GradReport {
    pub fn passes(&self) -> bool {
        self.max_rel < MAX_REL && self.max_abs_vanishing < VANISHING
    }
}

pub const STEP: f64 = 1e-3;
pub const MAX_REL: f64 = 1e-4;
/// Gradients below this magnitude (in both routes) are compared absolutely.
pub const VANISHING: f64 = 1e-6;

/// Which buffer a sampled coordinate lives in.
#[derive(Clone, Copy)]
enum Coord {
    Store(usize, usize),
    Gamma(usize, usize),
    Beta(usize, usize),
    HeadW(usize),
    HeadB(usize),
}

/// Compares autodiff gradients with central differences (step `STEP`,
/// Richardson-extrapolated with `STEP / 2`) on `samples` randomly chosen
/// coordinates. Coordinates whose perturbation flips a ReLU
/// are skipped (the loss is not differentiable across the kink).
pub fn check_network(
    spec: &ArchSpec,
    input: &TensorShape,
    batch: usize,
    classes: usize,
    samples: usize,
    seed: u64,
) -> GradReport {
    let (graph, mut store) = spec.build(input, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut head = Head::new(graph.feature_dim(), classes, &mut cps::rng::seeded(seed + 1));
    let mut norm = NormStats::fresh(&graph);
    for st in &mut norm.layers {
        for v in st.gamma.values.values_mut() {
            *v = rng.random_range(0.5..1.5);
        }
        for v in st.beta.values.values_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
    }
    let x: Vec<f32> = (0..batch * input.numel()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let x = DenseTensor::new(input.batched(batch).unwrap(), x).unwrap();
    let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..classes)).collect();

    store.zero_grad();
    loss_and_backward(&graph, &mut store, &mut head, &mut norm.clone(), None, &x, &labels).unwrap();
    // norm grads live in the clone above; recompute them on the real one
    let mut norm_grads = norm.clone();
    norm_grads.zero_grad();
    let mut store2 = store.clone();
    let mut head2 = head.clone();
    store2.zero_grad();
    head2.zero_grad();
    loss_and_backward(&graph, &mut store2, &mut head2, &mut norm_grads, None, &x, &labels).unwrap();

    let mut base = RefParams::from_store(&store, None, graph.norm_channels());
    for (k, st) in norm.layers.iter().enumerate() {
        base.gamma[k] = st.gamma.values.values().iter().map(|&v| v as f64).collect();
        base.beta[k] = st.beta.values.values().iter().map(|&v| v as f64).collect();
    }
    let head_w: Vec<f64> = head.weight.values.values().iter().map(|&v| v as f64).collect();
    let head_b: Vec<f64> = head.bias.values.values().iter().map(|&v| v as f64).collect();
    let act = {
        let d = input.dims();
        let (c, h, w) = match d.len() {
            1 => (d[0], 1, 1),
            3 => (d[0], d[1], d[2]),
            _ => panic!("unsupported input rank"),
        };
        Act { n: batch, c, h, w, v: x.values().iter().map(|&v| v as f64).collect() }
    };

    let mut coords = Vec::new();
    for (k, t) in store.tensors().iter().enumerate() {
        coords.extend((0..t.len()).map(|p| Coord::Store(k, p)));
    }
    for (k, st) in norm.layers.iter().enumerate() {
        coords.extend((0..st.gamma.values.len()).map(|p| Coord::Gamma(k, p)));
        coords.extend((0..st.beta.values.len()).map(|p| Coord::Beta(k, p)));
    }
    coords.extend((0..head_w.len()).map(Coord::HeadW));
    coords.extend((0..head_b.len()).map(Coord::HeadB));

    let eval = |params: &RefParams, hw: &[f64], hb: &[f64]| {
        let mut kinks = Vec::new();
        let f = reference::forward(&graph, params, act.clone(), &mut kinks);
        (reference::head_loss(&f, hw, hb, &labels), kinks)
    };

    let mut report = GradReport { checked: 0, skipped: 0, max_rel: 0.0, vanishing: 0, max_abs_vanishing: 0.0, max_rel_plain: 0.0 };
    let mut attempts = 0;
    while report.checked < samples && attempts < samples * 20 {
        attempts += 1;
        let c = coords[rng.random_range(0..coords.len())];
        let autodiff = match c {
            Coord::Store(k, p) => store2.tensors()[k].grads().values()[p] as f64,
            Coord::Gamma(k, p) => norm_grads.layers[k].gamma.grads.values()[p] as f64,
            Coord::Beta(k, p) => norm_grads.layers[k].beta.grads.values()[p] as f64,
            Coord::HeadW(p) => head2.weight.grads.values()[p] as f64,
            Coord::HeadB(p) => head2.bias.grads.values()[p] as f64,
        };
        let shifted = |delta: f64| {
            let mut params = RefParams { tensors: base.tensors.clone(), gamma: base.gamma.clone(), beta: base.beta.clone() };
            let (mut hw, mut hb) = (head_w.clone(), head_b.clone());
            match c {
                Coord::Store(k, p) => params.tensors[k][p] += delta,
                Coord::Gamma(k, p) => params.gamma[k][p] += delta,
                Coord::Beta(k, p) => params.beta[k][p] += delta,
                Coord::HeadW(p) => hw[p] += delta,
                Coord::HeadB(p) => hb[p] += delta,
            }
            eval(&params, &hw, &hb)
        };
        let (lp, kp) = shifted(STEP);
        let (lm, km) = shifted(-STEP);
        let (lp2, kp2) = shifted(STEP / 2.0);
        let (lm2, km2) = shifted(-STEP / 2.0);
        if kp != km || kp2 != km2 || kp != kp2 {
            report.skipped += 1;
            continue;
        }
        let central = (lp - lm) / (2.0 * STEP);
        let central_half = (lp2 - lm2) / STEP;
        // one Richardson step cancels the O(h^2) truncation term
        let numeric = (4.0 * central_half - central) / 3.0;
        let scale = autodiff.abs().max(numeric.abs());
        if scale < VANISHING {
            report.max_abs_vanishing = report.max_abs_vanishing.max((autodiff - numeric).abs());
            report.vanishing += 1;
        } else {
            report.max_rel = report.max_rel.max((autodiff - numeric).abs() / scale);
            report.max_rel_plain = report.max_rel_plain.max((autodiff - central).abs() / scale);
        }
        report.checked += 1;
    }
    report
}
