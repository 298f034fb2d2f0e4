//! Straightforward f64 re-implementation of the network forward pass.
//!
//! Used as the finite-difference oracle for the f32 autodiff engine; shares
//! only the layer descriptors with the library, none of its kernels.

use cps::graph::{ComputeGraph, Layer};
use cps::params::ParamStore;
use cps::TaskMaskSet;

pub struct RefParams {
    pub tensors: Vec<Vec<f64>>,
    pub gamma: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
}

impl RefParams {
    pub fn from_store(store: &ParamStore, mask: Option<&TaskMaskSet>, norm_channels: &[usize]) -> Self {
        let tensors = store
            .tensors()
            .iter()
            .enumerate()
            .map(|(k, t)| {
                t.values()
                    .values()
                    .iter()
                    .enumerate()
                    .map(|(p, &v)| match mask {
                        Some(m) if !m.layer(k).contains(p) => 0.0,
                        _ => v as f64,
                    })
                    .collect()
            })
            .collect();
        RefParams {
            tensors,
            gamma: norm_channels.iter().map(|&c| vec![1.0; c]).collect(),
            beta: norm_channels.iter().map(|&c| vec![0.0; c]).collect(),
        }
    }
}

/// Activation tensor: `[batch, channels, h, w]` with `h = w = 1` for vectors.
#[derive(Clone)]
pub struct Act {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub v: Vec<f64>,
}

impl Act {
    fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.v[((n * self.c + c) * self.h + y) * self.w + x]
    }
}

/// Sign pattern of every ReLU input, used to detect kinks between two
/// perturbed evaluations.
pub type Kinks = Vec<bool>;

pub fn forward(graph: &ComputeGraph, p: &RefParams, input: Act, kinks: &mut Kinks) -> Act {
    run(graph.layers(), p, input, kinks)
}

fn run(layers: &[Layer], p: &RefParams, mut a: Act, kinks: &mut Kinks) -> Act {
    for layer in layers {
        a = match layer {
            Layer::Linear { weight, bias, inputs, outputs } => {
                let (w, b) = (&p.tensors[weight.0], &p.tensors[bias.0]);
                let x = a.v;
                let mut v = vec![0.0; a.n * outputs];
                for n in 0..a.n {
                    for j in 0..*outputs {
                        let mut s = b[j];
                        for i in 0..*inputs {
                            s += w[j * inputs + i] * x[n * inputs + i];
                        }
                        v[n * outputs + j] = s;
                    }
                }
                Act { n: a.n, c: *outputs, h: 1, w: 1, v }
            }
            Layer::Conv2d { weight, bias, in_channels, out_channels, kernel, stride, padding } => {
                let (w, b) = (&p.tensors[weight.0], &p.tensors[bias.0]);
                let oh = (a.h + 2 * padding - kernel) / stride + 1;
                let ow = (a.w + 2 * padding - kernel) / stride + 1;
                let mut v = vec![0.0; a.n * out_channels * oh * ow];
                for n in 0..a.n {
                    for o in 0..*out_channels {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut s = b[o];
                                for c in 0..*in_channels {
                                    for ky in 0..*kernel {
                                        for kx in 0..*kernel {
                                            let iy = (oy * stride + ky) as isize - *padding as isize;
                                            let ix = (ox * stride + kx) as isize - *padding as isize;
                                            if iy < 0 || ix < 0 || iy >= a.h as isize || ix >= a.w as isize {
                                                continue;
                                            }
                                            s += w[((o * in_channels + c) * kernel + ky) * kernel + kx]
                                                * a.at(n, c, iy as usize, ix as usize);
                                        }
                                    }
                                }
                                v[((n * out_channels + o) * oh + oy) * ow + ox] = s;
                            }
                        }
                    }
                }
                Act { n: a.n, c: *out_channels, h: oh, w: ow, v }
            }
            Layer::BatchNorm { slot, channels } => {
                let sp = a.h * a.w;
                let m = (a.n * sp) as f64;
                let mut v = a.v.clone();
                for c in 0..*channels {
                    let mut mean = 0.0;
                    for n in 0..a.n {
                        for s in 0..sp {
                            mean += a.v[(n * a.c + c) * sp + s];
                        }
                    }
                    mean /= m;
                    let mut var = 0.0;
                    for n in 0..a.n {
                        for s in 0..sp {
                            var += (a.v[(n * a.c + c) * sp + s] - mean).powi(2);
                        }
                    }
                    var /= m;
                    let inv = 1.0 / (var + 1e-5).sqrt();
                    for n in 0..a.n {
                        for s in 0..sp {
                            let i = (n * a.c + c) * sp + s;
                            v[i] = p.gamma[*slot][c] * (a.v[i] - mean) * inv + p.beta[*slot][c];
                        }
                    }
                }
                Act { v, ..a }
            }
            Layer::Relu => {
                kinks.extend(a.v.iter().map(|&x| x > 0.0));
                Act { v: a.v.iter().map(|&x| x.max(0.0)).collect(), ..a }
            }
            Layer::AvgPool { kernel } => {
                let (oh, ow) = (a.h / kernel, a.w / kernel);
                let mut v = vec![0.0; a.n * a.c * oh * ow];
                for n in 0..a.n {
                    for c in 0..a.c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut s = 0.0;
                                for dy in 0..*kernel {
                                    for dx in 0..*kernel {
                                        s += a.at(n, c, oy * kernel + dy, ox * kernel + dx);
                                    }
                                }
                                v[((n * a.c + c) * oh + oy) * ow + ox] = s / (kernel * kernel) as f64;
                            }
                        }
                    }
                }
                Act { n: a.n, c: a.c, h: oh, w: ow, v }
            }
            Layer::GlobalAvgPool => {
                let sp = a.h * a.w;
                let v = a.v.chunks(sp).map(|p| p.iter().sum::<f64>() / sp as f64).collect();
                Act { n: a.n, c: a.c, h: 1, w: 1, v }
            }
            Layer::Flatten => Act { n: a.n, c: a.c * a.h * a.w, h: 1, w: 1, v: a.v },
            Layer::Residual { body, shortcut } => {
                let x = run(body, p, a.clone(), kinks);
                let y = run(shortcut, p, a, kinks);
                Act { v: x.v.iter().zip(&y.v).map(|(p, q)| p + q).collect(), ..x }
            }
        };
    }
    a
}

/// Mean softmax cross-entropy of `logits = features * head_w^T + head_b`.
pub fn head_loss(features: &Act, head_w: &[f64], head_b: &[f64], labels: &[usize]) -> f64 {
    let d = features.c * features.h * features.w;
    let k = head_b.len();
    let mut total = 0.0;
    for n in 0..features.n {
        let z: Vec<f64> = (0..k)
            .map(|j| head_b[j] + (0..d).map(|i| head_w[j * d + i] * features.v[n * d + i]).sum::<f64>())
            .collect();
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = z.iter().map(|v| (v - m).exp()).sum::<f64>().ln() + m;
        total += lse - z[labels[n]];
    }
    total / features.n as f64
}
