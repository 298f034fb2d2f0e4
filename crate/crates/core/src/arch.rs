//! Declarative network descriptions and their construction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ComputeGraph, Layer};
use crate::params::{Init, MaskedParamTensor, ParamId, ParamStore};
use crate::rng;
use crate::tensor::TensorShape;

/// The shared feature extractor. Task heads are added per task on top of
/// its output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ArchSpec {
    /// Fully connected `Linear -> [BatchNorm] -> ReLU` stack.
    Mlp {
        hidden: Vec<usize>,
        #[serde(default)]
        batchnorm: bool,
    },
    /// One stage per entry of `channels`: `Conv -> [BatchNorm] -> ReLU`,
    /// optionally a residual basic block, then 2x2 average pooling. The
    /// stages are followed by flattening (or global pooling) and an optional
    /// fully connected stack.
    Cnn {
        channels: Vec<usize>,
        #[serde(default = "default_kernel")]
        kernel: usize,
        #[serde(default)]
        batchnorm: bool,
        #[serde(default)]
        residual: bool,
        #[serde(default)]
        global_pool: bool,
        #[serde(default)]
        fc: Vec<usize>,
    },
}

fn default_kernel() -> usize {
    3
}

struct Builder {
    store: ParamStore,
    rng: rng::Rng,
    norms: usize,
}

impl Builder {
    fn linear(&mut self, name: &str, inputs: usize, outputs: usize) -> Layer {
        let weight = self.param(format!("{name}.weight"), vec![outputs, inputs], Init::KaimingUniform { fan_in: inputs });
        let bias = self.param(format!("{name}.bias"), vec![outputs], Init::FanInUniform { fan_in: inputs });
        Layer::Linear { weight, bias, inputs, outputs }
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, kernel: usize) -> Layer {
        let fan_in = cin * kernel * kernel;
        let weight =
            self.param(format!("{name}.weight"), vec![cout, cin, kernel, kernel], Init::KaimingUniform { fan_in });
        let bias = self.param(format!("{name}.bias"), vec![cout], Init::FanInUniform { fan_in });
        Layer::Conv2d { weight, bias, in_channels: cin, out_channels: cout, kernel, stride: 1, padding: kernel / 2 }
    }

    fn norm(&mut self, channels: usize) -> Layer {
        self.norms += 1;
        Layer::BatchNorm { slot: self.norms - 1, channels }
    }

    fn param(&mut self, name: String, dims: Vec<usize>, init: Init) -> ParamId {
        let shape = TensorShape::new(dims).expect("positive dims");
        let t = MaskedParamTensor::new(name, shape, init, &mut self.rng);
        self.store.push(t)
    }
}

impl ArchSpec {
    pub fn build(&self, input: &TensorShape, seed: u64) -> Result<(ComputeGraph, ParamStore)> {
        let mut b = Builder { store: ParamStore::new(), rng: rng::seeded(seed), norms: 0 };
        let mut layers = Vec::new();
        match self {
            ArchSpec::Mlp { hidden, batchnorm } => {
                if input.rank() > 1 {
                    layers.push(Layer::Flatten);
                }
                let mut width = input.numel();
                for (i, &h) in hidden.iter().enumerate() {
                    if h == 0 {
                        return Err(Error::Config("hidden width must be positive".into()));
                    }
                    layers.push(b.linear(&format!("fc{i}"), width, h));
                    if *batchnorm {
                        layers.push(b.norm(h));
                    }
                    layers.push(Layer::Relu);
                    width = h;
                }
            }
            ArchSpec::Cnn { channels, kernel, batchnorm, residual, global_pool, fc } => {
                let d = input.dims();
                if d.len() != 3 {
                    return Err(Error::Config(format!("cnn needs [C, H, W] input, got {input}")));
                }
                if *kernel % 2 == 0 || channels.contains(&0) {
                    return Err(Error::Config("cnn kernel must be odd and channels positive".into()));
                }
                let (mut c, mut h, mut w) = (d[0], d[1], d[2]);
                for (i, &out) in channels.iter().enumerate() {
                    layers.push(b.conv(&format!("conv{i}"), c, out, *kernel));
                    if *batchnorm {
                        layers.push(b.norm(out));
                    }
                    layers.push(Layer::Relu);
                    if *residual {
                        let mut body = vec![b.conv(&format!("block{i}.a"), out, out, *kernel)];
                        if *batchnorm {
                            body.push(b.norm(out));
                        }
                        body.push(Layer::Relu);
                        body.push(b.conv(&format!("block{i}.b"), out, out, *kernel));
                        if *batchnorm {
                            body.push(b.norm(out));
                        }
                        layers.push(Layer::Residual { body, shortcut: Vec::new() });
                        layers.push(Layer::Relu);
                    }
                    if h >= 2 && w >= 2 {
                        layers.push(Layer::AvgPool { kernel: 2 });
                        h /= 2;
                        w /= 2;
                    }
                    c = out;
                }
                let mut width = if *global_pool {
                    layers.push(Layer::GlobalAvgPool);
                    c
                } else {
                    layers.push(Layer::Flatten);
                    c * h * w
                };
                for (i, &hid) in fc.iter().enumerate() {
                    layers.push(b.linear(&format!("fc{i}"), width, hid));
                    if *batchnorm {
                        layers.push(b.norm(hid));
                    }
                    layers.push(Layer::Relu);
                    width = hid;
                }
            }
        }
        let graph = ComputeGraph::new(input.clone(), layers, &b.store)?;
        Ok((graph, b.store))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mlp_feature_dim() {
        let (g, store) = ArchSpec::Mlp { hidden: vec![16, 8], batchnorm: true }
            .build(&TensorShape::new(vec![1, 2, 5]).unwrap(), 0)
            .unwrap();
        assert_eq!(g.feature_dim(), 8);
        assert_eq!(store.len(), 4);
        assert_eq!(g.norm_channels(), &[16, 8]);
        assert_eq!(g.prunable().len(), 2);
    }

    #[test]
    fn residual_cnn_shapes() {
        let spec = ArchSpec::Cnn {
            channels: vec![4, 8],
            kernel: 3,
            batchnorm: true,
            residual: true,
            global_pool: false,
            fc: vec![10],
        };
        let (g, store) = spec.build(&TensorShape::new(vec![1, 8, 8]).unwrap(), 1).unwrap();
        assert_eq!(g.feature_dim(), 10);
        // 2 stages x (stem + 2 block convs) + 1 fc, each weight + bias
        assert_eq!(store.len(), 14);
        assert_eq!(g.prunable().len(), 7);
    }

    #[test]
    fn spec_round_trips_through_toml() {
        let spec: ArchSpec = toml::from_str("kind = \"cnn\"\nchannels = [8, 16]\nbatchnorm = true\nfc = [64]").unwrap();
        assert!(matches!(spec, ArchSpec::Cnn { kernel: 3, .. }));
    }
}
