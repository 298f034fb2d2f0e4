//! Self-describing snapshots of a learner after a task.
//!
//! Layout: the magic `CPNS1`, a little-endian `u32` manifest length, the
//! JSON manifest, then a little-endian binary payload. The manifest carries
//! the experiment config and its hash, the run seed and class ordering, the
//! registered tasks, the evaluation history so far, and the length and
//! SHA-256 of the payload. The payload holds, in order:
//!
//! - per backbone tensor: values (`f32`), then owners (`u16`, 0 = free);
//! - per task, per backbone tensor: the packed mask words (`u64`);
//! - per task: head weight and bias (`f32`), for each norm layer gamma,
//!   beta, running mean and running variance (`f32`), and the stored
//!   selection scores (`f64`).
//!
//! Writing is a pure function of the contents, so save, load and save again
//! gives the same bytes.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bitset::BitSet;
use crate::config::ExperimentConfig;
use crate::controller::{Learner, TaskEntry, TaskRegistry};
use crate::error::{Error, Result};
use crate::graph::{NormState, NormStats};
use crate::head::Head;
use crate::params::{MaskedParamTensor, Param, ParamStore, TaskId, TaskMaskSet};
use crate::rng::{self, streams};
use crate::runner::RunHistory;
use crate::tensor::{DenseTensor, TensorShape};

pub const MAGIC: &[u8; 5] = b"CPNS1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorRecord {
    name: String,
    dims: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskRecord {
    id: u16,
    classes: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    config_hash: String,
    config: ExperimentConfig,
    seed: u64,
    ordering: Vec<usize>,
    input: Vec<usize>,
    tensors: Vec<TensorRecord>,
    tasks: Vec<TaskRecord>,
    history: RunHistory,
    payload_bytes: u64,
    payload_sha256: String,
}

/// A learner together with the run it belongs to.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ExperimentConfig,
    /// Run seed; the learner was built with the same seed.
    pub seed: u64,
    pub ordering: Vec<usize>,
    pub history: RunHistory,
    pub learner: Learner,
}

struct Writer(Vec<u8>);

impl Writer {
    fn f32s(&mut self, v: &[f32]) {
        v.iter().for_each(|x| self.0.extend_from_slice(&x.to_le_bytes()));
    }

    fn f64s(&mut self, v: &[f64]) {
        v.iter().for_each(|x| self.0.extend_from_slice(&x.to_le_bytes()));
    }

    fn u16s(&mut self, v: &[u16]) {
        v.iter().for_each(|x| self.0.extend_from_slice(&x.to_le_bytes()));
    }

    fn u64s(&mut self, v: &[u64]) {
        v.iter().for_each(|x| self.0.extend_from_slice(&x.to_le_bytes()));
    }
}

/// Reads fixed-width little-endian values; `base` is the payload's file
/// offset so errors point into the file.
struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    base: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format {
                offset: (self.base + self.buf.len()) as u64,
                message: format!("payload ends early: need {n} bytes at offset {}", self.base + self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        Ok(self.take(4 * n)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self.take(8 * n)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn u16s(&mut self, n: usize) -> Result<Vec<u16>> {
        Ok(self.take(2 * n)?.chunks_exact(2).map(|c| u16::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn u64s(&mut self, n: usize) -> Result<Vec<u64>> {
        Ok(self.take(8 * n)?.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format { offset: offset as u64, message: message.into() }
}

impl Checkpoint {
    fn payload(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        let store = self.learner.store();
        for t in store.tensors() {
            w.f32s(t.values().values());
            w.u16s(t.owners_raw());
        }
        let entries = self.learner.registry().entries();
        for e in entries {
            for l in e.mask.layers() {
                w.u64s(l.words());
            }
        }
        for e in entries {
            w.f32s(e.head.weight.values.values());
            w.f32s(e.head.bias.values.values());
            for n in &e.norm.layers {
                w.f32s(n.gamma.values.values());
                w.f32s(n.beta.values.values());
                w.f32s(&n.running_mean);
                w.f32s(&n.running_var);
            }
            w.f64s(&e.scores);
        }
        w.0
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let learner = &self.learner;
        if learner.seed() != self.seed || *learner.config() != self.config.learner() {
            return Err(Error::State("learner was not built from this checkpoint's config and seed".into()));
        }
        let payload = self.payload();
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            config_hash: self.config.hash(),
            config: self.config.clone(),
            seed: self.seed,
            ordering: self.ordering.clone(),
            input: learner.graph().input_shape().dims().to_vec(),
            tensors: learner
                .store()
                .tensors()
                .iter()
                .map(|t| TensorRecord { name: t.name().to_string(), dims: t.shape().dims().to_vec() })
                .collect(),
            tasks: learner.registry().entries().iter().map(|e| TaskRecord { id: e.id.0, classes: e.classes.clone() }).collect(),
            history: self.history.clone(),
            payload_bytes: payload.len() as u64,
            payload_sha256: hex::encode(Sha256::digest(&payload)),
        };
        let json = serde_json::to_vec(&manifest).map_err(|e| Error::State(format!("manifest: {e}")))?;
        let len = u32::try_from(json.len()).map_err(|_| Error::State("manifest exceeds 4 GiB".into()))?;
        let mut out = Vec::with_capacity(MAGIC.len() + 4 + json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() {
            return Err(format_err(bytes.len(), "file ends inside the magic"));
        }
        if &bytes[..MAGIC.len()] != MAGIC {
            return Err(format_err(0, format!("bad magic {:?}, expected {:?}", &bytes[..MAGIC.len()], MAGIC)));
        }
        let head = MAGIC.len() + 4;
        if bytes.len() < head {
            return Err(format_err(bytes.len(), "file ends inside the manifest length"));
        }
        let len = u32::from_le_bytes(bytes[MAGIC.len()..head].try_into().unwrap()) as usize;
        if bytes.len() - head < len {
            return Err(format_err(bytes.len(), format!("file ends inside the {len}-byte manifest")));
        }
        let manifest: Manifest = serde_json::from_slice(&bytes[head..head + len])
            .map_err(|e| format_err(head + e.column().saturating_sub(1), format!("manifest: {e}")))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(format_err(
                head,
                format!("format version {}, this build reads {FORMAT_VERSION}", manifest.format_version),
            ));
        }
        if manifest.config_hash != manifest.config.hash() {
            return Err(format_err(head, "config hash does not match the stored config"));
        }
        let start = head + len;
        let payload = &bytes[start..];
        if (payload.len() as u64) < manifest.payload_bytes {
            return Err(format_err(bytes.len(), format!("payload truncated: {} of {} bytes", payload.len(), manifest.payload_bytes)));
        }
        if payload.len() as u64 > manifest.payload_bytes {
            return Err(format_err(start + manifest.payload_bytes as usize, "trailing bytes after payload"));
        }
        if hex::encode(Sha256::digest(payload)) != manifest.payload_sha256 {
            return Err(format_err(start, "payload hash mismatch"));
        }
        Self::assemble(manifest, Reader { buf: payload, pos: 0, base: start })
    }

    fn assemble(m: Manifest, mut r: Reader) -> Result<Self> {
        let config = m.config;
        let input = TensorShape::new(m.input)?;
        let (graph, fresh) = config.arch.build(&input, rng::derive_seed(m.seed, streams::INIT))?;
        let layout: Vec<TensorRecord> = fresh
            .tensors()
            .iter()
            .map(|t| TensorRecord { name: t.name().to_string(), dims: t.shape().dims().to_vec() })
            .collect();
        if layout != m.tensors {
            return Err(format_err(0, "tensor layout does not match the architecture"));
        }
        let mut values = Vec::new();
        let mut owners = Vec::new();
        for t in fresh.tensors() {
            values.push(r.f32s(t.len())?);
            owners.push(r.u16s(t.len())?);
        }
        let mut task_masks = Vec::new();
        for _ in &m.tasks {
            let mut layers = Vec::new();
            for t in fresh.tensors() {
                let words = r.u64s(t.len().div_ceil(64))?;
                layers.push(BitSet::from_words(t.len(), words).ok_or_else(|| format_err(r.base + r.pos, "mask has bits past its length"))?);
            }
            task_masks.push(TaskMaskSet::new(layers));
        }
        let mut store = ParamStore::new();
        for (i, ((t, v), o)) in fresh.tensors().iter().zip(values).zip(owners).enumerate() {
            let masks: BTreeMap<TaskId, BitSet> =
                m.tasks.iter().zip(&task_masks).map(|(rec, ms)| (TaskId(rec.id), ms.layer(i).clone())).collect();
            let v = DenseTensor::new(t.shape().clone(), v)?;
            store.push(MaskedParamTensor::restore(t.name().to_string(), t.init(), v, o, masks)?);
        }
        let features = graph.feature_dim();
        let mut registry = TaskRegistry::default();
        for (rec, mask) in m.tasks.iter().zip(task_masks) {
            let k = rec.classes.len();
            let head = Head::from_values(
                DenseTensor::from_dims(vec![k, features], r.f32s(k * features)?)?,
                DenseTensor::from_dims(vec![k], r.f32s(k)?)?,
            )?;
            let mut norm = NormStats::default();
            for &c in graph.norm_channels() {
                let gamma = Param::new(DenseTensor::from_dims(vec![c], r.f32s(c)?)?);
                let beta = Param::new(DenseTensor::from_dims(vec![c], r.f32s(c)?)?);
                norm.layers.push(NormState { gamma, beta, running_mean: r.f32s(c)?, running_var: r.f32s(c)? });
            }
            let scores = r.f64s(k * features)?;
            registry.push(TaskEntry { id: TaskId(rec.id), classes: rec.classes.clone(), mask, head, norm, scores })?;
        }
        if r.pos != r.buf.len() {
            return Err(format_err(r.base + r.pos, "payload longer than its contents"));
        }
        let learner = Learner::from_parts(graph, store, registry, config.learner(), m.seed)?;
        Ok(Checkpoint { config, seed: m.seed, ordering: m.ordering, history: m.history, learner })
    }

    /// Writes through a temporary file and a rename.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
