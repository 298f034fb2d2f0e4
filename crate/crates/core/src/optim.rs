//! SGD with momentum and Adam, with L2 weight decay and step-decay schedules.
//!
//! Every update goes through a lock set: locked coordinates have their
//! gradient cleared before anything else happens, receive no weight decay,
//! and keep both their value and their moment buffers bit-for-bit.

use serde::{Deserialize, Serialize};

use crate::bitset::BitSet;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimKind {
    Sgd {
        #[serde(default)]
        momentum: f64,
    },
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_eps() -> f64 {
    1e-8
}

/// One learning-rate drop: from `epoch` on (0-based), divide by `divisor`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Milestone {
    pub epoch: usize,
    pub divisor: f64,
}

// `deny_unknown_fields` does not compose with `flatten`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimSpec {
    #[serde(flatten)]
    pub kind: OptimKind,
    pub lr: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub schedule: Vec<Milestone>,
}

impl OptimSpec {
    pub fn sgd(lr: f64, momentum: f64) -> Self {
        OptimSpec { kind: OptimKind::Sgd { momentum }, lr, weight_decay: 0.0, schedule: Vec::new() }
    }

    pub fn adam(lr: f64) -> Self {
        OptimSpec {
            kind: OptimKind::Adam { beta1: default_beta1(), beta2: default_beta2(), eps: default_eps() },
            lr,
            weight_decay: 0.0,
            schedule: Vec::new(),
        }
    }

    pub fn with_weight_decay(mut self, weight_decay: f64) -> Self {
        self.weight_decay = weight_decay;
        self
    }

    /// `pairs` are `(epoch, divisor)`.
    pub fn with_schedule(mut self, pairs: &[(usize, f64)]) -> Self {
        self.schedule = pairs.iter().map(|&(epoch, divisor)| Milestone { epoch, divisor }).collect();
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("optimizer: {m}")));
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        match self.kind {
            OptimKind::Sgd { momentum } if !(0.0..1.0).contains(&momentum) => {
                return bad(format!("momentum must lie in [0, 1), got {momentum}"));
            }
            OptimKind::Adam { beta1, beta2, eps }
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) =>
            {
                return bad("adam needs beta1, beta2 in [0, 1) and eps > 0".into());
            }
            _ => {}
        }
        for (i, m) in self.schedule.iter().enumerate() {
            if !(m.divisor > 1.0) {
                return bad(format!("schedule divisor must exceed 1, got {}", m.divisor));
            }
            if i > 0 && m.epoch <= self.schedule[i - 1].epoch {
                return bad("schedule epochs must be strictly increasing".into());
            }
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.schedule.iter().filter(|m| epoch >= m.epoch).fold(self.lr, |lr, m| lr / m.divisor)
    }
}

/// A parameter buffer handed to [`Optimizer::step`].
pub struct ParamSlot<'a> {
    pub name: &'a str,
    pub values: &'a mut [f32],
    pub grads: &'a mut [f32],
    /// Coordinates that must not move.
    pub locked: Option<&'a BitSet>,
}

#[derive(Clone, Debug, Default)]
struct Moments {
    first: Vec<f32>,
    second: Vec<f32>,
}

#[derive(Clone, Debug)]
pub struct Optimizer {
    spec: OptimSpec,
    moments: Vec<Moments>,
    steps: u64,
}

impl Optimizer {
    pub fn new(spec: OptimSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Optimizer { spec, moments: Vec::new(), steps: 0 })
    }

    pub fn spec(&self) -> &OptimSpec {
        &self.spec
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Drops all moment buffers and the step count.
    pub fn reset(&mut self) {
        self.moments.clear();
        self.steps = 0;
    }

    /// Moment buffers for slot `i` (empty until its first step).
    pub fn moments(&self, i: usize) -> (&[f32], &[f32]) {
        self.moments.get(i).map(|m| (&m.first[..], &m.second[..])).unwrap_or((&[], &[]))
    }

    /// Masks locked gradients, then applies one update to every slot. Slots
    /// must be passed in the same order on every call. Nothing is written if
    /// any unlocked gradient is non-finite.
    pub fn step(&mut self, slots: &mut [ParamSlot<'_>], epoch: usize) -> Result<()> {
        for slot in slots.iter_mut() {
            assert_eq!(slot.values.len(), slot.grads.len(), "slot {} buffer lengths differ", slot.name);
            if let Some(locked) = slot.locked {
                assert_eq!(locked.len(), slot.values.len(), "slot {} lock layout", slot.name);
                for p in locked.ones() {
                    slot.grads[p] = 0.0;
                }
            }
            if let Some(p) = slot.grads.iter().position(|g| !g.is_finite()) {
                return Err(Error::Numeric { location: format!("gradient of {}[{p}]", slot.name) });
            }
        }
        if self.moments.len() < slots.len() {
            self.moments.resize_with(slots.len(), Moments::default);
        }
        self.steps += 1;
        let lr = self.spec.lr_at(epoch);
        let wd = self.spec.weight_decay;
        for (slot, m) in slots.iter_mut().zip(&mut self.moments) {
            let n = slot.values.len();
            match self.spec.kind {
                OptimKind::Sgd { momentum } => {
                    if momentum > 0.0 && m.first.len() != n {
                        m.first = vec![0.0; n];
                    }
                    for p in 0..n {
                        if slot.locked.is_some_and(|l| l.contains(p)) {
                            continue;
                        }
                        let w = slot.values[p] as f64;
                        let mut g = slot.grads[p] as f64 + wd * w;
                        if momentum > 0.0 {
                            g += momentum * m.first[p] as f64;
                            m.first[p] = g as f32;
                        }
                        slot.values[p] = (w - lr * g) as f32;
                    }
                }
                OptimKind::Adam { beta1, beta2, eps } => {
                    if m.first.len() != n {
                        m.first = vec![0.0; n];
                        m.second = vec![0.0; n];
                    }
                    let c1 = 1.0 - beta1.powf(self.steps as f64);
                    let c2 = 1.0 - beta2.powf(self.steps as f64);
                    for p in 0..n {
                        if slot.locked.is_some_and(|l| l.contains(p)) {
                            continue;
                        }
                        let w = slot.values[p] as f64;
                        let g = slot.grads[p] as f64 + wd * w;
                        let m1 = beta1 * m.first[p] as f64 + (1.0 - beta1) * g;
                        let m2 = beta2 * m.second[p] as f64 + (1.0 - beta2) * g * g;
                        m.first[p] = m1 as f32;
                        m.second[p] = m2 as f32;
                        slot.values[p] = (w - lr * (m1 / c1) / ((m2 / c2).sqrt() + eps)) as f32;
                    }
                }
            }
        }
        Ok(())
    }
}
