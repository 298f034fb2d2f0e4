//! How registered subnetworks share the backbone.

use serde::{Deserialize, Serialize};

use crate::bitset::BitSet;
use crate::controller::Learner;
use crate::error::{Error, Result};
use crate::params::TaskMaskSet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerMaskStats {
    pub name: String,
    pub params: usize,
    /// Percent of the layer in at least one mask.
    pub union_pct: f64,
    /// Percent of the layer in every mask.
    pub intersection_pct: f64,
    /// Percent of the layer in each task's mask.
    pub per_task_pct: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskStats {
    pub tasks: usize,
    pub layers: Vec<LayerMaskStats>,
    /// `histogram[k]`: percent of all backbone scalars in exactly `k`
    /// masks, `k = 0..=tasks`. Sums to 100.
    pub histogram: Vec<f64>,
}

fn pct(count: usize, total: usize) -> f64 {
    100.0 * count as f64 / total as f64
}

/// Union, intersection and sharing statistics of `masks`, whose layers are
/// named by `names`.
pub fn analyze_mask_sets(names: &[String], masks: &[TaskMaskSet]) -> Result<MaskStats> {
    let first = masks.first().ok_or_else(|| Error::State("mask analysis needs at least one task".into()))?;
    if names.len() != first.layers().len() || masks.iter().any(|m| !m.same_layout(first)) {
        return Err(Error::Structure("mask sets do not share a layout".into()));
    }
    let total: usize = first.len();
    let mut counts = vec![0usize; masks.len() + 1];
    let mut layers = Vec::with_capacity(names.len());
    for (i, name) in names.iter().enumerate() {
        let n = first.layer(i).len();
        let mut union = BitSet::empty(n);
        let mut inter = BitSet::full(n);
        for m in masks {
            union.union_with(m.layer(i));
            inter.intersect_with(m.layer(i));
        }
        let mut per_param = vec![0usize; n];
        for m in masks {
            for p in m.layer(i).ones() {
                per_param[p] += 1;
            }
        }
        for k in per_param {
            counts[k] += 1;
        }
        layers.push(LayerMaskStats {
            name: name.clone(),
            params: n,
            union_pct: pct(union.count_ones(), n),
            intersection_pct: pct(inter.count_ones(), n),
            per_task_pct: masks.iter().map(|m| pct(m.layer(i).count_ones(), n)).collect(),
        });
    }
    let histogram = counts.iter().map(|&c| pct(c, total)).collect();
    Ok(MaskStats { tasks: masks.len(), layers, histogram })
}

pub fn analyze_masks(learner: &Learner) -> Result<MaskStats> {
    let names: Vec<String> = learner.store().tensors().iter().map(|t| t.name().to_string()).collect();
    let masks: Vec<TaskMaskSet> = learner.registry().entries().iter().map(|e| e.mask.clone()).collect();
    analyze_mask_sets(&names, &masks)
}

impl MaskStats {
    /// Plain-text table for terminal output.
    pub fn render(&self) -> String {
        let mut out = format!("{:<24} {:>9} {:>9} {:>9}\n", "layer", "params", "union%", "inter%");
        for l in &self.layers {
            out.push_str(&format!("{:<24} {:>9} {:>9.3} {:>9.3}\n", l.name, l.params, l.union_pct, l.intersection_pct));
        }
        out.push_str("\nshared by exactly k tasks\n");
        for (k, h) in self.histogram.iter().enumerate() {
            out.push_str(&format!("k={k:<3} {h:>9.3}%\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(bits: &[bool]) -> TaskMaskSet {
        TaskMaskSet::new(vec![BitSet::from_bools(bits)])
    }

    #[test]
    fn single_task() {
        let names = vec!["w".to_string()];
        let s = analyze_mask_sets(&names, &[set(&[true, false, false, true])]).unwrap();
        assert_eq!(s.layers[0].union_pct, 50.0);
        assert_eq!(s.layers[0].intersection_pct, 50.0);
        assert_eq!(s.histogram, [50.0, 50.0]);
    }

    #[test]
    fn disjoint_masks() {
        let names = vec!["w".to_string()];
        let a: Vec<bool> = (0..10).map(|i| i < 3).collect();
        let b: Vec<bool> = (0..10).map(|i| (3..5).contains(&i)).collect();
        let s = analyze_mask_sets(&names, &[set(&a), set(&b)]).unwrap();
        assert_eq!(s.layers[0].union_pct, 50.0);
        assert_eq!(s.layers[0].intersection_pct, 0.0);
        assert_eq!(s.layers[0].per_task_pct, [30.0, 20.0]);
        assert_eq!(s.histogram, [50.0, 50.0, 0.0]);
    }

    #[test]
    fn no_tasks_is_an_error() {
        assert!(analyze_mask_sets(&[], &[]).is_err());
    }
}
