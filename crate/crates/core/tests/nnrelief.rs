//! Importance scores and per-neuron pruning against independent oracles.

mod common;

use proptest::prelude::*;

use common::oracles::brute_force_keep;
use cps::arch::ArchSpec;
use cps::graph::NormStats;
use cps::relief::{importance_scores_fc, network_importance, prune_mask, prune_neuron, PruneConfig};
use cps::{DenseTensor, TaskMaskSet, TensorShape};

proptest! {
    #![proptest_config(ProptestConfig { cases: 1000, ..ProptestConfig::default() })]

    #[test]
    fn prune_neuron_matches_exhaustive_search(row in prop::collection::vec(0u32..=16, 1..=12), num in 1u32..=16) {
        // small integers keep every partial sum exact in f64
        let values: Vec<f64> = row.iter().map(|&v| f64::from(v)).collect();
        prop_assert_eq!(prune_neuron(&values, f64::from(num) / 16.0), brute_force_keep(&row, num));
    }

    #[test]
    fn fc_rows_sum_to_one(
        (inputs, outputs, n) in (1usize..10, 1usize..6, 1usize..8),
        seed in any::<u64>(),
    ) {
        let mut rng = cps::rng::seeded(seed);
        use rand::Rng;
        let w: Vec<f32> = (0..inputs * outputs).map(|_| rng.random_range(-2.0..2.0)).collect();
        let b: Vec<f32> = (0..outputs).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x: Vec<f32> = (0..n * inputs).map(|_| rng.random_range(-3.0..3.0)).collect();
        let s = importance_scores_fc(&w, &b, &DenseTensor::from_dims(vec![n, inputs], x).unwrap()).unwrap();
        for j in 0..outputs {
            if !s.is_degenerate(j) {
                prop_assert!((s.row(j).iter().sum::<f64>() - 1.0).abs() < 1e-6);
                prop_assert!(s.row(j).iter().all(|&v| v >= 0.0));
            }
        }
    }

    #[test]
    fn input_scaling_leaves_zero_bias_scores_unchanged(c in 0.1f32..10.0, seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = cps::rng::seeded(seed);
        let (inputs, outputs, n) = (5, 3, 4);
        let w: Vec<f32> = (0..inputs * outputs).map(|_| rng.random_range(-2.0..2.0)).collect();
        let x: Vec<f32> = (0..n * inputs).map(|_| rng.random_range(-3.0..3.0)).collect();
        let scaled: Vec<f32> = x.iter().map(|v| v * c).collect();
        let zero = vec![0.0; outputs];
        let a = importance_scores_fc(&w, &zero, &DenseTensor::from_dims(vec![n, inputs], x.clone()).unwrap()).unwrap();
        let b = importance_scores_fc(&w, &zero, &DenseTensor::from_dims(vec![n, inputs], scaled.clone()).unwrap()).unwrap();
        for (p, q) in a.values().iter().zip(b.values()) {
            prop_assert!((p - q).abs() < 1e-6, "{} vs {}", p, q);
        }
        let bias = vec![0.5; outputs];
        let a = importance_scores_fc(&w, &bias, &DenseTensor::from_dims(vec![n, inputs], x).unwrap()).unwrap();
        let b = importance_scores_fc(&w, &bias, &DenseTensor::from_dims(vec![n, inputs], scaled).unwrap()).unwrap();
        for j in 0..outputs {
            let (before, after) = (a.row(j)[inputs], b.row(j)[inputs]);
            if c > 1.0 {
                prop_assert!(after < before);
            } else {
                prop_assert!(after > before);
            }
        }
    }
}

#[test]
fn keep_all_at_alpha_one() {
    assert_eq!(prune_neuron(&[0.5, 0.0, 0.25, 0.25], 1.0), [0, 2, 3]);
}

/// A 2-2 hidden layer whose second input is constant zero: every outgoing
/// connection of that input has zero importance and goes in one prune.
#[test]
fn constant_zero_input_is_pruned_away() {
    let spec = ArchSpec::Mlp { hidden: vec![2, 2], batchnorm: false };
    let (graph, store) = spec.build(&TensorShape::new(vec![2]).unwrap(), 3).unwrap();
    let x: Vec<f32> = (0..16).flat_map(|i| [0.1 * i as f32 + 0.5, 0.0]).collect();
    let sample = DenseTensor::from_dims(vec![16, 2], x).unwrap();
    let full = TaskMaskSet::full(&store);
    let scores = network_importance(&graph, &store, &full, &NormStats::fresh(&graph), &sample).unwrap();
    for j in 0..2 {
        assert_eq!(scores[0].row(j)[1], 0.0);
    }
    let cfg = PruneConfig { alpha_fc: 1.0, ..PruneConfig::default() };
    let mask = prune_mask(&graph, &scores, &full, &cfg).unwrap();
    let first = mask.layer(graph.prunable()[0].weight.0);
    // weight layout is [outputs, inputs]
    assert!(!first.contains(1) && !first.contains(3));
    assert!(first.contains(0) || first.contains(2));
}

/// At alpha = 1 pruning removes exactly the zero-importance entries.
#[test]
fn alpha_one_keeps_nonzero_importance() {
    let spec = ArchSpec::Mlp { hidden: vec![4], batchnorm: false };
    let (graph, store) = spec.build(&TensorShape::new(vec![3]).unwrap(), 5).unwrap();
    let x: Vec<f32> = (0..30).map(|i| ((i * 7) % 11) as f32 / 5.0 - 1.0).collect();
    let sample = DenseTensor::from_dims(vec![10, 3], x).unwrap();
    let full = TaskMaskSet::full(&store);
    let scores = network_importance(&graph, &store, &full, &NormStats::fresh(&graph), &sample).unwrap();
    let cfg = PruneConfig { alpha_fc: 1.0, ..PruneConfig::default() };
    let mask = prune_mask(&graph, &scores, &full, &cfg).unwrap();
    let l = &graph.prunable()[0];
    for j in 0..scores[0].rows() {
        for i in 0..3 {
            assert_eq!(mask.layer(l.weight.0).contains(j * 3 + i), scores[0].row(j)[i] > 0.0);
        }
    }
}
