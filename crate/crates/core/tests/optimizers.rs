//! Masked optimizer steps and a convex descent smoke test.

use proptest::prelude::*;

use cps::optim::{OptimSpec, Optimizer, ParamSlot};
use cps::BitSet;

fn spec_strategy() -> impl Strategy<Value = OptimSpec> {
    prop_oneof![
        (0.001f64..0.5, 0.0f64..0.95, 0.0f64..0.01).prop_map(|(lr, m, wd)| OptimSpec::sgd(lr, m).with_weight_decay(wd)),
        (0.001f64..0.1, 0.0f64..0.01).prop_map(|(lr, wd)| OptimSpec::adam(lr).with_weight_decay(wd)),
    ]
}

fn step(opt: &mut Optimizer, values: &mut [f32], grads: &mut [f32], locked: Option<&BitSet>) {
    let mut slots = [ParamSlot { name: "w", values, grads, locked }];
    opt.step(&mut slots, 0).unwrap();
}

proptest! {
    /// Stepping the full vector under a lock set equals stepping only the
    /// unlocked coordinates, and leaves locked values and moments alone.
    #[test]
    fn masked_step_equals_substep(
        spec in spec_strategy(),
        init in prop::collection::vec(-2.0f32..2.0, 1..24),
        lock_bits in prop::collection::vec(any::<bool>(), 24),
        grad_seq in prop::collection::vec(prop::collection::vec(-1.0f32..1.0, 24), 1..5),
    ) {
        let n = init.len();
        let locked = BitSet::from_bools(&lock_bits[..n]);
        let free: Vec<usize> = (0..n).filter(|&i| !locked.contains(i)).collect();
        let mut full = init.clone();
        let mut sub: Vec<f32> = free.iter().map(|&i| init[i]).collect();
        let mut opt_full = Optimizer::new(spec.clone()).unwrap();
        let mut opt_sub = Optimizer::new(spec).unwrap();
        for g in &grad_seq {
            let mut g_full = g[..n].to_vec();
            let mut g_sub: Vec<f32> = free.iter().map(|&i| g[i]).collect();
            step(&mut opt_full, &mut full, &mut g_full, Some(&locked));
            if !sub.is_empty() {
                step(&mut opt_sub, &mut sub, &mut g_sub, None);
            }
        }
        for (k, &i) in free.iter().enumerate() {
            prop_assert_eq!(full[i].to_bits(), sub[k].to_bits());
        }
        let (m, v) = opt_full.moments(0);
        for i in locked.ones() {
            prop_assert_eq!(full[i].to_bits(), init[i].to_bits());
            prop_assert!(m.get(i).is_none_or(|&x| x == 0.0));
            prop_assert!(v.get(i).is_none_or(|&x| x == 0.0));
        }
    }
}

/// `f(w) = 1/2 sum a_i (w_i - c_i)^2` with plain and momentum SGD.
#[test]
fn sgd_descends_a_convex_quadratic() {
    let a = [1.0f32, 3.0, 0.5, 2.0];
    let c = [0.3f32, -1.0, 2.0, 0.0];
    let loss = |w: &[f32]| w.iter().zip(&a).zip(&c).map(|((w, a), c)| 0.5 * f64::from(a * (w - c) * (w - c))).sum::<f64>();
    for spec in [OptimSpec::sgd(0.1, 0.0), OptimSpec::sgd(0.05, 0.5)] {
        let mut opt = Optimizer::new(spec).unwrap();
        let mut w = vec![5.0f32, 5.0, -5.0, 1.0];
        let start = loss(&w);
        let mut prev = start;
        for _ in 0..100 {
            let mut g: Vec<f32> = w.iter().zip(&a).zip(&c).map(|((w, a), c)| a * (w - c)).collect();
            step(&mut opt, &mut w, &mut g, None);
            let now = loss(&w);
            assert!(now < prev, "loss rose from {prev} to {now}");
            prev = now;
        }
        assert!(prev < 1e-3 * start);
    }
}
