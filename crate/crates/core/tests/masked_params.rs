//! Ownership, freezing and mask algebra on random task sequences.

use proptest::prelude::*;

use cps::params::{claim_and_freeze, frozen_set, reinit_unclaimed, Init, MaskedParamTensor, ParamStore, TaskMaskSet};
use cps::{BitSet, DenseTensor, Error, TaskId, TensorShape};

fn store(lens: &[usize], seed: u64) -> ParamStore {
    let mut s = ParamStore::new();
    let mut rng = cps::rng::seeded(seed);
    for (i, &n) in lens.iter().enumerate() {
        s.push(MaskedParamTensor::new(format!("t{i}"), TensorShape::new(vec![n]).unwrap(), Init::KaimingUniform { fan_in: 3 }, &mut rng));
    }
    s
}

fn masks_for(lens: &[usize], bits: &[bool], offset: usize) -> TaskMaskSet {
    let mut at = offset;
    TaskMaskSet::new(
        lens.iter()
            .map(|&n| {
                let b: Vec<bool> = (0..n).map(|i| bits[(at + i) % bits.len()]).collect();
                at += n;
                BitSet::from_bools(&b)
            })
            .collect(),
    )
}

proptest! {
    /// Owners never change once set, the frozen set is the union of the
    /// registered masks, and reinitialization touches only free scalars.
    #[test]
    fn ownership_is_permanent(
        lens in prop::collection::vec(1usize..40, 1..4),
        bits in prop::collection::vec(any::<bool>(), 1..200),
        tasks in 1usize..6,
        seed in any::<u64>(),
    ) {
        let mut s = store(&lens, seed);
        let mut registered: Vec<TaskMaskSet> = Vec::new();
        for t in 0..tasks {
            let before = s.clone();
            let mask = masks_for(&lens, &bits, t * 17);
            let id = TaskId::from_index(t);
            let free_in_mask: usize = s.tensors().iter().zip(mask.layers()).map(|(x, m)| m.ones().filter(|&p| x.owner(p).is_none()).count()).sum();
            prop_assert_eq!(claim_and_freeze(&mut s, &mask, id).unwrap(), free_in_mask);
            reinit_unclaimed(&mut s, seed ^ t as u64);
            for (x, y) in before.tensors().iter().zip(s.tensors()) {
                for p in 0..x.len() {
                    if let Some(o) = x.owner(p) {
                        prop_assert_eq!(y.owner(p), Some(o));
                        prop_assert_eq!(x.values().values()[p].to_bits(), y.values().values()[p].to_bits());
                    }
                }
            }
            prop_assert_eq!(s.task_mask(id).unwrap(), mask.clone());
            registered.push(mask);
            let refs: Vec<&TaskMaskSet> = registered.iter().collect();
            let union = frozen_set(&refs, &s).unwrap();
            prop_assert_eq!(&union, &s.frozen());
            prop_assert_eq!(s.free_count(), s.numel() - union.count_ones());
        }
    }

    #[test]
    fn gradients_of_frozen_scalars_are_zeroed(
        lens in prop::collection::vec(1usize..30, 1..3),
        bits in prop::collection::vec(any::<bool>(), 1..100),
    ) {
        let mut s = store(&lens, 1);
        let mask = masks_for(&lens, &bits, 0);
        claim_and_freeze(&mut s, &mask, TaskId(1)).unwrap();
        for t in s.tensors_mut() {
            t.grads_mut().fill(1.5);
        }
        let frozen = s.frozen();
        s.mask_gradients(&frozen);
        for (t, m) in s.tensors().iter().zip(frozen.layers()) {
            for p in 0..t.len() {
                prop_assert_eq!(t.grads().values()[p], if m.contains(p) { 0.0 } else { 1.5 });
            }
        }
    }
}

#[test]
fn claims_keep_the_first_owner() {
    let mut s = store(&[6], 3);
    let a = TaskMaskSet::new(vec![BitSet::from_bools(&[true, true, false, false, true, false])]);
    let b = TaskMaskSet::new(vec![BitSet::from_bools(&[false, true, true, false, true, true])]);
    assert_eq!(claim_and_freeze(&mut s, &a, TaskId(1)).unwrap(), 3);
    assert_eq!(claim_and_freeze(&mut s, &b, TaskId(2)).unwrap(), 2);
    let owners: Vec<Option<u16>> = (0..6).map(|p| s.tensors()[0].owner(p).map(|t| t.0)).collect();
    assert_eq!(owners, [Some(1), Some(1), Some(2), None, Some(1), Some(2)]);
    assert_eq!(s.free_count(), 1);
}

#[test]
fn double_registration_and_bad_layouts_are_rejected() {
    let mut s = store(&[4, 2], 4);
    let m = TaskMaskSet::full(&s);
    claim_and_freeze(&mut s, &m, TaskId(1)).unwrap();
    assert!(matches!(claim_and_freeze(&mut s, &m, TaskId(1)), Err(Error::State(_))));
    let wrong = TaskMaskSet::new(vec![BitSet::full(4)]);
    assert!(matches!(claim_and_freeze(&mut s, &wrong, TaskId(2)), Err(Error::Structure(_))));
}

#[test]
fn restored_values_round_trip() {
    let values = DenseTensor::from_dims(vec![2, 2], vec![1.0, -2.0, 0.5, 0.0]).unwrap();
    let t = MaskedParamTensor::from_values("w", values.clone(), Init::Constant(0.0));
    assert_eq!(t.values(), &values);
    assert_eq!(t.free_count(), 4);
}
