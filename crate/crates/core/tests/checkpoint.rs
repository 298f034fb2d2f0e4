//! Checkpoint persistence and mask analysis.

mod common;

use common::fixtures::tiny_experiment;
use cps::analysis::analyze_masks;
use cps::checkpoint::{Checkpoint, MAGIC};
use cps::runner::{checkpoint_path, checkpoint_stream, run};
use cps::Error;

fn trained() -> (tempfile::TempDir, Checkpoint) {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_experiment(&dir.path().join("out"), &[5]);
    run(&config, false).unwrap();
    let ckpt = Checkpoint::load(&checkpoint_path(&dir.path().join("out"), 5, 5)).unwrap();
    (dir, ckpt)
}

#[test]
fn save_load_save_is_byte_identical() {
    let (dir, ckpt) = trained();
    let first = ckpt.to_bytes().unwrap();
    let again = Checkpoint::from_bytes(&first).unwrap();
    assert_eq!(again.to_bytes().unwrap(), first);
    let p = dir.path().join("copy.cpns");
    again.save(&p).unwrap();
    assert_eq!(std::fs::read(&p).unwrap(), first);
    assert_eq!(again.learner, ckpt.learner);
}

#[test]
fn loaded_registry_reproduces_logits() {
    let (_dir, ckpt) = trained();
    let loaded = Checkpoint::from_bytes(&ckpt.to_bytes().unwrap()).unwrap();
    let stream = checkpoint_stream(&loaded).unwrap();
    for task in &stream.tasks {
        let x = task.test.tensor().unwrap();
        assert_eq!(ckpt.learner.infer_subnetwork(task.id, &x).unwrap(), loaded.learner.infer_subnetwork(task.id, &x).unwrap());
    }
}

#[test]
fn corrupt_files_are_format_errors() {
    let (_dir, ckpt) = trained();
    let bytes = ckpt.to_bytes().unwrap();
    for cut in [3, MAGIC.len() + 2, bytes.len() / 2, bytes.len() - 1] {
        match Checkpoint::from_bytes(&bytes[..cut]) {
            Err(Error::Format { offset, .. }) => assert!(offset <= cut as u64, "offset {offset} past cut {cut}"),
            other => panic!("cut at {cut}: {:?}", other.map(|_| ())),
        }
    }
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format { offset: 0, .. })));
    let mut flipped = bytes.clone();
    let last = flipped.len() - 1;
    flipped[last] ^= 1;
    assert!(matches!(Checkpoint::from_bytes(&flipped), Err(Error::Format { .. })));
    let mut longer = bytes;
    longer.push(0);
    assert!(matches!(Checkpoint::from_bytes(&longer), Err(Error::Format { .. })));
}

#[test]
fn mask_statistics_are_consistent() {
    let (_dir, ckpt) = trained();
    let stats = analyze_masks(&ckpt.learner).unwrap();
    assert_eq!(stats.tasks, 5);
    assert_eq!(stats.histogram.len(), 6);
    assert!((stats.histogram.iter().sum::<f64>() - 100.0).abs() < 1e-9);
    for layer in &stats.layers {
        for &p in &layer.per_task_pct {
            assert!(layer.union_pct >= p && layer.intersection_pct <= p);
        }
    }
    assert!(stats.render().contains(&stats.layers[0].name));
}
