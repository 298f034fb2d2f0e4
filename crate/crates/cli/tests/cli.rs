//! The `cps` binary on a tiny synthetic experiment.

use std::path::Path;
use std::process::{Command, Output};

fn cps(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cps")).args(args).current_dir(cwd).env_remove("CPS_OUTPUT_ROOT").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const CONFIG: &str = r#"
seeds = [1, 2]
task_sizes = [2, 2, 2]
output_dir = "out"
batch_sizes = [5, 20]

[arch]
kind = "mlp"
hidden = [16]

[data]
source = "synthetic"
separation = 10.0
train_per_class = 50
test_per_class = 40

[train]
epochs = 4
batch_size = 32
optim = { kind = "adam", lr = 0.01, weight_decay = 1e-4 }

[prune]
iterations = 2
is_samples = 80
"#;

#[test]
fn train_eval_analyze_report() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.toml"), CONFIG).unwrap();
    let train = cps(&["train", "tiny.toml"], dir.path());
    assert!(train.status.success(), "{}", stderr(&train));
    let text = stdout(&train);
    assert!(text.contains("task_il") && text.contains("maxoutput_s20"), "{text}");

    let ckpt = "out/seed_2/checkpoints/task_003.cpns";
    let eval = cps(&["eval", ckpt, "--strategy", "is", "--batch-size", "5"], dir.path());
    assert!(eval.status.success(), "{}", stderr(&eval));
    let text = stdout(&eval);
    assert!(text.starts_with("strategy is batch size 5"), "{text}");
    assert_eq!(text.lines().count(), 6);

    let analyze = cps(&["analyze", ckpt, "--json"], dir.path());
    assert!(analyze.status.success(), "{}", stderr(&analyze));
    let stats: serde_json::Value = serde_json::from_str(&stdout(&analyze)).unwrap();
    assert_eq!(stats["tasks"], 3);
    let total: f64 = stats["histogram"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).sum();
    assert!((total - 100.0).abs() < 1e-9);

    let report = cps(&["report", "out", "--json"], dir.path());
    assert!(report.status.success(), "{}", stderr(&report));
    let summary: serde_json::Value = serde_json::from_str(&stdout(&report)).unwrap();
    let written: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/summary.json")).unwrap()).unwrap();
    assert_eq!(summary, written);
    assert_eq!(summary["modes"]["task_il"]["bwt"]["mean"], 0.0);
}

#[test]
fn failures_exit_with_their_category() {
    let dir = tempfile::tempdir().unwrap();
    let missing = cps(&["train", "nope.toml"], dir.path());
    assert_eq!(missing.status.code(), Some(3), "{}", stderr(&missing));
    assert!(stderr(&missing).starts_with("error [io]"), "{}", stderr(&missing));

    std::fs::write(dir.path().join("bad.toml"), CONFIG.replace("seeds = [1, 2]", "seeds = []")).unwrap();
    let bad = cps(&["train", "bad.toml"], dir.path());
    assert_eq!(bad.status.code(), Some(2), "{}", stderr(&bad));

    std::fs::write(dir.path().join("junk.cpns"), b"not a checkpoint").unwrap();
    let junk = cps(&["analyze", "junk.cpns"], dir.path());
    assert_eq!(junk.status.code(), Some(3), "{}", stderr(&junk));
    assert!(stderr(&junk).starts_with("error [format]"), "{}", stderr(&junk));

    let usage = cps(&["eval", "junk.cpns", "--strategy", "vote"], dir.path());
    assert_eq!(usage.status.code(), Some(2));
}
