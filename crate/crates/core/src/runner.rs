//! Experiment orchestration and result files.
//!
//! For every seed the runner learns the stream task by task. After each
//! task it evaluates all learned tasks in task-incremental mode (true task
//! given) and, for every configured strategy and batch size, in
//! class-incremental mode, then writes a checkpoint. A seed directory holds:
//!
//! - `task_il.csv` and `class_il_<strategy>_s<b>.csv`: accuracy matrices,
//!   row = after task, column = evaluated task, percent;
//! - `selection_<strategy>_s<b>.csv`: task-selection accuracy, same layout;
//! - `confusion_<strategy>_s<b>.csv`: selected task counts after the last task;
//! - `learning.csv`: per-task capacity and training statistics;
//! - `metrics.json`: ACC, BWT and AIA per mode;
//! - `checkpoints/task_<t>.cpns`;
//! - `error.json` if the run failed, naming the task.
//!
//! `summary.json` in the output directory aggregates the seeds (mean and
//! sample standard deviation). No file carries timestamps or host details, so
//! reruns with the same config are byte-identical.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::ExperimentConfig;
use crate::controller::{Learner, TaskReport};
use crate::data::{Dataset, TaskData, TaskStream};
use crate::error::{Error, Result};
use crate::metrics::{self, EvalMatrix};
use crate::rng::{self, streams};
use crate::select::{StreamEval, Strategy};

/// Class-incremental results of one strategy and batch size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeResult {
    pub strategy: Strategy,
    pub batch_size: usize,
    pub accuracy: Vec<f64>,
    pub selection_accuracy: Vec<f64>,
    /// `confusion[true][chosen]` batch counts.
    pub confusion: Vec<Vec<usize>>,
}

impl ModeResult {
    pub fn key(&self) -> String {
        mode_key(self.strategy, self.batch_size)
    }
}

pub fn mode_key(strategy: Strategy, batch_size: usize) -> String {
    format!("{}_s{batch_size}", strategy.name())
}

/// Evaluation of every learned task right after one task was learned.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalStep {
    pub task_il: Vec<f64>,
    pub class_il: Vec<ModeResult>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub reports: Vec<TaskReport>,
    pub steps: Vec<EvalStep>,
}

impl RunHistory {
    pub fn task_il_matrix(&self) -> Result<EvalMatrix> {
        EvalMatrix::from_rows(self.steps.iter().map(|s| s.task_il.clone()).collect())
    }

    fn mode_rows(&self, key: &str, pick: impl Fn(&ModeResult) -> &Vec<f64>) -> Result<EvalMatrix> {
        let rows = self
            .steps
            .iter()
            .map(|s| {
                s.class_il
                    .iter()
                    .find(|m| m.key() == key)
                    .map(|m| pick(m).clone())
                    .ok_or_else(|| Error::State(format!("mode {key} missing from history")))
            })
            .collect::<Result<Vec<_>>>()?;
        EvalMatrix::from_rows(rows)
    }

    pub fn class_il_matrix(&self, strategy: Strategy, batch_size: usize) -> Result<EvalMatrix> {
        self.mode_rows(&mode_key(strategy, batch_size), |m| &m.accuracy)
    }

    pub fn selection_matrix(&self, strategy: Strategy, batch_size: usize) -> Result<EvalMatrix> {
        self.mode_rows(&mode_key(strategy, batch_size), |m| &m.selection_accuracy)
    }
}

/// Evaluates every registered task of `learner`; `tasks[t]` is task `t + 1`.
pub fn evaluate(learner: &Learner, tasks: &[TaskData], strategies: &[Strategy], batch_sizes: &[usize], seed: u64) -> Result<EvalStep> {
    let eval = StreamEval::new(learner, tasks)?;
    let eval_seed = rng::derive_seed(seed, streams::EVAL);
    let task_il = eval.classify_stream(Strategy::Oracle, 1, eval_seed)?.accuracy;
    let mut class_il = Vec::new();
    for &strategy in strategies {
        for &b in batch_sizes {
            let r = eval.classify_stream(strategy, b, eval_seed)?;
            class_il.push(ModeResult {
                strategy,
                batch_size: b,
                accuracy: r.accuracy,
                selection_accuracy: r.selection_accuracy,
                confusion: r.confusion,
            });
        }
    }
    Ok(EvalStep { task_il, class_il })
}

/// ACC, BWT (absent for one task) and AIA after the last row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub acc: f64,
    pub bwt: Option<f64>,
    pub aia: f64,
}

impl Scores {
    pub fn of(r: &EvalMatrix) -> Result<Self> {
        let t = r.tasks();
        Ok(Scores { acc: metrics::acc(r, t)?, bwt: if t >= 2 { Some(metrics::bwt(r, t)?) } else { None }, aia: metrics::aia(r, t)? })
    }
}

/// Per-seed metrics: `task_il` plus one entry per class-incremental mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub tasks: usize,
    pub modes: BTreeMap<String, Scores>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub values: Vec<f64>,
}

impl Stat {
    fn of(values: Vec<f64>) -> Self {
        let (mean, std) = metrics::mean_std(&values);
        Stat { mean, std, values }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub acc: Stat,
    pub bwt: Option<Stat>,
    pub aia: Stat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub modes: BTreeMap<String, ModeSummary>,
}

impl RunSummary {
    pub fn from_seeds(config_hash: String, per_seed: &[SeedMetrics]) -> Result<Self> {
        let first = per_seed.first().ok_or_else(|| Error::State("no seed finished".into()))?;
        let mut modes = BTreeMap::new();
        for key in first.modes.keys() {
            let col = per_seed
                .iter()
                .map(|s| s.modes.get(key).cloned().ok_or_else(|| Error::State(format!("seed {} lacks mode {key}", s.seed))))
                .collect::<Result<Vec<_>>>()?;
            let bwt = col.iter().map(|s| s.bwt).collect::<Option<Vec<_>>>().map(Stat::of);
            modes.insert(
                key.clone(),
                ModeSummary {
                    acc: Stat::of(col.iter().map(|s| s.acc).collect()),
                    bwt,
                    aia: Stat::of(col.iter().map(|s| s.aia).collect()),
                },
            );
        }
        Ok(RunSummary { config_hash, seeds: per_seed.iter().map(|s| s.seed).collect(), modes })
    }

    /// Plain-text table in percent.
    pub fn render(&self) -> String {
        let mut out = format!("seeds {:?}\n{:<18} {:>18} {:>18} {:>18}\n", self.seeds, "mode", "ACC %", "BWT %", "AIA %");
        let pm = |s: &Stat| format!("{:.2} ± {:.2}", 100.0 * s.mean, 100.0 * s.std);
        for (k, m) in &self.modes {
            let bwt = m.bwt.as_ref().map_or_else(|| "-".to_string(), pm);
            let _ = writeln!(out, "{k:<18} {:>18} {:>18} {:>18}", pm(&m.acc), bwt, pm(&m.aia));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ErrorRecord {
    seed: u64,
    task: Option<u16>,
    category: String,
    message: String,
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}"))
}

pub fn checkpoint_path(out: &Path, seed: u64, task: usize) -> PathBuf {
    seed_dir(out, seed).join("checkpoints").join(format!("task_{task:03}.cpns"))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("plain data serializes");
    s.push('\n');
    s
}

/// The latest loadable checkpoint of a seed that belongs to `config`.
fn latest_checkpoint(config: &ExperimentConfig, out: &Path, seed: u64) -> Result<Option<Checkpoint>> {
    for t in (1..=config.task_sizes.len()).rev() {
        let p = checkpoint_path(out, seed, t);
        if p.is_file() {
            let c = Checkpoint::load(&p)?;
            if c.config.hash() != config.hash() || c.seed != seed {
                return Err(Error::State(format!("{} belongs to a different run", p.display())));
            }
            return Ok(Some(c));
        }
    }
    Ok(None)
}

/// Runs one seed, resuming from its latest checkpoint when `resume` is set.
pub fn run_seed(config: &ExperimentConfig, dataset: &Dataset, seed: u64, out: &Path, resume: bool) -> Result<SeedMetrics> {
    let dir = seed_dir(out, seed);
    std::fs::create_dir_all(dir.join("checkpoints")).map_err(|e| Error::io(&dir, e))?;
    let error_path = dir.join("error.json");
    if error_path.exists() {
        std::fs::remove_file(&error_path).map_err(|e| Error::io(&error_path, e))?;
    }
    let ordering = config.ordering(dataset.num_classes, seed);
    let stream = crate::data::make_task_stream(dataset, &ordering, &config.task_sizes)?;
    let mut current = None;
    let result = run_stream(config, &stream, ordering.order(), seed, out, resume, &mut current);
    match result {
        Ok(history) => {
            write_seed_outputs(config, &history, &dir)?;
            let metrics = seed_metrics(config, &history, seed)?;
            write(&dir.join("metrics.json"), json(&metrics))?;
            Ok(metrics)
        }
        Err(e) => {
            let rec = ErrorRecord { seed, task: current, category: e.category().into(), message: e.to_string() };
            write(&error_path, json(&rec))?;
            Err(e)
        }
    }
}

fn run_stream(
    config: &ExperimentConfig,
    stream: &TaskStream,
    ordering: &[usize],
    seed: u64,
    out: &Path,
    resume: bool,
    current: &mut Option<u16>,
) -> Result<RunHistory> {
    let (mut learner, mut history) = match if resume { latest_checkpoint(config, out, seed)? } else { None } {
        Some(c) => (c.learner, c.history),
        None => {
            let shape = stream.sample_shape().ok_or_else(|| Error::Input("empty task stream".into()))?;
            (Learner::new(&config.arch, shape, config.learner(), seed)?, RunHistory::default())
        }
    };
    for task in &stream.tasks[learner.registry().len()..] {
        *current = Some(task.id.0);
        let report = learner.learn(task)?;
        let step = evaluate(&learner, &stream.tasks, &config.strategies, &config.batch_sizes, seed)?;
        history.reports.push(report);
        history.steps.push(step);
        let ckpt = Checkpoint { config: config.clone(), seed, ordering: ordering.to_vec(), history, learner };
        ckpt.save(&checkpoint_path(out, seed, task.id.0 as usize))?;
        learner = ckpt.learner;
        history = ckpt.history;
    }
    *current = None;
    Ok(history)
}

pub fn seed_metrics(config: &ExperimentConfig, history: &RunHistory, seed: u64) -> Result<SeedMetrics> {
    let mut modes = BTreeMap::new();
    modes.insert("task_il".to_string(), Scores::of(&history.task_il_matrix()?)?);
    for &s in &config.strategies {
        for &b in &config.batch_sizes {
            modes.insert(mode_key(s, b), Scores::of(&history.class_il_matrix(s, b)?)?);
        }
    }
    Ok(SeedMetrics { seed, tasks: history.steps.len(), modes })
}

fn confusion_csv(m: &[Vec<usize>]) -> String {
    let mut out = String::from("true_task");
    for j in 1..=m.len() {
        let _ = write!(out, ",chose{j}");
    }
    out.push('\n');
    for (i, row) in m.iter().enumerate() {
        out.push_str(&(i + 1).to_string());
        for c in row {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
    }
    out
}

fn learning_csv(reports: &[TaskReport]) -> String {
    let mut out = String::from("task,newly_frozen,free_after,mask_density,final_loss,train_accuracy");
    if let Some(r) = reports.first() {
        for (name, _) in &r.free_per_tensor {
            let _ = write!(out, ",free_{name}");
        }
    }
    out.push('\n');
    for r in reports {
        let _ = write!(
            out,
            "{},{},{},{:.6},{:.6},{:.4}",
            r.task,
            r.newly_frozen,
            r.free_after,
            r.mask_density,
            r.final_loss,
            100.0 * r.train_accuracy
        );
        for (_, f) in &r.free_per_tensor {
            let _ = write!(out, ",{f:.6}");
        }
        out.push('\n');
    }
    out
}

fn write_seed_outputs(config: &ExperimentConfig, history: &RunHistory, dir: &Path) -> Result<()> {
    write(&dir.join("task_il.csv"), history.task_il_matrix()?.to_csv_percent())?;
    for &s in &config.strategies {
        for &b in &config.batch_sizes {
            let key = mode_key(s, b);
            write(&dir.join(format!("class_il_{key}.csv")), history.class_il_matrix(s, b)?.to_csv_percent())?;
            write(&dir.join(format!("selection_{key}.csv")), history.selection_matrix(s, b)?.to_csv_percent())?;
            let last = history.steps.last().and_then(|st| st.class_il.iter().find(|m| m.key() == key));
            if let Some(m) = last {
                write(&dir.join(format!("confusion_{key}.csv")), confusion_csv(&m.confusion))?;
            }
        }
    }
    write(&dir.join("learning.csv"), learning_csv(&history.reports))
}

/// Runs every seed and writes `summary.json`. A failing seed stops the run
/// after its `error.json` is written.
pub fn run(config: &ExperimentConfig, resume: bool) -> Result<RunSummary> {
    config.validate()?;
    let out = config.resolved_output_dir();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    write(&out.join("config.toml"), config.to_toml_string()?)?;
    let dataset = config.load_dataset()?;
    let mut per_seed = Vec::new();
    for &seed in &config.seeds {
        per_seed.push(run_seed(config, &dataset, seed, &out, resume)?);
    }
    let summary = RunSummary::from_seeds(config.hash(), &per_seed)?;
    write(&out.join("summary.json"), json(&summary))?;
    Ok(summary)
}

/// Rebuilds the summary of an output directory from its `config.toml` and
/// the `metrics.json` of every finished seed.
pub fn report(dir: &Path) -> Result<RunSummary> {
    let config = ExperimentConfig::load(&dir.join("config.toml"))?;
    let mut per_seed = Vec::new();
    for &seed in &config.seeds {
        let path = seed_dir(dir, seed).join("metrics.json");
        if !path.is_file() {
            continue;
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: SeedMetrics = serde_json::from_str(&text)
            .map_err(|e| Error::Parse { offset: 0, message: format!("{}: {e}", path.display()) })?;
        per_seed.push(m);
    }
    RunSummary::from_seeds(config.hash(), &per_seed)
}

/// The task stream a checkpoint was trained on, rebuilt from its config.
pub fn checkpoint_stream(ckpt: &Checkpoint) -> Result<TaskStream> {
    let dataset = ckpt.config.load_dataset()?;
    let ordering = ckpt.config.ordering(dataset.num_classes, ckpt.seed);
    if ordering.order() != ckpt.ordering.as_slice() {
        return Err(Error::State("rebuilt class ordering differs from the checkpoint".into()));
    }
    crate::data::make_task_stream(&dataset, &ordering, &ckpt.config.task_sizes)
}
