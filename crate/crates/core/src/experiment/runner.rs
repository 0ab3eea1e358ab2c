//! Experiment runs: SpaceNet, the static-sparse ablation and naive finetuning.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{self, Split, TaskDataset};
use crate::engine::{DenseBaseline, NetworkState, Sequence};
use crate::error::{Error, Result};

use super::config::{DatasetKind, RunConfig};
use super::metrics::{acc_metric, bwt_metric, mean_std, AccuracyMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Spacenet,
    Static,
    Naive,
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spacenet" => Ok(Method::Spacenet),
            "static" => Ok(Method::Static),
            "naive" => Ok(Method::Naive),
            _ => Err(Error::config(format!("unknown method {s:?}"))),
        }
    }
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Spacenet => "spacenet",
            Method::Static => "static",
            Method::Naive => "naive",
        }
    }
}

/// Everything measured in one run. Serializes identically for identical
/// (config, method, seed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: Method,
    pub seed: u64,
    pub config: RunConfig,
    pub normalization: String,
    pub acc: f64,
    /// `None` when fewer than two tasks were learned.
    pub bwt: Option<f64>,
    pub matrix: AccuracyMatrix,
    pub final_accuracies: Vec<f64>,
    /// Final accuracy per task with the argmax limited to that task's own
    /// classes. Separates classifier competition from representation drift.
    /// Empty for the dense baseline.
    pub task_il_accuracies: Vec<f64>,
    /// Connections per task per weight layer at the end of each task.
    pub connections: Vec<Vec<usize>>,
    pub specific_neurons: Vec<usize>,
    pub free_neurons: Vec<usize>,
    pub never_used_neurons: Vec<usize>,
    /// `(task, epoch, layer, missing)` for every short grow.
    pub shortfalls: Vec<(usize, usize, usize, usize)>,
    pub rewire_calls: usize,
    pub epoch_loss: Vec<Vec<f64>>,
}

/// Resolves the IDX directory for a config.
pub fn data_dir(cfg: &RunConfig) -> PathBuf {
    if !cfg.data_dir.is_empty() {
        return PathBuf::from(&cfg.data_dir);
    }
    let root = std::env::var_os("SPACENET_DATA").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("data"));
    root.join(cfg.dataset.dir_name())
}

/// Loads and splits the configured dataset, keeping at most `cfg.tasks` tasks.
pub fn load_tasks(cfg: &RunConfig) -> Result<Vec<TaskDataset>> {
    let mut tasks = match cfg.dataset {
        DatasetKind::Mnist | DatasetKind::Fashion => {
            let d = data::load_idx_dataset(data_dir(cfg), cfg.dataset.as_str())?;
            data::split_tasks(&d, cfg.classes_per_task)?
        }
        DatasetKind::Synthetic => {
            let n = if cfg.tasks == 0 { data::SYNTHETIC_CLASSES / cfg.classes_per_task } else { cfg.tasks };
            data::make_synthetic_conv_tasks_sized(
                n,
                cfg.classes_per_task,
                cfg.synthetic_size,
                cfg.seeds[0],
                cfg.synthetic_train,
                cfg.synthetic_test,
            )?
        }
    };
    if cfg.tasks > 0 {
        if cfg.tasks > tasks.len() {
            return Err(Error::config(format!("{} tasks requested, {} available", cfg.tasks, tasks.len())));
        }
        tasks.truncate(cfg.tasks);
    }
    Ok(tasks)
}

fn classes_of(tasks: &[TaskDataset]) -> Vec<Vec<u32>> {
    tasks.iter().map(|t| t.classes.clone()).collect()
}

fn output_classes(tasks: &[TaskDataset]) -> usize {
    tasks.iter().map(|t| t.classes.len()).sum()
}

fn test_refs(tasks: &[TaskDataset], upto: usize) -> Vec<&Split> {
    tasks[..=upto].iter().map(|t| &t.test).collect()
}

/// Runs a sparse method (rewiring on or off) over `tasks`, optionally
/// continuing a checkpointed sequence. The observer sees the sequence after
/// each task's evaluation.
pub fn run_sparse_with(
    cfg: &RunConfig,
    seed: u64,
    rewire: bool,
    tasks: &[TaskDataset],
    resume: Option<Sequence>,
    mut observer: impl FnMut(&Sequence) -> Result<()>,
) -> Result<(RunReport, Sequence)> {
    if tasks.is_empty() {
        return Err(Error::config("no tasks to learn"));
    }
    let plans = cfg.plans(seed, &classes_of(tasks), rewire);
    let mut seq = match resume {
        Some(s) => s,
        None => Sequence::new(NetworkState::new(cfg.architecture(tasks[0].shape, output_classes(tasks)))?),
    };
    for t in seq.next_task()..tasks.len() {
        seq.learn_task(&plans[t], &tasks[t])?;
        seq.evaluate(&test_refs(tasks, t))?;
        observer(&seq)?;
    }
    let method = if rewire { Method::Spacenet } else { Method::Static };
    Ok((sparse_report(cfg, method, seed, &seq, tasks)?, seq))
}

fn sparse_report(cfg: &RunConfig, method: Method, seed: u64, seq: &Sequence, tasks: &[TaskDataset]) -> Result<RunReport> {
    let s = &seq.state;
    let hidden = 1..s.depth();
    let mut shortfalls = Vec::new();
    for r in &seq.records {
        for &(e, l, m) in &r.stats.rewire.shortfalls {
            shortfalls.push((r.task, e, l, m));
        }
    }
    Ok(RunReport {
        method,
        seed,
        config: cfg.clone(),
        normalization: tasks[0].normalization.to_string(),
        acc: acc_metric(&seq.matrix).ok_or_else(|| Error::protocol("no task evaluated"))?,
        bwt: bwt_metric(&seq.matrix),
        final_accuracies: seq.matrix.final_row().unwrap_or_default().to_vec(),
        task_il_accuracies: tasks
            .iter()
            .map(|t| s.accuracy_within(&t.test, &t.classes))
            .collect::<Result<_>>()?,
        matrix: seq.matrix.clone(),
        connections: seq.records.iter().map(|r| r.connections.clone()).collect(),
        specific_neurons: hidden.clone().map(|l| s.specific_neurons(l).len()).collect(),
        free_neurons: hidden.clone().map(|l| s.free_neurons(l).len()).collect(),
        never_used_neurons: hidden.map(|l| s.never_used_neurons(l).len()).collect(),
        shortfalls,
        rewire_calls: seq.records.iter().map(|r| r.stats.rewire.calls).sum(),
        epoch_loss: seq.records.iter().map(|r| r.stats.epoch_loss.clone()).collect(),
    })
}

/// Dense network finetuned on each task in turn.
pub fn run_naive_with(cfg: &RunConfig, seed: u64, tasks: &[TaskDataset]) -> Result<RunReport> {
    if tasks.is_empty() {
        return Err(Error::config("no tasks to learn"));
    }
    let arch = cfg.architecture(tasks[0].shape, output_classes(tasks));
    let mut net = DenseBaseline::new(&arch, seed)?;
    let plans = cfg.plans(seed, &classes_of(tasks), false);
    let mut matrix = AccuracyMatrix::default();
    let mut losses = Vec::new();
    for (t, plan) in plans.iter().enumerate() {
        losses.push(net.train_task(plan, &tasks[t])?);
        let row = test_refs(tasks, t).iter().map(|s| net.accuracy(s)).collect::<Result<Vec<_>>>()?;
        matrix.push_row(row)?;
    }
    Ok(RunReport {
        method: Method::Naive,
        seed,
        config: cfg.clone(),
        normalization: tasks[0].normalization.clone(),
        acc: acc_metric(&matrix).expect("at least one task"),
        bwt: bwt_metric(&matrix),
        final_accuracies: matrix.final_row().unwrap_or_default().to_vec(),
        task_il_accuracies: Vec::new(),
        matrix,
        connections: Vec::new(),
        specific_neurons: Vec::new(),
        free_neurons: Vec::new(),
        never_used_neurons: Vec::new(),
        shortfalls: Vec::new(),
        rewire_calls: 0,
        epoch_loss: losses,
    })
}

pub fn run_method(cfg: &RunConfig, method: Method, seed: u64, tasks: &[TaskDataset]) -> Result<RunReport> {
    match method {
        Method::Spacenet => run_sparse_with(cfg, seed, true, tasks, None, |_| Ok(())).map(|r| r.0),
        Method::Static => run_sparse_with(cfg, seed, false, tasks, None, |_| Ok(())).map(|r| r.0),
        Method::Naive => run_naive_with(cfg, seed, tasks),
    }
}

pub fn run_spacenet(cfg: &RunConfig, seed: u64) -> Result<RunReport> {
    run_method(cfg, Method::Spacenet, seed, &load_tasks(cfg)?)
}

pub fn run_static_sparse(cfg: &RunConfig, seed: u64) -> Result<RunReport> {
    run_method(cfg, Method::Static, seed, &load_tasks(cfg)?)
}

pub fn run_naive_finetune(cfg: &RunConfig, seed: u64) -> Result<RunReport> {
    run_method(cfg, Method::Naive, seed, &load_tasks(cfg)?)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |x| format!("{x:.2}"))
}

/// Writes `report.json`, `accuracy_matrix.csv` and `config.txt` into `dir`.
pub fn write_report(dir: &Path, report: &RunReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(report)?)?;
    fs::write(dir.join("accuracy_matrix.csv"), report.matrix.to_csv())?;
    fs::write(dir.join("config.txt"), report.config.to_text())?;
    Ok(())
}

/// Wall time lives apart from the report so the report stays reproducible.
pub fn write_timing(dir: &Path, seconds: f64) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("timing.json"), serde_json::to_string(&serde_json::json!({ "wall_seconds": seconds }))?)?;
    Ok(())
}

/// Every `report.json` under `root`, sorted by path.
pub fn collect_reports(root: &Path) -> Result<Vec<RunReport>> {
    let mut paths = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir)? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n == "report.json") {
                paths.push(p);
            }
        }
    }
    paths.sort();
    paths.iter().map(|p| Ok(serde_json::from_slice(&fs::read(p)?)?)).collect()
}

/// `name,method,runs,acc_mean,acc_std,bwt_mean,bwt_std` per (experiment, method),
/// using the population standard deviation.
pub fn summary_csv(reports: &[RunReport]) -> String {
    let mut groups: std::collections::BTreeMap<(String, Method), Vec<&RunReport>> = Default::default();
    for r in reports {
        groups.entry((r.config.name.clone(), r.method)).or_default().push(r);
    }
    let mut out = String::from("name,method,runs,acc_mean,acc_std,bwt_mean,bwt_std\n");
    for ((name, method), rs) in groups {
        let accs: Vec<f64> = rs.iter().map(|r| r.acc).collect();
        let bwts: Option<Vec<f64>> = rs.iter().map(|r| r.bwt).collect();
        let (am, asd) = mean_std(&accs).expect("group is non-empty");
        let b = bwts.and_then(|b| mean_std(&b));
        out.push_str(&format!(
            "{name},{},{},{am:.2},{asd:.2},{},{}\n",
            method.as_str(),
            rs.len(),
            fmt_opt(b.map(|b| b.0)),
            fmt_opt(b.map(|b| b.1)),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> RunConfig {
        RunConfig::parse(
            "name = tiny\ndataset = synthetic\nhidden = 24,24\nsel = 12\nspec = 4\nepsilon = 0.1\n\
             tasks = 2\nepochs = 2\nlr = 0.05\nbatch_size = 16\nsynthetic_size = 8\n\
             synthetic_train = 30\nsynthetic_test = 10\nseeds = 1",
        )
        .unwrap()
    }

    #[test]
    fn sparse_runs_are_deterministic() {
        let cfg = tiny_cfg();
        let tasks = load_tasks(&cfg).unwrap();
        let a = run_method(&cfg, Method::Spacenet, 1, &tasks).unwrap();
        let b = run_method(&cfg, Method::Spacenet, 1, &tasks).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(a.matrix.tasks(), 2);
        assert_eq!(a.specific_neurons, vec![8, 8]);
        assert!(a.rewire_calls > 0);
    }

    #[test]
    fn static_never_rewires() {
        let cfg = tiny_cfg();
        let tasks = load_tasks(&cfg).unwrap();
        let r = run_method(&cfg, Method::Static, 1, &tasks).unwrap();
        assert_eq!(r.rewire_calls, 0);
    }

    #[test]
    fn one_task_has_no_bwt() {
        let mut cfg = tiny_cfg();
        cfg.tasks = 1;
        let tasks = load_tasks(&cfg).unwrap();
        let r = run_method(&cfg, Method::Naive, 1, &tasks).unwrap();
        assert_eq!(r.bwt, None);
        assert!(summary_csv(&[r]).contains(",n/a,n/a"));
    }

    #[test]
    fn summary_uses_population_std() {
        let cfg = tiny_cfg();
        let tasks = load_tasks(&cfg).unwrap();
        let mut a = run_method(&cfg, Method::Naive, 1, &tasks).unwrap();
        let mut b = a.clone();
        a.acc = 60.0;
        b.acc = 70.0;
        a.bwt = Some(-10.0);
        b.bwt = Some(-20.0);
        let s = summary_csv(&[a, b]);
        assert!(s.ends_with("tiny,naive,2,65.00,5.00,-15.00,5.00\n"), "{s}");
    }
}
