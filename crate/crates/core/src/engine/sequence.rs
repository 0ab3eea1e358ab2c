//! Task sequences, evaluation after each task, and checkpoints.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Split, TaskDataset};
use crate::error::{Error, Result};
use crate::experiment::metrics::AccuracyMatrix;

use super::{NetworkState, TaskPlan, TrainStats};

pub const CHECKPOINT_VERSION: u32 = 1;
const CHECKPOINT_FORMAT: &str = "spacenet-checkpoint";

/// What happened while learning one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task: usize,
    pub classes: Vec<u32>,
    pub stats: TrainStats,
    /// Digests of the task's hidden sets and vault entry right after it finished.
    pub digests: Vec<String>,
    /// Connections per weight layer at the end of the task.
    pub connections: Vec<usize>,
}

/// A network part-way through a task sequence, with the results so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sequence {
    pub state: NetworkState,
    pub matrix: AccuracyMatrix,
    pub records: Vec<TaskRecord>,
}

impl Sequence {
    pub fn new(state: NetworkState) -> Self {
        Sequence { state, matrix: AccuracyMatrix::default(), records: Vec::new() }
    }

    /// Index of the next task to learn.
    pub fn next_task(&self) -> usize {
        self.records.len()
    }

    /// Allocate, train, reserve, freeze and stash one task. Nothing from the
    /// dataset is retained.
    pub fn learn_task(&mut self, plan: &TaskPlan, data: &TaskDataset) -> Result<&TaskRecord> {
        if plan.task_id != self.next_task() {
            return Err(Error::protocol(format!(
                "expected task {}, got task {}",
                self.next_task(),
                plan.task_id
            )));
        }
        let s = &mut self.state;
        s.allocate_connections(plan)?;
        let (ledger, stats) = s.train_task(plan, data)?;
        s.reserve_neurons(plan, &ledger)?;
        s.freeze_task(plan.task_id)?;
        s.stash_classifier(plan.task_id)?;
        let connections = (1..=s.depth())
            .map(|l| s.task_layer(plan.task_id, l).map_or(0, |c| c.len()))
            .collect();
        self.records.push(TaskRecord {
            task: plan.task_id,
            classes: plan.classes.clone(),
            stats,
            digests: s.task_digests(plan.task_id),
            connections,
        });
        Ok(self.records.last().expect("record just pushed"))
    }

    /// Restores every classifier and records accuracy on each given test
    /// split (tasks `0..=t` in order) as the next matrix row.
    pub fn evaluate(&mut self, tests: &[&Split]) -> Result<()> {
        if tests.len() != self.matrix.tasks() + 1 || tests.len() != self.next_task() {
            return Err(Error::protocol(format!(
                "evaluation after task {} needs {} test splits, got {}",
                self.next_task(),
                self.next_task(),
                tests.len()
            )));
        }
        self.state.restore_all_classifiers();
        let row = tests.iter().map(|t| self.state.accuracy(t)).collect::<Result<Vec<_>>>()?;
        self.matrix.push_row(row)
    }
}

/// Learns every task in order, evaluating all seen tasks after each. The
/// observer sees the sequence after each evaluation.
pub fn learn_sequence(
    state: NetworkState,
    plans: &[TaskPlan],
    datasets: Vec<TaskDataset>,
    mut observer: impl FnMut(&Sequence) -> Result<()>,
) -> Result<Sequence> {
    if plans.len() != datasets.len() {
        return Err(Error::config(format!("{} plans for {} datasets", plans.len(), datasets.len())));
    }
    let mut seq = Sequence::new(state);
    let mut tests: Vec<Split> = Vec::with_capacity(datasets.len());
    for (plan, mut data) in plans.iter().zip(datasets) {
        tests.push(std::mem::replace(&mut data.test, Split { dim: 0, images: vec![], labels: vec![] }));
        seq.learn_task(plan, &data)?;
        drop(data);
        let refs: Vec<&Split> = tests.iter().collect();
        seq.evaluate(&refs)?;
        observer(&seq)?;
    }
    Ok(seq)
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    sequence: Sequence,
}

pub fn write_checkpoint(path: impl AsRef<Path>, seq: &Sequence) -> Result<()> {
    let ck = Checkpoint { format: CHECKPOINT_FORMAT.into(), version: CHECKPOINT_VERSION, sequence: seq.clone() };
    fs::write(path, serde_json::to_vec(&ck)?)?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Sequence> {
    let ck: Checkpoint = serde_json::from_slice(&fs::read(path)?)?;
    if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
        return Err(Error::Format {
            offset: 0,
            detail: format!("unsupported checkpoint {} v{}", ck.format, ck.version),
        });
    }
    Ok(ck.sequence)
}
