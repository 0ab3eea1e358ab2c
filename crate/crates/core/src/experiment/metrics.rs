//! Accuracy matrix and the ACC/BWT summary metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `R[j][i]`: accuracy (percent) on task `i` after learning task `j`, for `i ≤ j`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    rows: Vec<Vec<f64>>,
}

impl AccuracyMatrix {
    /// Builds from lower-triangular rows (row `j` has `j + 1` entries).
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut m = AccuracyMatrix::default();
        for r in rows {
            m.push_row(r)?;
        }
        Ok(m)
    }

    pub fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        if row.len() != self.rows.len() + 1 {
            return Err(Error::protocol(format!(
                "row after task {} must have {} entries, got {}",
                self.rows.len() + 1,
                self.rows.len() + 1,
                row.len()
            )));
        }
        if let Some(v) = row.iter().find(|v| !(0.0..=100.0).contains(*v)) {
            return Err(Error::config(format!("accuracy {v} outside [0, 100]")));
        }
        self.rows.push(row);
        Ok(())
    }

    /// Number of tasks evaluated so far.
    pub fn tasks(&self) -> usize {
        self.rows.len()
    }

    pub fn get(&self, after: usize, task: usize) -> Option<f64> {
        self.rows.get(after).and_then(|r| r.get(task)).copied()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn final_row(&self) -> Option<&[f64]> {
        self.rows.last().map(Vec::as_slice)
    }

    /// `after_task,task,accuracy` with 1-based task numbers and two decimals.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("after_task,task,accuracy\n");
        for (j, row) in self.rows.iter().enumerate() {
            for (i, v) in row.iter().enumerate() {
                out.push_str(&format!("{},{},{:.2}\n", j + 1, i + 1, v));
            }
        }
        out
    }
}

/// Mean final accuracy over all tasks; `None` before any task.
pub fn acc_metric(r: &AccuracyMatrix) -> Option<f64> {
    let last = r.final_row()?;
    Some(last.iter().sum::<f64>() / last.len() as f64)
}

/// Mean change on earlier tasks between learning them and the end of the
/// sequence. Not applicable (`None`) with fewer than two tasks.
pub fn bwt_metric(r: &AccuracyMatrix) -> Option<f64> {
    let t = r.tasks();
    if t < 2 {
        return None;
    }
    let last = &r.rows[t - 1];
    let sum: f64 = (0..t - 1).map(|i| last[i] - r.rows[i][i]).sum();
    Some(sum / (t - 1) as f64)
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}
