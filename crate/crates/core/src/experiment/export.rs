//! Analysis exports: input connection grids and hidden activation matrices.

use std::fmt::Write as _;

use crate::data::Split;
use crate::engine::NetworkState;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Pixels whose training-set mean intensity reaches this value count as
/// foreground.
pub const FOREGROUND_THRESHOLD: f32 = 0.1;

/// Outgoing first-layer connections per input neuron, for one task or (with
/// `None`) all tasks.
pub fn connection_counts(state: &NetworkState, task: Option<usize>) -> Result<Vec<u32>> {
    let g = state.geometry()[0];
    let inputs = state.layer_sizes()[0];
    let mut counts = vec![0u32; inputs];
    let tasks: Vec<usize> = match task {
        Some(t) => vec![t],
        None => state.tasks().collect(),
    };
    for t in tasks {
        let set = state
            .task_layer(t, 1)
            .ok_or_else(|| Error::protocol(format!("task {t} has no connections")))?;
        for &(i, _) in set.coords() {
            counts[i as usize / g.spread] += 1;
        }
    }
    Ok(counts)
}

/// Counts as `height` lines of `width` space-separated numbers.
pub fn grid_text(counts: &[u32], height: usize, width: usize) -> Result<String> {
    check_grid(counts, height, width)?;
    let mut s = String::new();
    for row in counts.chunks(width) {
        let line: Vec<String> = row.iter().map(u32::to_string).collect();
        let _ = writeln!(s, "{}", line.join(" "));
    }
    Ok(s)
}

/// Plain (ASCII) PGM scaled so the largest count is white.
pub fn grid_pgm(counts: &[u32], height: usize, width: usize) -> Result<String> {
    check_grid(counts, height, width)?;
    let max = counts.iter().copied().max().unwrap_or(0).max(1);
    let mut s = format!("P2\n{width} {height}\n255\n");
    for row in counts.chunks(width) {
        let line: Vec<String> = row.iter().map(|&c| (c as u64 * 255 / max as u64).to_string()).collect();
        let _ = writeln!(s, "{}", line.join(" "));
    }
    Ok(s)
}

fn check_grid(counts: &[u32], height: usize, width: usize) -> Result<()> {
    if counts.len() != height * width {
        return Err(Error::config(format!("{} counts do not fill a {height}x{width} grid", counts.len())));
    }
    Ok(())
}

/// Foreground pixels from the mean image of a training split.
pub fn foreground_mask(train: &Split) -> Result<Vec<bool>> {
    if train.is_empty() {
        return Err(Error::config("foreground mask needs training images"));
    }
    let mut mean = vec![0.0f64; train.dim];
    for n in 0..train.len() {
        for (m, &v) in mean.iter_mut().zip(train.image(n)) {
            *m += v as f64;
        }
    }
    Ok(mean.iter().map(|m| (m / train.len() as f64) as f32 >= FOREGROUND_THRESHOLD).collect())
}

/// Mean count over foreground pixels divided by mean count over background
/// pixels. `None` if either region is empty or the background has no
/// connections at all.
pub fn concentration_ratio(counts: &[u32], mask: &[bool]) -> Option<f64> {
    let (mut fs, mut fn_, mut bs, mut bn) = (0u64, 0u64, 0u64, 0u64);
    for (&c, &fg) in counts.iter().zip(mask) {
        if fg {
            fs += c as u64;
            fn_ += 1;
        } else {
            bs += c as u64;
            bn += 1;
        }
    }
    if fn_ == 0 || bn == 0 || bs == 0 {
        return None;
    }
    Some((fs as f64 / fn_ as f64) / (bs as f64 / bn as f64))
}

/// Hidden activations for a set of samples with their exact-zero fraction.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationExport {
    pub layers: Vec<Matrix<f32>>,
    pub sparsity: Vec<f64>,
}

/// Activations of the first `samples` images of `split`.
pub fn export_activation_matrix(state: &NetworkState, split: &Split, samples: usize) -> Result<ActivationExport> {
    let n = samples.min(split.len());
    let idx: Vec<usize> = (0..n).collect();
    let batch = split.gather(&idx)?;
    let layers = state.hidden_activations(&batch.data)?;
    let sparsity = layers
        .iter()
        .map(|m| {
            let zeros = m.data().iter().filter(|&&v| v == 0.0).count();
            zeros as f64 / m.data().len().max(1) as f64
        })
        .collect();
    Ok(ActivationExport { layers, sparsity })
}

pub fn matrix_csv(m: &Matrix<f32>) -> String {
    let mut s = String::new();
    for r in 0..m.rows() {
        let line: Vec<String> = m.row(r).iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "{}", line.join(","));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_formats() {
        let c = [0, 1, 2, 4];
        assert_eq!(grid_text(&c, 2, 2).unwrap(), "0 1\n2 4\n");
        assert_eq!(grid_pgm(&c, 2, 2).unwrap(), "P2\n2 2\n255\n0 63\n127 255\n");
        assert!(grid_text(&c, 3, 2).is_err());
    }

    #[test]
    fn ratio_of_region_means() {
        let counts = [6, 6, 1, 2];
        let mask = [true, true, false, false];
        assert_eq!(concentration_ratio(&counts, &mask), Some(4.0));
        assert_eq!(concentration_ratio(&counts, &[true; 4]), None);
    }

    #[test]
    fn mask_from_mean_image() {
        let s = Split { dim: 3, images: vec![0.0, 0.3, 0.05, 0.0, 0.1, 0.1], labels: vec![0, 0] };
        assert_eq!(foreground_mask(&s).unwrap(), vec![false, true, false]);
    }
}
