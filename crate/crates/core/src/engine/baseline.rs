//! Dense network trained on each task in turn with nothing protecting old
//! tasks: the naive finetuning reference.

use crate::data::{batch_iter, Split, TaskDataset};
use crate::error::{Error, Result};
use crate::seed::{self, Purpose};
use crate::tensor::{masked_softmax_xent, sgd_step, uniform_init, Matrix};
use crate::topology::{ConnectionSet, Coord};

use super::lifecycle::{accuracy_with, argmax};
use super::pass::{backward, forward, forward_logits};
use super::{geometry, Architecture, LayerGeom, LayerKind, TaskPlan};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseBaseline {
    geom: Vec<LayerGeom>,
    layers: Vec<ConnectionSet>,
    bias: Vec<f32>,
    learned: usize,
}

impl DenseBaseline {
    pub fn new(arch: &Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut widths = arch.initial_widths();
        *widths.last_mut().expect("output width") = arch.output_classes;
        let geom = geometry(arch, &widths);
        let mut rng = seed::task_rng(seed, 0, Purpose::Allocation);
        let mut layers = Vec::with_capacity(geom.len());
        for (l, g) in geom.iter().enumerate() {
            let coords: Vec<Coord> =
                (0..g.rows as u32).flat_map(|i| (0..g.cols as u32).map(move |j| (i, j))).collect();
            let k2 = g.block();
            let bound = match g.kind {
                LayerKind::Dense => crate::tensor::glorot_bound(g.rows, g.cols),
                LayerKind::Conv { .. } => crate::tensor::glorot_bound(g.rows * k2, g.cols * k2),
            };
            let values = uniform_init(&mut rng, coords.len() * k2, bound);
            layers.push(ConnectionSet::new(0, l + 1, k2, coords, values)?);
        }
        Ok(DenseBaseline { geom, layers, bias: vec![0.0; arch.output_classes], learned: 0 })
    }

    pub fn learned_classes(&self) -> usize {
        self.learned
    }

    /// Trains on one task with the softmax over every class seen so far.
    pub fn train_task(&mut self, plan: &TaskPlan, data: &TaskDataset) -> Result<Vec<f64>> {
        let seen = plan.classes.iter().map(|&c| c as usize + 1).max().unwrap_or(0).max(self.learned);
        if seen > self.bias.len() {
            return Err(Error::config(format!("class ids beyond {} output units", self.bias.len())));
        }
        self.learned = seen;
        let active: Vec<u32> = (0..seen as u32).collect();
        let want: Vec<Vec<bool>> = self.layers.iter().map(|_| vec![true]).collect();
        let shuffle = seed::derive(plan.seed, plan.task_id, Purpose::Shuffle);
        let mut losses = Vec::with_capacity(plan.epochs);
        for epoch in 0..plan.epochs {
            let (mut sum, mut n) = (0.0f64, 0usize);
            for batch in batch_iter(&data.train, plan.batch_size, shuffle, epoch)? {
                let batch = batch?;
                let (grads, bias_grad, loss) = {
                    let view: Vec<Vec<&ConnectionSet>> = self.layers.iter().map(|s| vec![s]).collect();
                    let pass = forward(&self.geom, &view, &self.bias, &batch.data)?;
                    let (loss, d) = masked_softmax_xent(pass.logits(), &active, &batch.labels)?;
                    let (g, b) = backward(&self.geom, &view, &want, &pass, d)?;
                    (g, b, loss)
                };
                for (set, g) in self.layers.iter_mut().zip(grads) {
                    if let Some(g) = g.into_iter().flatten().next() {
                        sgd_step(set, &g, plan.lr)?;
                    }
                }
                for (b, g) in self.bias.iter_mut().zip(&bias_grad) {
                    *b -= plan.lr * g;
                }
                sum += loss as f64;
                n += 1;
            }
            losses.push(if n > 0 { sum / n as f64 } else { 0.0 });
        }
        Ok(losses)
    }

    pub fn predict(&self, images: &Matrix<f32>) -> Result<Vec<u32>> {
        if self.learned == 0 {
            return Err(Error::protocol("no task has been learned"));
        }
        let view: Vec<Vec<&ConnectionSet>> = self.layers.iter().map(|s| vec![s]).collect();
        let logits = forward_logits(&self.geom, &view, &self.bias, images)?;
        Ok((0..logits.rows()).map(|b| argmax(&logits.row(b)[..self.learned])).collect())
    }

    pub fn accuracy(&self, split: &Split) -> Result<f64> {
        accuracy_with(split, |x| self.predict(x))
    }
}
