//! Per-task lifecycle: allocate, train with rewiring, reserve, stash.

use rand::seq::index;

use serde::{Deserialize, Serialize};

use crate::data::{batch_iter, Split, TaskDataset};
use crate::error::{Error, Result};
use crate::seed::{self, Purpose};
use crate::tensor::{glorot_bound, masked_softmax_xent, sgd_step, uniform_init, Matrix};
use crate::topology::{
    accumulate_importance, neuron_importance, rewire_count, rewire_epoch, ConnectionSet, Coord,
    ImportanceLedger, PrevImportance, Side,
};

use super::pass::{backward, forward, forward_logits};
use super::{Classifier, LayerGeom, LayerKind, NetworkState, RewireLog, TaskPlan};

/// Evaluation batch size; only affects speed.
const EVAL_BATCH: usize = 1000;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    /// Mean training loss per epoch.
    pub epoch_loss: Vec<f64>,
    pub steps: u64,
    pub rewire: RewireLog,
}

fn sample_sorted(rng: &mut impl rand::Rng, from: &[u32], count: usize) -> Vec<u32> {
    let mut picked: Vec<u32> = index::sample(rng, from.len(), count).into_iter().map(|n| from[n]).collect();
    picked.sort_unstable();
    picked
}

fn glorot_for(g: &LayerGeom, in_rows: usize, out_cols: usize) -> f32 {
    match g.kind {
        LayerKind::Dense => glorot_bound(in_rows, out_cols),
        LayerKind::Conv { shape, .. } => {
            let k2 = shape.kernel * shape.kernel;
            glorot_bound(in_rows * k2, out_cols * k2)
        }
    }
}

impl NetworkState {
    fn current_classifier(&self, task: usize) -> Result<usize> {
        self.live
            .iter()
            .position(|c| c.task == task && c.weights.is_trainable())
            .ok_or_else(|| Error::protocol(format!("task {task} has no trainable classifier")))
    }

    /// Samples the task's neurons and connections and extends the output
    /// layer with its classes.
    pub fn allocate_connections(&mut self, plan: &TaskPlan) -> Result<()> {
        plan.validate(&self.arch)?;
        let task = plan.task_id;
        if self.sets.contains_key(&task) || self.vault.contains_key(&task) {
            return Err(Error::protocol(format!("task {task} already allocated")));
        }
        if let Some(c) = plan.classes.iter().find(|c| self.class_owner.contains_key(c)) {
            return Err(Error::protocol(format!("class {c} already learned")));
        }
        let depth = self.depth();
        let first = self.widths[depth] as u32;
        let expected: Vec<u32> = (first..first + plan.classes.len() as u32).collect();
        if plan.classes != expected {
            return Err(Error::config(format!(
                "class ids must continue contiguously from {first}, got {:?}",
                plan.classes
            )));
        }
        if first as usize + plan.classes.len() > self.arch.output_classes {
            return Err(Error::config(format!(
                "classes {:?} exceed the {} planned output classes",
                plan.classes, self.arch.output_classes
            )));
        }

        // Select neurons before touching any state so errors leave it intact.
        let mut sel_rng = seed::task_rng(plan.seed, task, Purpose::Selection);
        let mut selected: Vec<Vec<u32>> = vec![(0..self.widths[0] as u32).collect()];
        for l in 1..depth {
            let free: Vec<u32> = self.free[l].iter().copied().collect();
            let want = plan.sel[l - 1].unwrap_or(free.len());
            if want > free.len() {
                return Err(Error::CapacityExhausted {
                    layer: l,
                    detail: format!("{want} neurons requested, {} free", free.len()),
                });
            }
            if want < plan.spec[l - 1] {
                return Err(Error::config(format!("spec exceeds selected neurons in layer {l}")));
            }
            selected.push(sample_sorted(&mut sel_rng, &free, want));
        }
        selected.push(plan.classes.clone());

        let mut widths = self.widths.clone();
        widths[depth] += plan.classes.len();
        let geom = super::geometry(&self.arch, &widths);
        let mut alloc_rng = seed::task_rng(plan.seed, task, Purpose::Allocation);
        let mut new_sets = Vec::with_capacity(depth);
        for l in 1..=depth {
            let g = &geom[l - 1];
            let dense_cols = if l == depth { self.arch.output_classes } else { g.cols };
            let budget = rewire_count(plan.epsilon, g.rows * dense_cols);
            let rows = g.rows_of(&selected[l - 1]);
            let cols = &selected[l];
            let occ = &self.occupancy[l - 1];
            let mut cells: Vec<Coord> = Vec::with_capacity(rows.len() * cols.len());
            for &i in &rows {
                for &j in cols {
                    if (j as usize) >= occ.cols() || !occ.is_occupied((i, j)) {
                        cells.push((i, j));
                    }
                }
            }
            if cells.len() < budget {
                return Err(Error::CapacityExhausted {
                    layer: l,
                    detail: format!("{budget} connections requested, {} free cells", cells.len()),
                });
            }
            let mut coords: Vec<Coord> =
                index::sample(&mut alloc_rng, cells.len(), budget).into_iter().map(|n| cells[n]).collect();
            coords.sort_unstable();
            let bound = glorot_for(g, rows.len(), cols.len());
            let values = uniform_init(&mut alloc_rng, coords.len() * g.block(), bound);
            new_sets.push(ConnectionSet::new(task, l, g.block(), coords, values)?);
        }

        // Commit.
        self.live.retain(|c| !self.vault.contains_key(&c.task));
        self.widths = widths;
        let out_grid = &mut self.occupancy[depth - 1];
        out_grid.resize(out_grid.rows(), self.widths[depth])?;
        for s in &new_sets {
            for &c in s.coords() {
                self.occupancy[s.layer() - 1].occupy(c)?;
            }
        }
        let output = new_sets.pop().expect("output layer set");
        self.live.push(Classifier {
            task,
            classes: plan.classes.clone(),
            weights: output,
            bias: vec![0.0; plan.classes.len()],
        });
        self.sets.insert(task, new_sets);
        for &c in &plan.classes {
            self.class_owner.insert(c, task);
        }
        self.selected.insert(task, selected);
        Ok(())
    }

    /// Sets taking part in each weight layer during training of `task`: every
    /// task's hidden sets plus only this task's classifier.
    fn training_view(&self, task: usize, cur: usize) -> (Vec<Vec<&ConnectionSet>>, Vec<Vec<bool>>) {
        let depth = self.depth();
        let mut layers: Vec<Vec<&ConnectionSet>> = vec![Vec::new(); depth];
        let mut want: Vec<Vec<bool>> = vec![Vec::new(); depth];
        for (&t, sets) in &self.sets {
            for (l, s) in sets.iter().enumerate() {
                layers[l].push(s);
                want[l].push(t == task && s.is_trainable());
            }
        }
        layers[depth - 1].push(&self.live[cur].weights);
        want[depth - 1].push(true);
        (layers, want)
    }

    fn live_bias(&self, which: impl Fn(&Classifier) -> bool) -> Vec<f32> {
        let mut bias = vec![0.0; self.widths[self.depth()]];
        for c in self.live.iter().filter(|c| which(c)) {
            for (&k, &b) in c.classes.iter().zip(&c.bias) {
                bias[k as usize] = b;
            }
        }
        bias
    }

    /// Trains the allocated task on its data. Only the task's own sets are
    /// updated; drop/grow runs after every epoch when the plan asks for it.
    pub fn train_task(&mut self, plan: &TaskPlan, data: &TaskDataset) -> Result<(ImportanceLedger, TrainStats)> {
        let task = plan.task_id;
        let cur = self.current_classifier(task)?;
        let depth = self.depth();
        let geom = self.geometry();
        if data.train.dim != geom[0].in_len {
            return Err(Error::config(format!(
                "images have {} values, network expects {}",
                data.train.dim, geom[0].in_len
            )));
        }
        let own: Vec<&ConnectionSet> = self.sets[&task].iter().chain([&self.live[cur].weights]).collect();
        let mut ledger = ImportanceLedger::new(task, &own);
        let mut stats = TrainStats::default();
        let shuffle = seed::derive(plan.seed, task, Purpose::Shuffle);

        for epoch in 0..plan.epochs {
            let (mut loss_sum, mut batches) = (0.0f64, 0usize);
            for batch in batch_iter(&data.train, plan.batch_size, shuffle, epoch)? {
                let batch = batch?;
                let (grads, bias_grad, loss) = {
                    let (layers, want) = self.training_view(task, cur);
                    let bias = self.live_bias(|c| c.task == task);
                    let pass = forward(&geom, &layers, &bias, &batch.data)?;
                    let (loss, dlogits) = masked_softmax_xent(pass.logits(), &plan.classes, &batch.labels)?;
                    let (grads, bias_grad) = backward(&geom, &layers, &want, &pass, dlogits)?;
                    (grads, bias_grad, loss)
                };
                loss_sum += loss as f64;
                batches += 1;
                for (l, layer_grads) in grads.into_iter().enumerate() {
                    let Some(g) = layer_grads.into_iter().flatten().next() else { continue };
                    let set = if l + 1 == depth {
                        &mut self.live[cur].weights
                    } else {
                        self.sets.get_mut(&task).and_then(|s| s.get_mut(l)).expect("task sets allocated")
                    };
                    let deltas = sgd_step(set, &g, plan.lr)?;
                    accumulate_importance(&mut ledger.layers[l], &g, &deltas)?;
                }
                let c = &mut self.live[cur];
                for (b, &k) in c.bias.iter_mut().zip(&c.classes) {
                    *b -= plan.lr * bias_grad[k as usize];
                }
                ledger.tick();
            }
            stats.epoch_loss.push(if batches > 0 { loss_sum / batches as f64 } else { 0.0 });
            if plan.rewire {
                self.rewire_task(plan, cur, &geom, &mut ledger, epoch, &mut stats.rewire)?;
            }
        }
        stats.steps = ledger.iter;
        Ok((ledger, stats))
    }

    fn rewire_task(
        &mut self,
        plan: &TaskPlan,
        cur: usize,
        geom: &[LayerGeom],
        ledger: &mut ImportanceLedger,
        epoch: usize,
        log: &mut RewireLog,
    ) -> Result<()> {
        let task = plan.task_id;
        let depth = self.depth();
        let selected = self.selected[&task].clone();
        let mut counts = Vec::with_capacity(depth);
        for l in 1..=depth {
            let g = &geom[l - 1];
            let prev = if l == 1 {
                PrevImportance::Outgoing
            } else {
                let p = &self.sets[&task][l - 2];
                let a = neuron_importance(
                    p.coords(),
                    &ledger.layers[l - 2].connection_omega(),
                    self.widths[l - 1],
                    Side::Ingoing,
                );
                PrevImportance::Given(g.spread_rows(&a))
            };
            let rows = g.rows_of(&selected[l - 1]);
            let set = if l == depth {
                &mut self.live[cur].weights
            } else {
                self.sets.get_mut(&task).and_then(|s| s.get_mut(l - 1)).expect("task sets allocated")
            };
            let out = rewire_epoch(
                set,
                &mut ledger.layers[l - 1],
                plan.rewire_fraction,
                &mut self.occupancy[l - 1],
                &rows,
                &selected[l],
                &prev,
            )?;
            log.calls += 1;
            if out.shortfall > 0 {
                log.shortfalls.push((epoch, l, out.shortfall));
            }
            counts.push(set.len());
        }
        log.counts.push(counts);
        Ok(())
    }

    /// Moves the `spec` most important selected neurons of each hidden layer
    /// from the free pool to the task (ties go to the lower index).
    pub fn reserve_neurons(&mut self, plan: &TaskPlan, ledger: &ImportanceLedger) -> Result<()> {
        let task = plan.task_id;
        let sets = self.sets.get(&task).ok_or_else(|| Error::protocol(format!("task {task} not allocated")))?;
        let selected = &self.selected[&task];
        let mut reserved = Vec::new();
        for l in 1..self.depth() {
            let set = &sets[l - 1];
            let lay = &ledger.layers[l - 1];
            if !lay.is_aligned_with(set) {
                return Err(Error::contract(format!("ledger misaligned with layer {l}")));
            }
            let spec = plan.spec[l - 1];
            let sel = &selected[l];
            if spec > sel.len() {
                return Err(Error::config(format!(
                    "layer {l}: {spec} neurons to reserve but only {} selected",
                    sel.len()
                )));
            }
            let a = neuron_importance(set.coords(), &lay.connection_omega(), self.widths[l], Side::Ingoing);
            reserved.push(top_neurons(sel, &a, spec));
        }
        for (l, picked) in reserved.into_iter().enumerate() {
            for n in picked {
                if !self.free[l + 1].remove(&n) {
                    return Err(Error::contract(format!("neuron {n} of layer {} is not free", l + 1)));
                }
                self.specific[l + 1].insert(n, task);
            }
        }
        Ok(())
    }

    /// Freezes the task's hidden connection sets.
    pub fn freeze_task(&mut self, task: usize) -> Result<()> {
        let sets = self.sets.get_mut(&task).ok_or_else(|| Error::protocol(format!("task {task} not allocated")))?;
        sets.iter_mut().for_each(ConnectionSet::freeze);
        Ok(())
    }

    /// Moves the task's classifier out of the live network into the vault.
    pub fn stash_classifier(&mut self, task: usize) -> Result<()> {
        if self.vault.contains_key(&task) {
            return Err(Error::contract(format!("classifier of task {task} already stashed")));
        }
        let pos = self.current_classifier(task)?;
        let mut c = self.live.remove(pos);
        c.weights.freeze();
        self.vault.insert(task, c);
        Ok(())
    }

    /// Makes every stashed classifier live again, in task order.
    pub fn restore_all_classifiers(&mut self) {
        self.live.retain(|c| !self.vault.contains_key(&c.task));
        self.live.extend(self.vault.values().cloned());
    }

    /// Restores classifiers in the given task order (inference does not
    /// depend on it).
    pub fn restore_classifiers_in_order(&mut self, order: &[usize]) -> Result<()> {
        self.live.retain(|c| !self.vault.contains_key(&c.task));
        for t in order {
            let c = self.vault.get(t).ok_or_else(|| Error::protocol(format!("task {t} not in vault")))?;
            self.live.push(c.clone());
        }
        Ok(())
    }

    /// Logits over every learned class, using all live classifiers.
    pub fn logits(&self, images: &Matrix<f32>) -> Result<Matrix<f32>> {
        let depth = self.depth();
        let learned = self.widths[depth];
        if learned == 0 {
            return Err(Error::protocol("no task has been learned"));
        }
        let mut covered = vec![false; learned];
        for c in &self.live {
            for &k in &c.classes {
                covered[k as usize] = true;
            }
        }
        if let Some(k) = covered.iter().position(|&c| !c) {
            return Err(Error::protocol(format!("classifier for class {k} is not restored")));
        }
        let mut layers: Vec<Vec<&ConnectionSet>> = vec![Vec::new(); depth];
        for sets in self.sets.values() {
            for (l, s) in sets.iter().enumerate() {
                layers[l].push(s);
            }
        }
        layers[depth - 1].extend(self.live.iter().map(|c| &c.weights));
        forward_logits(&self.geometry(), &layers, &self.live_bias(|_| true), images)
    }

    /// Class ids by argmax over all learned classes; ties go to the lower id.
    pub fn predict(&self, images: &Matrix<f32>) -> Result<Vec<u32>> {
        let logits = self.logits(images)?;
        Ok((0..logits.rows()).map(|b| argmax(logits.row(b))).collect())
    }

    /// Percent of correctly classified samples.
    pub fn accuracy(&self, split: &Split) -> Result<f64> {
        accuracy_with(split, |x| self.predict(x))
    }

    /// Accuracy when the argmax is restricted to `classes`, as if the task
    /// were known. Diagnostic only: class-incremental inference never does this.
    pub fn accuracy_within(&self, split: &Split, classes: &[u32]) -> Result<f64> {
        if classes.is_empty() {
            return Err(Error::config("no classes to choose from"));
        }
        accuracy_with(split, |x| {
            let logits = self.logits(x)?;
            if let Some(&c) = classes.iter().find(|&&c| c as usize >= logits.cols()) {
                return Err(Error::config(format!("class {c} has not been learned")));
            }
            Ok((0..logits.rows())
                .map(|b| {
                    let row = logits.row(b);
                    let mut best = classes[0];
                    for &c in &classes[1..] {
                        if row[c as usize] > row[best as usize] {
                            best = c;
                        }
                    }
                    best
                })
                .collect())
        })
    }

    /// Post-activation outputs of every hidden layer.
    pub fn hidden_activations(&self, images: &Matrix<f32>) -> Result<Vec<Matrix<f32>>> {
        let depth = self.depth();
        let mut layers: Vec<Vec<&ConnectionSet>> = vec![Vec::new(); depth];
        for sets in self.sets.values() {
            for (l, s) in sets.iter().enumerate() {
                layers[l].push(s);
            }
        }
        layers[depth - 1].extend(self.live.iter().map(|c| &c.weights));
        let pass = forward(&self.geometry(), &layers, &self.live_bias(|_| true), images)?;
        Ok((1..depth).map(|l| pass.hidden(l).clone()).collect())
    }

    /// Appends free neurons to a hidden layer. Existing coordinates keep
    /// their meaning.
    pub fn expand_capacity(&mut self, layer: usize, extra: usize) -> Result<()> {
        let depth = self.depth();
        if layer == 0 || layer >= depth {
            return Err(Error::config(format!("only hidden layers 1..{} can grow, got {layer}", depth - 1)));
        }
        if extra == 0 {
            return Err(Error::config("expansion needs at least one neuron"));
        }
        let old = self.widths[layer] as u32;
        self.widths[layer] += extra;
        self.free[layer].extend(old..old + extra as u32);
        match &mut self.arch.hidden[layer - 1] {
            super::HiddenLayer::Dense { width } => *width += extra,
            super::HiddenLayer::Conv { maps, .. } => *maps += extra,
        }
        let geom = self.geometry();
        for wl in [layer, layer + 1] {
            let g = &geom[wl - 1];
            self.occupancy[wl - 1].resize(g.rows, g.cols)?;
        }
        Ok(())
    }
}

/// The `count` entries of `candidates` with the largest importance, ties to
/// the lower index, returned ascending.
pub(crate) fn top_neurons(candidates: &[u32], importance: &[f64], count: usize) -> Vec<u32> {
    let mut order = candidates.to_vec();
    order.sort_by(|&a, &b| importance[b as usize].total_cmp(&importance[a as usize]).then(a.cmp(&b)));
    order.truncate(count);
    order.sort_unstable();
    order
}

pub(crate) fn argmax(row: &[f32]) -> u32 {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best as u32
}

pub(crate) fn accuracy_with(split: &Split, mut predict: impl FnMut(&Matrix<f32>) -> Result<Vec<u32>>) -> Result<f64> {
    if split.is_empty() {
        return Err(Error::config("cannot evaluate on an empty split"));
    }
    let mut correct = 0usize;
    let all: Vec<usize> = (0..split.len()).collect();
    for chunk in all.chunks(EVAL_BATCH) {
        let batch = split.gather(chunk)?;
        let pred = predict(&batch.data)?;
        correct += pred.iter().zip(&batch.labels).filter(|(p, l)| p == l).count();
    }
    Ok(100.0 * correct as f64 / split.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ImageShape;
    use crate::engine::Architecture;

    fn plan(task: usize, classes: Vec<u32>) -> TaskPlan {
        TaskPlan {
            task_id: task,
            classes,
            epsilon: 0.1,
            rewire_fraction: 0.2,
            sel: vec![Some(4), Some(4)],
            spec: vec![2, 2],
            epochs: 2,
            lr: 0.1,
            batch_size: 8,
            seed: 9,
            rewire: true,
        }
    }

    fn toy_task(task: usize, classes: &[u32], n: usize) -> TaskDataset {
        let dim = 12;
        let mut images = Vec::new();
        let mut labels = Vec::new();
        let mut rng = seed::rng(task as u64 + 100);
        for s in 0..n {
            let c = classes[s % classes.len()];
            for d in 0..dim {
                let on = d % 4 == c as usize % 4;
                images.push(if on { 0.9 } else { rand::Rng::gen_range(&mut rng, 0.0..0.2) });
            }
            labels.push(c);
        }
        let split = Split { dim, images, labels };
        TaskDataset {
            task_id: task,
            classes: classes.to_vec(),
            shape: ImageShape { channels: 1, height: 1, width: dim },
            train: split.clone(),
            test: split,
            normalization: "none".into(),
        }
    }

    fn state() -> NetworkState {
        NetworkState::new(Architecture::mlp(12, &[10, 10], 4)).unwrap()
    }

    #[test]
    fn allocation_budget_and_occupancy() {
        let mut s = state();
        let p = plan(0, vec![0, 1]);
        s.allocate_connections(&p).unwrap();
        let sets = s.task_sets(0).unwrap();
        assert_eq!(sets[0].len(), rewire_count(0.1, 12 * 10));
        assert_eq!(sets[1].len(), rewire_count(0.1, 10 * 10));
        assert_eq!(s.task_layer(0, 3).unwrap().len(), rewire_count(0.1, 10 * 4));
        let sel = s.selected(0).unwrap();
        assert_eq!(sel[1].len(), 4);
        assert!(sets[1].coords().iter().all(|&(i, j)| sel[1].contains(&i) && sel[2].contains(&j)));
        assert_eq!(s.layer_sizes()[3], 2);
        s.check_invariants().unwrap();
    }

    #[test]
    fn allocation_errors() {
        let mut s = state();
        let mut p = plan(0, vec![1, 2]);
        assert!(matches!(s.allocate_connections(&p), Err(Error::Config(_))));
        p.classes = vec![0, 1];
        p.sel = vec![Some(11), Some(4)];
        assert!(matches!(s.allocate_connections(&p), Err(Error::CapacityExhausted { layer: 1, .. })));
        assert_eq!(s, state());
    }

    #[test]
    fn lifecycle_freezes_and_reserves() {
        let mut s = state();
        let p0 = plan(0, vec![0, 1]);
        let d0 = toy_task(0, &[0, 1], 32);
        s.allocate_connections(&p0).unwrap();
        let (ledger, stats) = s.train_task(&p0, &d0).unwrap();
        assert_eq!(stats.rewire.calls, 2 * 3);
        assert!(stats.rewire.shortfalls.is_empty());
        s.reserve_neurons(&p0, &ledger).unwrap();
        s.freeze_task(0).unwrap();
        s.stash_classifier(0).unwrap();
        assert!(matches!(s.stash_classifier(0), Err(Error::Contract(_))));
        assert_eq!(s.specific_neurons(1).len(), 2);
        s.check_invariants().unwrap();
        let snapshot = s.task_digests(0);

        let p1 = plan(1, vec![2, 3]);
        let d1 = toy_task(1, &[2, 3], 32);
        s.allocate_connections(&p1).unwrap();
        assert!(s.selected(1).unwrap()[1].iter().all(|n| !s.specific_neurons(1).contains_key(n)));
        s.train_task(&p1, &d1).unwrap();
        assert_eq!(s.task_digests(0), snapshot);
        s.check_invariants().unwrap();
    }

    #[test]
    fn wrong_label_is_protocol_error() {
        let mut s = state();
        let p = plan(0, vec![0, 1]);
        s.allocate_connections(&p).unwrap();
        let d = toy_task(0, &[0, 2], 8);
        assert!(matches!(s.train_task(&p, &d), Err(Error::Protocol(_))));
    }

    #[test]
    fn zero_epochs_change_nothing_but_allocation() {
        let mut s = state();
        let mut p = plan(0, vec![0, 1]);
        p.epochs = 0;
        s.allocate_connections(&p).unwrap();
        let before = s.clone();
        s.train_task(&p, &toy_task(0, &[0, 1], 8)).unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn predict_needs_restored_classifiers() {
        let mut s = state();
        assert!(matches!(s.predict(&Matrix::zeros(1, 12)), Err(Error::Protocol(_))));
        let p = plan(0, vec![0, 1]);
        s.allocate_connections(&p).unwrap();
        s.stash_classifier(0).unwrap();
        assert!(s.predict(&Matrix::zeros(1, 12)).is_err());
        s.restore_all_classifiers();
        let pred = s.predict(&Matrix::zeros(3, 12)).unwrap();
        // All logits equal zero: ties go to class 0.
        assert_eq!(pred, vec![0, 0, 0]);
    }

    #[test]
    fn top_neurons_ties_low() {
        assert_eq!(top_neurons(&[1, 3, 4, 6], &[0.0, 5.0, 0.0, 2.0, 2.0, 0.0, 9.0], 2), vec![1, 6]);
        assert_eq!(top_neurons(&[1, 3, 4, 6], &[0.0, 0.0, 0.0, 2.0, 2.0, 0.0, 9.0], 2), vec![3, 6]);
        assert_eq!(top_neurons(&[1, 3, 4, 6], &[0.0; 7], 3), vec![1, 3, 4]);
        assert!(top_neurons(&[1, 3], &[0.0; 4], 0).is_empty());
    }

    #[test]
    fn expansion_keeps_coordinates() {
        let mut s = state();
        s.allocate_connections(&plan(0, vec![0, 1])).unwrap();
        let before: Vec<_> = s.task_sets(0).unwrap().to_vec();
        s.expand_capacity(1, 3).unwrap();
        assert_eq!(s.layer_sizes()[1], 13);
        assert_eq!(s.task_sets(0).unwrap(), &before[..]);
        assert!(s.free_neurons(1).contains(&12));
        s.check_invariants().unwrap();
        assert!(s.expand_capacity(3, 1).is_err());
        assert!(s.expand_capacity(1, 0).is_err());
    }
}
