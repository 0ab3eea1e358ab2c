//! The continual-learning engine: network state, per-task lifecycle and
//! single-headed inference.

mod baseline;
mod lifecycle;
mod pass;
mod sequence;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::ImageShape;
use crate::error::{Error, Result};
use crate::tensor::ConvShape;
use crate::topology::{ConnectionSet, OccupancyGrid};

pub use baseline::DenseBaseline;
pub use lifecycle::TrainStats;
pub use pass::{forward_logits, Pass};
pub use sequence::{
    learn_sequence, read_checkpoint, write_checkpoint, Sequence, TaskRecord, CHECKPOINT_VERSION,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HiddenLayer {
    Dense { width: usize },
    /// Same-padded `kernel×kernel` convolution, optionally followed by 2×2 max pooling.
    Conv { maps: usize, kernel: usize, pool: bool },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input: ImageShape,
    pub hidden: Vec<HiddenLayer>,
    /// Total classes the run will learn. Only used as the output layer's dense
    /// size when applying the per-task budget.
    pub output_classes: usize,
}

impl Architecture {
    pub fn mlp(input: usize, hidden: &[usize], output_classes: usize) -> Self {
        Architecture {
            input: ImageShape { channels: 1, height: 1, width: input },
            hidden: hidden.iter().map(|&width| HiddenLayer::Dense { width }).collect(),
            output_classes,
        }
    }

    /// Number of weight layers, including the output layer.
    pub fn depth(&self) -> usize {
        self.hidden.len() + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.input.is_empty() || self.output_classes == 0 {
            return Err(Error::config("empty input or no output classes"));
        }
        let (mut h, mut w) = (self.input.height, self.input.width);
        let mut after_dense = false;
        for (n, layer) in self.hidden.iter().enumerate() {
            match *layer {
                HiddenLayer::Dense { width } => {
                    if width == 0 {
                        return Err(Error::config(format!("hidden layer {} has no units", n + 1)));
                    }
                    after_dense = true;
                }
                HiddenLayer::Conv { maps, kernel, pool } => {
                    if after_dense {
                        return Err(Error::config("convolution cannot follow a dense layer"));
                    }
                    if maps == 0 || kernel % 2 == 0 {
                        return Err(Error::config(format!(
                            "conv layer {} needs maps > 0 and an odd kernel",
                            n + 1
                        )));
                    }
                    if pool {
                        if h % 2 != 0 || w % 2 != 0 {
                            return Err(Error::config(format!("cannot pool a {h}x{w} map")));
                        }
                        h /= 2;
                        w /= 2;
                    }
                }
            }
        }
        Ok(())
    }

    fn initial_widths(&self) -> Vec<usize> {
        let first_conv = matches!(self.hidden.first(), Some(HiddenLayer::Conv { .. }));
        let mut widths = vec![if first_conv { self.input.channels } else { self.input.len() }];
        for layer in &self.hidden {
            widths.push(match *layer {
                HiddenLayer::Dense { width } => width,
                HiddenLayer::Conv { maps, .. } => maps,
            });
        }
        widths.push(0);
        widths
    }
}

/// How one weight layer maps activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Dense,
    Conv { shape: ConvShape, pool: bool },
}

/// Shape of weight layer `l` for the current neuron widths.
///
/// `rows`/`cols` size the occupancy grid. For a dense layer reading pooled
/// feature maps, each map contributes `spread` consecutive rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerGeom {
    pub kind: LayerKind,
    pub rows: usize,
    pub cols: usize,
    pub spread: usize,
    pub in_len: usize,
    pub out_len: usize,
}

impl LayerGeom {
    pub fn block(&self) -> usize {
        match self.kind {
            LayerKind::Dense => 1,
            LayerKind::Conv { shape, .. } => shape.kernel * shape.kernel,
        }
    }

    /// Grid rows belonging to the given previous-layer neurons.
    pub fn rows_of(&self, neurons: &[u32]) -> Vec<u32> {
        let s = self.spread as u32;
        neurons.iter().flat_map(|&n| n * s..(n + 1) * s).collect()
    }

    /// Spreads per-neuron importance over grid rows.
    pub fn spread_rows(&self, neuron_values: &[f64]) -> Vec<f64> {
        neuron_values.iter().flat_map(|&v| std::iter::repeat(v).take(self.spread)).collect()
    }
}

pub(crate) fn geometry(arch: &Architecture, widths: &[usize]) -> Vec<LayerGeom> {
    let (mut h, mut w) = (arch.input.height, arch.input.width);
    let mut spatial = matches!(arch.hidden.first(), Some(HiddenLayer::Conv { .. }));
    let mut out = Vec::with_capacity(arch.depth());
    for l in 1..=arch.depth() {
        let (rows, cols) = (widths[l - 1], widths[l]);
        let conv = arch.hidden.get(l - 1).and_then(|layer| match *layer {
            HiddenLayer::Conv { kernel, pool, .. } => Some((kernel, pool)),
            HiddenLayer::Dense { .. } => None,
        });
        match conv {
            Some((kernel, pool)) => {
                let shape = ConvShape { in_maps: rows, out_maps: cols, height: h, width: w, kernel };
                let (oh, ow) = if pool { (h / 2, w / 2) } else { (h, w) };
                out.push(LayerGeom {
                    kind: LayerKind::Conv { shape, pool },
                    rows,
                    cols,
                    spread: 1,
                    in_len: rows * h * w,
                    out_len: cols * oh * ow,
                });
                h = oh;
                w = ow;
            }
            None => {
                let spread = if spatial { h * w } else { 1 };
                spatial = false;
                out.push(LayerGeom {
                    kind: LayerKind::Dense,
                    rows: rows * spread,
                    cols,
                    spread,
                    in_len: rows * spread,
                    out_len: cols,
                });
            }
        }
    }
    out
}

/// Everything a task needs to be learned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskPlan {
    pub task_id: usize,
    pub classes: Vec<u32>,
    /// Fraction of each layer's dense parameter count given to the task.
    pub epsilon: f64,
    /// Fraction of the task's connections rewired after each epoch.
    pub rewire_fraction: f64,
    /// Selected neurons per hidden layer; `None` selects every free neuron.
    pub sel: Vec<Option<usize>>,
    /// Neurons reserved per hidden layer after training.
    pub spec: Vec<usize>,
    pub epochs: usize,
    pub lr: f32,
    pub batch_size: usize,
    pub seed: u64,
    /// Drop/grow after each epoch. Off for the static-sparse ablation.
    pub rewire: bool,
}

impl TaskPlan {
    pub fn validate(&self, arch: &Architecture) -> Result<()> {
        let hidden = arch.hidden.len();
        if self.sel.len() != hidden || self.spec.len() != hidden {
            return Err(Error::config(format!(
                "plan gives {} sel and {} spec entries for {hidden} hidden layers",
                self.sel.len(),
                self.spec.len()
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::config(format!("epsilon {} outside (0,1)", self.epsilon)));
        }
        if !(self.rewire_fraction > 0.0 && self.rewire_fraction < 1.0) {
            return Err(Error::config(format!("rewire fraction {} outside (0,1)", self.rewire_fraction)));
        }
        if let Some(l) = (0..hidden).find(|&l| self.sel[l].is_some_and(|s| self.spec[l] > s)) {
            return Err(Error::config(format!("spec exceeds sel in hidden layer {}", l + 1)));
        }
        if self.classes.is_empty() || self.batch_size == 0 || !(self.lr > 0.0) {
            return Err(Error::config("plan needs classes, a positive batch size and learning rate"));
        }
        Ok(())
    }
}

/// One task's output-layer connections and per-class biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    pub task: usize,
    pub classes: Vec<u32>,
    pub weights: ConnectionSet,
    pub bias: Vec<f32>,
}

impl Classifier {
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.weights.digest().as_bytes());
        for c in &self.classes {
            h.update(c.to_le_bytes());
        }
        for b in &self.bias {
            h.update(b.to_bits().to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Per-layer shortfall and rewire bookkeeping for one task.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RewireLog {
    /// Rewire calls made (drop plus grow per layer per epoch).
    pub calls: usize,
    /// `(epoch, layer, shortfall)` for every grow that came up short.
    pub shortfalls: Vec<(usize, usize, usize)>,
    /// Connection count per layer after each epoch's rewire.
    pub counts: Vec<Vec<usize>>,
}

/// Complete network: topology, weights, neuron registries and classifiers.
///
/// Neuron layer 0 is the input and layer `L` the output; hidden neuron layer
/// `l` is the output side of weight layer `l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkState {
    arch: Architecture,
    widths: Vec<usize>,
    /// Free neurons per neuron layer (only hidden layers are consulted).
    free: Vec<BTreeSet<u32>>,
    /// Reserved neurons and their owning task.
    specific: Vec<BTreeMap<u32, usize>>,
    /// Hidden connection sets per task, weight layers `1..L`.
    sets: BTreeMap<usize, Vec<ConnectionSet>>,
    /// Output classifiers taking part in the forward pass.
    live: Vec<Classifier>,
    vault: BTreeMap<usize, Classifier>,
    occupancy: Vec<OccupancyGrid>,
    class_owner: BTreeMap<u32, usize>,
    /// Selected neurons per task, per neuron layer `0..=L`.
    selected: BTreeMap<usize, Vec<Vec<u32>>>,
}

impl NetworkState {
    pub fn new(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let widths = arch.initial_widths();
        let free = widths.iter().map(|&w| (0..w as u32).collect()).collect();
        let specific = vec![BTreeMap::new(); widths.len()];
        let occupancy = geometry(&arch, &widths).iter().map(|g| OccupancyGrid::new(g.rows, g.cols)).collect();
        Ok(NetworkState {
            arch,
            widths,
            free,
            specific,
            sets: BTreeMap::new(),
            live: Vec::new(),
            vault: BTreeMap::new(),
            occupancy,
            class_owner: BTreeMap::new(),
            selected: BTreeMap::new(),
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    /// Neuron count per layer, input first, current output size last.
    pub fn layer_sizes(&self) -> &[usize] {
        &self.widths
    }

    pub fn geometry(&self) -> Vec<LayerGeom> {
        geometry(&self.arch, &self.widths)
    }

    pub fn depth(&self) -> usize {
        self.arch.depth()
    }

    pub fn free_neurons(&self, layer: usize) -> &BTreeSet<u32> {
        &self.free[layer]
    }

    pub fn specific_neurons(&self, layer: usize) -> &BTreeMap<u32, usize> {
        &self.specific[layer]
    }

    pub fn occupancy(&self, weight_layer: usize) -> &OccupancyGrid {
        &self.occupancy[weight_layer - 1]
    }

    /// Task ids with allocated connections, ascending.
    pub fn tasks(&self) -> impl Iterator<Item = usize> + '_ {
        self.sets.keys().copied()
    }

    /// A task's hidden connection sets, weight layers `1..L`.
    pub fn task_sets(&self, task: usize) -> Option<&[ConnectionSet]> {
        self.sets.get(&task).map(Vec::as_slice)
    }

    /// Connection set of a task in any weight layer, the output included.
    pub fn task_layer(&self, task: usize, weight_layer: usize) -> Option<&ConnectionSet> {
        if weight_layer == self.depth() {
            self.vault
                .get(&task)
                .or_else(|| self.live.iter().find(|c| c.task == task))
                .map(|c| &c.weights)
        } else {
            self.sets.get(&task).and_then(|s| s.get(weight_layer - 1))
        }
    }

    pub fn selected(&self, task: usize) -> Option<&[Vec<u32>]> {
        self.selected.get(&task).map(Vec::as_slice)
    }

    pub fn vault(&self) -> &BTreeMap<usize, Classifier> {
        &self.vault
    }

    pub fn live_classifiers(&self) -> &[Classifier] {
        &self.live
    }

    pub fn learned_classes(&self) -> usize {
        self.class_owner.len()
    }

    pub fn class_owner(&self) -> &BTreeMap<u32, usize> {
        &self.class_owner
    }

    /// Forgets which task owns each class. Inference never reads it.
    pub fn clear_class_registry(&mut self) {
        self.class_owner.clear();
    }

    /// Digests of a task's hidden sets and vault entry, for freeze audits.
    pub fn task_digests(&self, task: usize) -> Vec<String> {
        let mut out: Vec<String> =
            self.sets.get(&task).into_iter().flatten().map(ConnectionSet::digest).collect();
        if let Some(c) = self.vault.get(&task) {
            out.push(c.digest());
        }
        out
    }

    /// Hidden neurons with no ingoing and no outgoing connection from any task.
    pub fn never_used_neurons(&self, layer: usize) -> Vec<u32> {
        let geom = self.geometry();
        let mut used = vec![false; self.widths[layer]];
        let mut mark = |wl: usize, ingoing: bool| {
            let g = &geom[wl - 1];
            for t in self.sets.keys().copied().chain(self.vault.keys().copied()).collect::<BTreeSet<_>>() {
                if let Some(s) = self.task_layer(t, wl) {
                    for &(i, j) in s.coords() {
                        let n = if ingoing { j as usize } else { i as usize / g.spread };
                        used[n] = true;
                    }
                }
            }
        };
        mark(layer, true);
        mark(layer + 1, false);
        (0..used.len() as u32).filter(|&n| !used[n as usize]).collect()
    }

    /// Checks the registry and occupancy invariants.
    pub fn check_invariants(&self) -> Result<()> {
        for l in 1..self.depth() {
            if self.free[l].len() + self.specific[l].len() != self.widths[l] {
                return Err(Error::contract(format!("layer {l}: free plus specific neurons != width")));
            }
            if self.specific[l].keys().any(|n| self.free[l].contains(n)) {
                return Err(Error::contract(format!("layer {l}: a neuron is both free and specific")));
            }
        }
        let geom = self.geometry();
        for wl in 1..=self.depth() {
            let g = &geom[wl - 1];
            let mut sets: Vec<&ConnectionSet> = self.sets.values().filter_map(|s| s.get(wl - 1)).collect();
            if wl == self.depth() {
                let mut tasks: BTreeSet<usize> = self.vault.keys().copied().collect();
                tasks.extend(self.live.iter().map(|c| c.task));
                sets = tasks.into_iter().filter_map(|t| self.task_layer(t, wl)).collect();
            }
            let rebuilt = OccupancyGrid::from_sets(g.rows, g.cols, sets)?;
            if rebuilt != self.occupancy[wl - 1] {
                return Err(Error::contract(format!("occupancy of weight layer {wl} out of sync")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mlp_geometry() {
        let arch = Architecture::mlp(784, &[400, 400], 10);
        let s = NetworkState::new(arch).unwrap();
        assert_eq!(s.layer_sizes(), &[784, 400, 400, 0]);
        let g = s.geometry();
        assert_eq!((g[0].rows, g[0].cols), (784, 400));
        assert_eq!((g[2].rows, g[2].cols), (400, 0));
        assert!(g.iter().all(|g| g.spread == 1));
    }

    #[test]
    fn conv_geometry_spreads_maps() {
        let arch = Architecture {
            input: ImageShape { channels: 1, height: 8, width: 8 },
            hidden: vec![
                HiddenLayer::Conv { maps: 4, kernel: 3, pool: true },
                HiddenLayer::Conv { maps: 6, kernel: 3, pool: true },
            ],
            output_classes: 4,
        };
        let s = NetworkState::new(arch).unwrap();
        assert_eq!(s.layer_sizes(), &[1, 4, 6, 0]);
        let g = s.geometry();
        assert_eq!((g[0].rows, g[0].cols, g[0].block()), (1, 4, 9));
        assert_eq!(g[1].out_len, 6 * 2 * 2);
        assert_eq!((g[2].rows, g[2].spread), (24, 4));
        assert_eq!(g[2].rows_of(&[1, 3]), vec![4, 5, 6, 7, 12, 13, 14, 15]);
    }

    #[test]
    fn rejects_bad_architectures() {
        let mut a = Architecture::mlp(4, &[3], 2);
        a.hidden.push(HiddenLayer::Conv { maps: 2, kernel: 3, pool: false });
        assert!(NetworkState::new(a).is_err());
        let b = Architecture {
            input: ImageShape { channels: 1, height: 5, width: 5 },
            hidden: vec![HiddenLayer::Conv { maps: 2, kernel: 3, pool: true }],
            output_classes: 2,
        };
        assert!(NetworkState::new(b).is_err());
    }

    #[test]
    fn fresh_state_is_consistent() {
        let s = NetworkState::new(Architecture::mlp(10, &[6, 5], 4)).unwrap();
        s.check_invariants().unwrap();
        assert_eq!(s.free_neurons(1).len(), 6);
        assert_eq!(s.never_used_neurons(2).len(), 5);
    }
}
