//! Sparse connection bookkeeping and importance-driven drop/grow rewiring.
//!
//! A task owns one [`ConnectionSet`] per layer. While the task trains, an
//! [`ImportanceLedger`] accumulates `|g·Δw|` for each of its weights. At the
//! end of every epoch the least important connections are dropped and the same
//! number are grown at the free positions whose endpoint neurons carry the most
//! importance (outer product of the two layers' neuron importances).
//!
//! Ties are always broken lexicographically on `(in_index, out_index)`.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::GradBuffer;

/// `(in_index, out_index)` of a connection within its layer.
pub type Coord = (u32, u32);

/// One task's sparse weights in one layer.
///
/// `block` is the number of values stored per coordinate: 1 for scalar
/// connections, `k*k` for whole convolution kernels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectionSet {
    task: usize,
    layer: usize,
    block: usize,
    coords: Vec<Coord>,
    values: Vec<f32>,
    trainable: bool,
}

impl ConnectionSet {
    pub fn new(
        task: usize,
        layer: usize,
        block: usize,
        coords: Vec<Coord>,
        values: Vec<f32>,
    ) -> Result<Self> {
        let set = ConnectionSet { task, layer, block, coords, values, trainable: true };
        set.validate()?;
        Ok(set)
    }

    /// Checks sorted-unique coordinates and value alignment.
    pub fn validate(&self) -> Result<()> {
        if self.block == 0 {
            return Err(Error::config("connection block size must be positive"));
        }
        if self.values.len() != self.coords.len() * self.block {
            return Err(Error::config(format!(
                "{} values for {} connections of block {}",
                self.values.len(),
                self.coords.len(),
                self.block
            )));
        }
        if let Some(w) = self.coords.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::config(format!(
                "coordinates not strictly sorted near {:?}",
                w[1]
            )));
        }
        Ok(())
    }

    pub fn task(&self) -> usize {
        self.task
    }

    pub fn layer(&self) -> usize {
        self.layer
    }

    pub fn block(&self) -> usize {
        self.block
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[Coord] {
        &self.coords
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> Result<&mut [f32]> {
        if !self.trainable {
            return Err(Error::contract(format!(
                "write access to frozen connection set (task {}, layer {})",
                self.task, self.layer
            )));
        }
        Ok(&mut self.values)
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }

    pub fn freeze(&mut self) {
        self.trainable = false;
    }

    pub fn contains(&self, c: Coord) -> bool {
        self.coords.binary_search(&c).is_ok()
    }

    /// SHA-256 over the layout, coordinates and exact value bits.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for x in [self.task as u64, self.layer as u64, self.block as u64, self.trainable as u64] {
            h.update(x.to_le_bytes());
        }
        for &(i, j) in &self.coords {
            h.update(i.to_le_bytes());
            h.update(j.to_le_bytes());
        }
        for v in &self.values {
            h.update(v.to_bits().to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Index of each coordinate that satisfies `keep`, used to filter aligned buffers.
    fn retain_indices(&mut self, keep: &[bool]) {
        let b = self.block;
        let mut coords = Vec::with_capacity(self.coords.len());
        let mut values = Vec::with_capacity(self.values.len());
        for (n, &c) in self.coords.iter().enumerate() {
            if keep[n] {
                coords.push(c);
                values.extend_from_slice(&self.values[n * b..(n + 1) * b]);
            }
        }
        self.coords = coords;
        self.values = values;
    }

    /// Merges zero-valued connections at `new` (sorted, disjoint from existing).
    /// Returns, for every coordinate of the merged set, whether it is new.
    fn insert_zeros(&mut self, new: &[Coord]) -> Vec<bool> {
        let b = self.block;
        let total = self.coords.len() + new.len();
        let mut coords = Vec::with_capacity(total);
        let mut values = Vec::with_capacity(total * b);
        let mut is_new = Vec::with_capacity(total);
        let (mut p, mut q) = (0, 0);
        while p < self.coords.len() || q < new.len() {
            let take_old = q == new.len() || (p < self.coords.len() && self.coords[p] < new[q]);
            if take_old {
                coords.push(self.coords[p]);
                values.extend_from_slice(&self.values[p * b..(p + 1) * b]);
                is_new.push(false);
                p += 1;
            } else {
                coords.push(new[q]);
                values.extend(std::iter::repeat(0.0).take(b));
                is_new.push(true);
                q += 1;
            }
        }
        self.coords = coords;
        self.values = values;
        is_new
    }
}

/// Accumulated importance for one layer of the training task, aligned with its
/// connection set: `omega` per value element, `fresh` per coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerLedger {
    block: usize,
    omega: Vec<f64>,
    /// Grown in the previous rewire; exempt from the next drop.
    fresh: Vec<bool>,
}

impl LayerLedger {
    pub fn for_set(set: &ConnectionSet) -> Self {
        LayerLedger {
            block: set.block(),
            omega: vec![0.0; set.values().len()],
            fresh: vec![false; set.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.fresh.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fresh.is_empty()
    }

    pub fn element_omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn fresh(&self) -> &[bool] {
        &self.fresh
    }

    /// Ω per connection (kernel sums for blocks larger than one).
    pub fn connection_omega(&self) -> Vec<f64> {
        self.omega.chunks(self.block).map(|c| c.iter().sum()).collect()
    }

    pub fn is_aligned_with(&self, set: &ConnectionSet) -> bool {
        self.block == set.block()
            && self.fresh.len() == set.len()
            && self.omega.len() == set.values().len()
    }

    fn retain_indices(&mut self, keep: &[bool]) {
        let b = self.block;
        let mut omega = Vec::with_capacity(self.omega.len());
        let mut fresh = Vec::with_capacity(self.fresh.len());
        for (n, &k) in keep.iter().enumerate() {
            if k {
                omega.extend_from_slice(&self.omega[n * b..(n + 1) * b]);
                fresh.push(self.fresh[n]);
            }
        }
        self.omega = omega;
        self.fresh = fresh;
    }

    fn insert_fresh(&mut self, is_new: &[bool]) {
        let b = self.block;
        let mut omega = Vec::with_capacity(is_new.len() * b);
        let mut fresh = Vec::with_capacity(is_new.len());
        let mut old = 0;
        for &n in is_new {
            if n {
                omega.extend(std::iter::repeat(0.0).take(b));
                fresh.push(true);
            } else {
                omega.extend_from_slice(&self.omega[old * b..(old + 1) * b]);
                fresh.push(self.fresh[old]);
                old += 1;
            }
        }
        self.omega = omega;
        self.fresh = fresh;
    }

    fn clear_fresh(&mut self) {
        self.fresh.iter_mut().for_each(|f| *f = false);
    }

    #[cfg(test)]
    pub(crate) fn with_omega(set: &ConnectionSet, omega: Vec<f64>) -> Self {
        let mut l = Self::for_set(set);
        assert_eq!(omega.len(), l.omega.len());
        l.omega = omega;
        l
    }
}

/// Per-layer importance of the task currently training, reset per task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceLedger {
    pub task: usize,
    pub layers: Vec<LayerLedger>,
    pub iter: u64,
}

impl ImportanceLedger {
    pub fn new(task: usize, sets: &[&ConnectionSet]) -> Self {
        ImportanceLedger { task, layers: sets.iter().map(|s| LayerLedger::for_set(s)).collect(), iter: 0 }
    }

    /// Marks the end of one optimizer step.
    pub fn tick(&mut self) {
        self.iter += 1;
    }
}

/// `Ω += |g · Δw|` for every weight of one layer, accumulated in 64-bit.
pub fn accumulate_importance(
    ledger: &mut LayerLedger,
    grads: &GradBuffer<f32>,
    applied_deltas: &[f32],
) -> Result<()> {
    if grads.values.len() != ledger.omega.len() || applied_deltas.len() != ledger.omega.len() {
        return Err(Error::contract(format!(
            "importance buffers misaligned: ledger {}, grads {}, deltas {}",
            ledger.omega.len(),
            grads.values.len(),
            applied_deltas.len()
        )));
    }
    for ((o, &g), &d) in ledger.omega.iter_mut().zip(&grads.values).zip(applied_deltas) {
        *o += (g as f64 * d as f64).abs();
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// Sum over connections ending at the neuron (`out_index`).
    Ingoing,
    /// Sum over connections leaving the neuron (`in_index`); used for the input layer.
    Outgoing,
}

/// Per-neuron importance: the sum of connection Ω on the chosen side.
pub fn neuron_importance(coords: &[Coord], conn_omega: &[f64], width: usize, side: Side) -> Vec<f64> {
    let mut a = vec![0.0; width];
    for (&(i, j), &w) in coords.iter().zip(conn_omega) {
        let n = match side {
            Side::Ingoing => j,
            Side::Outgoing => i,
        } as usize;
        if n < width {
            a[n] += w;
        }
    }
    a
}

fn check_fraction(r: f64) -> Result<()> {
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::config(format!("rewire fraction {r} outside (0, 1)")));
    }
    Ok(())
}

/// `floor(r·n)`, robust to products that land a hair below an integer.
pub fn rewire_count(r: f64, n: usize) -> usize {
    (r * n as f64 + 1e-9).floor() as usize
}

/// Removes the `floor(r·|coords|)` connections with the smallest Ω (ties by
/// smaller coordinate). Connections still marked fresh are not candidates, so
/// fewer may be removed. Returns the dropped coordinates in ascending order.
pub fn drop_weakest(set: &mut ConnectionSet, ledger: &mut LayerLedger, r: f64) -> Result<Vec<Coord>> {
    check_fraction(r)?;
    if !set.is_trainable() {
        return Err(Error::contract("drop on a frozen connection set"));
    }
    if !ledger.is_aligned_with(set) {
        return Err(Error::contract("ledger not aligned with connection set"));
    }
    let k = rewire_count(r, set.len());
    if k == 0 {
        return Ok(Vec::new());
    }
    let omega = ledger.connection_omega();
    let mut candidates: Vec<usize> = (0..set.len()).filter(|&n| !ledger.fresh[n]).collect();
    candidates.sort_by(|&a, &b| omega[a].total_cmp(&omega[b]).then(set.coords[a].cmp(&set.coords[b])));
    candidates.truncate(k);
    let mut keep = vec![true; set.len()];
    for &n in &candidates {
        keep[n] = false;
    }
    let mut dropped: Vec<Coord> = candidates.iter().map(|&n| set.coords[n]).collect();
    dropped.sort_unstable();
    set.retain_indices(&keep);
    ledger.retain_indices(&keep);
    Ok(dropped)
}

/// Boolean occupancy of one layer: true where any task stores a connection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyGrid {
    rows: usize,
    cols: usize,
    cells: Vec<bool>,
}

impl OccupancyGrid {
    pub fn new(rows: usize, cols: usize) -> Self {
        OccupancyGrid { rows, cols, cells: vec![false; rows * cols] }
    }

    pub fn from_sets<'a>(
        rows: usize,
        cols: usize,
        sets: impl IntoIterator<Item = &'a ConnectionSet>,
    ) -> Result<Self> {
        let mut g = Self::new(rows, cols);
        for s in sets {
            for &c in s.coords() {
                g.occupy(c)?;
            }
        }
        Ok(g)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    fn index(&self, (i, j): Coord) -> Result<usize> {
        if i as usize >= self.rows || j as usize >= self.cols {
            return Err(Error::config(format!(
                "coordinate ({i},{j}) outside {}x{} grid",
                self.rows, self.cols
            )));
        }
        Ok(i as usize * self.cols + j as usize)
    }

    pub fn is_occupied(&self, c: Coord) -> bool {
        self.index(c).map(|k| self.cells[k]).unwrap_or(false)
    }

    /// Marks a cell used. A cell already held by another connection is a
    /// contract violation: no coordinate may belong to two tasks.
    pub fn occupy(&mut self, c: Coord) -> Result<()> {
        let k = self.index(c)?;
        if self.cells[k] {
            return Err(Error::contract(format!("coordinate {c:?} already occupied")));
        }
        self.cells[k] = true;
        Ok(())
    }

    pub fn release(&mut self, c: Coord) -> Result<()> {
        let k = self.index(c)?;
        self.cells[k] = false;
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&b| b).count()
    }

    /// Grows the grid, keeping every existing cell at its coordinate.
    pub fn resize(&mut self, rows: usize, cols: usize) -> Result<()> {
        if rows < self.rows || cols < self.cols {
            return Err(Error::config("occupancy grids only grow"));
        }
        let mut cells = vec![false; rows * cols];
        for i in 0..self.rows {
            cells[i * cols..i * cols + self.cols]
                .copy_from_slice(&self.cells[i * self.cols..(i + 1) * self.cols]);
        }
        self.rows = rows;
        self.cols = cols;
        self.cells = cells;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrowOutcome {
    /// Chosen coordinates, best score first.
    pub coords: Vec<Coord>,
    /// How many of the requested `k` could not be placed.
    pub shortfall: usize,
}

/// Picks up to `k` unoccupied positions in `allowed_rows × allowed_cols` with the
/// largest `a_prev[i] · a_cur[j]`, ties by smaller coordinate.
pub fn grow_topk(
    a_prev: &[f64],
    a_cur: &[f64],
    k: usize,
    occupancy: &OccupancyGrid,
    allowed_rows: &[u32],
    allowed_cols: &[u32],
) -> GrowOutcome {
    if k == 0 {
        return GrowOutcome { coords: Vec::new(), shortfall: 0 };
    }
    let score = |i: u32, j: u32| {
        a_prev.get(i as usize).copied().unwrap_or(0.0) * a_cur.get(j as usize).copied().unwrap_or(0.0)
    };
    let mut cands: Vec<(f64, Coord)> = Vec::new();
    for &i in allowed_rows {
        for &j in allowed_cols {
            if !occupancy.is_occupied((i, j)) && (i as usize) < occupancy.rows() && (j as usize) < occupancy.cols() {
                cands.push((score(i, j), (i, j)));
            }
        }
    }
    let order = |a: &(f64, Coord), b: &(f64, Coord)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    if cands.len() > k {
        cands.select_nth_unstable_by(k - 1, order);
        cands.truncate(k);
    }
    cands.sort_by(order);
    let shortfall = k - cands.len();
    GrowOutcome { coords: cands.into_iter().map(|(_, c)| c).collect(), shortfall }
}

/// Where the previous layer's neuron importance comes from during a rewire.
#[derive(Debug, Clone, PartialEq)]
pub enum PrevImportance {
    /// The previous layer is the input: use this layer's outgoing sums.
    Outgoing,
    /// Importances already computed from the previous layer's ledger, indexed by row.
    Given(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RewireOutcome {
    pub dropped: Vec<Coord>,
    pub grown: Vec<Coord>,
    pub shortfall: usize,
}

/// One epoch-end rewire of a trainable set: drop the weakest fraction `r`,
/// then grow as many zero-valued connections at the top positions of the
/// neuron-importance outer product. Grown connections start with Ω = 0 and
/// are exempt from the next drop.
pub fn rewire_epoch(
    set: &mut ConnectionSet,
    ledger: &mut LayerLedger,
    r: f64,
    occupancy: &mut OccupancyGrid,
    allowed_rows: &[u32],
    allowed_cols: &[u32],
    prev: &PrevImportance,
) -> Result<RewireOutcome> {
    let dropped = drop_weakest(set, ledger, r)?;
    for &c in &dropped {
        occupancy.release(c)?;
    }
    ledger.clear_fresh();

    let omega = ledger.connection_omega();
    let a_cur = neuron_importance(set.coords(), &omega, occupancy.cols(), Side::Ingoing);
    let a_prev = match prev {
        PrevImportance::Outgoing => neuron_importance(set.coords(), &omega, occupancy.rows(), Side::Outgoing),
        PrevImportance::Given(v) => v.clone(),
    };
    let grow = grow_topk(&a_prev, &a_cur, dropped.len(), occupancy, allowed_rows, allowed_cols);
    let mut grown = grow.coords;
    grown.sort_unstable();
    for &c in &grown {
        occupancy.occupy(c)?;
    }
    let is_new = set.insert_zeros(&grown);
    ledger.insert_fresh(&is_new);
    Ok(RewireOutcome { dropped, grown, shortfall: grow.shortfall })
}
