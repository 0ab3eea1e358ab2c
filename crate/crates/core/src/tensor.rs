//! Numeric kernels with hand-written backward passes.
//!
//! Every kernel is generic over [`Real`] so gradient checks can run the exact
//! same code in 64-bit. Training instantiates them with `f32`.
//!
//! Matrices are row-major with one sample per row. Convolutional activations
//! use the same layout: a sample row is `maps × height × width`, map-major, so
//! flattening a conv output into a dense layer is the identity.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::AddAssign;

use num_traits::Float;
use rand::Rng;

use crate::error::{Error, Result};
use crate::topology::{ConnectionSet, Coord};

pub trait Real: Float + Sum + AddAssign + Debug + Send + Sync + 'static {
    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T = f32> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::config(format!(
                "matrix data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// A minibatch: one sample per row, labels are global class ids.
#[derive(Debug, Clone)]
pub struct Batch {
    pub data: Matrix<f32>,
    pub labels: Vec<u32>,
}

impl Batch {
    pub fn new(data: Matrix<f32>, labels: Vec<u32>) -> Result<Self> {
        if data.rows() == 0 {
            return Err(Error::config("empty batch"));
        }
        if labels.len() != data.rows() {
            return Err(Error::config(format!(
                "{} labels for {} samples",
                labels.len(),
                data.rows()
            )));
        }
        if !data.all_finite() {
            return Err(Error::Numeric { layer: 0 });
        }
        Ok(Batch { data, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Gradients aligned element-for-element with a connection set's values.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBuffer<T = f32> {
    pub values: Vec<T>,
}

/// Borrowed sparse weights: `block` values per coordinate (1 for scalar
/// connections, k×k for convolution kernels).
#[derive(Debug, Clone, Copy)]
pub struct SparseWeights<'a, T> {
    pub coords: &'a [Coord],
    pub values: &'a [T],
    pub block: usize,
}

impl<'a, T> SparseWeights<'a, T> {
    pub fn new(coords: &'a [Coord], values: &'a [T], block: usize) -> Self {
        SparseWeights { coords, values, block }
    }
}

impl<'a> From<&'a ConnectionSet> for SparseWeights<'a, f32> {
    fn from(set: &'a ConnectionSet) -> Self {
        SparseWeights { coords: set.coords(), values: set.values(), block: set.block() }
    }
}

fn check_layer<T>(weights: &SparseWeights<'_, T>, fan_in: usize, fan_out: usize) -> Result<()> {
    if weights.values.len() != weights.coords.len() * weights.block {
        return Err(Error::config("connection values misaligned with coordinates"));
    }
    if let Some(&(i, j)) =
        weights.coords.iter().find(|&&(i, j)| i as usize >= fan_in || j as usize >= fan_out)
    {
        return Err(Error::config(format!(
            "connection ({i},{j}) outside a {fan_in}x{fan_out} layer"
        )));
    }
    Ok(())
}

/// Start offsets of each run of equal input index in a coordinate list that is
/// sorted by input index. Returns `(in_index, start, end)` triples.
fn input_runs(coords: &[Coord]) -> Vec<(usize, usize, usize)> {
    let mut runs = Vec::new();
    let mut start = 0;
    while start < coords.len() {
        let i = coords[start].0;
        let mut end = start + 1;
        while end < coords.len() && coords[end].0 == i {
            end += 1;
        }
        runs.push((i as usize, start, end));
        start = end;
    }
    runs
}

/// Adds `input · W` for one sparse weight set into `out`.
pub fn affine_accumulate<T: Real>(
    input: &Matrix<T>,
    weights: SparseWeights<'_, T>,
    out: &mut Matrix<T>,
) -> Result<()> {
    check_layer(&weights, input.cols(), out.cols())?;
    if input.rows() != out.rows() {
        return Err(Error::config("batch size mismatch between input and output"));
    }
    let runs = input_runs(weights.coords);
    for b in 0..input.rows() {
        let x = input.row(b);
        let y = out.row_mut(b);
        for &(i, s, e) in &runs {
            let xi = x[i];
            if xi == T::zero() {
                continue;
            }
            for c in s..e {
                y[weights.coords[c].1 as usize] += xi * weights.values[c];
            }
        }
    }
    Ok(())
}

/// Pre-activations of a layer holding the union of several connection sets.
/// Hidden layers carry no bias.
pub fn sparse_affine_forward<T: Real>(
    input: &Matrix<T>,
    layer: &[SparseWeights<'_, T>],
    fan_out: usize,
    layer_id: usize,
) -> Result<Matrix<T>> {
    if !input.all_finite() {
        return Err(Error::Numeric { layer: layer_id });
    }
    let mut out = Matrix::zeros(input.rows(), fan_out);
    for w in layer {
        affine_accumulate(input, *w, &mut out)?;
    }
    Ok(out)
}

/// dL/dw for each connection: `Σ_b input[b][i] · upstream[b][j]`.
pub fn affine_weight_grads<T: Real>(
    upstream: &Matrix<T>,
    input: &Matrix<T>,
    weights: SparseWeights<'_, T>,
) -> Result<GradBuffer<T>> {
    check_layer(&weights, input.cols(), upstream.cols())?;
    if input.rows() != upstream.rows() {
        return Err(Error::config("batch size mismatch between input and upstream"));
    }
    let runs = input_runs(weights.coords);
    let mut g = vec![T::zero(); weights.coords.len()];
    for b in 0..input.rows() {
        let x = input.row(b);
        let up = upstream.row(b);
        for &(i, s, e) in &runs {
            let xi = x[i];
            if xi == T::zero() {
                continue;
            }
            for c in s..e {
                g[c] += xi * up[weights.coords[c].1 as usize];
            }
        }
    }
    Ok(GradBuffer { values: g })
}

/// Adds `upstream · Wᵀ` into `grad_input`.
pub fn affine_input_grad_accumulate<T: Real>(
    upstream: &Matrix<T>,
    weights: SparseWeights<'_, T>,
    grad_input: &mut Matrix<T>,
) -> Result<()> {
    check_layer(&weights, grad_input.cols(), upstream.cols())?;
    if grad_input.rows() != upstream.rows() {
        return Err(Error::config("batch size mismatch between upstream and input grad"));
    }
    for b in 0..upstream.rows() {
        let up = upstream.row(b);
        let gi = grad_input.row_mut(b);
        for (&(i, j), &w) in weights.coords.iter().zip(weights.values) {
            gi[i as usize] += w * up[j as usize];
        }
    }
    Ok(())
}

/// Backward pass through a union layer. Every set gets a gradient buffer and the
/// input gradient flows through all sets, frozen or not.
pub fn sparse_affine_backward<T: Real>(
    upstream: &Matrix<T>,
    input: &Matrix<T>,
    layer: &[SparseWeights<'_, T>],
) -> Result<(Vec<GradBuffer<T>>, Matrix<T>)> {
    let mut grad_input = Matrix::zeros(input.rows(), input.cols());
    let mut grads = Vec::with_capacity(layer.len());
    for w in layer {
        grads.push(affine_weight_grads(upstream, input, *w)?);
        affine_input_grad_accumulate(upstream, *w, &mut grad_input)?;
    }
    Ok((grads, grad_input))
}

pub fn relu<T: Real>(pre: &Matrix<T>) -> Matrix<T> {
    pre.map(|x| if x > T::zero() { x } else { T::zero() })
}

pub fn relu_in_place<T: Real>(m: &mut Matrix<T>) {
    for x in m.data_mut() {
        if !(*x > T::zero()) {
            *x = T::zero();
        }
    }
}

/// Gate is 1 where the pre-activation is strictly positive, 0 otherwise (including at 0).
pub fn relu_backward<T: Real>(upstream: &Matrix<T>, pre: &Matrix<T>) -> Matrix<T> {
    let mut out = upstream.clone();
    relu_backward_in_place(&mut out, pre);
    out
}

pub fn relu_backward_in_place<T: Real>(upstream: &mut Matrix<T>, pre: &Matrix<T>) {
    for (g, &x) in upstream.data_mut().iter_mut().zip(pre.data()) {
        if !(x > T::zero()) {
            *g = T::zero();
        }
    }
}

/// Mean softmax cross-entropy where the softmax runs over `active_classes`
/// only. Logits of inactive classes get zero gradient. `active_classes` need
/// not be sorted but must be unique and in range.
pub fn masked_softmax_xent<T: Real>(
    logits: &Matrix<T>,
    active_classes: &[u32],
    labels: &[u32],
) -> Result<(T, Matrix<T>)> {
    if labels.len() != logits.rows() || logits.rows() == 0 {
        return Err(Error::config("label count does not match logits"));
    }
    if active_classes.is_empty() {
        return Err(Error::config("no active classes"));
    }
    if let Some(&c) = active_classes.iter().find(|&&c| c as usize >= logits.cols()) {
        return Err(Error::config(format!("active class {c} beyond {} logits", logits.cols())));
    }
    let mut slot = vec![usize::MAX; logits.cols()];
    for (k, &c) in active_classes.iter().enumerate() {
        if slot[c as usize] != usize::MAX {
            return Err(Error::config(format!("class {c} listed twice")));
        }
        slot[c as usize] = k;
    }
    let n = T::from_f64(logits.rows() as f64);
    let mut grads = Matrix::zeros(logits.rows(), logits.cols());
    let mut loss = T::zero();
    let mut probs = vec![T::zero(); active_classes.len()];
    for b in 0..logits.rows() {
        let label = labels[b];
        if label as usize >= logits.cols() || slot[label as usize] == usize::MAX {
            return Err(Error::protocol(format!(
                "label {label} is not one of the active classes {active_classes:?}"
            )));
        }
        let row = logits.row(b);
        let m = active_classes
            .iter()
            .map(|&c| row[c as usize])
            .fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for (p, &c) in probs.iter_mut().zip(active_classes) {
            *p = (row[c as usize] - m).exp();
            z += *p;
        }
        loss += z.ln() - (row[label as usize] - m);
        let g = grads.row_mut(b);
        for (&p, &c) in probs.iter().zip(active_classes) {
            let target = if c == label { T::one() } else { T::zero() };
            g[c as usize] = (p / z - target) / n;
        }
    }
    Ok((loss / n, grads))
}

/// Plain SGD on a trainable set. Returns the applied deltas `-lr·g`.
pub fn sgd_step(set: &mut ConnectionSet, grads: &GradBuffer<f32>, lr: f32) -> Result<Vec<f32>> {
    if !set.is_trainable() {
        return Err(Error::contract(format!(
            "optimizer step on frozen connection set (task {}, layer {})",
            set.task(),
            set.layer()
        )));
    }
    let values = set.values_mut()?;
    if values.len() != grads.values.len() {
        return Err(Error::contract("gradient buffer misaligned with connection set"));
    }
    let mut deltas = Vec::with_capacity(values.len());
    for (w, &g) in values.iter_mut().zip(&grads.values) {
        let d = -lr * g;
        *w += d;
        deltas.push(d);
    }
    Ok(deltas)
}

/// Uniform Glorot bound `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f32 {
    (6.0 / (fan_in + fan_out).max(1) as f64).sqrt() as f32
}

pub fn uniform_init(rng: &mut impl Rng, n: usize, bound: f32) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()
}

/// Spatial layout of a stride-1, same-padded convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub in_maps: usize,
    pub out_maps: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
}

impl ConvShape {
    fn check(&self, weights: &SparseWeights<'_, impl Real>) -> Result<()> {
        if self.kernel % 2 == 0 {
            return Err(Error::config("same-padded convolution needs an odd kernel"));
        }
        if weights.block != self.kernel * self.kernel {
            return Err(Error::config(format!(
                "kernel block {} does not match {k}x{k}",
                weights.block,
                k = self.kernel
            )));
        }
        check_layer(weights, self.in_maps, self.out_maps)
    }

    fn plane(&self) -> usize {
        self.height * self.width
    }

    /// Valid output range along one axis for kernel offset `d`, plus the input shift.
    fn span(&self, d: usize, len: usize) -> (usize, usize, isize) {
        let shift = d as isize - (self.kernel / 2) as isize;
        let lo = (-shift).max(0) as usize;
        let hi = (len as isize - shift).min(len as isize).max(0) as usize;
        (lo, hi, shift)
    }
}

/// Cross-correlation with zero padding; absent kernels contribute nothing.
pub fn conv2d_forward<T: Real>(
    input: &Matrix<T>,
    layer: &[SparseWeights<'_, T>],
    shape: ConvShape,
    layer_id: usize,
) -> Result<Matrix<T>> {
    if input.cols() != shape.in_maps * shape.plane() {
        return Err(Error::config(format!(
            "conv input has {} columns, expected {}x{}x{}",
            input.cols(),
            shape.in_maps,
            shape.height,
            shape.width
        )));
    }
    if !input.all_finite() {
        return Err(Error::Numeric { layer: layer_id });
    }
    let mut out = Matrix::zeros(input.rows(), shape.out_maps * shape.plane());
    for w in layer {
        conv2d_accumulate(input, *w, shape, &mut out)?;
    }
    Ok(out)
}

pub fn conv2d_accumulate<T: Real>(
    input: &Matrix<T>,
    weights: SparseWeights<'_, T>,
    shape: ConvShape,
    out: &mut Matrix<T>,
) -> Result<()> {
    shape.check(&weights)?;
    let (h, w, k, plane) = (shape.height, shape.width, shape.kernel, shape.plane());
    for b in 0..input.rows() {
        let x = input.row(b);
        let y = out.row_mut(b);
        for (n, &(i, o)) in weights.coords.iter().enumerate() {
            let kern = &weights.values[n * k * k..(n + 1) * k * k];
            let xin = &x[i as usize * plane..(i as usize + 1) * plane];
            let yout = &mut y[o as usize * plane..(o as usize + 1) * plane];
            for dy in 0..k {
                let (ylo, yhi, sy) = shape.span(dy, h);
                for dx in 0..k {
                    let wv = kern[dy * k + dx];
                    let (xlo, xhi, sx) = shape.span(dx, w);
                    for r in ylo..yhi {
                        let src = ((r as isize + sy) as usize) * w;
                        let dst = r * w;
                        for c in xlo..xhi {
                            yout[dst + c] += wv * xin[(src as isize + c as isize + sx) as usize];
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

/// Kernel gradients for one set, element-aligned with its values.
pub fn conv2d_weight_grads<T: Real>(
    upstream: &Matrix<T>,
    input: &Matrix<T>,
    weights: SparseWeights<'_, T>,
    shape: ConvShape,
) -> Result<GradBuffer<T>> {
    shape.check(&weights)?;
    let (h, w, k, plane) = (shape.height, shape.width, shape.kernel, shape.plane());
    let mut g = vec![T::zero(); weights.values.len()];
    for b in 0..input.rows() {
        let x = input.row(b);
        let up = upstream.row(b);
        for (n, &(i, o)) in weights.coords.iter().enumerate() {
            let xin = &x[i as usize * plane..(i as usize + 1) * plane];
            let uo = &up[o as usize * plane..(o as usize + 1) * plane];
            for dy in 0..k {
                let (ylo, yhi, sy) = shape.span(dy, h);
                for dx in 0..k {
                    let (xlo, xhi, sx) = shape.span(dx, w);
                    let mut acc = T::zero();
                    for r in ylo..yhi {
                        let src = ((r as isize + sy) as usize) * w;
                        for c in xlo..xhi {
                            acc += uo[r * w + c] * xin[(src as isize + c as isize + sx) as usize];
                        }
                    }
                    g[n * k * k + dy * k + dx] += acc;
                }
            }
        }
    }
    Ok(GradBuffer { values: g })
}

pub fn conv2d_input_grad_accumulate<T: Real>(
    upstream: &Matrix<T>,
    weights: SparseWeights<'_, T>,
    shape: ConvShape,
    grad_input: &mut Matrix<T>,
) -> Result<()> {
    shape.check(&weights)?;
    let (h, w, k, plane) = (shape.height, shape.width, shape.kernel, shape.plane());
    for b in 0..upstream.rows() {
        let up = upstream.row(b);
        let gi = grad_input.row_mut(b);
        for (n, &(i, o)) in weights.coords.iter().enumerate() {
            let kern = &weights.values[n * k * k..(n + 1) * k * k];
            let uo = &up[o as usize * plane..(o as usize + 1) * plane];
            let gin = &mut gi[i as usize * plane..(i as usize + 1) * plane];
            for dy in 0..k {
                let (ylo, yhi, sy) = shape.span(dy, h);
                for dx in 0..k {
                    let wv = kern[dy * k + dx];
                    let (xlo, xhi, sx) = shape.span(dx, w);
                    for r in ylo..yhi {
                        let src = ((r as isize + sy) as usize) * w;
                        for c in xlo..xhi {
                            gin[(src as isize + c as isize + sx) as usize] += wv * uo[r * w + c];
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

pub fn conv2d_backward<T: Real>(
    upstream: &Matrix<T>,
    input: &Matrix<T>,
    layer: &[SparseWeights<'_, T>],
    shape: ConvShape,
) -> Result<(Vec<GradBuffer<T>>, Matrix<T>)> {
    if upstream.cols() != shape.out_maps * shape.plane() || input.cols() != shape.in_maps * shape.plane() {
        return Err(Error::config("conv backward shapes inconsistent with forward"));
    }
    let mut grad_input = Matrix::zeros(input.rows(), input.cols());
    let mut grads = Vec::with_capacity(layer.len());
    for w in layer {
        grads.push(conv2d_weight_grads(upstream, input, *w, shape)?);
        conv2d_input_grad_accumulate(upstream, *w, shape, &mut grad_input)?;
    }
    Ok((grads, grad_input))
}

/// 2×2 max pooling with stride 2. Returns the pooled maps and, per output
/// element, the input column that won (first maximum in scan order).
pub fn maxpool2x2_forward<T: Real>(
    input: &Matrix<T>,
    maps: usize,
    height: usize,
    width: usize,
) -> Result<(Matrix<T>, Vec<u32>)> {
    if height % 2 != 0 || width % 2 != 0 || height == 0 || width == 0 {
        return Err(Error::config(format!("cannot 2x2-pool a {height}x{width} map")));
    }
    if input.cols() != maps * height * width {
        return Err(Error::config("pool input size does not match maps x height x width"));
    }
    let (oh, ow) = (height / 2, width / 2);
    let cols = maps * oh * ow;
    let mut out = Matrix::zeros(input.rows(), cols);
    let mut arg = vec![0u32; input.rows() * cols];
    for b in 0..input.rows() {
        let x = input.row(b);
        for m in 0..maps {
            for r in 0..oh {
                for c in 0..ow {
                    let base = m * height * width;
                    let mut best = base + 2 * r * width + 2 * c;
                    for (dr, dc) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * r + dr) * width + 2 * c + dc;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                    let o = m * oh * ow + r * ow + c;
                    out.set(b, o, x[best]);
                    arg[b * cols + o] = best as u32;
                }
            }
        }
    }
    Ok((out, arg))
}

pub fn maxpool2x2_backward<T: Real>(
    upstream: &Matrix<T>,
    argmax: &[u32],
    input_cols: usize,
) -> Result<Matrix<T>> {
    if argmax.len() != upstream.rows() * upstream.cols() {
        return Err(Error::config("pool argmax does not match upstream gradient"));
    }
    let mut g = Matrix::zeros(upstream.rows(), input_cols);
    for b in 0..upstream.rows() {
        let up = upstream.row(b);
        let idx = &argmax[b * upstream.cols()..(b + 1) * upstream.cols()];
        let gr = g.row_mut(b);
        for (&u, &i) in up.iter().zip(idx) {
            gr[i as usize] += u;
        }
    }
    Ok(g)
}
