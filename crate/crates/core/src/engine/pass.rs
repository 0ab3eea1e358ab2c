//! Forward and backward passes through a stack of sparse layers.

use crate::error::{Error, Result};
use crate::tensor::{
    affine_accumulate, affine_input_grad_accumulate, affine_weight_grads, conv2d_accumulate,
    conv2d_input_grad_accumulate, conv2d_weight_grads, maxpool2x2_backward, maxpool2x2_forward,
    relu_backward_in_place, relu_in_place, GradBuffer, Matrix, SparseWeights,
};
use crate::topology::ConnectionSet;

use super::{LayerGeom, LayerKind};

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Pass {
    /// `acts[l]` feeds weight layer `l + 1`; the last entry holds the logits.
    pub acts: Vec<Matrix<f32>>,
    /// Hidden pre-activations, one per hidden layer.
    pre: Vec<Matrix<f32>>,
    /// Pool winners per hidden layer, with the pre-pool width.
    pool: Vec<Option<(Vec<u32>, usize)>>,
}

impl Pass {
    pub fn logits(&self) -> &Matrix<f32> {
        self.acts.last().expect("pass has logits")
    }

    /// Post-activation output of hidden neuron layer `l` (1-based).
    pub fn hidden(&self, l: usize) -> &Matrix<f32> {
        &self.acts[l]
    }
}

fn layer_forward(
    geom: &LayerGeom,
    sets: &[&ConnectionSet],
    input: &Matrix<f32>,
    layer_id: usize,
) -> Result<Matrix<f32>> {
    if !input.all_finite() {
        return Err(Error::Numeric { layer: layer_id });
    }
    let mut out = match geom.kind {
        LayerKind::Dense => Matrix::zeros(input.rows(), geom.cols),
        LayerKind::Conv { shape, .. } => Matrix::zeros(input.rows(), geom.cols * shape.height * shape.width),
    };
    for s in sets {
        match geom.kind {
            LayerKind::Dense => affine_accumulate(input, SparseWeights::from(*s), &mut out)?,
            LayerKind::Conv { shape, .. } => conv2d_accumulate(input, SparseWeights::from(*s), shape, &mut out)?,
        }
    }
    Ok(out)
}

/// Runs the network. `layers[l]` lists every set taking part in weight layer
/// `l + 1`; `bias` is added to the logits.
pub fn forward(geom: &[LayerGeom], layers: &[Vec<&ConnectionSet>], bias: &[f32], input: &Matrix<f32>) -> Result<Pass> {
    if layers.len() != geom.len() {
        return Err(Error::config("layer list does not match network depth"));
    }
    if input.cols() != geom[0].in_len {
        return Err(Error::config(format!("input width {} but network expects {}", input.cols(), geom[0].in_len)));
    }
    let depth = geom.len();
    let mut acts = vec![input.clone()];
    let mut pre = Vec::with_capacity(depth - 1);
    let mut pool = Vec::with_capacity(depth - 1);
    for (l, g) in geom.iter().enumerate() {
        let z = layer_forward(g, &layers[l], &acts[l], l + 1)?;
        if l + 1 == depth {
            let mut logits = z;
            if bias.len() != logits.cols() {
                return Err(Error::config("bias length does not match output units"));
            }
            for b in 0..logits.rows() {
                for (v, &c) in logits.row_mut(b).iter_mut().zip(bias) {
                    *v += c;
                }
            }
            if !logits.all_finite() {
                return Err(Error::Numeric { layer: depth });
            }
            acts.push(logits);
        } else {
            let mut a = z.clone();
            relu_in_place(&mut a);
            match g.kind {
                LayerKind::Conv { shape, pool: true } => {
                    let cols = a.cols();
                    let (p, arg) = maxpool2x2_forward(&a, g.cols, shape.height, shape.width)?;
                    pool.push(Some((arg, cols)));
                    acts.push(p);
                }
                _ => {
                    pool.push(None);
                    acts.push(a);
                }
            }
            pre.push(z);
        }
    }
    Ok(Pass { acts, pre, pool })
}

/// Logits only.
pub fn forward_logits(
    geom: &[LayerGeom],
    layers: &[Vec<&ConnectionSet>],
    bias: &[f32],
    input: &Matrix<f32>,
) -> Result<Matrix<f32>> {
    let mut p = forward(geom, layers, bias, input)?;
    Ok(p.acts.pop().expect("pass has logits"))
}

/// Gradients for the sets flagged in `want` (same shape as `layers`), plus
/// the bias gradient. Input gradients flow through every set.
pub fn backward(
    geom: &[LayerGeom],
    layers: &[Vec<&ConnectionSet>],
    want: &[Vec<bool>],
    pass: &Pass,
    dlogits: Matrix<f32>,
) -> Result<(Vec<Vec<Option<GradBuffer<f32>>>>, Vec<f32>)> {
    let depth = geom.len();
    let mut bias_grad = vec![0.0f32; dlogits.cols()];
    for b in 0..dlogits.rows() {
        for (g, &d) in bias_grad.iter_mut().zip(dlogits.row(b)) {
            *g += d;
        }
    }
    let mut grads: Vec<Vec<Option<GradBuffer<f32>>>> = layers.iter().map(|s| vec![None; s.len()]).collect();
    let mut up = dlogits;
    for l in (0..depth).rev() {
        let g = &geom[l];
        let input = &pass.acts[l];
        for (n, s) in layers[l].iter().enumerate() {
            if want[l][n] {
                let w = SparseWeights::from(*s);
                grads[l][n] = Some(match g.kind {
                    LayerKind::Dense => affine_weight_grads(&up, input, w)?,
                    LayerKind::Conv { shape, .. } => conv2d_weight_grads(&up, input, w, shape)?,
                });
            }
        }
        if l == 0 {
            break;
        }
        let mut down = Matrix::zeros(input.rows(), input.cols());
        for s in &layers[l] {
            let w = SparseWeights::from(*s);
            match g.kind {
                LayerKind::Dense => affine_input_grad_accumulate(&up, w, &mut down)?,
                LayerKind::Conv { shape, .. } => conv2d_input_grad_accumulate(&up, w, shape, &mut down)?,
            }
        }
        if let Some((arg, cols)) = &pass.pool[l - 1] {
            down = maxpool2x2_backward(&down, arg, *cols)?;
        }
        relu_backward_in_place(&mut down, &pass.pre[l - 1]);
        up = down;
    }
    Ok((grads, bias_grad))
}
