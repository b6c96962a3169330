//! Batched forward pass on the autodiff tape, used for training and
//! gradient checks.
//!
//! A batch of `B` windows with `T` rows each is laid out time-major as a
//! `(T·B)×d` matrix: row `t·B + b` is row `t` of window `b`.

use voxface_autograd::{Graph, Real, Tensor, Var};

use super::params::{ModelConfig, ModelParams};
use crate::error::Result;

#[derive(Clone, Copy, Debug)]
pub struct CellVars {
    pub w_x: Var,
    pub w_h: Var,
    pub b: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct LayerVars {
    pub forward: CellVars,
    pub backward: Option<CellVars>,
    pub combine_fwd: Var,
    pub combine_bwd: Option<Var>,
    pub combine_bias: Var,
}

/// Graph handles for every model tensor.
#[derive(Clone, Debug)]
pub struct ModelVars {
    pub config: ModelConfig,
    pub layer1: LayerVars,
    pub layer2: LayerVars,
    pub attention: Option<Var>,
    pub dense1: (Var, Var),
    pub dense2: (Var, Var),
    /// All handles in `ModelParams::named_tensors` order.
    pub all: Vec<Var>,
}

impl ModelVars {
    /// Places every tensor of `p` on the graph as a trainable leaf.
    pub fn attach<T: Real>(g: &mut Graph<T>, p: &ModelParams<T>) -> Self {
        let vars: Vec<Var> = p.tensors().into_iter().map(|t| g.param(t.clone())).collect();
        Self::from_vars(&p.config, &vars)
    }

    /// Interprets leaves already on the graph, listed in
    /// `ModelParams::named_tensors` order.
    pub fn from_vars(config: &ModelConfig, vars: &[Var]) -> Self {
        let mut it = vars.iter().copied();
        let mut next = || it.next().expect("one var per model tensor");
        let layer = |next: &mut dyn FnMut() -> Var| {
            let cell = |next: &mut dyn FnMut() -> Var| CellVars {
                w_x: next(),
                w_h: next(),
                b: next(),
            };
            let forward = cell(next);
            let backward = config.bidirectional.then(|| cell(next));
            let combine_fwd = next();
            let combine_bwd = config.bidirectional.then(&mut *next);
            LayerVars {
                forward,
                backward,
                combine_fwd,
                combine_bwd,
                combine_bias: next(),
            }
        };
        let layer1 = layer(&mut next);
        let layer2 = layer(&mut next);
        let attention = config.use_attention.then(&mut next);
        let dense1 = (next(), next());
        let dense2 = (next(), next());
        Self {
            config: config.clone(),
            layer1,
            layer2,
            attention,
            dense1,
            dense2,
            all: vars.to_vec(),
        }
    }
}

/// Hidden states `(T·B)×h` of one direction.
fn direction<T: Real>(g: &mut Graph<T>, x: Var, batch: usize, cell: CellVars, reverse: bool) -> Result<Var> {
    let proj = g.affine(x, cell.w_x, cell.b)?;
    Ok(g.lstm_sequence(proj, cell.w_h, batch, reverse)?)
}

/// `(T·B)×d → (T·B)×h` bidirectional layer.
pub fn layer_forward<T: Real>(g: &mut Graph<T>, x: Var, batch: usize, layer: &LayerVars) -> Result<Var> {
    let fwd = direction(g, x, batch, layer.forward, false)?;
    let mut h = g.affine(fwd, layer.combine_fwd, layer.combine_bias)?;
    if let (Some(cell), Some(w)) = (layer.backward, layer.combine_bwd) {
        let bwd = direction(g, x, batch, cell, true)?;
        let mixed = g.matmul(bwd, w)?;
        h = g.add(h, mixed)?;
    }
    Ok(h)
}

/// Attention pooling of a time-major `(T·B)×h` matrix: returns
/// `(y: B×h, alpha: B×T)`.
pub fn attention_forward<T: Real>(
    g: &mut Graph<T>,
    h: Var,
    batch: usize,
    steps: usize,
    w: Var,
) -> Result<(Var, Var)> {
    let hidden = g.value(h).cols();
    let squashed = g.tanh(h);
    let scores = g.matmul(squashed, w)?;
    let scores = g.reshape(scores, steps, batch)?;
    let scores = g.transpose(scores)?;
    let alpha = g.row_softmax(scores)?;
    let weights = g.transpose(alpha)?;
    let weights = g.reshape(weights, steps * batch, 1)?;
    let weighted = g.mul(h, weights)?;
    let weighted = g.reshape(weighted, steps, batch * hidden)?;
    let pooled = g.sum_rows(weighted)?;
    let pooled = g.reshape(pooled, batch, hidden)?;
    Ok((pooled, alpha))
}

pub struct GraphOutput {
    /// `B×51` predictions in (0, 1).
    pub output: Var,
    /// `B×T` attention weights.
    pub alpha: Option<Var>,
}

/// Full model over a time-major batch input.
pub fn forward_batch<T: Real>(g: &mut Graph<T>, vars: &ModelVars, input: Var, batch: usize) -> Result<GraphOutput> {
    let steps = vars.config.input_rows;
    let h1 = layer_forward(g, input, batch, &vars.layer1)?;
    let h2 = layer_forward(g, h1, batch, &vars.layer2)?;
    let (pooled, alpha) = match vars.attention {
        Some(w) => {
            let (y, a) = attention_forward(g, h2, batch, steps, w)?;
            (y, Some(a))
        }
        None => (g.slice_rows(h2, (steps - 1) * batch, batch)?, None),
    };
    let basis = g.affine(pooled, vars.dense1.0, vars.dense1.1)?;
    let basis = g.tanh(basis);
    let raw = g.affine(basis, vars.dense2.0, vars.dense2.1)?;
    Ok(GraphOutput {
        output: g.sigmoid(raw),
        alpha,
    })
}

/// Packs row-major `T×d` windows into the time-major batch layout.
pub fn time_major_batch<T: Real>(windows: &[&[T]], steps: usize, cols: usize) -> Tensor<T> {
    let batch = windows.len();
    let mut data = vec![T::zero(); steps * batch * cols];
    for (b, w) in windows.iter().enumerate() {
        for t in 0..steps {
            let dst = (t * batch + b) * cols;
            data[dst..dst + cols].copy_from_slice(&w[t * cols..(t + 1) * cols]);
        }
    }
    Tensor::matrix(steps * batch, cols, data).expect("consistent batch layout")
}
