//! Graph-free forward pass used for inference.

use voxface_autograd::{gemm, sigmoid, tanh, Real, Tensor};

use super::params::{AttentionParams, BiLstmLayerParams, LstmCellParams, ModelParams, OUTPUT_DIM};
use crate::error::{Error, Result};

/// Applies gate nonlinearities to packed pre-activations, writing `h` and `c`.
fn gates<T: Real>(pre: &[T], c_prev: &[T], h: &mut [T], c: &mut [T]) {
    let n = c_prev.len();
    for j in 0..n {
        let i = sigmoid(pre[j]);
        let f = sigmoid(pre[n + j]);
        let g = tanh(pre[2 * n + j]);
        let o = sigmoid(pre[3 * n + j]);
        c[j] = f * c_prev[j] + i * g;
        h[j] = o * tanh(c[j]);
    }
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Length { what, expected, got });
    }
    Ok(())
}

/// One LSTM step: `(h, c)` from input `x` and the previous state.
pub fn lstm_cell_step<T: Real>(
    x: &[T],
    h_prev: &[T],
    c_prev: &[T],
    p: &LstmCellParams<T>,
) -> Result<(Vec<T>, Vec<T>)> {
    let hidden = p.hidden_size();
    check_len("lstm input", p.input_size(), x.len())?;
    check_len("lstm hidden state", hidden, h_prev.len())?;
    check_len("lstm cell state", hidden, c_prev.len())?;
    let mut pre = p.b.data().to_vec();
    gemm(1, x.len(), 4 * hidden, x, false, p.w_x.data(), false, &mut pre, true);
    gemm(1, hidden, 4 * hidden, h_prev, false, p.w_h.data(), false, &mut pre, true);
    let mut h = vec![T::zero(); hidden];
    let mut c = vec![T::zero(); hidden];
    gates(&pre, c_prev, &mut h, &mut c);
    Ok((h, c))
}

/// Hidden states of one direction over a `T×d` sequence, in time order.
fn run_direction<T: Real>(seq: &Tensor<T>, p: &LstmCellParams<T>, reverse: bool) -> Result<Tensor<T>> {
    let (steps, d) = seq.dims2()?;
    check_len("lstm input", p.input_size(), d)?;
    let hidden = p.hidden_size();
    let h4 = 4 * hidden;
    let mut xproj = vec![T::zero(); steps * h4];
    gemm(steps, d, h4, seq.data(), false, p.w_x.data(), false, &mut xproj, false);
    let mut out = vec![T::zero(); steps * hidden];
    let mut h = vec![T::zero(); hidden];
    let mut c = vec![T::zero(); hidden];
    let mut c_next = vec![T::zero(); hidden];
    let mut pre = vec![T::zero(); h4];
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..steps).rev())
    } else {
        Box::new(0..steps)
    };
    for (n, t) in order.enumerate() {
        for ((dst, &x), &b) in pre.iter_mut().zip(&xproj[t * h4..(t + 1) * h4]).zip(p.b.data()) {
            *dst = x + b;
        }
        if n > 0 {
            gemm(1, hidden, h4, &h, false, p.w_h.data(), false, &mut pre, true);
        }
        gates(&pre, &c, &mut h, &mut c_next);
        std::mem::swap(&mut c, &mut c_next);
        out[t * hidden..(t + 1) * hidden].copy_from_slice(&h);
    }
    Ok(Tensor::matrix(steps, hidden, out)?)
}

/// Bidirectional layer over a `T×d` sequence, returning `T×h`.
pub fn bilstm_forward<T: Real>(seq: &Tensor<T>, p: &BiLstmLayerParams<T>) -> Result<Tensor<T>> {
    if seq.rows() == 0 {
        return Err(Error::Empty("input sequence"));
    }
    let fwd = run_direction(seq, &p.forward, false)?;
    let mut h = fwd.matmul(&p.combine_fwd)?;
    if let (Some(cell), Some(w)) = (&p.backward, &p.combine_bwd) {
        let bwd = run_direction(seq, cell, true)?;
        let (steps, hidden) = h.dims2()?;
        gemm(steps, hidden, hidden, bwd.data(), false, w.data(), false, h.data_mut(), true);
    }
    let hidden = h.cols();
    for row in h.data_mut().chunks_exact_mut(hidden) {
        for (v, &b) in row.iter_mut().zip(p.combine_bias.data()) {
            *v += b;
        }
    }
    Ok(h)
}

/// Softmax-weighted sum of the rows of `h`, scored by `wᵀ·tanh(h_t)`.
pub fn attention_pool<T: Real>(h: &Tensor<T>, p: &AttentionParams<T>) -> Result<(Vec<T>, Vec<T>)> {
    let (steps, hidden) = h.dims2()?;
    if steps == 0 {
        return Err(Error::Empty("attention input"));
    }
    check_len("attention vector", hidden, p.w.len())?;
    let w = p.w.data();
    let scores: Vec<T> = (0..steps)
        .map(|t| {
            h.row_slice(t)
                .iter()
                .zip(w)
                .fold(T::zero(), |acc, (&v, &wj)| acc + wj * tanh(v))
        })
        .collect();
    let max = scores.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let mut alpha: Vec<T> = scores.iter().map(|&s| (s - max).exp()).collect();
    let total = alpha.iter().fold(T::zero(), |a, &b| a + b);
    alpha.iter_mut().for_each(|a| *a = *a / total);
    let mut y = vec![T::zero(); hidden];
    for (t, &a) in alpha.iter().enumerate() {
        for (yj, &v) in y.iter_mut().zip(h.row_slice(t)) {
            *yj += a * v;
        }
    }
    Ok((y, alpha))
}

/// `sigmoid(tanh(y·D1 + b1)·D2 + b2)`: 51 values in (0, 1).
pub fn output_head<T: Real>(y: &[T], p: &ModelParams<T>) -> Result<Vec<T>> {
    check_len("pooled vector", p.dense1.w.rows(), y.len())?;
    let basis_n = p.dense1.w.cols();
    let mut basis = p.dense1.b.data().to_vec();
    gemm(1, y.len(), basis_n, y, false, p.dense1.w.data(), false, &mut basis, true);
    basis.iter_mut().for_each(|v| *v = tanh(*v));
    let mut raw = p.dense2.b.data().to_vec();
    gemm(1, basis_n, OUTPUT_DIM, &basis, false, p.dense2.w.data(), false, &mut raw, true);
    Ok(raw.into_iter().map(sigmoid).collect())
}

/// Model output for one normalized window.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelOutput<T> {
    pub params: Vec<T>,
    /// Attention weights over window rows, absent without attention.
    pub alpha: Option<Vec<T>>,
}

/// Two recurrent layers, pooling and the output head for one `64×39` window.
pub fn model_forward<T: Real>(input: &Tensor<T>, p: &ModelParams<T>) -> Result<ModelOutput<T>> {
    let cfg = &p.config;
    if input.shape() != [cfg.input_rows, cfg.input_cols] {
        return Err(Error::Length {
            what: "model input",
            expected: cfg.input_rows * cfg.input_cols,
            got: input.len(),
        });
    }
    let h1 = bilstm_forward(input, &p.layer1)?;
    let h2 = bilstm_forward(&h1, &p.layer2)?;
    let (pooled, alpha) = match &p.attention {
        Some(att) => {
            let (y, a) = attention_pool(&h2, att)?;
            (y, Some(a))
        }
        None => (h2.row_slice(h2.rows() - 1).to_vec(), None),
    };
    Ok(ModelOutput {
        params: output_head(&pooled, p)?,
        alpha,
    })
}
