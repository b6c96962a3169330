//! Whole-sequence LSTM kernels behind [`Graph::lstm_sequence`](crate::Graph::lstm_sequence).
//!
//! Rows are time-major: step `t` of batch entry `b` is row `t·B + b`.

use crate::real::{gemm, sigmoid, tanh, transpose_into, Real};

/// Forward intermediates kept for the backward pass.
#[derive(Clone, Debug)]
pub(crate) struct SequenceCache<T> {
    /// Gate activations `[i | f | g | o]`, `(T·B)×4h`.
    pub gates: Vec<T>,
    /// Cell states, `(T·B)×h`.
    pub cells: Vec<T>,
    pub tanh_c: Vec<T>,
}

pub(crate) fn step_order(steps: usize, reverse: bool) -> Vec<usize> {
    if reverse {
        (0..steps).rev().collect()
    } else {
        (0..steps).collect()
    }
}

/// Runs the recurrence over precomputed input projections. Returns the
/// hidden states `(T·B)×h` and the cache.
pub(crate) fn sequence_forward<T: Real>(
    xproj: &[T],
    w_h: &[T],
    batch: usize,
    hidden: usize,
    reverse: bool,
) -> (Vec<T>, SequenceCache<T>) {
    let h4 = 4 * hidden;
    let steps = xproj.len() / (batch * h4);
    let mut out = vec![T::zero(); steps * batch * hidden];
    let mut cache = SequenceCache {
        gates: vec![T::zero(); steps * batch * h4],
        cells: vec![T::zero(); steps * batch * hidden],
        tanh_c: vec![T::zero(); steps * batch * hidden],
    };
    let zeros = vec![T::zero(); batch * hidden];
    let mut pre = vec![T::zero(); batch * h4];
    let mut prev: Option<usize> = None;
    for t in step_order(steps, reverse) {
        let rows = t * batch..(t + 1) * batch;
        pre.copy_from_slice(&xproj[rows.start * h4..rows.end * h4]);
        if let Some(p) = prev {
            let h_prev = &out[p * batch * hidden..(p + 1) * batch * hidden];
            gemm(batch, hidden, h4, h_prev, false, w_h, false, &mut pre, true);
        }
        let c_prev: Vec<T> = match prev {
            Some(p) => cache.cells[p * batch * hidden..(p + 1) * batch * hidden].to_vec(),
            None => zeros.clone(),
        };
        for r in 0..batch {
            let pr = &pre[r * h4..(r + 1) * h4];
            let row = rows.start + r;
            let gr = &mut cache.gates[row * h4..(row + 1) * h4];
            for j in 0..hidden {
                let i = sigmoid(pr[j]);
                let f = sigmoid(pr[hidden + j]);
                let g = tanh(pr[2 * hidden + j]);
                let o = sigmoid(pr[3 * hidden + j]);
                let c = f * c_prev[r * hidden + j] + i * g;
                let tc = tanh(c);
                gr[j] = i;
                gr[hidden + j] = f;
                gr[2 * hidden + j] = g;
                gr[3 * hidden + j] = o;
                cache.cells[row * hidden + j] = c;
                cache.tanh_c[row * hidden + j] = tc;
                out[row * hidden + j] = o * tc;
            }
        }
        prev = Some(t);
    }
    (out, cache)
}

/// Backpropagation through time. Returns the gradient with respect to the
/// input projections and accumulates the recurrent weight gradient into
/// `dw_h` when given.
#[allow(clippy::too_many_arguments)]
pub(crate) fn sequence_backward<T: Real>(
    grad_out: &[T],
    hidden_states: &[T],
    cache: &SequenceCache<T>,
    w_h: &[T],
    batch: usize,
    hidden: usize,
    reverse: bool,
    dw_h: Option<&mut [T]>,
) -> Vec<T> {
    let h4 = 4 * hidden;
    let bh = batch * hidden;
    let steps = grad_out.len() / bh;
    let mut dpre = vec![T::zero(); steps * batch * h4];
    let mut dh_next = vec![T::zero(); bh];
    let mut dc_next = vec![T::zero(); bh];
    let order = step_order(steps, reverse);
    let w_t = transpose_into(w_h, hidden, h4);
    let one = T::one();
    for n in (0..steps).rev() {
        let t = order[n];
        let prev = (n > 0).then(|| order[n - 1]);
        for r in 0..batch {
            let row = t * batch + r;
            let gr = &cache.gates[row * h4..(row + 1) * h4];
            let dp = &mut dpre[row * h4..(row + 1) * h4];
            for j in 0..hidden {
                let k = r * hidden + j;
                let (i, f, g, o) = (gr[j], gr[hidden + j], gr[2 * hidden + j], gr[3 * hidden + j]);
                let tc = cache.tanh_c[row * hidden + j];
                let c_prev = prev.map_or(T::zero(), |p| cache.cells[p * bh + k]);
                let dh = grad_out[row * hidden + j] + dh_next[k];
                let dc = dc_next[k] + dh * o * (one - tc * tc);
                dp[j] = dc * g * i * (one - i);
                dp[hidden + j] = dc * c_prev * f * (one - f);
                dp[2 * hidden + j] = dc * i * (one - g * g);
                dp[3 * hidden + j] = dh * tc * o * (one - o);
                dc_next[k] = dc * f;
            }
        }
        if prev.is_some() {
            let dp = &dpre[t * batch * h4..(t + 1) * batch * h4];
            gemm(batch, h4, hidden, dp, false, &w_t, false, &mut dh_next, false);
        }
    }
    if let Some(dw) = dw_h {
        if steps > 1 {
            // Step t reads the state of step t-1 (forward) or t+1 (reverse);
            // both pairings are contiguous row ranges.
            let span = (steps - 1) * batch;
            let (h_prev, d) = if reverse {
                (&hidden_states[batch * hidden..], &dpre[..span * h4])
            } else {
                (&hidden_states[..span * hidden], &dpre[batch * h4..])
            };
            gemm(hidden, span, h4, h_prev, true, d, false, dw, true);
        }
    }
    dpre
}
