//! Training objectives and evaluation metrics.
//!
//! The loss combines a Huber target term with a smoothness term
//! `1 − cos(y_{i−1}, y_i)` over adjacent predicted frames:
//!
//! ```text
//! total = w1 · mean_i huber(y_i, ŷ_i) + w2 · mean_{pairs} (1 − cos(ŷ_{i−1}, ŷ_i))
//! ```
//!
//! Huber values are averaged over the 51 components so `delta` keeps the
//! same meaning for every normalized parameter.

mod graph;

pub use graph::{graph_loss, GraphLoss};

use crate::dataset::AnimTrack;
use crate::error::{Error, Result};
use crate::network::BlendshapeFrame;

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub w1: f64,
    pub w2: f64,
    pub delta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            w1: 1.0,
            w2: 0.5,
            delta: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.w1 >= 0.0 && self.w2 >= 0.0 && self.delta > 0.0;
        if !ok || !(self.w1.is_finite() && self.w2.is_finite() && self.delta.is_finite()) {
            return Err(Error::Config(format!(
                "loss weights must be nonnegative and delta positive: w1={} w2={} delta={}",
                self.w1, self.w2, self.delta
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub target_term: f64,
    pub smooth_term: f64,
    /// Adjacent pairs skipped because one frame had zero norm.
    pub degenerate_pairs: usize,
}

/// Huber penalty of a single residual.
pub fn huber_value(e: f64, delta: f64) -> f64 {
    let a = e.abs();
    if a <= delta {
        0.5 * e * e
    } else {
        delta * a - 0.5 * delta * delta
    }
}

fn check_same_len(what: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Length {
            what,
            expected: a,
            got: b,
        });
    }
    Ok(())
}

/// Mean Huber penalty over the components of `target − pred`.
pub fn huber(target: &[f64], pred: &[f64], delta: f64) -> Result<f64> {
    check_same_len("huber operands", target.len(), pred.len())?;
    if target.is_empty() {
        return Err(Error::Empty("huber operands"));
    }
    let sum: f64 = target.iter().zip(pred).map(|(y, p)| huber_value(y - p, delta)).sum();
    Ok(sum / target.len() as f64)
}

/// Cosine distance `1 − cos(prev, curr)`; `None` when either vector has zero norm.
pub fn smooth_loss(prev: &[f64], curr: &[f64]) -> Result<Option<f64>> {
    check_same_len("smooth operands", prev.len(), curr.len())?;
    let dot: f64 = prev.iter().zip(curr).map(|(a, b)| a * b).sum();
    let np = prev.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nc = curr.iter().map(|v| v * v).sum::<f64>().sqrt();
    if np == 0.0 || nc == 0.0 {
        return Ok(None);
    }
    Ok(Some(1.0 - dot / (np * nc)))
}

/// Loss of a predicted frame sequence against its targets.
pub fn total_loss(pred: &[BlendshapeFrame], target: &[BlendshapeFrame], cfg: &LossConfig) -> Result<LossReport> {
    check_same_len("loss sequences", target.len(), pred.len())?;
    if pred.is_empty() {
        return Err(Error::Empty("loss sequences"));
    }
    let n = pred.len();
    let mut target_sum = 0.0;
    for (y, p) in target.iter().zip(pred) {
        target_sum += huber(y.params(), p.params(), cfg.delta)?;
    }
    let mut smooth_sum = 0.0;
    let mut degenerate_pairs = 0;
    for pair in pred.windows(2) {
        match smooth_loss(pair[0].params(), pair[1].params())? {
            Some(v) => smooth_sum += v,
            None => degenerate_pairs += 1,
        }
    }
    let target_term = target_sum / n as f64;
    let smooth_term = smooth_sum / (n - 1).max(1) as f64;
    Ok(LossReport {
        total: cfg.w1 * target_term + cfg.w2 * smooth_term,
        target_term,
        smooth_term,
        degenerate_pairs,
    })
}

/// Root mean squared component error over all frames.
pub fn rmse(pred: &AnimTrack, reference: &AnimTrack) -> Result<f64> {
    check_same_len("track frames", reference.len(), pred.len())?;
    if pred.is_empty() {
        return Err(Error::Empty("tracks"));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (a, b) in pred.frames().iter().zip(reference.frames()) {
        for (x, y) in a.params().iter().zip(b.params()) {
            sum += (x - y) * (x - y);
            count += 1;
        }
    }
    Ok((sum / count as f64).sqrt())
}

/// Mean over adjacent frames of the L1 parameter change divided by the
/// parameter count.
pub fn jitter(track: &AnimTrack) -> Result<f64> {
    if track.len() < 2 {
        return Err(Error::Length {
            what: "jitter track frames (minimum)",
            expected: 2,
            got: track.len(),
        });
    }
    let frames = track.frames();
    let total: f64 = frames
        .windows(2)
        .map(|w| {
            let l1: f64 = w[0].params().iter().zip(w[1].params()).map(|(a, b)| (a - b).abs()).sum();
            l1 / w[0].params().len() as f64
        })
        .sum();
    Ok(total / (frames.len() - 1) as f64)
}
