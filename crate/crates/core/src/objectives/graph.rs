use voxface_autograd::{Graph, Real, Tensor, Var};

use super::LossConfig;
use crate::error::Result;

/// Graph nodes of a batch loss.
#[derive(Clone, Copy, Debug)]
pub struct GraphLoss {
    pub total: Var,
    pub target_term: Var,
    pub smooth_term: Option<Var>,
}

/// Batch loss on the tape.
///
/// `pred` and `target` are `N×51`. `segments` lists the lengths of the
/// consecutive runs of frames that form sequences; the smooth term averages
/// over adjacent pairs inside each run. With one segment this equals
/// [`total_loss`](super::total_loss).
pub fn graph_loss<T: Real>(
    g: &mut Graph<T>,
    pred: Var,
    target: Var,
    segments: &[usize],
    cfg: &LossConfig,
) -> Result<GraphLoss> {
    let diff = g.sub(pred, target)?;
    let hub = g.huber(diff, T::lit(cfg.delta));
    let target_term = g.mean_all(hub);
    let mut total = g.scale(target_term, T::lit(cfg.w1));

    let mut prev_idx = Vec::new();
    let mut start = 0;
    for &len in segments {
        prev_idx.extend(start..start + len.saturating_sub(1));
        start += len;
    }
    if prev_idx.is_empty() || cfg.w2 == 0.0 {
        return Ok(GraphLoss {
            total,
            target_term,
            smooth_term: None,
        });
    }
    let curr_idx: Vec<usize> = prev_idx.iter().map(|i| i + 1).collect();
    let prev = g.gather_rows(pred, &prev_idx)?;
    let curr = g.gather_rows(pred, &curr_idx)?;
    let pc = g.mul(prev, curr)?;
    let dot = g.sum_cols(pc)?;
    let pp = g.mul(prev, prev)?;
    let pp = g.sum_cols(pp)?;
    let cc = g.mul(curr, curr)?;
    let cc = g.sum_cols(cc)?;
    let norms = g.mul(pp, cc)?;
    let norms = g.sqrt(norms);
    let cos = g.div(dot, norms)?;
    let mean_cos = g.mean_all(cos);
    let one = g.constant(Tensor::scalar(T::one()));
    let smooth_term = g.sub(one, mean_cos)?;
    let weighted = g.scale(smooth_term, T::lit(cfg.w2));
    total = g.add(total, weighted)?;
    Ok(GraphLoss {
        total,
        target_term,
        smooth_term: Some(smooth_term),
    })
}
