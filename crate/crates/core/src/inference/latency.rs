use std::fmt::Write as _;
use std::time::Duration;

use crate::frontend::{CONTEXT_SAMPLES, SAMPLE_RATE, SAMPLES_PER_FRAME};

/// Future audio a window needs before its frame can be produced.
pub const LOOKAHEAD_S: f64 = CONTEXT_SAMPLES as f64 / SAMPLE_RATE as f64;
/// Wall time available per frame at 30 FPS.
pub const FRAME_BUDGET_MS: f64 = 1000.0 * SAMPLES_PER_FRAME as f64 / SAMPLE_RATE as f64;

/// Per-window feature and forward timings in milliseconds.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LatencyReport {
    pub feat_ms: Vec<f64>,
    pub forward_ms: Vec<f64>,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Nearest-rank percentile.
fn percentile(v: &[f64], p: f64) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * s.len() as f64).ceil() as usize;
    s[rank.clamp(1, s.len()) - 1]
}

impl LatencyReport {
    pub fn record(&mut self, feat: Duration, forward: Duration) {
        self.feat_ms.push(feat.as_secs_f64() * 1e3);
        self.forward_ms.push(forward.as_secs_f64() * 1e3);
    }

    pub fn windows(&self) -> usize {
        self.feat_ms.len()
    }

    pub fn lookahead_s(&self) -> f64 {
        LOOKAHEAD_S
    }

    pub fn total_ms(&self) -> Vec<f64> {
        self.feat_ms.iter().zip(&self.forward_ms).map(|(a, b)| a + b).collect()
    }

    pub fn mean_feat_ms(&self) -> f64 {
        mean(&self.feat_ms)
    }

    pub fn mean_forward_ms(&self) -> f64 {
        mean(&self.forward_ms)
    }

    pub fn mean_total_ms(&self) -> f64 {
        mean(&self.total_ms())
    }

    pub fn p95_total_ms(&self) -> f64 {
        percentile(&self.total_ms(), 95.0)
    }

    pub fn max_total_ms(&self) -> f64 {
        self.total_ms().into_iter().fold(f64::NAN, f64::max)
    }

    /// Mean per-window cost fits in one frame period.
    pub fn real_time(&self) -> bool {
        self.mean_total_ms() < FRAME_BUDGET_MS
    }

    /// `window,feat_ms,forward_ms` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("window,feat_ms,forward_ms\n");
        for (i, (f, m)) in self.feat_ms.iter().zip(&self.forward_ms).enumerate() {
            let _ = writeln!(out, "{i},{f:.6},{m:.6}");
        }
        out
    }

    pub fn table(&self) -> String {
        let row = |name: &str, v: &[f64]| {
            format!(
                "{name:<8} {:>10.4} {:>10.4} {:>10.4}\n",
                mean(v),
                percentile(v, 95.0),
                v.iter().copied().fold(f64::NAN, f64::max)
            )
        };
        let total = self.total_ms();
        let mut out = format!("windows: {}\n{:<8} {:>10} {:>10} {:>10}\n", self.windows(), "ms", "mean", "p95", "max");
        out.push_str(&row("feature", &self.feat_ms));
        out.push_str(&row("forward", &self.forward_ms));
        out.push_str(&row("total", &total));
        let _ = writeln!(
            out,
            "frame budget {FRAME_BUDGET_MS:.2} ms: {}",
            if self.real_time() { "met" } else { "missed" }
        );
        let _ = writeln!(out, "structural lookahead: {LOOKAHEAD_S:.4} s");
        out
    }
}
