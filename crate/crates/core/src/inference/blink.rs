use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::AnimTrack;
use crate::error::{Error, Result};
use crate::frontend::VIDEO_FPS;
use crate::network::{BlendshapeFrame, OUTPUT_DIM};

#[derive(Clone, Debug, PartialEq)]
pub struct BlinkConfig {
    /// 1-based blendshape parameter indices.
    pub indices: Vec<usize>,
    pub period_s: f64,
    pub duration_frames: usize,
    /// Peak value on the `[0, 1]` scale.
    pub amplitude: f64,
    /// Relative half-width of the uniform period jitter.
    pub jitter: f64,
}

impl Default for BlinkConfig {
    fn default() -> Self {
        Self {
            indices: vec![1, 2],
            period_s: 4.0,
            duration_frames: 6,
            amplitude: 1.0,
            jitter: 0.1,
        }
    }
}

impl BlinkConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self.indices.iter().find(|&&i| i == 0 || i > OUTPUT_DIM) {
            return Err(Error::Config(format!("blink index {i} outside 1..={OUTPUT_DIM}")));
        }
        if self.duration_frames == 0 {
            return Err(Error::Config("blink duration must be at least one frame".into()));
        }
        if !(self.period_s > 0.0 && self.period_s.is_finite()) {
            return Err(Error::Config(format!("blink period must be positive, got {}", self.period_s)));
        }
        if !(0.0..=1.0).contains(&self.amplitude) {
            return Err(Error::Config(format!("blink amplitude {} outside [0, 1]", self.amplitude)));
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return Err(Error::Config(format!("blink jitter {} outside [0, 1)", self.jitter)));
        }
        Ok(())
    }

    /// Pulse value `i` frames into a blink: rises linearly to the peak and
    /// falls back.
    pub fn pulse(&self, i: usize) -> f64 {
        let d = self.duration_frames;
        let peak = d.div_ceil(2) as f64;
        self.amplitude * (i + 1).min(d - i) as f64 / peak
    }

    /// First frame of every blink in a track of `len` frames. Blinks start
    /// one period in, each following interval scaled by `1 ± jitter`.
    pub fn onsets(&self, len: usize, seed: u64) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let period = self.period_s * f64::from(VIDEO_FPS);
        let mut out = Vec::new();
        let mut t = 0.0;
        loop {
            let scale = if self.jitter > 0.0 {
                1.0 + rng.gen_range(-self.jitter..self.jitter)
            } else {
                1.0
            };
            t += period * scale;
            let start = t.round() as usize;
            if start >= len {
                return out;
            }
            out.push(start);
        }
    }
}

/// Overlays periodic blinks on the configured parameters, keeping the larger
/// of the existing value and the pulse.
pub fn blink_inject(track: &AnimTrack, cfg: &BlinkConfig, seed: u64) -> Result<AnimTrack> {
    cfg.validate()?;
    let mut frames: Vec<Vec<f64>> = track.frames().iter().map(|f| f.params().to_vec()).collect();
    for start in cfg.onsets(frames.len(), seed) {
        for i in 0..cfg.duration_frames.min(frames.len() - start) {
            let v = cfg.pulse(i);
            for &j in &cfg.indices {
                let p = &mut frames[start + i][j - 1];
                *p = p.max(v);
            }
        }
    }
    Ok(AnimTrack::new(frames.into_iter().map(BlendshapeFrame::from_unchecked).collect()))
}
