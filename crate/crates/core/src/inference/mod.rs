//! Sliding-window inference, streaming, latency measurement and
//! post-processing of predicted tracks.

mod blink;
mod latency;
mod rig;
mod stream;

pub use blink::{blink_inject, BlinkConfig};
pub use latency::{LatencyReport, FRAME_BUDGET_MS, LOOKAHEAD_S};
pub use rig::{retarget, write_rig_track, RigMap, RigTrack};
pub use stream::{stream_infer, StreamInfer};

use std::time::Instant;

use voxface_autograd::Tensor;

use crate::dataset::{synth_audio, AnimTrack};
use crate::error::{Error, Result};
use crate::frontend::{window_with, AudioClip, ClipFeatures, FeatureExtractor, Normalizer, SAMPLES_PER_FRAME, WINDOW_FRAMES};
use crate::network::{model_forward, BlendshapeFrame, ModelParams};
use crate::trainer::Checkpoint;

/// A checkpoint prepared for per-window evaluation.
#[derive(Clone, Debug)]
pub struct InferenceModel {
    params: ModelParams<f32>,
    normalizer: Normalizer,
    extractor: FeatureExtractor,
}

impl InferenceModel {
    pub fn new(ckpt: &Checkpoint) -> Result<Self> {
        let extractor = FeatureExtractor::new(&ckpt.features)?;
        let cols = ckpt.features.coeff_count();
        let cfg = ckpt.model_config();
        if cfg.input_cols != cols || cfg.input_rows != WINDOW_FRAMES || ckpt.normalizer.cols() != cols {
            return Err(Error::Corrupt(format!(
                "checkpoint model expects {}x{} input, features give {WINDOW_FRAMES}x{cols}, normalizer has {} columns",
                cfg.input_rows,
                cfg.input_cols,
                ckpt.normalizer.cols()
            )));
        }
        Ok(Self {
            params: ckpt.params.clone(),
            normalizer: ckpt.normalizer.clone(),
            extractor,
        })
    }

    pub fn extractor(&self) -> &FeatureExtractor {
        &self.extractor
    }

    pub fn cols(&self) -> usize {
        self.extractor.config().coeff_count()
    }

    /// Normalizes raw `64×K` window rows and runs the model.
    pub fn forward_window(&self, rows: &[f64]) -> Result<BlendshapeFrame> {
        let mut z = Vec::with_capacity(rows.len());
        self.normalizer.apply_slice(rows, &mut z);
        let input = Tensor::matrix(WINDOW_FRAMES, self.cols(), z.into_iter().map(|v| v as f32).collect())?;
        let out = model_forward(&input, &self.params)?;
        BlendshapeFrame::new(out.params.into_iter().map(f64::from).collect())
    }
}

/// One predicted frame per complete video frame of `clip`.
pub fn infer_track(clip: &AudioClip, ckpt: &Checkpoint) -> Result<AnimTrack> {
    let model = InferenceModel::new(ckpt)?;
    let cache = ClipFeatures::compute(clip, model.extractor())?;
    let frames = (0..cache.video_frames())
        .map(|k| model.forward_window(cache.window_slice(k)?))
        .collect::<Result<_>>()?;
    Ok(AnimTrack::new(frames))
}

/// Times full feature-window extraction and the forward pass separately on
/// `n_windows` consecutive frames of seeded synthetic audio. Returns the
/// timings and the predicted frames.
pub fn bench(ckpt: &Checkpoint, n_windows: usize, seed: u64) -> Result<(LatencyReport, AnimTrack)> {
    if n_windows == 0 {
        return Err(Error::Config("bench needs at least one window".into()));
    }
    let model = InferenceModel::new(ckpt)?;
    let seconds = (n_windows * SAMPLES_PER_FRAME) as f64 / f64::from(crate::frontend::SAMPLE_RATE);
    let clip = synth_audio(seed, seconds)?;
    let mut report = LatencyReport::default();
    let mut frames = Vec::with_capacity(n_windows);
    for k in 0..n_windows {
        let t0 = Instant::now();
        let window = window_with(model.extractor(), &clip, k)?;
        let t1 = Instant::now();
        frames.push(model.forward_window(window.coeffs())?);
        let t2 = Instant::now();
        report.record(t1 - t0, t2 - t1);
    }
    Ok((report, AnimTrack::new(frames)))
}
