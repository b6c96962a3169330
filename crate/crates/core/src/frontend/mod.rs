//! Audio ingestion and per-video-frame acoustic feature windows.
//!
//! Video runs at 30 FPS against 44.1 kHz audio, so each video frame owns
//! 1470 samples. The window for frame `k` spans 64 analysis frames of 2940
//! samples at a 1470 hop, centred on the frame's own samples with 47,040
//! samples (about 1.067 s) of context on each side. Samples outside the
//! clip read as zero.
//!
//! Because the analysis frames of every window sit on the global 1470-sample
//! grid, analysis frame `g` covers samples `[g·1470, g·1470 + 2940)` no matter
//! which window it belongs to. [`ClipFeatures`] exploits this to compute each
//! analysis frame once per clip.

mod dump;
mod lpc;
mod mfcc;
mod normalize;
mod wav;

pub use dump::{read_feature_dump, write_feature_dump, DUMP_MAGIC, DUMP_VERSION};
pub use lpc::{levinson_durbin, lpc_frame};
pub use mfcc::{mfcc_frame, MfccExtractor};
pub use normalize::{Normalizer, NormalizerAccumulator, STD_FLOOR};
pub use wav::{load_wav, quantize_sample, save_wav};

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 44_100;
pub const VIDEO_FPS: u32 = 30;
/// Audio samples per video frame.
pub const SAMPLES_PER_FRAME: usize = 1470;
/// Analysis frames per feature window.
pub const WINDOW_FRAMES: usize = 64;
/// Context samples on each side of a video frame's own samples.
pub const CONTEXT_SAMPLES: usize = 47_040;
/// Total raw samples behind one feature window.
pub const RAW_WINDOW_SAMPLES: usize = 2 * CONTEXT_SAMPLES + SAMPLES_PER_FRAME;
/// Analysis frames of context before a video frame's first analysis frame.
pub(crate) const LEAD_FRAMES: usize = CONTEXT_SAMPLES / SAMPLES_PER_FRAME;

/// Mono 44.1 kHz audio with samples in [-1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    samples: Vec<f32>,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>) -> Result<Self> {
        if let Some((i, s)) = samples
            .iter()
            .enumerate()
            .find(|(_, s)| !s.is_finite() || s.abs() > 1.0)
        {
            return Err(Error::Config(format!("sample {i} = {s} outside [-1, 1]")));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate(&self) -> u32 {
        SAMPLE_RATE
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(SAMPLE_RATE)
    }

    /// Sample at a signed index, zero outside the clip.
    fn padded(&self, i: i64) -> f32 {
        if i < 0 {
            0.0
        } else {
            self.samples.get(i as usize).copied().unwrap_or(0.0)
        }
    }

    /// `len` samples starting at signed offset `start`, zero-padded.
    pub fn padded_range(&self, start: i64, len: usize) -> Vec<f32> {
        (0..len as i64).map(|i| self.padded(start + i)).collect()
    }
}

/// Number of complete video frames in a clip.
pub fn video_frame_count(clip: &AudioClip) -> usize {
    clip.len() / SAMPLES_PER_FRAME
}

/// The 95,550 zero-padded samples feeding video frame `frame_index`.
pub fn extract_raw_window(clip: &AudioClip, frame_index: usize) -> Result<Vec<f32>> {
    let count = video_frame_count(clip);
    if frame_index >= count {
        return Err(Error::FrameOutOfRange {
            index: frame_index,
            count,
        });
    }
    let start = (frame_index * SAMPLES_PER_FRAME) as i64 - CONTEXT_SAMPLES as i64;
    Ok(clip.padded_range(start, RAW_WINDOW_SAMPLES))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureKind {
    Mfcc,
    Lpc,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureConfig {
    pub kind: FeatureKind,
    pub n_coeffs: usize,
    pub frame_len_samples: usize,
    pub hop_samples: usize,
    pub fft_size: usize,
    pub n_mel_filters: usize,
    pub mel_low_hz: f32,
    pub mel_high_hz: f32,
    pub preemphasis: f32,
    pub lpc_order: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            kind: FeatureKind::Mfcc,
            n_coeffs: 39,
            frame_len_samples: 2 * SAMPLES_PER_FRAME,
            hop_samples: SAMPLES_PER_FRAME,
            fft_size: 4096,
            n_mel_filters: 40,
            mel_low_hz: 0.0,
            mel_high_hz: 8000.0,
            preemphasis: 0.97,
            lpc_order: 39,
        }
    }
}

impl FeatureConfig {
    pub fn lpc() -> Self {
        Self {
            kind: FeatureKind::Lpc,
            ..Self::default()
        }
    }

    /// Columns of a feature window for this configuration.
    pub fn coeff_count(&self) -> usize {
        match self.kind {
            FeatureKind::Mfcc => self.n_coeffs,
            FeatureKind::Lpc => self.lpc_order,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.hop_samples != SAMPLES_PER_FRAME || self.frame_len_samples != 2 * self.hop_samples {
            return bad(format!(
                "frame/hop must be 2940/1470 samples, got {}/{}",
                self.frame_len_samples, self.hop_samples
            ));
        }
        if self.n_coeffs == 0 || self.n_coeffs > self.n_mel_filters {
            return bad(format!(
                "n_coeffs {} must be in 1..={}",
                self.n_coeffs, self.n_mel_filters
            ));
        }
        if self.fft_size < self.frame_len_samples {
            return bad(format!(
                "fft_size {} shorter than frame {}",
                self.fft_size, self.frame_len_samples
            ));
        }
        let nyquist = SAMPLE_RATE as f32 / 2.0;
        if !(0.0 <= self.mel_low_hz && self.mel_low_hz < self.mel_high_hz && self.mel_high_hz <= nyquist) {
            return bad(format!(
                "mel band {}..{} Hz invalid",
                self.mel_low_hz, self.mel_high_hz
            ));
        }
        if !self.preemphasis.is_finite() || self.lpc_order == 0 {
            return bad("preemphasis must be finite and lpc_order positive".into());
        }
        Ok(())
    }
}

/// One analysis-frame extractor for either feature kind.
#[derive(Clone)]
pub struct FeatureExtractor {
    cfg: FeatureConfig,
    mfcc: Option<MfccExtractor>,
}

impl std::fmt::Debug for FeatureExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FeatureExtractor").field("cfg", &self.cfg).finish()
    }
}

impl FeatureExtractor {
    pub fn new(cfg: &FeatureConfig) -> Result<Self> {
        cfg.validate()?;
        let mfcc = match cfg.kind {
            FeatureKind::Mfcc => Some(MfccExtractor::new(cfg)?),
            FeatureKind::Lpc => None,
        };
        Ok(Self {
            cfg: cfg.clone(),
            mfcc,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    pub fn frame(&self, samples: &[f32]) -> Result<Vec<f64>> {
        match &self.mfcc {
            Some(m) => m.frame(samples),
            None => lpc_frame(samples, &self.cfg),
        }
    }

    /// Analysis frame on the global hop grid: samples `[g·hop, g·hop + frame_len)`.
    pub fn grid_frame(&self, clip: &AudioClip, g: i64) -> Result<Vec<f64>> {
        let start = g * self.cfg.hop_samples as i64;
        self.frame(&clip.padded_range(start, self.cfg.frame_len_samples))
    }
}

/// 64×K matrix of analysis-frame coefficients feeding one video frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureWindow {
    cols: usize,
    coeffs: Vec<f64>,
    pub frame_index: usize,
}

impl FeatureWindow {
    pub fn new(frame_index: usize, cols: usize, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != WINDOW_FRAMES * cols {
            return Err(Error::Length {
                what: "feature window",
                expected: WINDOW_FRAMES * cols,
                got: coeffs.len(),
            });
        }
        Ok(Self {
            cols,
            coeffs,
            frame_index,
        })
    }

    pub fn rows(&self) -> usize {
        WINDOW_FRAMES
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.coeffs[r * self.cols..(r + 1) * self.cols]
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.coeffs[r * self.cols + c]
    }
}

/// Feature window for one video frame, computed directly from the raw
/// 95,550-sample window. Rows run oldest to newest.
pub fn feature_window(clip: &AudioClip, frame_index: usize, cfg: &FeatureConfig) -> Result<FeatureWindow> {
    let extractor = FeatureExtractor::new(cfg)?;
    window_with(&extractor, clip, frame_index)
}

pub(crate) fn window_with(
    extractor: &FeatureExtractor,
    clip: &AudioClip,
    frame_index: usize,
) -> Result<FeatureWindow> {
    let raw = extract_raw_window(clip, frame_index)?;
    let cfg = extractor.config();
    let cols = cfg.coeff_count();
    let mut coeffs = Vec::with_capacity(WINDOW_FRAMES * cols);
    for r in 0..WINDOW_FRAMES {
        let start = r * cfg.hop_samples;
        coeffs.extend(extractor.frame(&raw[start..start + cfg.frame_len_samples])?);
    }
    FeatureWindow::new(frame_index, cols, coeffs)
}

/// Every analysis frame a clip's windows touch, computed once.
///
/// Row `k + r` of the cache is row `r` of frame `k`'s window, so consecutive
/// windows share 63 rows.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipFeatures {
    cols: usize,
    n_video_frames: usize,
    rows: Vec<f64>,
}

impl ClipFeatures {
    pub fn compute(clip: &AudioClip, extractor: &FeatureExtractor) -> Result<Self> {
        let n = video_frame_count(clip);
        let cols = extractor.config().coeff_count();
        let n_rows = if n == 0 { 0 } else { n + WINDOW_FRAMES - 1 };
        let mut rows = Vec::with_capacity(n_rows * cols);
        for i in 0..n_rows {
            let g = i as i64 - LEAD_FRAMES as i64;
            rows.extend(extractor.grid_frame(clip, g)?);
        }
        Ok(Self {
            cols,
            n_video_frames: n,
            rows,
        })
    }

    pub fn video_frames(&self) -> usize {
        self.n_video_frames
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Every cached analysis row, row-major.
    pub fn rows(&self) -> &[f64] {
        &self.rows
    }

    /// Row-major window data for frame `k` without copying.
    pub fn window_slice(&self, k: usize) -> Result<&[f64]> {
        if k >= self.n_video_frames {
            return Err(Error::FrameOutOfRange {
                index: k,
                count: self.n_video_frames,
            });
        }
        Ok(&self.rows[k * self.cols..(k + WINDOW_FRAMES) * self.cols])
    }

    pub fn window(&self, k: usize) -> Result<FeatureWindow> {
        FeatureWindow::new(k, self.cols, self.window_slice(k)?.to_vec())
    }
}

/// Windows for every video frame of a clip, in frame order.
pub fn clip_windows(clip: &AudioClip, cfg: &FeatureConfig) -> Result<Vec<FeatureWindow>> {
    let extractor = FeatureExtractor::new(cfg)?;
    let cache = ClipFeatures::compute(clip, &extractor)?;
    (0..cache.video_frames()).map(|k| cache.window(k)).collect()
}
