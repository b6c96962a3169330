//! Paired audio and animation data, manifests, splitting and the synthetic
//! generator.

mod manifest;
mod synth;
mod track;

pub use manifest::{split, write_synth_dataset, DatasetManifest, ManifestEntry, Split, SynthDatasetSummary, CLIP_SECONDS};
pub use synth::{synth_audio, synth_generate, BandAnalyzer, SynthOracle, ENERGY_FLOOR, N_BANDS};
pub use track::{load_track, parse_track, save_track, write_track, AnimTrack};

use crate::error::{Error, Result};
use crate::frontend::{load_wav, video_frame_count, AudioClip, ClipFeatures, FeatureConfig, FeatureExtractor, FeatureWindow, Normalizer};
use crate::network::BlendshapeFrame;

/// One training pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub features: FeatureWindow,
    pub target: BlendshapeFrame,
    pub clip_id: String,
    pub frame_index: usize,
}

fn check_track_fits(clip: &AudioClip, track: &AnimTrack) -> Result<()> {
    let frames = video_frame_count(clip);
    if track.len() > frames {
        return Err(Error::Length {
            what: "track frames (at most the clip's video frames)",
            expected: frames,
            got: track.len(),
        });
    }
    Ok(())
}

/// One sample per track frame, with features normalized when `normalizer`
/// is given.
pub fn build_samples(
    clip_id: &str,
    clip: &AudioClip,
    track: &AnimTrack,
    cfg: &FeatureConfig,
    normalizer: Option<&Normalizer>,
) -> Result<Vec<Sample>> {
    check_track_fits(clip, track)?;
    if track.is_empty() {
        return Ok(Vec::new());
    }
    let cache = ClipFeatures::compute(clip, &FeatureExtractor::new(cfg)?)?;
    track
        .frames()
        .iter()
        .enumerate()
        .map(|(k, target)| {
            let raw = cache.window(k)?;
            let features = match normalizer {
                Some(n) => n.apply(&raw)?,
                None => raw,
            };
            Ok(Sample {
                features,
                target: target.clone(),
                clip_id: clip_id.to_string(),
                frame_index: k,
            })
        })
        .collect()
}

/// A clip's cached analysis frames with its target track, the compact form
/// used by the trainer.
#[derive(Clone, Debug)]
pub struct ClipData {
    pub id: String,
    pub features: ClipFeatures,
    pub track: AnimTrack,
}

impl ClipData {
    pub fn new(id: impl Into<String>, clip: &AudioClip, track: AnimTrack, extractor: &FeatureExtractor) -> Result<Self> {
        check_track_fits(clip, &track)?;
        Ok(Self {
            id: id.into(),
            features: ClipFeatures::compute(clip, extractor)?,
            track,
        })
    }

    /// Reads the WAV and track named by a manifest entry.
    pub fn load(entry: &ManifestEntry, extractor: &FeatureExtractor) -> Result<Self> {
        let clip = load_wav(&entry.wav)?;
        let track = load_track(&entry.track)?;
        Self::new(entry.clip_id(), &clip, track, extractor)
    }

    pub fn len(&self) -> usize {
        self.track.len()
    }

    pub fn is_empty(&self) -> bool {
        self.track.is_empty()
    }
}

/// Normalizer statistics over every row of every training window.
pub fn fit_normalizer(clips: &[ClipData]) -> Result<Normalizer> {
    let mut acc = crate::frontend::NormalizerAccumulator::new();
    for c in clips {
        for k in 0..c.len() {
            acc.add_window_rows(c.features.window_slice(k)?, c.features.cols());
        }
    }
    acc.finish()
}
