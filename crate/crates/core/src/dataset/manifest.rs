use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{save_track, synth_audio, SynthOracle};
use crate::error::{Error, Result};
use crate::frontend::save_wav;

/// Length of each generated clip; the last one takes the remainder.
pub const CLIP_SECONDS: f64 = 30.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn tag(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub wav: PathBuf,
    pub track: PathBuf,
    pub split: Split,
}

impl ManifestEntry {
    /// Identifier used to keep clips apart across splits.
    pub fn clip_id(&self) -> String {
        self.wav.display().to_string()
    }
}

/// Lines of `<wav-path>,<csv-path>,<train|val>`; relative paths resolve
/// against the manifest's directory.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn parse(text: &str, base: &Path, source: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let err = |msg: String| Error::Csv {
                path: source.display().to_string(),
                row: i + 1,
                msg,
            };
            let [wav, track, tag] = fields[..] else {
                return Err(err(format!("expected 3 fields, found {}", fields.len())));
            };
            let split = match tag {
                "train" => Split::Train,
                "val" => Split::Val,
                other => return Err(err(format!("unknown split tag {other:?}"))),
            };
            entries.push(ManifestEntry {
                wav: base.join(wav),
                track: base.join(track),
                split,
            });
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base, path)
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{},{},{}\n", e.wav.display(), e.track.display(), e.split.tag()))
            .collect()
    }

    pub fn with_split(&self, split: Split) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| e.split == split).collect()
    }
}

/// Seeded clip-level partition: `round(ratio·n)` clips, at least one on each
/// side, go to training.
pub fn split(manifest: &DatasetManifest, ratio: f64, seed: u64) -> Result<(DatasetManifest, DatasetManifest)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio must be in (0, 1), got {ratio}")));
    }
    let n = manifest.entries.len();
    if n < 2 {
        return Err(Error::Config(format!("need at least 2 clips to split, found {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((ratio * n as f64).round() as usize).clamp(1, n - 1);
    let pick = |idx: &[usize], split: Split| DatasetManifest {
        entries: idx
            .iter()
            .map(|&i| ManifestEntry {
                split,
                ..manifest.entries[i].clone()
            })
            .collect(),
    };
    Ok((pick(&order[..n_train], Split::Train), pick(&order[n_train..], Split::Val)))
}

#[derive(Clone, Debug)]
pub struct SynthDatasetSummary {
    pub manifest_path: PathBuf,
    pub oracle_path: PathBuf,
    pub clips: usize,
    pub frames: usize,
}

/// Writes `minutes` of synthetic clips (WAV + track CSV each), the oracle
/// sidecar and a manifest with a seeded 80/20 clip split.
pub fn write_synth_dataset(seed: u64, minutes: f64, out: &Path) -> Result<SynthDatasetSummary> {
    if !(minutes > 0.0 && minutes.is_finite()) {
        return Err(Error::Config(format!("minutes must be positive, got {minutes}")));
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let oracle = SynthOracle::from_seed(seed);
    let oracle_path = out.join("oracle.csv");
    let file = fs::File::create(&oracle_path).map_err(|e| Error::io(&oracle_path, e))?;
    oracle.write_csv(file).map_err(|e| Error::io(&oracle_path, e))?;

    let total = minutes * 60.0;
    let n_clips = (total / CLIP_SECONDS).ceil() as usize;
    let mut entries = Vec::with_capacity(n_clips);
    let mut frames = 0;
    for i in 0..n_clips {
        let dur = (total - i as f64 * CLIP_SECONDS).min(CLIP_SECONDS);
        let clip_seed = seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
        let clip = synth_audio(clip_seed, dur)?;
        let track = oracle.track_for(&clip);
        frames += track.len();
        let wav = format!("clip_{i:03}.wav");
        let csv = format!("clip_{i:03}.csv");
        save_wav(&clip, out.join(&wav))?;
        save_track(&out.join(&csv), &track)?;
        entries.push(ManifestEntry {
            wav: PathBuf::from(wav),
            track: PathBuf::from(csv),
            split: Split::Train,
        });
    }
    let all = DatasetManifest { entries };
    let manifest = if n_clips >= 2 {
        let (train, val) = split(&all, 0.8, seed)?;
        let mut entries = train.entries;
        entries.extend(val.entries);
        entries.sort_by(|a, b| a.wav.cmp(&b.wav));
        DatasetManifest { entries }
    } else {
        all
    };
    let manifest_path = out.join("manifest.txt");
    fs::write(&manifest_path, manifest.to_text()).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(SynthDatasetSummary {
        manifest_path,
        oracle_path,
        clips: n_clips,
        frames,
    })
}
