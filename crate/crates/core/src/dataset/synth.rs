//! Pseudo-speech generator with a known audio-to-blendshape oracle.
//!
//! Audio is three harmonics of a smoothly wandering pitch (80 to 300 Hz)
//! under a syllabic amplitude envelope with silent gaps, plus bursts of
//! high-passed noise. Each video frame's target is
//! `sigmoid(a_j · u + c_j)` where `u` holds the frame's 8 log-band energies,
//! scaled so that silence gives `u = 0`.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::AnimTrack;
use crate::error::{Error, Result};
use crate::frontend::{quantize_sample, video_frame_count, AudioClip, SAMPLES_PER_FRAME, SAMPLE_RATE};
use crate::network::{BlendshapeFrame, OUTPUT_DIM};

pub const N_BANDS: usize = 8;
/// Band energy that maps to `u = 0`.
pub const ENERGY_FLOOR: f64 = 1e-6;
const BAND_LOW_HZ: f64 = 80.0;
const BAND_HIGH_HZ: f64 = 8000.0;

/// Oracle coefficients: `a` is 51×8, `c` has 51 entries.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthOracle {
    pub a: Vec<[f64; N_BANDS]>,
    pub c: Vec<f64>,
}

fn band_edges_hz() -> [f64; N_BANDS + 1] {
    let ratio = BAND_HIGH_HZ / BAND_LOW_HZ;
    std::array::from_fn(|i| BAND_LOW_HZ * ratio.powf(i as f64 / N_BANDS as f64))
}

/// Scaled log band energies of one video frame's samples.
pub struct BandAnalyzer {
    fft: Arc<dyn Fft<f64>>,
    /// `[lo, hi)` FFT bin range per band.
    bins: [(usize, usize); N_BANDS],
}

impl BandAnalyzer {
    pub fn new() -> Self {
        let n = SAMPLES_PER_FRAME;
        let fft = FftPlanner::new().plan_fft_forward(n);
        let edges = band_edges_hz();
        let hz_per_bin = SAMPLE_RATE as f64 / n as f64;
        let bins = std::array::from_fn(|j| {
            let lo = (edges[j] / hz_per_bin).ceil() as usize;
            let hi = (edges[j + 1] / hz_per_bin).ceil() as usize;
            (lo, hi.max(lo + 1))
        });
        Self { fft, bins }
    }

    /// `u_j = ln(max(E_j, floor) / floor) / ln(1 / floor)` where `E_j` is the
    /// mean-power contribution of band `j`.
    pub fn energies(&self, frame: &[f32]) -> [f64; N_BANDS] {
        let n = frame.len() as f64;
        let mut buf: Vec<Complex<f64>> = frame.iter().map(|&x| Complex::new(x as f64, 0.0)).collect();
        self.fft.process(&mut buf);
        let scale = -ENERGY_FLOOR.ln();
        std::array::from_fn(|j| {
            let (lo, hi) = self.bins[j];
            let e: f64 = buf[lo..hi].iter().map(|z| z.norm_sqr()).sum::<f64>() / (n * n);
            (e.max(ENERGY_FLOOR) / ENERGY_FLOOR).ln() / scale
        })
    }
}

impl Default for BandAnalyzer {
    fn default() -> Self {
        Self::new()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl SynthOracle {
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6f72_6163_6c65);
        let weight = Normal::new(0.0, 6.0 / (N_BANDS as f64).sqrt()).expect("positive std");
        let a = (0..OUTPUT_DIM)
            .map(|_| std::array::from_fn(|_| round6(weight.sample(&mut rng))))
            .collect();
        let c = (0..OUTPUT_DIM).map(|_| round6(rng.gen_range(-2.0..1.0))).collect();
        Self { a, c }
    }

    pub fn frame_params(&self, u: &[f64; N_BANDS]) -> Vec<f64> {
        self.a
            .iter()
            .zip(&self.c)
            .map(|(row, c)| sigmoid(row.iter().zip(u).map(|(a, u)| a * u).sum::<f64>() + c))
            .collect()
    }

    /// Target track for every complete video frame of `clip`.
    pub fn track_for(&self, clip: &AudioClip) -> AnimTrack {
        let analyzer = BandAnalyzer::new();
        let frames = (0..video_frame_count(clip))
            .map(|k| {
                let s = &clip.samples()[k * SAMPLES_PER_FRAME..(k + 1) * SAMPLES_PER_FRAME];
                BlendshapeFrame::new(self.frame_params(&analyzer.energies(s))).expect("sigmoid range")
            })
            .collect();
        AnimTrack::new(frames)
    }

    /// 51 rows of `a_1..a_8,c`.
    pub fn write_csv(&self, out: impl Write) -> std::io::Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        for (row, c) in self.a.iter().zip(&self.c) {
            w.write_record(row.iter().chain(std::iter::once(c)).map(|v| v.to_string()))?;
        }
        w.flush()
    }

    pub fn read_csv(input: impl Read, source: &Path) -> Result<Self> {
        let err = |row: usize, msg: String| Error::Csv {
            path: source.display().to_string(),
            row,
            msg,
        };
        let mut reader = csv::ReaderBuilder::new().has_headers(false).from_reader(input);
        let mut a = Vec::new();
        let mut c = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| err(i + 1, e.to_string()))?;
            if rec.len() != N_BANDS + 1 {
                return Err(err(i + 1, format!("expected {} columns, found {}", N_BANDS + 1, rec.len())));
            }
            let vals: Vec<f64> = rec
                .iter()
                .map(|f| f.trim().parse::<f64>().map_err(|_| err(i + 1, format!("bad value {f:?}"))))
                .collect::<Result<_>>()?;
            a.push(std::array::from_fn(|j| vals[j]));
            c.push(vals[N_BANDS]);
        }
        if a.len() != OUTPUT_DIM {
            return Err(err(a.len() + 1, format!("expected {OUTPUT_DIM} rows, found {}", a.len())));
        }
        Ok(Self { a, c })
    }
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// Smooth random curve in `[0, 1]`: cosine interpolation between random
/// control points spaced `step` samples apart.
struct SmoothNoise {
    points: Vec<f64>,
    step: usize,
}

impl SmoothNoise {
    fn new(rng: &mut ChaCha8Rng, len: usize, step: usize) -> Self {
        let n = len / step + 2;
        Self {
            points: (0..n).map(|_| rng.gen::<f64>()).collect(),
            step,
        }
    }

    fn at(&self, i: usize) -> f64 {
        let k = i / self.step;
        let t = (i % self.step) as f64 / self.step as f64;
        let w = 0.5 - 0.5 * (PI * t).cos();
        self.points[k] * (1.0 - w) + self.points[k + 1] * w
    }
}

struct Syllable {
    start: usize,
    len: usize,
    amp: f64,
    harmonics: [f64; 3],
    /// Length of the noise onset, zero when the syllable has none.
    noise_len: usize,
    noise_amp: f64,
}

fn syllables(rng: &mut ChaCha8Rng, total: usize) -> Vec<Syllable> {
    let sr = SAMPLE_RATE as f64;
    let secs = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| (rng.gen_range(lo..hi) * sr) as usize;
    let mut out = Vec::new();
    let mut pos = secs(rng, 0.0, 0.3);
    while pos < total {
        let len = secs(rng, 0.1, 0.35);
        let noise_len = if rng.gen_bool(0.4) { (len as f64 * rng.gen_range(0.2..0.4)) as usize } else { 0 };
        out.push(Syllable {
            start: pos,
            len,
            amp: rng.gen_range(0.15..0.5),
            harmonics: [1.0, rng.gen_range(0.1..0.8), rng.gen_range(0.05..0.5)],
            noise_len,
            noise_amp: rng.gen_range(0.03..0.15),
        });
        pos += len;
        pos += if rng.gen_bool(0.1) { secs(rng, 0.3, 0.9) } else { secs(rng, 0.02, 0.08) };
    }
    out
}

/// Deterministic pseudo-speech of `duration_s` seconds, already quantized to
/// 16-bit PCM values, and its oracle track.
pub fn synth_generate(seed: u64, duration_s: f64) -> Result<(AudioClip, AnimTrack)> {
    let oracle = SynthOracle::from_seed(seed);
    let clip = synth_audio(seed, duration_s)?;
    let track = oracle.track_for(&clip);
    Ok((clip, track))
}

pub fn synth_audio(seed: u64, duration_s: f64) -> Result<AudioClip> {
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(Error::Config(format!("duration must be positive, got {duration_s}")));
    }
    let total = (duration_s * SAMPLE_RATE as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pitch = SmoothNoise::new(&mut rng, total, SAMPLE_RATE as usize / 4);
    let mut samples = vec![0.0f64; total];
    let mut phase = 0.0f64;
    let dt = 1.0 / SAMPLE_RATE as f64;
    let mut phases = vec![0.0f64; total];
    for (i, p) in phases.iter_mut().enumerate() {
        *p = phase;
        phase = (phase + 2.0 * PI * (80.0 + 220.0 * pitch.at(i)) * dt) % (2.0 * PI);
    }
    let mut prev_noise = 0.0f64;
    for syl in syllables(&mut rng, total) {
        let end = (syl.start + syl.len).min(total);
        for i in syl.start..end {
            let t = (i - syl.start) as f64 / syl.len as f64;
            let env = syl.amp * (PI * t).sin().sqrt();
            let ph = phases[i];
            let voiced: f64 = syl
                .harmonics
                .iter()
                .enumerate()
                .map(|(h, w)| w * ((h + 1) as f64 * ph).sin())
                .sum::<f64>()
                / 1.8;
            samples[i] += env * voiced;
            if i - syl.start < syl.noise_len {
                let white: f64 = rng.gen_range(-1.0..1.0);
                let t_n = (i - syl.start) as f64 / syl.noise_len as f64;
                samples[i] += syl.noise_amp * (PI * t_n).sin() * (white - prev_noise);
                prev_noise = white;
            }
        }
    }
    let pcm = samples
        .iter()
        .map(|&x| quantize_sample(x.clamp(-0.99, 0.99) as f32) as f32 / 32768.0)
        .collect();
    AudioClip::new(pcm)
}
