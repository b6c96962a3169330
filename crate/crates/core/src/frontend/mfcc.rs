use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{FeatureConfig, SAMPLE_RATE};
use crate::error::{Error, Result};

/// Natural-log floor applied to mel filter energies.
pub const LOG_FLOOR: f64 = 1e-10;

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filter stored as the first bin it touches plus its weights.
#[derive(Clone, Debug)]
struct MelFilter {
    first_bin: usize,
    weights: Vec<f64>,
}

/// Pre-planned MFCC pipeline:
/// pre-emphasis, Hann window, zero-padded FFT, power spectrum,
/// triangular mel filterbank, floored log, orthonormal DCT-II.
#[derive(Clone)]
pub struct MfccExtractor {
    frame_len: usize,
    fft_size: usize,
    preemphasis: f64,
    n_coeffs: usize,
    window: Vec<f64>,
    filters: Vec<MelFilter>,
    dct: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl MfccExtractor {
    pub fn new(cfg: &FeatureConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.frame_len_samples;
        // symmetric Hann
        let window = (0..n)
            .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
            .collect();

        let n_bins = cfg.fft_size / 2 + 1;
        let bin_hz = f64::from(SAMPLE_RATE) / cfg.fft_size as f64;
        let lo = hz_to_mel(f64::from(cfg.mel_low_hz));
        let hi = hz_to_mel(f64::from(cfg.mel_high_hz));
        let edges: Vec<f64> = (0..cfg.n_mel_filters + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mel_filters + 1) as f64))
            .collect();
        let filters = edges
            .windows(3)
            .map(|e| {
                let (left, centre, right) = (e[0], e[1], e[2]);
                let weight = |k: usize| {
                    let f = k as f64 * bin_hz;
                    if f > left && f <= centre {
                        (f - left) / (centre - left)
                    } else if f > centre && f < right {
                        (right - f) / (right - centre)
                    } else {
                        0.0
                    }
                };
                let first_bin = (0..n_bins).find(|&k| weight(k) > 0.0).unwrap_or(0);
                let weights: Vec<f64> = (first_bin..n_bins)
                    .map(weight)
                    .take_while(|&w| w > 0.0)
                    .collect();
                MelFilter { first_bin, weights }
            })
            .collect::<Vec<_>>();
        if let Some(i) = filters.iter().position(|f| f.weights.is_empty()) {
            return Err(Error::Config(format!(
                "mel filter {i} covers no FFT bin; increase fft_size"
            )));
        }

        let m = cfg.n_mel_filters;
        let mut dct = Vec::with_capacity(cfg.n_coeffs * m);
        for k in 0..cfg.n_coeffs {
            let scale = if k == 0 { (1.0 / m as f64).sqrt() } else { (2.0 / m as f64).sqrt() };
            for j in 0..m {
                dct.push(scale * (PI * k as f64 * (2 * j + 1) as f64 / (2 * m) as f64).cos());
            }
        }

        let fft = FftPlanner::new().plan_fft_forward(cfg.fft_size);
        Ok(Self {
            frame_len: n,
            fft_size: cfg.fft_size,
            preemphasis: f64::from(cfg.preemphasis),
            n_coeffs: cfg.n_coeffs,
            window,
            filters,
            dct,
            fft,
        })
    }

    /// Floored log mel energies of one frame.
    pub fn log_mel(&self, samples: &[f32]) -> Result<Vec<f64>> {
        if samples.len() != self.frame_len {
            return Err(Error::Length {
                what: "mfcc frame",
                expected: self.frame_len,
                got: samples.len(),
            });
        }
        let mut buf = vec![Complex::new(0.0, 0.0); self.fft_size];
        let mut prev = 0.0;
        for (i, (&s, &w)) in samples.iter().zip(&self.window).enumerate() {
            let x = f64::from(s);
            let y = if i == 0 { x } else { x - self.preemphasis * prev };
            prev = x;
            buf[i].re = y * w;
        }
        self.fft.process(&mut buf);
        Ok(self
            .filters
            .iter()
            .map(|f| {
                let energy: f64 = f
                    .weights
                    .iter()
                    .zip(&buf[f.first_bin..])
                    .map(|(w, c)| w * c.norm_sqr())
                    .sum();
                energy.max(LOG_FLOOR).ln()
            })
            .collect())
    }

    pub fn frame(&self, samples: &[f32]) -> Result<Vec<f64>> {
        let log_mel = self.log_mel(samples)?;
        let m = log_mel.len();
        Ok((0..self.n_coeffs)
            .map(|k| {
                self.dct[k * m..(k + 1) * m]
                    .iter()
                    .zip(&log_mel)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect())
    }
}

/// MFCCs of one 2940-sample frame. Plans the pipeline on every call; use
/// [`MfccExtractor`] for repeated frames.
pub fn mfcc_frame(samples: &[f32], cfg: &FeatureConfig) -> Result<Vec<f64>> {
    MfccExtractor::new(cfg)?.frame(samples)
}
