//! Straight-line MFCC reference: O(N²) DFT, filter weights evaluated per bin,
//! DCT from the defining sum. Shares no code with the library pipeline.

use std::f64::consts::PI;

pub fn reference_mfcc(frame: &[f32]) -> Vec<f64> {
    const N_FFT: usize = 4096;
    const N_MEL: usize = 40;
    const N_CEPS: usize = 39;
    let n = frame.len();

    let mut y = vec![0.0f64; n];
    for i in 0..n {
        let prev = if i == 0 { 0.0 } else { 0.97f32 as f64 * frame[i - 1] as f64 };
        let hann = 0.5 * (1.0 - (2.0 * PI * i as f64 / (n as f64 - 1.0)).cos());
        y[i] = (frame[i] as f64 - prev) * hann;
    }

    let table: Vec<(f64, f64)> = (0..N_FFT)
        .map(|j| {
            let a = -2.0 * PI * j as f64 / N_FFT as f64;
            (a.cos(), a.sin())
        })
        .collect();
    let power: Vec<f64> = (0..=N_FFT / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, &v) in y.iter().enumerate() {
                let (c, s) = table[(k * t) % N_FFT];
                re += v * c;
                im += v * s;
            }
            re * re + im * im
        })
        .collect();

    let mel = |f: f64| 1127.0 * (1.0 + f / 700.0).ln();
    let inv = |m: f64| 700.0 * ((m / 1127.0).exp() - 1.0);
    let top = mel(8000.0);
    let edge = |i: usize| inv(top * i as f64 / (N_MEL + 1) as f64);
    let mut log_energy = [0.0f64; N_MEL];
    for (m, slot) in log_energy.iter_mut().enumerate() {
        let (l, c, r) = (edge(m), edge(m + 1), edge(m + 2));
        let mut e = 0.0;
        for (k, &p) in power.iter().enumerate() {
            let f = k as f64 * 44100.0 / N_FFT as f64;
            let w = if f > l && f <= c {
                (f - l) / (c - l)
            } else if f > c && f < r {
                (r - f) / (r - c)
            } else {
                0.0
            };
            e += w * p;
        }
        *slot = e.max(1e-10).ln();
    }

    (0..N_CEPS)
        .map(|k| {
            let norm = if k == 0 { (1.0 / N_MEL as f64).sqrt() } else { (2.0 / N_MEL as f64).sqrt() };
            norm * log_energy
                .iter()
                .enumerate()
                .map(|(j, &v)| v * (PI * k as f64 * (j as f64 + 0.5) / N_MEL as f64).cos())
                .sum::<f64>()
        })
        .collect()
}

/// 2940 samples of `amp·sin(2π·freq·t)` at 44.1 kHz.
pub fn tone(freq: f64, amp: f64) -> Vec<f32> {
    (0..2940)
        .map(|i| (amp * (2.0 * PI * freq * i as f64 / 44100.0).sin()) as f32)
        .collect()
}
