use super::FeatureConfig;
use crate::error::{Error, Result};

/// Solves the autocorrelation normal equations for predictor coefficients
/// `a` with `x[n] ≈ Σ_k a[k]·x[n-1-k]`.
///
/// `autocorr` holds lags `0..=order`. A zero-energy input yields all zeros;
/// if the prediction error vanishes early the remaining coefficients stay 0.
pub fn levinson_durbin(autocorr: &[f64], order: usize) -> Vec<f64> {
    let mut a = vec![0.0; order];
    if autocorr.len() <= order || autocorr[0] <= 0.0 {
        return a;
    }
    let mut err = autocorr[0];
    let mut prev = vec![0.0; order];
    for i in 0..order {
        let mut acc = autocorr[i + 1];
        for j in 0..i {
            acc -= a[j] * autocorr[i - j];
        }
        let k = acc / err;
        prev[..i].copy_from_slice(&a[..i]);
        a[i] = k;
        for j in 0..i {
            a[j] = prev[j] - k * prev[i - 1 - j];
        }
        err *= 1.0 - k * k;
        if err <= autocorr[0] * 1e-12 {
            break;
        }
    }
    a
}

/// LPC coefficients of one frame by the autocorrelation method.
pub fn lpc_frame(samples: &[f32], cfg: &FeatureConfig) -> Result<Vec<f64>> {
    if samples.len() != cfg.frame_len_samples {
        return Err(Error::Length {
            what: "lpc frame",
            expected: cfg.frame_len_samples,
            got: samples.len(),
        });
    }
    let x: Vec<f64> = samples.iter().map(|&s| f64::from(s)).collect();
    let order = cfg.lpc_order;
    let autocorr: Vec<f64> = (0..=order)
        .map(|lag| x.iter().zip(&x[lag.min(x.len())..]).map(|(a, b)| a * b).sum())
        .collect();
    Ok(levinson_durbin(&autocorr, order))
}
