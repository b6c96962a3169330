use voxface_autograd::{Real, Tensor};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<T>>) -> Self {
        let m: Vec<Tensor<T>> = params.into_iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
        Self {
            v: m.clone(),
            m,
            step: 0,
        }
    }
}

/// One bias-corrected Adam update of every parameter.
pub fn adam_step<T: Real>(
    params: &mut [&mut Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Length {
            what: "adam parameter list",
            expected: state.m.len(),
            got: grads.len().min(params.len()),
        });
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(Error::Config(format!(
                "adam shape mismatch: param {:?}, grad {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let b1 = T::lit(cfg.beta1);
    let b2 = T::lit(cfg.beta2);
    let c1 = T::lit(1.0 - cfg.beta1.powi(t));
    let c2 = T::lit(1.0 - cfg.beta2.powi(t));
    let eps = T::lit(cfg.epsilon);
    let lr = T::lit(lr);
    let one = T::one();
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            m[j] = b1 * m[j] + (one - b1) * g[j];
            v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Scales `grads` so their joint L2 norm is at most `max_norm`; returns the
/// norm before scaling.
pub fn clip_global_norm<T: Real>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .map(|g| g.data().iter().map(|v| v.to_f64().unwrap_or(f64::NAN).powi(2)).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = T::lit(max_norm / norm);
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}
