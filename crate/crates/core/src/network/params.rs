use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use voxface_autograd::{Real, Tensor};

use crate::error::{Error, Result};
use crate::frontend::WINDOW_FRAMES;

/// Blendshape parameters produced per animation frame.
pub const OUTPUT_DIM: usize = 51;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub hidden_size: usize,
    pub basis_size: usize,
    pub bidirectional: bool,
    pub use_attention: bool,
    pub input_rows: usize,
    pub input_cols: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_size: 256,
            basis_size: 128,
            bidirectional: true,
            use_attention: true,
            input_rows: WINDOW_FRAMES,
            input_cols: 39,
        }
    }
}

impl ModelConfig {
    pub fn with_hidden(hidden_size: usize) -> Self {
        Self {
            hidden_size,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_size == 0 || self.basis_size == 0 || self.input_rows == 0 || self.input_cols == 0 {
            return Err(Error::Config(format!("model sizes must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// One LSTM direction. Gate columns are packed `[input | forget | candidate | output]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmCellParams<T> {
    /// `input×4h`
    pub w_x: Tensor<T>,
    /// `h×4h`
    pub w_h: Tensor<T>,
    /// `1×4h`
    pub b: Tensor<T>,
}

impl<T: Real> LstmCellParams<T> {
    pub fn hidden_size(&self) -> usize {
        self.w_h.rows()
    }

    pub fn input_size(&self) -> usize {
        self.w_x.rows()
    }

    fn init(rng: &mut ChaCha8Rng, input: usize, hidden: usize) -> Self {
        let mut b = Tensor::zeros(vec![1, 4 * hidden]);
        for v in &mut b.data_mut()[hidden..2 * hidden] {
            *v = T::one();
        }
        Self {
            w_x: gaussian(rng, input, 4 * hidden),
            w_h: gaussian(rng, hidden, 4 * hidden),
            b,
        }
    }
}

/// Two directions merged by `h_t = fwd_t·W_fwd + bwd_t·W_bwd + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct BiLstmLayerParams<T> {
    pub forward: LstmCellParams<T>,
    pub backward: Option<LstmCellParams<T>>,
    pub combine_fwd: Tensor<T>,
    pub combine_bwd: Option<Tensor<T>>,
    pub combine_bias: Tensor<T>,
}

impl<T: Real> BiLstmLayerParams<T> {
    fn init(rng: &mut ChaCha8Rng, input: usize, hidden: usize, bidirectional: bool) -> Self {
        let forward = LstmCellParams::init(rng, input, hidden);
        let backward = bidirectional.then(|| LstmCellParams::init(rng, input, hidden));
        let combine_fwd = gaussian(rng, hidden, hidden);
        let combine_bwd = bidirectional.then(|| gaussian(rng, hidden, hidden));
        Self {
            forward,
            backward,
            combine_fwd,
            combine_bwd,
            combine_bias: Tensor::zeros(vec![1, hidden]),
        }
    }

    /// Same layer with the two directions exchanged.
    pub fn swapped(&self) -> Option<Self> {
        Some(Self {
            forward: self.backward.clone()?,
            backward: Some(self.forward.clone()),
            combine_fwd: self.combine_bwd.clone()?,
            combine_bwd: Some(self.combine_fwd.clone()),
            combine_bias: self.combine_bias.clone(),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams<T> {
    /// `h×1` score vector.
    pub w: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseParams<T> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

impl<T: Real> DenseParams<T> {
    fn init(rng: &mut ChaCha8Rng, input: usize, output: usize) -> Self {
        Self {
            w: gaussian(rng, input, output),
            b: Tensor::zeros(vec![1, output]),
        }
    }
}

/// Every learnable tensor of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub layer1: BiLstmLayerParams<T>,
    pub layer2: BiLstmLayerParams<T>,
    pub attention: Option<AttentionParams<T>>,
    pub dense1: DenseParams<T>,
    pub dense2: DenseParams<T>,
}

/// N(0, 1/fan_in) entries for a `fan_in×fan_out` matrix.
fn gaussian<T: Real>(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor<T> {
    let normal = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("positive std");
    Tensor::from_fn(fan_in, fan_out, |_, _| T::lit(normal.sample(rng)))
}

impl<T: Real> ModelParams<T> {
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = config.hidden_size;
        let bi = config.bidirectional;
        Ok(Self {
            config: config.clone(),
            layer1: BiLstmLayerParams::init(&mut rng, config.input_cols, h, bi),
            layer2: BiLstmLayerParams::init(&mut rng, h, h, bi),
            attention: config.use_attention.then(|| AttentionParams {
                w: gaussian(&mut rng, h, 1),
            }),
            dense1: DenseParams::init(&mut rng, h, config.basis_size),
            dense2: DenseParams::init(&mut rng, config.basis_size, OUTPUT_DIM),
        })
    }

    /// Tensors in a fixed order with stable names.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (lname, layer) in [("layer1", &self.layer1), ("layer2", &self.layer2)] {
            let cells = [("fwd", Some(&layer.forward)), ("bwd", layer.backward.as_ref())];
            for (dname, cell) in cells {
                if let Some(cell) = cell {
                    out.push((format!("{lname}.{dname}.w_x"), &cell.w_x));
                    out.push((format!("{lname}.{dname}.w_h"), &cell.w_h));
                    out.push((format!("{lname}.{dname}.b"), &cell.b));
                }
            }
            out.push((format!("{lname}.combine_fwd"), &layer.combine_fwd));
            if let Some(w) = &layer.combine_bwd {
                out.push((format!("{lname}.combine_bwd"), w));
            }
            out.push((format!("{lname}.combine_bias"), &layer.combine_bias));
        }
        if let Some(att) = &self.attention {
            out.push(("attention.w".into(), &att.w));
        }
        out.push(("dense1.w".into(), &self.dense1.w));
        out.push(("dense1.b".into(), &self.dense1.b));
        out.push(("dense2.w".into(), &self.dense2.w));
        out.push(("dense2.b".into(), &self.dense2.b));
        out
    }

    /// Mutable tensors in the same order as [`named_tensors`](Self::named_tensors).
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for layer in [&mut self.layer1, &mut self.layer2] {
            out.push(&mut layer.forward.w_x);
            out.push(&mut layer.forward.w_h);
            out.push(&mut layer.forward.b);
            if let Some(cell) = layer.backward.as_mut() {
                out.push(&mut cell.w_x);
                out.push(&mut cell.w_h);
                out.push(&mut cell.b);
            }
            out.push(&mut layer.combine_fwd);
            if let Some(w) = layer.combine_bwd.as_mut() {
                out.push(w);
            }
            out.push(&mut layer.combine_bias);
        }
        if let Some(att) = self.attention.as_mut() {
            out.push(&mut att.w);
        }
        out.push(&mut self.dense1.w);
        out.push(&mut self.dense1.b);
        out.push(&mut self.dense2.w);
        out.push(&mut self.dense2.b);
        out
    }

    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        self.named_tensors().into_iter().map(|(_, t)| t).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Rebuilds parameters of `config`'s layout from tensors listed in
    /// [`named_tensors`](Self::named_tensors) order.
    pub fn from_tensors(config: &ModelConfig, tensors: Vec<Tensor<T>>) -> Result<Self> {
        let mut params = Self::init(config, 0)?;
        let slots = params.tensors_mut();
        if slots.len() != tensors.len() {
            return Err(Error::Length {
                what: "model tensors",
                expected: slots.len(),
                got: tensors.len(),
            });
        }
        for (slot, t) in slots.into_iter().zip(tensors) {
            if slot.shape() != t.shape() {
                return Err(Error::Corrupt(format!(
                    "tensor shape {:?} does not match expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t;
        }
        Ok(params)
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        let tensors = self.tensors().into_iter().map(Tensor::cast).collect();
        ModelParams::from_tensors(&self.config, tensors).expect("same layout")
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_and_forget_bias() {
        let cfg = ModelConfig {
            hidden_size: 8,
            basis_size: 4,
            ..ModelConfig::default()
        };
        let p = ModelParams::<f32>::init(&cfg, 1).unwrap();
        assert_eq!(p.layer1.forward.w_x.shape(), &[39, 32]);
        assert_eq!(p.layer2.forward.w_x.shape(), &[8, 32]);
        assert_eq!(p.dense2.w.shape(), &[4, 51]);
        let b = p.layer1.forward.b.data();
        assert!(b[..8].iter().all(|&v| v == 0.0));
        assert!(b[8..16].iter().all(|&v| v == 1.0));
        assert_eq!(p.named_tensors().len(), p.clone().tensors_mut().len());
    }

    #[test]
    fn ablations_drop_their_tensors() {
        let cfg = ModelConfig {
            hidden_size: 4,
            basis_size: 4,
            bidirectional: false,
            use_attention: false,
            ..ModelConfig::default()
        };
        let p = ModelParams::<f32>::init(&cfg, 1).unwrap();
        assert!(p.layer1.backward.is_none() && p.attention.is_none());
        let names: Vec<String> = p.named_tensors().into_iter().map(|(n, _)| n).collect();
        assert!(!names.iter().any(|n| n.contains("bwd") || n.contains("attention")));
    }

    #[test]
    fn init_is_seeded() {
        let cfg = ModelConfig::with_hidden(16);
        let a = ModelParams::<f32>::init(&cfg, 3).unwrap();
        assert_eq!(a, ModelParams::init(&cfg, 3).unwrap());
        assert_ne!(a, ModelParams::init(&cfg, 4).unwrap());
    }

    #[test]
    fn round_trips_through_tensor_list() {
        let cfg = ModelConfig::with_hidden(8);
        let p = ModelParams::<f32>::init(&cfg, 5).unwrap();
        let list = p.tensors().into_iter().cloned().collect();
        assert_eq!(ModelParams::from_tensors(&cfg, list).unwrap(), p);
        assert!(ModelParams::<f32>::from_tensors(&cfg, vec![]).is_err());
    }
}
