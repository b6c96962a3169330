//! `A2FM` checkpoint files.
//!
//! Layout, all little-endian: magic `A2FM`, `u32` version, `u32` tensor
//! count, then per tensor a `u16` name length, the UTF-8 name, a `u8` rank,
//! `rank` `u32` dims and the `f32` data. Configuration, normalizer and
//! training metadata are stored as further named tensors.

use std::path::Path;

use voxface_autograd::Tensor;

use crate::error::{Error, Result};
use crate::frontend::{FeatureConfig, FeatureKind, Normalizer};
use crate::network::{ModelConfig, ModelParams};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"A2FM";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingMeta {
    /// Number of completed epochs.
    pub epoch: usize,
    /// Mean training loss of each completed epoch.
    pub loss_history: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams<f32>,
    pub features: FeatureConfig,
    pub normalizer: Normalizer,
    pub meta: TrainingMeta,
}

impl Checkpoint {
    pub fn model_config(&self) -> &ModelConfig {
        &self.params.config
    }
}

fn vector(values: Vec<f32>) -> Tensor<f32> {
    Tensor::new(vec![values.len()], values).expect("length matches")
}

fn model_config_tensor(c: &ModelConfig) -> Tensor<f32> {
    vector(vec![
        c.hidden_size as f32,
        c.basis_size as f32,
        u8::from(c.bidirectional) as f32,
        u8::from(c.use_attention) as f32,
        c.input_rows as f32,
        c.input_cols as f32,
    ])
}

fn feature_config_tensor(c: &FeatureConfig) -> Tensor<f32> {
    let kind = match c.kind {
        FeatureKind::Mfcc => 0.0,
        FeatureKind::Lpc => 1.0,
    };
    vector(vec![
        kind,
        c.n_coeffs as f32,
        c.frame_len_samples as f32,
        c.hop_samples as f32,
        c.fft_size as f32,
        c.n_mel_filters as f32,
        c.mel_low_hz,
        c.mel_high_hz,
        c.preemphasis,
        c.lpc_order as f32,
    ])
}

fn named(ckpt: &Checkpoint) -> Vec<(String, Tensor<f32>)> {
    let mut out = vec![
        ("config.model".to_string(), model_config_tensor(&ckpt.params.config)),
        ("config.features".to_string(), feature_config_tensor(&ckpt.features)),
        (
            "normalizer.mean".to_string(),
            vector(ckpt.normalizer.mean.iter().map(|&v| v as f32).collect()),
        ),
        (
            "normalizer.std".to_string(),
            vector(ckpt.normalizer.std.iter().map(|&v| v as f32).collect()),
        ),
        ("meta.epoch".to_string(), vector(vec![ckpt.meta.epoch as f32])),
        ("meta.loss_history".to_string(), vector(ckpt.meta.loss_history.clone())),
    ];
    out.extend(
        ckpt.params
            .named_tensors()
            .into_iter()
            .map(|(name, t)| (format!("model.{name}"), t.clone())),
    );
    out
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let tensors = named(ckpt);
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in &tensors {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Corrupt(format!("truncated checkpoint at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

fn decode_tensors(bytes: &[u8]) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut cur = Cursor { bytes, pos: 0 };
    if bytes.len() < 4 || cur.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::NotACheckpoint);
    }
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let count = cur.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = cur.u16()? as usize;
        let name = std::str::from_utf8(cur.take(len)?)
            .map_err(|_| Error::Corrupt("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = cur.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = cur.take(n.checked_mul(4).ok_or_else(|| Error::Corrupt(format!("tensor {name} too large")))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::Corrupt(format!("tensor {name}: {e}")))?;
        out.push((name, t));
    }
    if cur.pos != bytes.len() {
        return Err(Error::Corrupt(format!("{} trailing bytes", bytes.len() - cur.pos)));
    }
    Ok(out)
}

fn usize_field(v: f32, what: &str) -> Result<usize> {
    if v < 0.0 || v.fract() != 0.0 || !v.is_finite() {
        return Err(Error::Corrupt(format!("{what} is not a count: {v}")));
    }
    Ok(v as usize)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut tensors = decode_tensors(bytes)?;
    let mut take = |name: &str| -> Result<Tensor<f32>> {
        let i = tensors
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::Corrupt(format!("missing tensor {name}")))?;
        Ok(tensors.swap_remove(i).1)
    };
    let fields = |t: &Tensor<f32>, n: usize, what: &str| -> Result<Vec<f32>> {
        if t.len() != n {
            return Err(Error::Corrupt(format!("{what} has {} values, expected {n}", t.len())));
        }
        Ok(t.data().to_vec())
    };

    let m = fields(&take("config.model")?, 6, "model config")?;
    let model = ModelConfig {
        hidden_size: usize_field(m[0], "hidden_size")?,
        basis_size: usize_field(m[1], "basis_size")?,
        bidirectional: m[2] != 0.0,
        use_attention: m[3] != 0.0,
        input_rows: usize_field(m[4], "input_rows")?,
        input_cols: usize_field(m[5], "input_cols")?,
    };
    model.validate()?;
    let f = fields(&take("config.features")?, 10, "feature config")?;
    let features = FeatureConfig {
        kind: if f[0] == 0.0 { FeatureKind::Mfcc } else { FeatureKind::Lpc },
        n_coeffs: usize_field(f[1], "n_coeffs")?,
        frame_len_samples: usize_field(f[2], "frame_len_samples")?,
        hop_samples: usize_field(f[3], "hop_samples")?,
        fft_size: usize_field(f[4], "fft_size")?,
        n_mel_filters: usize_field(f[5], "n_mel_filters")?,
        mel_low_hz: f[6],
        mel_high_hz: f[7],
        preemphasis: f[8],
        lpc_order: usize_field(f[9], "lpc_order")?,
    };
    features.validate()?;
    let cols = features.coeff_count();
    let normalizer = Normalizer {
        mean: fields(&take("normalizer.mean")?, cols, "normalizer mean")?
            .into_iter()
            .map(f64::from)
            .collect(),
        std: fields(&take("normalizer.std")?, cols, "normalizer std")?
            .into_iter()
            .map(f64::from)
            .collect(),
    };
    let epoch = usize_field(fields(&take("meta.epoch")?, 1, "epoch")?[0], "epoch")?;
    let loss_history = take("meta.loss_history")?.into_data();

    let layout = ModelParams::<f32>::init(&model, 0)?;
    let mut params = Vec::new();
    for (name, _) in layout.named_tensors() {
        params.push(take(&format!("model.{name}"))?);
    }
    let params = ModelParams::from_tensors(&model, params)?;
    if !params.is_finite() {
        return Err(Error::Corrupt("non-finite model weights".into()));
    }
    Ok(Checkpoint {
        params,
        features,
        normalizer,
        meta: TrainingMeta { epoch, loss_history },
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(ckpt)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
