//! Stacked bidirectional LSTM with attention pooling and a two-layer
//! output head.

mod direct;
mod graph;
mod params;

pub use direct::{attention_pool, bilstm_forward, lstm_cell_step, model_forward, output_head, ModelOutput};
pub use graph::{attention_forward, forward_batch, layer_forward, time_major_batch, CellVars, GraphOutput, LayerVars, ModelVars};
pub use params::{
    AttentionParams, BiLstmLayerParams, DenseParams, LstmCellParams, ModelConfig, ModelParams, OUTPUT_DIM,
};

use crate::error::{Error, Result};

/// Native rig scale; internal values are divided by this.
pub const NATIVE_SCALE: f64 = 100.0;

/// One animation frame of blendshape weights on the internal `[0, 1]` scale.
#[derive(Clone, Debug, PartialEq)]
pub struct BlendshapeFrame {
    params: Vec<f64>,
}

impl BlendshapeFrame {
    pub fn new(params: Vec<f64>) -> Result<Self> {
        if params.len() != OUTPUT_DIM {
            return Err(Error::Length {
                what: "blendshape frame",
                expected: OUTPUT_DIM,
                got: params.len(),
            });
        }
        if let Some(v) = params.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::Config(format!("blendshape value {v} outside [0, 1]")));
        }
        Ok(Self { params })
    }

    /// Builds a frame from `[0, 100]` values.
    pub fn from_native(native: &[f64]) -> Result<Self> {
        Self::new(native.iter().map(|v| v / NATIVE_SCALE).collect())
    }

    pub fn neutral() -> Self {
        Self {
            params: vec![0.0; OUTPUT_DIM],
        }
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn to_native(&self) -> Vec<f64> {
        self.params.iter().map(|v| v * NATIVE_SCALE).collect()
    }

    pub(crate) fn from_unchecked(params: Vec<f64>) -> Self {
        debug_assert_eq!(params.len(), OUTPUT_DIM);
        Self { params }
    }
}
