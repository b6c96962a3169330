use std::path::PathBuf;

use thiserror::Error;
use voxface_autograd::TensorError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported sample rate: {0} Hz (expected 44100)")]
    UnsupportedSampleRate(u32),
    #[error("unsupported channel count: {0} (expected mono)")]
    UnsupportedChannelCount(u16),
    #[error("unsupported bit depth: {0} bits (expected 16-bit integer PCM)")]
    UnsupportedBitDepth(u16),
    #[error("wav parse error: {0}")]
    WavParse(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("frame index {index} out of range ({count} frames)")]
    FrameOutOfRange { index: usize, count: usize },
    #[error("{what}: expected length {expected}, got {got}")]
    Length {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0} is empty")]
    Empty(&'static str),
    #[error("{path}: row {row}: {msg}")]
    Csv {
        path: String,
        row: usize,
        msg: String,
    },
    #[error("not a checkpoint")]
    NotACheckpoint,
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupt file: {0}")]
    Corrupt(String),
    #[error("non-finite loss in epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
