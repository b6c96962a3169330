use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: expected a rank-2 tensor, got shape {shape:?}")]
    Rank { op: &'static str, shape: Vec<usize> },
    #[error("{op}: range {start}..{end} out of bounds for extent {extent}")]
    OutOfRange {
        op: &'static str,
        start: usize,
        end: usize,
        extent: usize,
    },
    #[error("loss must be a scalar (1x1), got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("{0}: needs at least one input")]
    Empty(&'static str),
}
