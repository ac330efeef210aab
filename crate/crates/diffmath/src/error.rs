use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("{op} received an empty input")]
    EmptyInput { op: &'static str },
    #[error("backward needs a 1x1 loss, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
    #[error("non-finite gradient for parameter {param}: {bad} of {total} entries")]
    NonFiniteGradient { param: usize, bad: usize, total: usize },
    #[error("index {index} out of range for {len} rows in {op}")]
    Index { op: &'static str, index: usize, len: usize },
}
