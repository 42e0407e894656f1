use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("shape {shape:?} does not hold {len} elements")]
    ShapeData { shape: Vec<usize>, len: usize },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("numeric error in {0}")]
    Numeric(&'static str),
    #[error("usage error: {0}")]
    Usage(&'static str),
    #[error("sequence length {len} exceeds table length {max}")]
    Length { len: usize, max: usize },
    #[error("index {index} out of range for table of {size}")]
    Lookup { index: usize, size: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TextError {
    #[error("stutter token `{0}` has no following word")]
    TrailingToken(String),
    #[error("unknown stutter token `{0}`")]
    UnknownToken(String),
    #[error("more than one stutter token before word {0}")]
    StackedTokens(usize),
    #[error("event index {index} out of range for {words} words")]
    EventIndex { index: usize, words: usize },
    #[error("word list is empty")]
    Empty,
    #[error("bad type distribution: {0}")]
    Distribution(&'static str),
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("unknown phoneme symbol `{0}`")]
    UnknownSymbol(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("non-finite loss at step {step} in batch {batch} ({utterances:?})")]
    NonFinite {
        step: u64,
        batch: u64,
        utterances: Vec<String>,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Text(#[from] TextError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InferError {
    #[error("invalid request: {0}")]
    Request(String),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("ratio {ratio}: {source}")]
    Sweep { ratio: String, source: TrainError },
    #[error(transparent)]
    Text(#[from] TextError),
}
