#![no_std]
//! Algorithmic core of a stutter-controllable text-to-speech pipeline.

extern crate alloc;

pub mod autograd;
pub mod error;
pub mod eval;
pub mod infer;
pub mod model;
pub mod optim;
pub mod params;
pub mod synth;
pub mod tensor;
pub mod text;
pub mod train;

pub use autograd::{Elementwise, Graph, GruWeights, Var};
pub use error::{EvalError, InferError, TensorError, TextError, TrainError};
pub use params::{GradBuffer, ParamId, ParamStore};
pub use tensor::{DType, Real, Tensor};
