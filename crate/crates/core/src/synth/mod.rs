//! Deterministic synthetic "speech": phoneme templates rendered to feature
//! frames, stutter realizations, a corpus generator and the matching
//! stutter-event detector used for scoring.

mod corpus;
mod detect;
mod render;

pub use corpus::{bundled_lexicon, bundled_inventory, CorpusConfig, CorpusUtterance, ManifestEntry, SyntheticCorpus};
pub use detect::{detect_stutter_events, DetectorConfig, Verdict};
pub use render::{render, Alignment, RenderConfig, RenderRules, SpeakerProfile, WordSpan};

use alloc::vec::Vec;

use crate::error::TensorError;
use crate::tensor::{Real, Tensor};

/// Hop between frames in milliseconds (80 frames per second).
pub const HOP_MS: f64 = 12.5;
/// Analysis window length in milliseconds.
pub const WINDOW_MS: f64 = 50.0;
pub const FRAME_RATE: f64 = 1000.0 / HOP_MS;
/// Feature width of real mel front-ends.
pub const MEL_DIM: usize = 80;

/// `T×D` feature frames.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    frames: usize,
    dim: usize,
    data: Vec<f32>,
    frame_rate: f64,
}

impl FeatureMatrix {
    pub fn new(frames: usize, dim: usize, data: Vec<f32>) -> Result<Self, TensorError> {
        if frames == 0 || dim == 0 || data.len() != frames * dim {
            return Err(TensorError::ShapeData {
                shape: alloc::vec![frames, dim],
                len: data.len(),
            });
        }
        Ok(Self {
            frames,
            dim,
            data,
            frame_rate: FRAME_RATE,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn duration_secs(&self) -> f64 {
        self.frames as f64 / self.frame_rate
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn to_tensor<S: Real>(&self) -> Tensor<S> {
        Tensor::new(
            &[self.frames, self.dim],
            self.data.iter().map(|&x| S::of(x as f64)).collect(),
        )
        .expect("feature shape")
    }

    pub fn from_tensor<S: Real>(t: &Tensor<S>) -> Result<Self, TensorError> {
        Self::new(
            t.rows(),
            t.cols(),
            t.data().iter().map(|x| x.as_f64() as f32).collect(),
        )
    }

    /// First `n` frames.
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.clamp(1, self.frames);
        Self {
            frames: n,
            dim: self.dim,
            data: self.data[..n * self.dim].to_vec(),
            frame_rate: self.frame_rate,
        }
    }
}
