use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::BucketSpec;
use crate::synth::FeatureMatrix;
use crate::tensor::{Real, Tensor};

/// Utterances of one bucket, padded together to `frames` rows.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub bucket: usize,
    pub items: Vec<usize>,
    pub frames: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BucketerState {
    pub pending: Vec<Vec<(usize, usize)>>,
    pub skipped: u64,
}

/// Groups `(index, frames)` pairs into per-bucket batches. Utterances longer
/// than the last boundary are dropped.
#[derive(Clone, Debug)]
pub struct Bucketer {
    specs: Vec<BucketSpec>,
    multiple: usize,
    state: BucketerState,
}

impl Bucketer {
    /// `multiple` rounds every batch's padded length up, e.g. to a whole
    /// number of decoder steps.
    pub fn new(specs: Vec<BucketSpec>, multiple: usize) -> Self {
        let state = BucketerState {
            pending: vec![Vec::new(); specs.len()],
            skipped: 0,
        };
        Self {
            specs,
            multiple: multiple.max(1),
            state,
        }
    }

    pub fn bucket_of(&self, frames: usize) -> Option<usize> {
        self.specs.iter().position(|b| frames <= b.max_frames)
    }

    pub fn skipped(&self) -> u64 {
        self.state.skipped
    }

    pub fn push(&mut self, index: usize, frames: usize) -> Option<Batch> {
        let Some(b) = self.bucket_of(frames) else {
            log::warn!("skipping utterance {index}: {frames} frames exceeds every bucket");
            self.state.skipped += 1;
            return None;
        };
        let pending = &mut self.state.pending[b];
        pending.push((index, frames));
        if pending.len() < self.specs[b].batch_size {
            return None;
        }
        let full = core::mem::take(pending);
        let longest = full.iter().map(|&(_, f)| f).max().unwrap_or(1);
        Some(Batch {
            bucket: b,
            items: full.into_iter().map(|(i, _)| i).collect(),
            frames: longest.div_ceil(self.multiple) * self.multiple,
        })
    }

    pub fn state(&self) -> &BucketerState {
        &self.state
    }

    pub fn restore(&mut self, state: BucketerState) {
        self.state = state;
    }
}

/// Lazily batches a stream of `(index, frames)` pairs.
pub fn bucket_batches<I>(stream: I, specs: Vec<BucketSpec>, multiple: usize) -> impl Iterator<Item = Batch>
where
    I: IntoIterator<Item = (usize, usize)>,
{
    let mut b = Bucketer::new(specs, multiple);
    stream.into_iter().filter_map(move |(i, f)| b.push(i, f))
}

/// Zero-pads `features` to `rows` rows. Returns the tensor and per-row
/// weights (1 for real frames, 0 for padding).
pub fn pad_features<S: Real>(features: &FeatureMatrix, rows: usize) -> (Tensor<S>, Vec<S>) {
    let (t, d) = (features.frames(), features.dim());
    let rows = rows.max(t);
    let mut data = vec![S::zero(); rows * d];
    for (dst, &src) in data.iter_mut().zip(features.data()) {
        *dst = S::of(src as f64);
    }
    let weights = (0..rows).map(|r| if r < t { S::one() } else { S::zero() }).collect();
    (Tensor::new(&[rows, d], data).expect("padded shape"), weights)
}
