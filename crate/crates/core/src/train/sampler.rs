use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Ratio;
use crate::error::TrainError;

/// Serializable position of a ChaCha stream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Items visited in a reshuffled order, one pass per epoch.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pool {
    pub order: Vec<usize>,
    pub cursor: usize,
}

impl Pool {
    fn new(items: Vec<usize>) -> Self {
        let cursor = items.len();
        Self { order: items, cursor }
    }

    fn next<R: Rng + ?Sized>(&mut self, rng: &mut R) -> usize {
        if self.cursor >= self.order.len() {
            self.order.sort_unstable();
            self.order.shuffle(rng);
            self.cursor = 0;
        }
        self.cursor += 1;
        self.order[self.cursor - 1]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerState {
    pub rng: RngState,
    pub fluent: Pool,
    pub stuttered: Pool,
}

/// Endless stream of utterance indices: each draw picks the stuttered pool
/// with probability `s / (f + s)`, then the next item of that pool's
/// shuffled epoch.
#[derive(Clone, Debug)]
pub struct RatioSampler {
    ratio: Ratio,
    rng: ChaCha8Rng,
    fluent: Pool,
    stuttered: Pool,
}

impl RatioSampler {
    pub fn new(fluent: Vec<usize>, stuttered: Vec<usize>, ratio: Ratio, rng: ChaCha8Rng) -> Result<Self, TrainError> {
        ratio.validate()?;
        if ratio.fluent > 0 && fluent.is_empty() {
            return Err(TrainError::Config(format!("ratio {ratio} needs fluent utterances, pool is empty")));
        }
        if ratio.stuttered > 0 && stuttered.is_empty() {
            return Err(TrainError::Config(format!(
                "ratio {ratio} needs stuttered utterances, pool is empty"
            )));
        }
        Ok(Self {
            ratio,
            rng,
            fluent: Pool::new(fluent),
            stuttered: Pool::new(stuttered),
        })
    }

    pub fn ratio(&self) -> Ratio {
        self.ratio
    }

    /// Next index and whether it came from the stuttered pool.
    pub fn draw(&mut self) -> (usize, bool) {
        let stuttered = self.rng.random::<f64>() < self.ratio.stutter_probability();
        let pool = if stuttered { &mut self.stuttered } else { &mut self.fluent };
        (pool.next(&mut self.rng), stuttered)
    }

    pub fn state(&self) -> SamplerState {
        SamplerState {
            rng: RngState::capture(&self.rng),
            fluent: self.fluent.clone(),
            stuttered: self.stuttered.clone(),
        }
    }

    pub fn restore(&mut self, state: SamplerState) {
        self.rng = state.rng.restore();
        self.fluent = state.fluent;
        self.stuttered = state.stuttered;
    }
}

impl Iterator for RatioSampler {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        Some(self.draw().0)
    }
}
