//! Ratio-controlled minibatch sampling, length bucketing and the
//! teacher-forced optimization loop.

mod batch;
mod sampler;

pub use batch::{bucket_batches, pad_features, Batch, Bucketer, BucketerState};
pub use sampler::{Pool, RatioSampler, RngState, SamplerState};

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::error::{TensorError, TrainError};
use crate::model::{compute_loss, guided_attention_loss, LossParts, Mode, StutterTts};
use crate::optim::{Optimizer, OptimizerKind};
use crate::params::GradBuffer;
use crate::synth::{CorpusUtterance, SyntheticCorpus};
use crate::synth::FeatureMatrix;
use crate::tensor::Real;
use crate::text::g2p;

/// Fluent-to-stuttered sampling ratio, written `"90:10"`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Ratio {
    pub fluent: u32,
    pub stuttered: u32,
}

impl Ratio {
    pub const fn new(fluent: u32, stuttered: u32) -> Self {
        Self { fluent, stuttered }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.fluent == 0 && self.stuttered == 0 {
            return Err(TrainError::Config("ratio 0:0 selects nothing".into()));
        }
        Ok(())
    }

    pub fn stutter_probability(&self) -> f64 {
        self.stuttered as f64 / (self.fluent + self.stuttered) as f64
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.fluent, self.stuttered)
    }
}

impl core::str::FromStr for Ratio {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || TrainError::Config(format!("ratio `{s}` is not of the form F:S"));
        let (a, b) = s.split_once(':').ok_or_else(bad)?;
        let r = Ratio::new(a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        r.validate()?;
        Ok(r)
    }
}

impl TryFrom<String> for Ratio {
    type Error = TrainError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Ratio> for String {
    fn from(r: Ratio) -> String {
        r.to_string()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BucketSpec {
    pub max_frames: usize,
    pub batch_size: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub ratio: Ratio,
    /// Ascending length boundaries with their batch sizes.
    pub buckets: Vec<BucketSpec>,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    /// Linear ramp from zero over this many steps.
    pub warmup_steps: u64,
    /// Multiply the rate by `decay_factor` every `decay_every` steps (0 = never).
    pub decay_every: u64,
    pub decay_factor: f64,
    pub epochs: u64,
    pub steps_per_epoch: u64,
    pub seed: u64,
    pub precision: Precision,
    pub lambda_stop: f64,
    /// Weight of the positive (final-frame) class in the stop loss.
    pub stop_pos_weight: f64,
    /// Weight of the diagonal cross-attention prior (0 disables it).
    pub guided_attention: f64,
    pub guided_attention_width: f64,
    /// Global gradient-norm clip (0 disables it).
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            ratio: Ratio::new(90, 10),
            buckets: vec![
                BucketSpec {
                    max_frames: 240,
                    batch_size: 8,
                },
                BucketSpec {
                    max_frames: 480,
                    batch_size: 4,
                },
                BucketSpec {
                    max_frames: 720,
                    batch_size: 2,
                },
            ],
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            warmup_steps: 0,
            decay_every: 0,
            decay_factor: 0.5,
            epochs: 1,
            steps_per_epoch: 1000,
            seed: 0,
            precision: Precision::F32,
            lambda_stop: 1.0,
            stop_pos_weight: 1.0,
            guided_attention: 0.0,
            guided_attention_width: 0.2,
            clip_norm: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.ratio.validate()?;
        if self.buckets.is_empty() {
            return Err(TrainError::Config("at least one bucket is required".into()));
        }
        if self.buckets.iter().any(|b| b.batch_size == 0 || b.max_frames == 0) {
            return Err(TrainError::Config("bucket sizes must be positive".into()));
        }
        if self.buckets.windows(2).any(|w| w[0].max_frames >= w[1].max_frames) {
            return Err(TrainError::Config("bucket boundaries must be strictly ascending".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config(format!("learning rate {} invalid", self.learning_rate)));
        }
        if self.lambda_stop < 0.0 || self.stop_pos_weight <= 0.0 || self.guided_attention < 0.0 {
            return Err(TrainError::Config("loss weights must be non-negative".into()));
        }
        if self.guided_attention > 0.0 && self.guided_attention_width <= 0.0 {
            return Err(TrainError::Config("guided attention width must be positive".into()));
        }
        Ok(())
    }

    pub fn total_steps(&self) -> u64 {
        self.epochs * self.steps_per_epoch
    }

    /// Scheduled rate before update `step` (0-based).
    pub fn learning_rate_at(&self, step: u64) -> f64 {
        let mut lr = self.learning_rate;
        if self.warmup_steps > 0 {
            lr *= ((step + 1) as f64 / self.warmup_steps as f64).min(1.0);
        }
        if let Some(k) = step.checked_div(self.decay_every) {
            lr *= libm::pow(self.decay_factor, k as f64);
        }
        lr
    }
}

/// One training utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: String,
    pub phonemes: Vec<usize>,
    pub features: FeatureMatrix,
    pub speaker: u32,
    pub stuttered: bool,
}

#[derive(Clone, Debug, Default)]
pub struct TrainingSet {
    examples: Vec<Example>,
    by_speaker: BTreeMap<u32, Vec<usize>>,
}

impl TrainingSet {
    pub fn new(examples: Vec<Example>) -> Self {
        let mut by_speaker: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, e) in examples.iter().enumerate() {
            by_speaker.entry(e.speaker).or_default().push(i);
        }
        Self { examples, by_speaker }
    }

    pub fn example_from(corpus: &SyntheticCorpus, u: CorpusUtterance) -> Example {
        let phonemes = g2p(&u.text, corpus.lexicon(), corpus.inventory()).expect("bundled lexicon");
        Example {
            id: u.id,
            phonemes: phonemes.0,
            stuttered: !u.text.events().is_empty(),
            features: u.features,
            speaker: u.speaker,
        }
    }

    /// Renders every utterance of a synthetic corpus.
    pub fn from_corpus(corpus: &SyntheticCorpus) -> Self {
        Self::new((0..corpus.len()).map(|i| Self::example_from(corpus, corpus.utterance(i))).collect())
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn get(&self, i: usize) -> &Example {
        &self.examples[i]
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn pools(&self) -> (Vec<usize>, Vec<usize>) {
        (0..self.len()).partition(|&i| !self.examples[i].stuttered)
    }

    pub fn speaker_utterances(&self, speaker: u32) -> &[usize] {
        self.by_speaker.get(&speaker).map_or(&[], Vec::as_slice)
    }

    /// Another utterance by the same speaker (itself only when it is alone).
    pub fn reference_for<R: Rng + ?Sized>(&self, i: usize, rng: &mut R) -> usize {
        let same = self.speaker_utterances(self.examples[i].speaker);
        if same.len() < 2 {
            return i;
        }
        loop {
            let j = same[rng.random_range(0..same.len())];
            if j != i {
                return j;
            }
        }
    }
}

/// Mean loss parts of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub loss_total: f64,
    pub loss_pre: f64,
    pub loss_post: f64,
    pub loss_stop: f64,
    pub lr: f64,
}

/// Everything besides weights and optimizer moments needed to resume.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub step: u64,
    pub batches: u64,
    pub sampler: SamplerState,
    pub bucketer: BucketerState,
}

/// Loss knobs shared by training and evaluation passes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_stop: f64,
    pub stop_pos_weight: f64,
    pub guided_attention: f64,
    pub guided_attention_width: f64,
}

impl From<&TrainConfig> for LossWeights {
    fn from(c: &TrainConfig) -> Self {
        Self {
            lambda_stop: c.lambda_stop,
            stop_pos_weight: c.stop_pos_weight,
            guided_attention: c.guided_attention,
            guided_attention_width: c.guided_attention_width,
        }
    }
}

/// Teacher-forced loss of one utterance padded to `rows` frames. Padding
/// rows carry zero weight in every term and are masked out of the postnet.
#[allow(clippy::too_many_arguments)]
pub fn utterance_loss<S: Real, R: Rng + ?Sized>(
    model: &StutterTts<S>,
    g: &mut Graph<'_, S>,
    phonemes: &[usize],
    target: &FeatureMatrix,
    reference: &FeatureMatrix,
    rows: usize,
    weights: &LossWeights,
    rng: &mut R,
) -> Result<LossParts, TensorError> {
    let (padded, row_w) = pad_features::<S>(target, rows);
    let t = target.frames();
    let mut stop_t = vec![S::zero(); row_w.len()];
    stop_t[t - 1] = S::one();
    let enc = model.encode(g, phonemes, Mode::Train, rng)?;
    let r = model.reference_embed(g, &reference.to_tensor(), rng)?;
    let out = model.decode_teacher_forced(g, enc, &padded, r, Some(&row_w), rng)?;
    let tv = g.constant(padded);
    let mut parts = compute_loss(
        g,
        out.pre,
        out.post,
        out.stop,
        tv,
        &stop_t,
        &row_w,
        S::of(weights.lambda_stop),
        S::of(weights.stop_pos_weight),
    )?;
    if weights.guided_attention > 0.0 {
        let valid = t.div_ceil(model.config().frames_per_step);
        let ga = guided_attention_loss(g, &out.cross_attention, valid, weights.guided_attention_width)?;
        let ga = g.scale(ga, S::of(weights.guided_attention));
        parts.total = g.add(parts.total, ga)?;
    }
    Ok(parts)
}

/// Owns the model and optimizer and runs teacher-forced updates.
pub struct Trainer<'d, S: Real> {
    config: TrainConfig,
    model: StutterTts<S>,
    optimizer: Optimizer<S>,
    grads: GradBuffer<S>,
    sampler: RatioSampler,
    bucketer: Bucketer,
    data: &'d TrainingSet,
    step: u64,
    batches: u64,
}

const SAMPLER_STREAM: u64 = 1;
const STEP_STREAM_BASE: u64 = 1 << 32;

impl<'d, S: Real> Trainer<'d, S> {
    pub fn new(config: TrainConfig, model: StutterTts<S>, data: &'d TrainingSet) -> Result<Self, TrainError> {
        config.validate()?;
        let max_frames = model.config().max_frames();
        if config.buckets.last().is_some_and(|b| b.max_frames > max_frames) {
            return Err(TrainError::Config(format!(
                "largest bucket exceeds the decoder's {max_frames}-frame position table"
            )));
        }
        let (fluent, stuttered) = data.pools();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(SAMPLER_STREAM);
        let sampler = RatioSampler::new(fluent, stuttered, config.ratio, rng)?;
        let fits = |i: &usize| config.buckets.last().is_some_and(|b| data.get(*i).features.frames() <= b.max_frames);
        if !(0..data.len()).any(|i| fits(&i)) {
            return Err(TrainError::Config("no utterance fits the largest bucket".into()));
        }
        let optimizer = Optimizer::new(config.optimizer, config.learning_rate_at(0), model.params());
        let grads = GradBuffer::for_params(model.params());
        let bucketer = Bucketer::new(config.buckets.clone(), model.config().frames_per_step);
        Ok(Self {
            config,
            model,
            optimizer,
            grads,
            sampler,
            bucketer,
            data,
            step: 0,
            batches: 0,
        })
    }

    /// Continues a run from saved state.
    pub fn resume(
        config: TrainConfig,
        model: StutterTts<S>,
        optimizer: Optimizer<S>,
        state: TrainState,
        data: &'d TrainingSet,
    ) -> Result<Self, TrainError> {
        let mut t = Self::new(config, model, data)?;
        t.optimizer = optimizer;
        t.step = state.step;
        t.batches = state.batches;
        t.sampler.restore(state.sampler);
        t.bucketer.restore(state.bucketer);
        Ok(t)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &StutterTts<S> {
        &self.model
    }

    pub fn into_model(self) -> StutterTts<S> {
        self.model
    }

    pub fn optimizer(&self) -> &Optimizer<S> {
        &self.optimizer
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn state(&self) -> TrainState {
        TrainState {
            step: self.step,
            batches: self.batches,
            sampler: self.sampler.state(),
            bucketer: self.bucketer.state().clone(),
        }
    }

    /// Draws utterances until some bucket fills.
    pub fn next_batch(&mut self) -> Result<Batch, TrainError> {
        let guard = 100 * self.data.len().max(1) + 1000;
        for _ in 0..guard {
            let i = self.sampler.draw().0;
            if let Some(b) = self.bucketer.push(i, self.data.get(i).features.frames()) {
                self.batches += 1;
                return Ok(b);
            }
        }
        Err(TrainError::Config("sampler cannot fill any bucket".into()))
    }

    fn step_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(STEP_STREAM_BASE + self.step);
        rng
    }

    /// Loss parts for `batch` without updating anything; the random draws
    /// match those [`Trainer::step`] would use at the current step.
    pub fn batch_loss(&self, batch: &Batch) -> Result<StepMetrics, TrainError> {
        let mut g = Graph::frozen(self.model.params());
        let mut rng = self.step_rng();
        let (_, m) = self.forward(&mut g, batch, &mut rng)?;
        Ok(m)
    }

    fn forward(
        &self,
        g: &mut Graph<'_, S>,
        batch: &Batch,
        rng: &mut ChaCha8Rng,
    ) -> Result<(crate::autograd::Var, StepMetrics), TrainError> {
        let w = LossWeights::from(&self.config);
        let n = batch.items.len();
        let inv = S::of(1.0 / n as f64);
        let mut total = None;
        let mut sums = [0.0f64; 4];
        for &i in &batch.items {
            let ex = self.data.get(i);
            let reference = &self.data.get(self.data.reference_for(i, rng)).features;
            let parts = utterance_loss(&self.model, g, &ex.phonemes, &ex.features, reference, batch.frames, &w, rng)?;
            for (s, v) in sums.iter_mut().zip([parts.total, parts.pre, parts.post, parts.stop]) {
                *s += g.value(v).item().as_f64() / n as f64;
            }
            let scaled = g.scale(parts.total, inv);
            total = Some(match total {
                Some(t) => g.add(t, scaled)?,
                None => scaled,
            });
        }
        let metrics = StepMetrics {
            step: self.step + 1,
            loss_total: sums[0],
            loss_pre: sums[1],
            loss_post: sums[2],
            loss_stop: sums[3],
            lr: self.config.learning_rate_at(self.step),
        };
        Ok((total.expect("non-empty batch"), metrics))
    }

    fn non_finite(&self, batch: &Batch) -> TrainError {
        TrainError::NonFinite {
            step: self.step + 1,
            batch: self.batches,
            utterances: batch.items.iter().map(|&i| self.data.get(i).id.clone()).collect(),
        }
    }

    /// One update on a given batch.
    pub fn step_on(&mut self, batch: &Batch) -> Result<StepMetrics, TrainError> {
        let mut rng = self.step_rng();
        let mut g = Graph::with_params(self.model.params());
        let (loss, metrics) = self.forward(&mut g, batch, &mut rng)?;
        if !metrics.loss_total.is_finite() {
            return Err(self.non_finite(batch));
        }
        g.backward(loss)?;
        g.accumulate_param_grads(&mut self.grads);
        drop(g);
        if !self.grads.all_finite() {
            self.grads.zero();
            return Err(self.non_finite(batch));
        }
        if self.config.clip_norm > 0.0 {
            let norm = self.grads.global_norm();
            if norm > self.config.clip_norm {
                self.grads.scale(S::of(self.config.clip_norm / norm));
            }
        }
        self.optimizer.set_learning_rate(metrics.lr);
        self.optimizer.step(self.model.params_mut(), &mut self.grads)?;
        self.step += 1;
        Ok(metrics)
    }

    /// Draws the next batch and updates on it.
    pub fn step(&mut self) -> Result<StepMetrics, TrainError> {
        let batch = self.next_batch()?;
        self.step_on(&batch)
    }
}
