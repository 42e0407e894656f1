//! Free-running autoregressive synthesis.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::Graph;
use crate::error::{InferError, TextError};
use crate::model::{Mode, StutterTts};
use crate::synth::FeatureMatrix;
use crate::tensor::{Real, Tensor};
use crate::text::{g2p, parse_transcript, Lexicon, PhonemeInventory};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthesisRequest {
    pub id: String,
    /// Transcript, optionally carrying stutter tokens.
    pub transcript: String,
    pub speaker: u32,
    pub reference: FeatureMatrix,
    pub stop_threshold: f64,
    pub max_decode_frames: usize,
    pub seed: u64,
    /// When false the stop head is ignored and decoding runs to the cap.
    pub use_stop: bool,
}

impl SynthesisRequest {
    pub fn new(id: impl Into<String>, transcript: impl Into<String>, speaker: u32, reference: FeatureMatrix, seed: u64) -> Self {
        Self {
            id: id.into(),
            transcript: transcript.into(),
            speaker,
            reference,
            stop_threshold: 0.5,
            max_decode_frames: 1000,
            seed,
            use_stop: true,
        }
    }

    pub fn validate(&self) -> Result<(), InferError> {
        if !(self.stop_threshold > 0.0 && self.stop_threshold < 1.0) {
            return Err(InferError::Request(format!(
                "stop threshold {} outside (0, 1)",
                self.stop_threshold
            )));
        }
        if self.max_decode_frames == 0 {
            return Err(InferError::Request("max_decode_frames must be at least 1".into()));
        }
        Ok(())
    }
}

/// Record of what the autoregressive loop consumed.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SynthesisTrace {
    pub postnet_calls: usize,
    /// Frame fed to the prenet at each decoder step (the first is the go frame).
    pub fed_back: Vec<Vec<f32>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthesisOutput {
    /// Post-postnet frames.
    pub features: FeatureMatrix,
    /// Frames produced by the decoder loop.
    pub pre: FeatureMatrix,
    pub stop_probabilities: Vec<f64>,
    /// True when the stop head fired, false when the cap ended decoding.
    pub stopped: bool,
    pub trace: SynthesisTrace,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

/// Decodes one request. The loop feeds back pre-postnet frames through the
/// live-dropout prenet; the postnet runs once on the finished sequence.
pub fn synthesize<S: Real>(
    model: &StutterTts<S>,
    request: &SynthesisRequest,
    lexicon: &Lexicon,
    inventory: &PhonemeInventory,
) -> Result<SynthesisOutput, InferError> {
    request.validate()?;
    let text = parse_transcript(&request.transcript)?;
    if text.words().is_empty() {
        return Err(TextError::Empty.into());
    }
    let ids = g2p(&text, lexicon, inventory)?;
    let cfg = model.config();
    let (r, d) = (cfg.frames_per_step, cfg.feature_dim);
    let cap = request.max_decode_frames.min(cfg.max_frames());
    let mut rng = ChaCha8Rng::seed_from_u64(request.seed);

    let mut g = Graph::frozen(model.params());
    let enc = model.encode(&mut g, ids.ids(), Mode::Infer, &mut rng)?;
    let reference = model.reference_embed(&mut g, &request.reference.to_tensor(), &mut rng)?;
    let base = g.len();

    let mut trace = SynthesisTrace::default();
    let mut prenet_rows: Vec<S> = Vec::new();
    let mut frames: Vec<S> = Vec::new();
    let mut stop_probabilities = Vec::new();
    let mut stopped = false;
    let mut input: Tensor<S> = Tensor::zeros(&[1, d]);
    'decode: for step in 0.. {
        trace.fed_back.push(input.data().iter().map(|x: &S| x.as_f64() as f32).collect());
        let x = g.constant(input.clone());
        let pn = model.prenet(&mut g, x, &mut rng)?;
        prenet_rows.extend_from_slice(g.value(pn).data());
        g.rewind(base);

        let width = prenet_rows.len() / (step + 1);
        let pn_all = g.constant(Tensor::new(&[step + 1, width], prenet_rows.clone())?);
        let (states, _) = model.decoder_states(&mut g, enc, pn_all, reference)?;
        let last = g.slice_rows(states, step, 1)?;
        let (mel, stop) = model.project(&mut g, last)?;
        let mel = g.value(mel).clone();
        let stop: Vec<f64> = g.value(stop).data().iter().map(|x| sigmoid(x.as_f64())).collect();
        g.rewind(base);

        for (j, &p) in stop.iter().enumerate() {
            frames.extend_from_slice(mel.row(j));
            stop_probabilities.push(p);
            if request.use_stop && p > request.stop_threshold {
                stopped = true;
                break 'decode;
            }
            if frames.len() / d >= cap {
                break 'decode;
            }
        }
        input = Tensor::new(&[1, d], mel.row(r - 1).to_vec())?;
    }

    let t = frames.len() / d;
    let pre = Tensor::new(&[t, d], frames)?;
    let pv = g.constant(pre.clone());
    let post = model.postnet(&mut g, pv, None)?;
    trace.postnet_calls += 1;
    let post = g.value(post).clone();
    Ok(SynthesisOutput {
        features: FeatureMatrix::from_tensor(&post)?,
        pre: FeatureMatrix::from_tensor(&pre)?,
        stop_probabilities,
        stopped,
        trace,
    })
}

/// Independent requests decoded in order; failures are kept per request.
pub fn batch_synthesize<S: Real>(
    model: &StutterTts<S>,
    requests: &[SynthesisRequest],
    lexicon: &Lexicon,
    inventory: &PhonemeInventory,
) -> Vec<Result<SynthesisOutput, InferError>> {
    requests
        .iter()
        .map(|r| synthesize(model, r, lexicon, inventory))
        .collect()
}
