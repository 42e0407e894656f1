use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{score_events, DetectedEvents, F1Report, IntendedEvents};
use crate::error::{EvalError, TrainError};
use crate::infer::{synthesize, SynthesisRequest};
use crate::model::{ModelConfig, StutterTts};
use crate::synth::{detect_stutter_events, CorpusConfig, DetectorConfig, SyntheticCorpus, Verdict};
use crate::tensor::Real;
use crate::text::{insert_random_stutter, AnnotatedText, TypeWeights};
use crate::train::{Precision, Ratio, TrainConfig, Trainer, TrainingSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub size: usize,
    pub seed: u64,
    /// Probe tokens are spread evenly over the types by default.
    pub type_weights: TypeWeights,
    pub stop_threshold: f64,
    pub max_decode_frames: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            size: 100,
            seed: 1000,
            type_weights: TypeWeights::uniform(),
            stop_threshold: 0.5,
            max_decode_frames: 1000,
        }
    }
}

/// One probe sentence with a single randomly placed stutter token.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeItem {
    pub id: String,
    pub speaker: u32,
    pub text: AnnotatedText,
    /// Corpus utterance whose features serve as the speaker reference.
    pub reference: usize,
    pub seed: u64,
}

impl ProbeItem {
    pub fn without_events(&self) -> Self {
        Self {
            text: self.text.without_events(),
            ..self.clone()
        }
    }
}

/// Fresh sentences from the corpus vocabulary, speakers round-robin, one
/// stutter token each.
pub fn probe_set(corpus: &SyntheticCorpus, cfg: &ProbeConfig) -> Result<Vec<ProbeItem>, EvalError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let per = corpus.config().utts_per_speaker;
    let speakers = corpus.config().n_speakers;
    (0..cfg.size)
        .map(|i| {
            let speaker = i as u32 % speakers;
            let words = corpus.sentence(&mut rng);
            let text = insert_random_stutter(&words, &cfg.type_weights, &mut rng)?;
            let reference = speaker as usize * per + rng.random_range(0..per);
            Ok(ProbeItem {
                id: format!("probe{i:04}"),
                speaker,
                text,
                reference,
                seed: rng.random(),
            })
        })
        .collect()
}

pub fn probe_requests(corpus: &SyntheticCorpus, items: &[ProbeItem], cfg: &ProbeConfig) -> Vec<SynthesisRequest> {
    items
        .iter()
        .map(|p| SynthesisRequest {
            stop_threshold: cfg.stop_threshold,
            max_decode_frames: cfg.max_decode_frames,
            ..SynthesisRequest::new(
                p.id.clone(),
                crate::text::render_transcript(&p.text),
                p.speaker,
                corpus.utterance(p.reference).features,
                p.seed,
            )
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeOutcome {
    pub report: F1Report,
    pub verdicts: Vec<Verdict>,
    /// Requests that ran into the frame cap instead of stopping.
    pub capped: usize,
}

/// Synthesizes every probe item, runs the detector and scores the events.
pub fn evaluate_probe<S: Real>(
    model: &StutterTts<S>,
    corpus: &SyntheticCorpus,
    items: &[ProbeItem],
    cfg: &ProbeConfig,
    detector: &DetectorConfig,
) -> Result<ProbeOutcome, EvalError> {
    let requests = probe_requests(corpus, items, cfg);
    let mut intended = Vec::with_capacity(items.len());
    let mut detected = Vec::with_capacity(items.len());
    let mut verdicts = Vec::with_capacity(items.len());
    let mut capped = 0;
    for (item, req) in items.iter().zip(&requests) {
        let out = synthesize(model, req, corpus.lexicon(), corpus.inventory())
            .map_err(|e| EvalError::Input(format!("{}: {e}", item.id)))?;
        capped += !out.stopped as usize;
        let verdict = detect_stutter_events(
            &out.features,
            corpus.speaker(item.speaker),
            item.text.words(),
            corpus.lexicon(),
            corpus.inventory(),
            corpus.rules(),
            detector,
        )?;
        intended.push(IntendedEvents {
            id: item.id.clone(),
            words: item.text.words().len(),
            events: item.text.events().to_vec(),
        });
        detected.push(DetectedEvents::from_verdict(item.id.clone(), &verdict));
        verdicts.push(verdict);
    }
    Ok(ProbeOutcome {
        report: score_events(&intended, &detected)?,
        verdicts,
        capped,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub ratio: Ratio,
    pub report: F1Report,
    pub capped: usize,
}

fn train_cell<S: Real>(
    data: &TrainingSet,
    model_cfg: &ModelConfig,
    train_cfg: TrainConfig,
) -> Result<StutterTts<S>, TrainError> {
    let model = StutterTts::<S>::new(model_cfg.clone(), train_cfg.seed)?;
    let total = train_cfg.total_steps();
    let mut trainer = Trainer::new(train_cfg, model, data)?;
    for _ in 0..total {
        let m = trainer.step()?;
        if m.step % 500 == 0 {
            log::info!("step {} loss {:.4}", m.step, m.loss_total);
        }
    }
    Ok(trainer.into_model())
}

/// Trains one model at `ratio` from scratch and scores it on `probe`.
#[allow(clippy::too_many_arguments)]
pub fn ratio_cell(
    ratio: Ratio,
    corpus: &SyntheticCorpus,
    data: &TrainingSet,
    probe: &[ProbeItem],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    probe_cfg: &ProbeConfig,
    detector: &DetectorConfig,
) -> Result<SweepRow, EvalError> {
    let cfg = TrainConfig {
        ratio,
        ..train_cfg.clone()
    };
    let model_cfg = ModelConfig {
        n_symbols: corpus.inventory().len(),
        ..model_cfg.clone()
    };
    let wrap = |source| EvalError::Sweep {
        ratio: format!("{ratio}"),
        source,
    };
    log::info!("ratio sweep: training {ratio}");
    let outcome = match cfg.precision {
        Precision::F32 => {
            let model = train_cell::<f32>(data, &model_cfg, cfg).map_err(wrap)?;
            evaluate_probe(&model, corpus, probe, probe_cfg, detector)?
        }
        Precision::F64 => {
            let model = train_cell::<f64>(data, &model_cfg, cfg).map_err(wrap)?;
            evaluate_probe(&model, corpus, probe, probe_cfg, detector)?
        }
    };
    Ok(SweepRow {
        ratio,
        report: outcome.report,
        capped: outcome.capped,
    })
}

/// Trains one model per ratio from the same seeds and corpus and scores each
/// on the same probe set.
pub fn run_ratio_sweep(
    ratios: &[Ratio],
    corpus_cfg: &CorpusConfig,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    probe_cfg: &ProbeConfig,
    detector: &DetectorConfig,
) -> Result<Vec<SweepRow>, EvalError> {
    let corpus = SyntheticCorpus::new(corpus_cfg.clone())?;
    let data = TrainingSet::from_corpus(&corpus);
    let probe = probe_set(&corpus, probe_cfg)?;
    ratios
        .iter()
        .map(|&r| ratio_cell(r, &corpus, &data, &probe, model_cfg, train_cfg, probe_cfg, detector))
        .collect()
}

/// Table with one row per ratio.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("ratio,Repetition,Phonation,Block,Non-Stutter\n");
    for row in rows {
        let [r, p, b, n] = row.report.f1_row();
        let _ = writeln!(out, "{},{r:.4},{p:.4},{b:.4},{n:.4}", row.ratio);
    }
    out
}
