//! Training, synthesis and evaluation drivers over files.

use std::fs;
use std::path::{Path, PathBuf};

use stutter_core::eval::{score_events, DetectedEvents, F1Report, IntendedEvents};
use stutter_core::infer::{synthesize, SynthesisOutput, SynthesisRequest};
use stutter_core::model::{ModelConfig, StutterTts};
use stutter_core::synth::{detect_stutter_events, DetectorConfig, FeatureMatrix, ManifestEntry};
use stutter_core::tensor::Real;
use stutter_core::text::{parse_transcript, Lexicon, PhonemeInventory};
use stutter_core::train::{Precision, TrainConfig, Trainer, TrainingSet};

use crate::checkpoint::{self, AnyCheckpoint, Checkpoint};
use crate::dataset::{par_map, CorpusDir};
use crate::error::{Error, Result};
use crate::formats::{read_features, read_manifest, write_features, write_manifest, MetricsLog};

pub const METRICS: &str = "metrics.csv";
pub const FINAL_CHECKPOINT: &str = "model.stts";

pub fn epoch_checkpoint(out: &Path, epoch: u64) -> PathBuf {
    out.join("checkpoints").join(format!("epoch{epoch:04}.stts"))
}

/// Trains on `data`, logging every step to `metrics.csv` and saving a
/// checkpoint after each epoch plus `model.stts` at the end. With `resume`,
/// continues from a training checkpoint and appends to the log.
pub fn train(
    data: &TrainingSet,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    out: &Path,
    resume: Option<&Path>,
) -> Result<()> {
    match train_cfg.precision {
        Precision::F32 => train_typed::<f32>(data, model_cfg, train_cfg, out, resume),
        Precision::F64 => train_typed::<f64>(data, model_cfg, train_cfg, out, resume),
    }
}

fn train_typed<S: Real>(
    data: &TrainingSet,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    out: &Path,
    resume: Option<&Path>,
) -> Result<()> {
    let ck_dir = out.join("checkpoints");
    fs::create_dir_all(&ck_dir).map_err(Error::io(&ck_dir))?;
    let metrics_path = out.join(METRICS);
    let (mut trainer, mut log) = match resume {
        None => {
            let model = StutterTts::<S>::new(model_cfg.clone(), train_cfg.seed)?;
            (Trainer::new(train_cfg.clone(), model, data)?, MetricsLog::create(&metrics_path)?)
        }
        Some(path) => {
            let ck: Checkpoint<S> = checkpoint::load(path)?;
            let (Some(state), Some(optimizer)) = (ck.state, ck.optimizer) else {
                return Err(Error::format(path, "checkpoint has no training state to resume"));
            };
            let cfg = ck.train.unwrap_or_else(|| train_cfg.clone());
            (Trainer::resume(cfg, ck.model, optimizer, state, data)?, MetricsLog::append(&metrics_path)?)
        }
    };
    let per_epoch = trainer.config().steps_per_epoch.max(1);
    let total = trainer.config().total_steps();
    while trainer.step_count() < total {
        let m = trainer.step()?;
        log.write(&m)?;
        if m.step % 100 == 0 {
            log::info!("step {} loss {:.4} (pre {:.4} post {:.4} stop {:.4})", m.step, m.loss_total, m.loss_pre, m.loss_post, m.loss_stop);
        }
        if m.step % per_epoch == 0 {
            save_training(&trainer, &epoch_checkpoint(out, m.step / per_epoch))?;
        }
    }
    save_training(&trainer, &out.join(FINAL_CHECKPOINT))
}

pub fn save_training<S: Real>(trainer: &Trainer<'_, S>, path: &Path) -> Result<()> {
    let ck = Checkpoint {
        model: trainer.model().clone(),
        train: Some(trainer.config().clone()),
        state: Some(trainer.state()),
        optimizer: Some(trainer.optimizer().clone()),
    };
    checkpoint::save(path, &ck)
}

/// Synthesis request as read from a batch file; `reference` is a feature
/// file path.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestLine {
    pub id: String,
    pub transcript: String,
    #[serde(default)]
    pub speaker: u32,
    pub reference: PathBuf,
    pub seed: u64,
}

fn synth_any(ck: &AnyCheckpoint, req: &SynthesisRequest, lex: &Lexicon, inv: &PhonemeInventory) -> Result<SynthesisOutput> {
    Ok(match ck {
        AnyCheckpoint::F32(c) => synthesize(&c.model, req, lex, inv)?,
        AnyCheckpoint::F64(c) => synthesize(&c.model, req, lex, inv)?,
    })
}

/// Decodes each request and writes `<id>.stft` under `out` plus a manifest
/// with one line per request; failures are recorded in the line's `error`.
pub fn batch_synthesize_to_dir(
    ck: &AnyCheckpoint,
    requests: &[SynthesisRequest],
    lexicon: &Lexicon,
    inventory: &PhonemeInventory,
    out: &Path,
    manifest_name: &str,
    workers: usize,
) -> Result<Vec<ManifestEntry>> {
    fs::create_dir_all(out).map_err(Error::io(out))?;
    let entries = par_map(requests.len(), workers, |i| -> Result<ManifestEntry> {
        let req = &requests[i];
        let rel = format!("{}.stft", req.id);
        let events = parse_transcript(&req.transcript).map(|t| t.events().to_vec()).unwrap_or_default();
        let mut entry = ManifestEntry {
            id: req.id.clone(),
            transcript: req.transcript.clone(),
            speaker: req.speaker,
            features: rel.clone(),
            frames: 0,
            events,
            alignment: Vec::new(),
            error: None,
        };
        match synth_any(ck, req, lexicon, inventory) {
            Ok(o) => {
                write_features(&out.join(&rel), &o.features)?;
                entry.frames = o.features.frames();
                if !o.stopped {
                    log::warn!("{}: stop never fired, hit the {}-frame cap", req.id, o.features.frames());
                }
            }
            Err(e) => {
                log::warn!("{}: {e}", req.id);
                entry.features = String::new();
                entry.error = Some(e.to_string());
            }
        }
        Ok(entry)
    });
    let entries = entries.into_iter().collect::<Result<Vec<_>>>()?;
    write_manifest(&out.join(manifest_name), &entries)?;
    Ok(entries)
}

/// Scores a synthesized manifest with the detector of the corpus that
/// defines its speakers. Failed lines are counted as excluded.
pub fn eval_manifest(manifest: &Path, corpus: &CorpusDir, detector: &DetectorConfig) -> Result<F1Report> {
    let entries = read_manifest(manifest)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let c = &corpus.corpus;
    let mut intended = Vec::with_capacity(entries.len());
    let mut detected = Vec::with_capacity(entries.len());
    for e in &entries {
        let text = e.validate().map_err(|err| Error::format(manifest, format!("{}: {err}", e.id)))?;
        if e.speaker >= c.config().n_speakers {
            return Err(Error::format(manifest, format!("{}: unknown speaker {}", e.id, e.speaker)));
        }
        intended.push(IntendedEvents {
            id: e.id.clone(),
            words: text.words().len(),
            events: text.events().to_vec(),
        });
        let events = if e.error.is_some() {
            None
        } else {
            let f: FeatureMatrix = read_features(&base.join(&e.features))?;
            let v = detect_stutter_events(&f, c.speaker(e.speaker), text.words(), c.lexicon(), c.inventory(), c.rules(), detector)?;
            v.events().map(<[_]>::to_vec)
        };
        detected.push(DetectedEvents { id: e.id.clone(), events });
    }
    Ok(score_events(&intended, &detected)?)
}

pub fn f1_csv(report: &F1Report) -> String {
    let mut out = String::from("category,precision,recall,f1,support,detected\n");
    for (name, s) in [
        ("Repetition", &report.repetition),
        ("Phonation", &report.phonation),
        ("Block", &report.block),
        ("Non-Stutter", &report.non_stutter),
    ] {
        out.push_str(&format!("{name},{:.4},{:.4},{:.4},{},{}\n", s.precision, s.recall, s.f1, s.support, s.detected));
    }
    out
}
