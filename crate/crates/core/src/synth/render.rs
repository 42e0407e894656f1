use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::FeatureMatrix;
use crate::error::TextError;
use crate::text::{word_phonemes, AnnotatedText, Lexicon, PhonemeInventory, StutterType};

/// Numeric knobs of the synthetic renderer. The defaults keep the three
/// stutter realizations unambiguous to the detector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    pub dim: usize,
    pub template_seed: u64,
    pub min_duration: usize,
    pub max_duration: usize,
    pub duration_jitter: usize,
    pub edge_silence: usize,
    pub boundary_silence: usize,
    pub repetition_min: usize,
    pub repetition_max: usize,
    pub repetition_gap: usize,
    pub phonation_stretch: usize,
    pub block_min: usize,
    pub block_max: usize,
    pub noise_sigma: f64,
    /// Value of every coordinate of the silence template. Phoneme templates
    /// fill [-1, 1]^dim; silence sits below them like a log-mel energy floor
    /// rather than at their centroid, so a model hedging between phonemes
    /// does not produce silence.
    pub silence_level: f64,
    pub speaker_offset_bound: f64,
    pub speaker_scale_min: f64,
    pub speaker_scale_max: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            template_seed: 0x7e3a_1c55,
            min_duration: 5,
            max_duration: 15,
            duration_jitter: 1,
            edge_silence: 4,
            boundary_silence: 3,
            repetition_min: 2,
            repetition_max: 2,
            repetition_gap: 4,
            phonation_stretch: 3,
            block_min: 8,
            block_max: 20,
            noise_sigma: 0.05,
            silence_level: -2.0,
            speaker_offset_bound: 0.4,
            speaker_scale_min: 0.8,
            speaker_scale_max: 1.2,
        }
    }
}

/// Per-speaker additive offset and tempo.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeakerProfile {
    pub id: u32,
    pub offset: Vec<f32>,
    pub duration_scale: f64,
}

impl SpeakerProfile {
    /// Deterministic profile for speaker `id` of a corpus seeded with `seed`.
    pub fn generate(id: u32, cfg: &RenderConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0x5000_0000 + id as u64);
        let b = cfg.speaker_offset_bound;
        let offset = (0..cfg.dim).map(|_| rng.random_range(-b..=b) as f32).collect();
        let duration_scale = rng.random_range(cfg.speaker_scale_min..=cfg.speaker_scale_max);
        Self {
            id,
            offset,
            duration_scale,
        }
    }
}

/// Frame span of one word. `onset` precedes `start` when a stutter
/// realization (bursts, block silence) was rendered in front of the word.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordSpan {
    pub onset: usize,
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Alignment {
    pub words: Vec<WordSpan>,
}

/// Phoneme templates and base durations derived from a [`RenderConfig`].
#[derive(Clone, Debug, PartialEq)]
pub struct RenderRules {
    config: RenderConfig,
    templates: Vec<Vec<f32>>,
    base: Vec<usize>,
    silence: usize,
    boundary: usize,
    ordinary: core::ops::Range<usize>,
}

impl RenderRules {
    pub fn new(config: RenderConfig, inventory: &PhonemeInventory) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.template_seed);
        let d = config.dim;
        let min_sep = 4.0 * config.noise_sigma * libm::sqrt(d as f64);
        let mut templates: Vec<Vec<f32>> = vec![vec![0.0; d]; inventory.len()];
        let floor = vec![config.silence_level as f32; d];
        templates[inventory.silence()] = floor.clone();
        templates[inventory.boundary()] = floor;
        let mut base = vec![config.boundary_silence; inventory.len()];
        base[inventory.silence()] = config.edge_silence;
        let mut placed: Vec<Vec<f32>> = vec![templates[inventory.silence()].clone()];
        for id in inventory.ordinary_ids() {
            let t = loop {
                let cand: Vec<f32> = (0..d).map(|_| rng.random_range(-1.0f32..=1.0)).collect();
                if placed.iter().all(|p| dist(p, &cand) > 2.0 * min_sep) {
                    break cand;
                }
            };
            placed.push(t.clone());
            templates[id] = t;
            base[id] = rng.random_range(config.min_duration..=config.max_duration);
        }
        Self {
            config,
            templates,
            base,
            silence: inventory.silence(),
            boundary: inventory.boundary(),
            ordinary: inventory.ordinary_ids(),
        }
    }

    pub fn config(&self) -> &RenderConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn template(&self, id: usize) -> &[f32] {
        &self.templates[id]
    }

    /// Symbols the detector classifies frames into: silence plus ordinary phonemes.
    pub fn classes(&self) -> impl Iterator<Item = usize> + '_ {
        core::iter::once(self.silence).chain(self.ordinary.clone())
    }

    pub fn silence(&self) -> usize {
        self.silence
    }

    /// Speaker-scaled nominal duration of a phoneme, before jitter.
    pub fn duration(&self, id: usize, speaker: &SpeakerProfile) -> usize {
        if id == self.silence || id == self.boundary {
            return self.base[id];
        }
        (libm::round(self.base[id] as f64 * speaker.duration_scale) as usize).max(2)
    }

    /// Length of one repetition burst for a phoneme.
    pub fn burst_len(&self, id: usize, speaker: &SpeakerProfile) -> usize {
        self.duration(id, speaker).div_ceil(2).max(2)
    }

    /// Minimum pairwise template distance among the classified symbols.
    pub fn min_separation(&self) -> f64 {
        let ids: Vec<usize> = self.classes().collect();
        let mut m = f64::INFINITY;
        for (i, &a) in ids.iter().enumerate() {
            for &b in &ids[i + 1..] {
                m = m.min(dist(&self.templates[a], &self.templates[b]));
            }
        }
        m
    }
}

pub(crate) fn dist(a: &[f32], b: &[f32]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(&x, &y)| {
        let d = (x - y) as f64;
        d * d
    }).sum())
}

struct Canvas<'a, R> {
    rules: &'a RenderRules,
    speaker: &'a SpeakerProfile,
    noise: Normal<f64>,
    rng: &'a mut R,
    data: Vec<f32>,
    frames: usize,
}

impl<R: Rng> Canvas<'_, R> {
    fn emit(&mut self, id: usize, n: usize) {
        let t = &self.rules.templates[id];
        for _ in 0..n {
            for (k, &v) in t.iter().enumerate() {
                let e = self.noise.sample(self.rng) as f32;
                self.data.push(v + self.speaker.offset[k] + e);
            }
        }
        self.frames += n;
    }

    fn jittered(&mut self, id: usize) -> usize {
        let base = self.rules.duration(id, self.speaker);
        let j = self.rules.config.duration_jitter as i64;
        let off = if j > 0 { self.rng.random_range(-j..=j) } else { 0 };
        (base as i64 + off).max(2) as usize
    }
}

/// Renders an annotated transcript to noisy feature frames.
///
/// Stutter realizations, placed directly before the affected word:
/// repetition emits short onset bursts of the word's first phoneme, each
/// followed by a short silence; phonation stretches the first phoneme;
/// block inserts a long silence.
pub fn render<R: Rng>(
    text: &AnnotatedText,
    speaker: &SpeakerProfile,
    rules: &RenderRules,
    lexicon: &Lexicon,
    inventory: &PhonemeInventory,
    rng: &mut R,
) -> Result<(FeatureMatrix, Alignment), TextError> {
    let words = word_phonemes(text, lexicon, inventory)?;
    let cfg = &rules.config;
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|_| TextError::Distribution("noise sigma"))?;
    let mut c = Canvas {
        rules,
        speaker,
        noise,
        rng,
        data: Vec::new(),
        frames: 0,
    };
    let mut alignment = Alignment::default();
    c.emit(inventory.silence(), cfg.edge_silence);
    for (i, phones) in words.iter().enumerate() {
        if i > 0 {
            c.emit(inventory.boundary(), cfg.boundary_silence);
        }
        let onset = c.frames;
        let event = text.event_at(i);
        match event {
            Some(StutterType::Block) => {
                let n = c.rng.random_range(cfg.block_min..=cfg.block_max);
                c.emit(inventory.silence(), n);
            }
            Some(StutterType::Repetition) => {
                let k = c.rng.random_range(cfg.repetition_min..=cfg.repetition_max);
                let burst = rules.burst_len(phones[0], speaker);
                for _ in 0..k {
                    c.emit(phones[0], burst);
                    c.emit(inventory.silence(), cfg.repetition_gap);
                }
            }
            _ => {}
        }
        let start = c.frames;
        for (j, &p) in phones.iter().enumerate() {
            let n = if j == 0 && event == Some(StutterType::Phonation) {
                rules.duration(p, speaker) * cfg.phonation_stretch
            } else {
                c.jittered(p)
            };
            c.emit(p, n);
        }
        alignment.words.push(WordSpan {
            onset,
            start,
            end: c.frames,
        });
    }
    c.emit(inventory.silence(), cfg.edge_silence);
    let frames = c.frames;
    let features = FeatureMatrix::new(frames, cfg.dim, c.data).expect("render shape");
    Ok((features, alignment))
}
