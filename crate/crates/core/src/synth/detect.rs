use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::render::{RenderRules, SpeakerProfile};
use super::FeatureMatrix;
use crate::error::TextError;
use crate::text::{Lexicon, PhonemeInventory, StutterEvent, StutterType};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    /// Runs shorter than this are absorbed into a neighbour before alignment.
    pub min_run: usize,
    /// A first-phoneme run at least this many times its nominal duration is a phonation.
    pub phonation_ratio: f64,
    /// Silence run before a word start that counts as a block.
    pub block_min: usize,
    /// Alignment cost per expected token above which the input is unintelligible.
    pub max_cost: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            min_run: 2,
            phonation_ratio: 2.0,
            block_min: 8,
            max_cost: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Verdict {
    Events(Vec<StutterEvent>),
    Unintelligible { cost: f64 },
}

impl Verdict {
    pub fn events(&self) -> Option<&[StutterEvent]> {
        match self {
            Verdict::Events(e) => Some(e),
            Verdict::Unintelligible { .. } => None,
        }
    }

    pub fn is_intelligible(&self) -> bool {
        matches!(self, Verdict::Events(_))
    }
}

#[derive(Clone, Copy, Debug)]
struct Run {
    label: usize,
    len: usize,
}

#[derive(Clone, Copy, Debug)]
struct Token {
    label: usize,
    silent: bool,
    /// Word whose first phoneme this token is.
    initial_of: Option<usize>,
    duration: usize,
}

fn classify(f: &FeatureMatrix, speaker: &SpeakerProfile, rules: &RenderRules) -> Vec<usize> {
    let classes: Vec<usize> = rules.classes().collect();
    (0..f.frames())
        .map(|t| {
            let frame = f.frame(t);
            let mut best = (f32::INFINITY, rules.silence());
            for &c in &classes {
                let tpl = rules.template(c);
                let d: f32 = frame
                    .iter()
                    .zip(tpl)
                    .zip(&speaker.offset)
                    .map(|((&x, &m), &o)| (x - o - m) * (x - o - m))
                    .sum();
                if d < best.0 {
                    best = (d, c);
                }
            }
            best.1
        })
        .collect()
}

fn runs_of(labels: &[usize], min_run: usize) -> Vec<Run> {
    let mut runs: Vec<Run> = Vec::new();
    for &l in labels {
        match runs.last_mut() {
            Some(r) if r.label == l => r.len += 1,
            _ => runs.push(Run { label: l, len: 1 }),
        }
    }
    while let Some(i) = runs.iter().position(|r| r.len < min_run) {
        if runs.len() == 1 {
            break;
        }
        if i > 0 && i + 1 < runs.len() && runs[i - 1].label == runs[i + 1].label {
            runs[i - 1].len += runs[i].len + runs[i + 1].len;
            runs.drain(i..=i + 1);
        } else if i > 0 {
            runs[i - 1].len += runs[i].len;
            runs.remove(i);
        } else {
            runs[1].len += runs[0].len;
            runs.remove(0);
        }
    }
    runs
}

fn expected_tokens(
    words: &[Vec<usize>],
    speaker: &SpeakerProfile,
    rules: &RenderRules,
    inventory: &PhonemeInventory,
) -> Vec<Token> {
    let sil = rules.silence();
    let silent = |duration| Token {
        label: sil,
        silent: true,
        initial_of: None,
        duration,
    };
    let mut toks = vec![silent(rules.duration(inventory.silence(), speaker))];
    for (w, phones) in words.iter().enumerate() {
        if w > 0 {
            toks.push(silent(rules.duration(inventory.boundary(), speaker)));
        }
        for (j, &p) in phones.iter().enumerate() {
            let d = rules.duration(p, speaker);
            match toks.last_mut() {
                Some(t) if j > 0 && t.label == p => t.duration += d,
                _ => toks.push(Token {
                    label: p,
                    silent: false,
                    initial_of: (j == 0).then_some(w),
                    duration: d,
                }),
            }
        }
    }
    toks.push(silent(rules.duration(inventory.silence(), speaker)));
    toks
}

/// Edit alignment of runs against tokens. Returns the matched run for each
/// token (label-equal matches only) and the inserted non-silent run count
/// plus substitutions and deletions. Ties in the backtrace resolve toward
/// late insertions so earlier tokens bind to the earliest compatible runs.
fn align(runs: &[Run], toks: &[Token], sil: usize) -> (Vec<Option<usize>>, usize) {
    let (n, m) = (runs.len(), toks.len());
    let w = m + 1;
    let mut dp = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        dp[i * w] = i;
    }
    for (j, v) in dp.iter_mut().enumerate().take(w) {
        *v = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = usize::from(runs[i - 1].label != toks[j - 1].label);
            dp[i * w + j] = (dp[(i - 1) * w + j] + 1)
                .min(dp[i * w + j - 1] + 1)
                .min(dp[(i - 1) * w + j - 1] + sub);
        }
    }
    let mut matched = vec![None; m];
    let mut cost = 0;
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = dp[i * w + j];
        if i > 0 && dp[(i - 1) * w + j] + 1 == here {
            if runs[i - 1].label != sil {
                cost += 1;
            }
            i -= 1;
        } else if j > 0 && dp[i * w + j - 1] + 1 == here {
            cost += 1;
            j -= 1;
        } else {
            if runs[i - 1].label == toks[j - 1].label {
                matched[j - 1] = Some(i - 1);
            } else {
                cost += 1;
            }
            i -= 1;
            j -= 1;
        }
    }
    (matched, cost)
}

/// Recovers stutter events from feature frames of a known speaker and
/// transcript.
///
/// Frames are classified to the nearest template after removing the speaker
/// offset, collapsed into runs and aligned to the expected fluent phoneme
/// string. Extra runs of a word's first phoneme are repetitions, an
/// overlong first-phoneme run is a phonation, and a long silence right before
/// the word is a block.
pub fn detect_stutter_events(
    features: &FeatureMatrix,
    speaker: &SpeakerProfile,
    words: &[alloc::string::String],
    lexicon: &Lexicon,
    inventory: &PhonemeInventory,
    rules: &RenderRules,
    cfg: &DetectorConfig,
) -> Result<Verdict, TextError> {
    let phones: Vec<Vec<usize>> = words
        .iter()
        .map(|w| lexicon.pronounce(w, inventory))
        .collect::<Result<_, _>>()?;
    let sil = rules.silence();
    let labels = classify(features, speaker, rules);
    let runs = runs_of(&labels, cfg.min_run);
    let toks = expected_tokens(&phones, speaker, rules, inventory);
    let (matched, cost) = align(&runs, &toks, sil);
    let norm = cost as f64 / toks.len() as f64;
    if norm > cfg.max_cost {
        return Ok(Verdict::Unintelligible { cost: norm });
    }

    let mut events: Vec<StutterEvent> = Vec::new();
    let mut flag = |kind: StutterType, word: usize| {
        let e = StutterEvent::new(kind, word);
        if !events.contains(&e) {
            events.push(e);
        }
    };

    for (e, tok) in toks.iter().enumerate() {
        let Some(word) = tok.initial_of else {
            continue;
        };
        let x = tok.label;
        // Chain of same-label tokens bounded by the nearest different phonemes.
        let p = (0..e).rev().find(|&k| !toks[k].silent && toks[k].label != x);
        let q = (e + 1..toks.len()).find(|&k| !toks[k].silent && toks[k].label != x);
        let lo = p.map_or(0, |p| p + 1);
        let hi = q.unwrap_or(toks.len());
        let chain: Vec<usize> = (lo..hi).filter(|&k| !toks[k].silent).collect();
        let last_initial = chain.iter().rev().find(|&&k| toks[k].initial_of.is_some());
        let r_a = p.and_then(|p| (0..=p).rev().find_map(|k| matched[k]));
        let r_b = q.and_then(|q| (q..toks.len()).find_map(|k| matched[k]));
        let run_lo = r_a.map_or(0, |r| r + 1);
        let run_hi = r_b.unwrap_or(runs.len());
        if run_lo < run_hi && last_initial == Some(&e) {
            let observed = runs[run_lo..run_hi].iter().filter(|r| r.label == x).count();
            if observed > chain.len() {
                flag(StutterType::Repetition, word);
            }
        }
        if let Some(r) = matched[e] {
            if runs[r].len as f64 >= cfg.phonation_ratio * tok.duration as f64 {
                flag(StutterType::Phonation, word);
            }
            if r > 0 && runs[r - 1].label == sil && runs[r - 1].len >= cfg.block_min {
                flag(StutterType::Block, word);
            }
        }
    }
    events.sort_by_key(|e| (e.word_index, e.kind));
    Ok(Verdict::Events(events))
}
