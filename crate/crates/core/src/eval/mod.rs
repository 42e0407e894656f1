//! Scoring of realized stutter events, WER, rank-sum statistics and the
//! fluent:stuttered ratio sweep.

mod stats;
mod sweep;

pub use stats::{wer, wilcoxon_rank_sum, wilcoxon_rank_sum_with, WerResult, WilcoxonMethod, WilcoxonResult, EXACT_LIMIT};
pub use sweep::{
    evaluate_probe, probe_requests, probe_set, ratio_cell, run_ratio_sweep, sweep_csv, ProbeConfig, ProbeItem, ProbeOutcome,
    SweepRow,
};

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::EvalError;
use crate::synth::Verdict;
use crate::text::{StutterEvent, StutterType};

/// Intended events of one utterance over `words` words.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntendedEvents {
    pub id: String,
    pub words: usize,
    pub events: Vec<StutterEvent>,
}

/// Detector output for one utterance; `None` marks an excluded
/// (unintelligible) utterance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectedEvents {
    pub id: String,
    pub events: Option<Vec<StutterEvent>>,
}

impl DetectedEvents {
    pub fn from_verdict(id: impl Into<String>, verdict: &Verdict) -> Self {
        Self {
            id: id.into(),
            events: verdict.events().map(<[_]>::to_vec),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Intended count.
    pub support: usize,
    pub detected: usize,
    pub true_positives: usize,
}

impl CategoryScore {
    pub fn from_counts(true_positives: usize, detected: usize, support: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(true_positives, detected);
        let recall = ratio(true_positives, support);
        Self {
            precision,
            recall,
            f1: f1(precision, recall),
            support,
            detected,
            true_positives,
        }
    }
}

/// Harmonic mean, 0 when both are 0.
pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub repetition: CategoryScore,
    pub phonation: CategoryScore,
    pub block: CategoryScore,
    pub non_stutter: CategoryScore,
    pub scored: usize,
    pub excluded: usize,
}

impl F1Report {
    pub fn stutter(&self, kind: StutterType) -> &CategoryScore {
        match kind {
            StutterType::Repetition => &self.repetition,
            StutterType::Phonation => &self.phonation,
            StutterType::Block => &self.block,
        }
    }

    pub fn f1_row(&self) -> [f64; 4] {
        [self.repetition.f1, self.phonation.f1, self.block.f1, self.non_stutter.f1]
    }

    pub fn exclusion_rate(&self) -> f64 {
        let n = self.scored + self.excluded;
        if n == 0 {
            0.0
        } else {
            self.excluded as f64 / n as f64
        }
    }
}

/// Event-level scoring. A detected event is a true positive when an intended
/// event has the same type and word index. Non-stutter is scored per word:
/// words without an intended event against words without a detected one.
pub fn score_events(intended: &[IntendedEvents], detected: &[DetectedEvents]) -> Result<F1Report, EvalError> {
    if intended.len() != detected.len() {
        return Err(EvalError::Input(format!(
            "{} intended utterances but {} detected",
            intended.len(),
            detected.len()
        )));
    }
    // [tp, detected, support] per stutter type, then non-stutter
    let mut counts = [[0usize; 3]; 4];
    let mut report = F1Report::default();
    for (want, got) in intended.iter().zip(detected) {
        if want.id != got.id {
            return Err(EvalError::Input(format!("utterance id mismatch: {} vs {}", want.id, got.id)));
        }
        let Some(found) = &got.events else {
            report.excluded += 1;
            continue;
        };
        report.scored += 1;
        for e in &want.events {
            counts[e.kind.index()][2] += 1;
        }
        for e in found {
            counts[e.kind.index()][1] += 1;
            if want.events.contains(e) {
                counts[e.kind.index()][0] += 1;
            }
        }
        for w in 0..want.words {
            let clean_want = !want.events.iter().any(|e| e.word_index == w);
            let clean_got = !found.iter().any(|e| e.word_index == w);
            counts[3][2] += clean_want as usize;
            counts[3][1] += clean_got as usize;
            counts[3][0] += (clean_want && clean_got) as usize;
        }
    }
    let score = |c: [usize; 3]| CategoryScore::from_counts(c[0], c[1], c[2]);
    report.repetition = score(counts[0]);
    report.phonation = score(counts[1]);
    report.block = score(counts[2]);
    report.non_stutter = score(counts[3]);
    Ok(report)
}
