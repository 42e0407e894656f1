use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WerResult {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub wer: f64,
}

impl WerResult {
    pub fn edits(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }
}

/// Word error rate from a unit-cost Levenshtein alignment. An empty
/// reference scores `len(hyp)`.
pub fn wer<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> WerResult {
    let (n, m) = (reference.len(), hypothesis.len());
    // (cost, subs, ins, dels) per cell; ties broken by fewest substitutions.
    let mut prev: Vec<(usize, usize, usize, usize)> = (0..=m).map(|j| (j, 0, j, 0)).collect();
    let mut cur = vec![(0, 0, 0, 0); m + 1];
    for i in 1..=n {
        cur[0] = (i, 0, 0, i);
        for j in 1..=m {
            let same = reference[i - 1] == hypothesis[j - 1];
            let d = prev[j - 1];
            let diag = if same { d } else { (d.0 + 1, d.1 + 1, d.2, d.3) };
            let u = prev[j];
            let del = (u.0 + 1, u.1, u.2, u.3 + 1);
            let l = cur[j - 1];
            let ins = (l.0 + 1, l.1, l.2 + 1, l.3);
            cur[j] = [diag, del, ins].into_iter().min().unwrap();
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    let (cost, s, i, d) = prev[m];
    let wer = if n == 0 { m as f64 } else { cost as f64 / n as f64 };
    WerResult {
        substitutions: s,
        insertions: i,
        deletions: d,
        wer,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WilcoxonMethod {
    Exact,
    NormalApproximation,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Sum of the mid-ranks of `x` in the pooled sample.
    pub statistic: f64,
    pub method: WilcoxonMethod,
    /// Two-sided.
    pub p_value: f64,
}

/// Largest per-sample size that still uses the exact null distribution.
pub const EXACT_LIMIT: usize = 12;

/// Mid-ranks (1-based) of the pooled sample, doubled so they stay integral.
fn doubled_ranks(pooled: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&a, &b| pooled[a].total_cmp(&pooled[b]));
    let mut ranks = vec![0u64; pooled.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && pooled[order[j + 1]] == pooled[order[i]] {
            j += 1;
        }
        // mean of ranks i+1..=j+1, doubled
        let r = (i + 1 + j + 1) as u64;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Two-sided rank-sum test. Uses the exact permutation distribution when
/// both samples have at most [`EXACT_LIMIT`] values.
///
/// # Panics
/// If either sample is empty or contains NaN.
pub fn wilcoxon_rank_sum(x: &[f64], y: &[f64]) -> WilcoxonResult {
    let method = if x.len() <= EXACT_LIMIT && y.len() <= EXACT_LIMIT {
        WilcoxonMethod::Exact
    } else {
        WilcoxonMethod::NormalApproximation
    };
    wilcoxon_rank_sum_with(x, y, method)
}

pub fn wilcoxon_rank_sum_with(x: &[f64], y: &[f64], method: WilcoxonMethod) -> WilcoxonResult {
    assert!(!x.is_empty() && !y.is_empty(), "rank-sum samples must be non-empty");
    assert!(x.iter().chain(y).all(|v| !v.is_nan()), "rank-sum samples must not contain NaN");
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let ranks = doubled_ranks(&pooled);
    let w2: u64 = ranks[..x.len()].iter().sum();
    let p_value = match method {
        WilcoxonMethod::Exact => exact_p(&ranks, x.len(), w2),
        WilcoxonMethod::NormalApproximation => normal_p(&ranks, x.len(), w2),
    };
    WilcoxonResult {
        statistic: w2 as f64 / 2.0,
        method,
        p_value,
    }
}

/// Counts subsets of size `k` by doubled rank sum, then doubles the smaller
/// tail.
fn exact_p(ranks: &[u64], k: usize, observed: u64) -> f64 {
    let max_sum: u64 = ranks.iter().sum();
    let width = max_sum as usize + 1;
    // ways[c][s]: subsets of size c with doubled sum s
    let mut ways = vec![vec![0u128; width]; k + 1];
    ways[0][0] = 1;
    for &r in ranks {
        for c in (1..=k).rev() {
            let (lo, hi) = ways.split_at_mut(c);
            let (src, dst) = (&lo[c - 1], &mut hi[0]);
            for s in (r as usize..width).rev() {
                dst[s] += src[s - r as usize];
            }
        }
    }
    let dist = &ways[k];
    let total: u128 = dist.iter().sum();
    let lower: u128 = dist[..=observed as usize].iter().sum();
    let upper: u128 = dist[observed as usize..].iter().sum();
    let tail = lower.min(upper);
    (2.0 * tail as f64 / total as f64).min(1.0)
}

fn normal_p(ranks: &[u64], k: usize, observed: u64) -> f64 {
    let n = ranks.len() as f64;
    let (nx, ny) = (k as f64, n - k as f64);
    let mean = nx * (n + 1.0) / 2.0;
    let mut sorted = ranks.to_vec();
    sorted.sort_unstable();
    let mut ties = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|&&r| r == sorted[i]).count();
        let t = j as f64;
        ties += t * t * t - t;
        i += j;
    }
    let var = nx * ny / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)).max(1.0));
    if var <= 0.0 {
        return 1.0;
    }
    let dev = (observed as f64 / 2.0 - mean).abs();
    let z = ((dev - 0.5).max(0.0)) / libm::sqrt(var);
    libm::erfc(z / core::f64::consts::SQRT_2).min(1.0)
}
