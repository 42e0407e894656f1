//! Exponential-time oracles for the rank-sum test and WER.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stutter_core::eval::{wer, wilcoxon_rank_sum, WilcoxonMethod};

/// Edit distance by plain recursion over the three moves.
pub fn brute_edits(a: &[u8], b: &[u8]) -> usize {
    match (a, b) {
        ([], _) => b.len(),
        (_, []) => a.len(),
        ([x, ra @ ..], [y, rb @ ..]) => {
            let sub = brute_edits(ra, rb) + (x != y) as usize;
            let del = brute_edits(ra, b) + 1;
            let ins = brute_edits(a, rb) + 1;
            sub.min(del).min(ins)
        }
    }
}

/// Two-sided exact p by listing every split of the pooled sample. Ranks are
/// recomputed here from scratch with averaged ties.
pub fn enumerate_p(x: &[f64], y: &[f64]) -> f64 {
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let n = pooled.len();
    let rank2 = |v: f64| {
        let below = pooled.iter().filter(|&&p| p < v).count();
        let equal = pooled.iter().filter(|&&p| p == v).count();
        // doubled mean of ranks below+1 ..= below+equal
        (2 * below + equal + 1) as u64
    };
    let ranks: Vec<u64> = pooled.iter().map(|&v| rank2(v)).collect();
    let observed: u64 = ranks[..x.len()].iter().sum();
    let (mut total, mut le, mut ge) = (0u64, 0u64, 0u64);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != x.len() {
            continue;
        }
        let s: u64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        total += 1;
        le += (s <= observed) as u64;
        ge += (s >= observed) as u64;
    }
    (2.0 * le.min(ge) as f64 / total as f64).min(1.0)
}

pub fn sample(rng: &mut ChaCha8Rng, n: usize, levels: u32) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(0..levels) as f64).collect()
}

/// Random instances with n_x + n_y <= 10, half of them tie-heavy; the
/// library p must equal the enumerated one exactly.
pub fn wilcoxon_against_enumeration(cases: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..cases {
        let nx = rng.random_range(1..=5);
        let ny = rng.random_range(1..=10 - nx);
        let levels = if case % 2 == 0 { 4 } else { 1000 };
        let x = sample(&mut rng, nx, levels);
        let y = sample(&mut rng, ny, levels);
        let r = wilcoxon_rank_sum(&x, &y);
        if r.method != WilcoxonMethod::Exact {
            return Err(format!("{x:?} vs {y:?}: not exact"));
        }
        let oracle = enumerate_p(&x, &y);
        if r.p_value != oracle {
            return Err(format!("{x:?} vs {y:?}: p {} vs enumerated {oracle}", r.p_value));
        }
    }
    Ok(())
}

/// Random short sequences over a 3-symbol alphabet against `brute_edits`.
pub fn wer_against_brute_force(pairs: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..pairs {
        let a: Vec<u8> = (0..rng.random_range(0..=6)).map(|_| rng.random_range(0..3)).collect();
        let b: Vec<u8> = (0..rng.random_range(0..=6)).map(|_| rng.random_range(0..3)).collect();
        let r = wer(&a, &b);
        let edits = brute_edits(&a, &b);
        let expected = if a.is_empty() { b.len() as f64 } else { edits as f64 / a.len() as f64 };
        if r.edits() != edits || r.wer != expected {
            return Err(format!("{a:?} vs {b:?}: {} edits, wer {} (brute force {edits}, {expected})", r.edits(), r.wer));
        }
        // the reported breakdown is a valid alignment of the two lengths
        if a.len() - r.deletions + r.insertions != b.len() {
            return Err(format!("{a:?} vs {b:?}: inconsistent breakdown {r:?}"));
        }
    }
    Ok(())
}
