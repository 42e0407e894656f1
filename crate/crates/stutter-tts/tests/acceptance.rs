//! One PASS/FAIL line per acceptance criterion, printed as each finishes.
//! Exits non-zero if any criterion fails.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stutter_core::eval::{
    probe_set, ratio_cell, score_events, wilcoxon_rank_sum, DetectedEvents, F1Report, IntendedEvents, SweepRow,
};
use stutter_core::model::{compute_loss, ModelConfig, StutterTts};
use stutter_core::synth::{detect_stutter_events, CorpusConfig, SyntheticCorpus};
use stutter_core::text::{insert_random_stutter, StutterType, TypeWeights};
use stutter_core::train::{Batch, BucketSpec, Ratio, TrainConfig, Trainer, TrainingSet};
use stutter_core::{Graph, Tensor};
use stutter_tts::config::SweepConfig;
use support::cases::{check_end_to_end, check_op, op_cases, TOL};
use support::stats::{wer_against_brute_force, wilcoxon_against_enumeration};

const DESK: &str = include_str!("../../../configs/desk.toml");

type Outcome = Result<String, String>;

/// Runs `f`, turning a panic into an error message.
fn caught<T>(f: impl FnOnce() -> Result<T, String>) -> Result<T, String> {
    panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    })
}

fn criterion(label: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let result = caught(f);
    let secs = start.elapsed().as_secs_f64();
    let ok = result.is_ok();
    let detail = result.unwrap_or_else(|e| e);
    println!("{} {label}: {detail} [{secs:.1}s]", if ok { "PASS" } else { "FAIL" });
    ok
}

fn require(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn gradient_integrity() -> Outcome {
    let start = Instant::now();
    let mut worst = (0.0f64, String::new());
    let mut checked = 0;
    let cases = op_cases();
    for c in &cases {
        let r = check_op(c).map_err(|e| format!("{}: {e}", c.name))?;
        checked += r.checked;
        if r.worst > worst.0 {
            worst = (r.worst, format!("{}: {}", c.name, r.worst_at));
        }
    }
    for (seed, r) in [(0, 1), (1, 1), (2, 2)] {
        let rep = check_end_to_end(seed, r).map_err(|e| format!("model seed {seed}: {e}"))?;
        checked += rep.checked;
        if rep.worst > worst.0 {
            worst = (rep.worst, format!("model seed {seed}: {}", rep.worst_at));
        }
    }
    let elapsed = start.elapsed();
    require(worst.0 < TOL, || format!("worst relative error {:.2e} at {}", worst.0, worst.1))?;
    require(elapsed < Duration::from_secs(120), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{} ops and 3 model configs, {checked} derivatives, worst relative error {:.2e}",
        cases.len(),
        worst.0
    ))
}

fn loss_contract() -> Outcome {
    let mut g = Graph::<f64>::new();
    let target = Tensor::new(&[3, 2], vec![0.5, -1.0, 2.0, 0.0, 1.0, 3.0]).unwrap();
    let t = g.constant(target.clone());
    let stop = g.constant(Tensor::new(&[3], vec![-30.0, -30.0, 30.0]).unwrap());
    let (st, w) = ([0.0, 0.0, 1.0], [1.0; 3]);
    let loss = |g: &mut Graph<f64>, pre: &Tensor<f64>, post: &Tensor<f64>| {
        let (pre, post) = (g.constant(pre.clone()), g.constant(post.clone()));
        let p = compute_loss(g, pre, post, stop, t, &st, &w, 0.0, 1.0).unwrap();
        g.value(p.total).item()
    };
    let hand = loss(&mut g, &target, &target.map(|x| x + 1.0));
    require(hand == 1.0, || format!("pre = target, post = target + 1 gives {hand}, not 1"))?;
    let perfect = loss(&mut g, &target, &target);
    require(perfect == 0.0, || format!("perfect prediction gives {perfect}"))?;
    for i in 0..6 {
        for delta in [1e-3, -0.5] {
            let mut off = target.clone();
            off.data_mut()[i] += delta;
            for (pre, post) in [(&off, &target), (&target, &off)] {
                let l = loss(&mut g, pre, post);
                require(l > 0.0, || format!("element {i} off by {delta} gives loss {l}"))?;
            }
        }
    }
    Ok(format!("hand case {hand}, perfect prediction {perfect}, 24 single-element errors all positive"))
}

fn overfit_sanity() -> Outcome {
    let corpus = SyntheticCorpus::new(CorpusConfig {
        n_speakers: 4,
        utts_per_speaker: 2,
        min_words: 2,
        max_words: 4,
        ..CorpusConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let examples = (0..8).map(|i| TrainingSet::example_from(&corpus, corpus.utterance(i))).collect();
    let data = TrainingSet::new(examples);
    let cfg = TrainConfig {
        ratio: Ratio::new(50, 50),
        buckets: vec![BucketSpec { max_frames: 400, batch_size: 8 }],
        learning_rate: 3e-3,
        steps_per_epoch: 3000,
        seed: 4,
        ..TrainConfig::default()
    };
    let model_cfg = ModelConfig {
        n_symbols: corpus.inventory().len(),
        d_model: 32,
        ff_width: 64,
        prenet_hidden: 16,
        prenet_bottleneck: 8,
        postnet_layers: 3,
        postnet_width: 16,
        reference_width: 8,
        reference_frames: 8,
        frames_per_step: 2,
        ..ModelConfig::default()
    };
    let start = Instant::now();
    let model = StutterTts::<f32>::new(model_cfg, 4).map_err(|e| e.to_string())?;
    let mut t = Trainer::new(cfg, model, &data).map_err(|e| e.to_string())?;
    let batch = Batch {
        bucket: 0,
        items: (0..8).collect(),
        frames: (0..8).map(|i| data.get(i).features.frames()).max().unwrap().div_ceil(2) * 2,
    };
    let initial = t.batch_loss(&batch).map_err(|e| e.to_string())?.loss_total;
    let mut last = initial;
    let mut steps = 0;
    while steps < 3000 && last >= 0.1 * initial {
        last = t.step_on(&batch).map_err(|e| e.to_string())?.loss_total;
        steps += 1;
    }
    let elapsed = start.elapsed();
    let detail = format!("loss {initial:.4} -> {last:.4} in {steps} steps, {:.0}s", elapsed.as_secs_f64());
    require(last < 0.1 * initial, || format!("{detail}: not below 10% of initial"))?;
    require(elapsed < Duration::from_secs(300), || format!("{detail}: over 5 minutes"))?;
    Ok(detail)
}

fn f1s(r: &F1Report) -> String {
    let [a, b, c, d] = r.f1_row();
    format!("repetition {a:.3} phonation {b:.3} block {c:.3} non-stutter {d:.3}")
}

/// Trains the desk configuration at `ratio` and scores it on the probe set.
fn desk_cell(ratio: Ratio) -> Result<(SweepRow, Duration, usize, usize, u32), String> {
    let cfg: SweepConfig = toml::from_str(DESK).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let corpus = SyntheticCorpus::new(cfg.corpus.clone()).map_err(|e| e.to_string())?;
    let data = TrainingSet::from_corpus(&corpus);
    let probe = probe_set(&corpus, &cfg.probe).map_err(|e| e.to_string())?;
    let model = ModelConfig {
        feature_dim: cfg.corpus.render.dim,
        ..cfg.model.clone()
    };
    let row = ratio_cell(ratio, &corpus, &data, &probe, &model, &cfg.train, &cfg.probe, &cfg.detector)
        .map_err(|e| e.to_string())?;
    Ok((row, start.elapsed(), corpus.len(), probe.len(), cfg.corpus.n_speakers))
}

fn control(row: &Result<(SweepRow, Duration, usize, usize, u32), String>) -> Outcome {
    let (row, elapsed, utterances, probe, speakers) = row.as_ref().map_err(Clone::clone)?;
    let r = &row.report;
    let detail = format!(
        "{speakers} speakers, {utterances} utterances, ratio {}, {probe} probe sentences, {} excluded; {}; {:.1} min",
        row.ratio,
        r.excluded,
        f1s(r),
        elapsed.as_secs_f64() / 60.0
    );
    require(*speakers >= 4 && *utterances >= 2000 && *probe == 100, || format!("{detail}: below desk scale"))?;
    require(row.ratio == Ratio::new(90, 10), || format!("{detail}: wrong ratio"))?;
    let low = r.f1_row().iter().any(|&f| f < 0.6);
    require(!low, || format!("{detail}: an F1 is below 0.6"))?;
    require(*elapsed <= Duration::from_secs(3600), || format!("{detail}: over 60 minutes"))?;
    Ok(detail)
}

fn ratio_ordering(fluent_only: &SweepRow, mixed: Option<&SweepRow>) -> Outcome {
    let detail = format!("100:0 {}", f1s(&fluent_only.report));
    for kind in StutterType::ALL {
        let f = fluent_only.report.stutter(kind).f1;
        require(f < 0.2, || format!("{detail}: {kind:?} F1 {f:.3} at 100:0 is not below 0.2"))?;
    }
    let mixed = mixed.ok_or_else(|| format!("{detail}: no 90:10 result to compare"))?;
    for kind in StutterType::ALL {
        let (lo, hi) = (fluent_only.report.stutter(kind).f1, mixed.report.stutter(kind).f1);
        require(hi > lo, || format!("{detail}: {kind:?} F1 {hi:.3} at 90:10 is not above {lo:.3}"))?;
    }
    Ok(format!("{detail}; 90:10 above on every type"))
}

fn detector_calibration() -> Outcome {
    let corpus = SyntheticCorpus::new(CorpusConfig {
        n_speakers: 4,
        utts_per_speaker: 250,
        stutter_fraction: 0.75,
        seed: 11,
        ..CorpusConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let mut intended = Vec::new();
    let mut detected = Vec::new();
    for i in 0..corpus.len() {
        let u = corpus.utterance(i);
        let verdict = detect_stutter_events(
            &u.features,
            corpus.speaker(u.speaker),
            u.text.words(),
            corpus.lexicon(),
            corpus.inventory(),
            corpus.rules(),
            &Default::default(),
        )
        .map_err(|e| e.to_string())?;
        intended.push(IntendedEvents {
            id: u.id.clone(),
            words: u.text.words().len(),
            events: u.text.events().to_vec(),
        });
        detected.push(DetectedEvents::from_verdict(u.id.clone(), &verdict));
    }
    let r = score_events(&intended, &detected).map_err(|e| e.to_string())?;
    let detail = format!("{} utterances, {} excluded; {}", corpus.len(), r.excluded, f1s(&r));
    require(corpus.len() == 1000, || format!("{detail}: wrong corpus size"))?;
    require(r.f1_row() == [1.0; 4] && r.excluded == 0, || format!("{detail}: not perfect"))?;
    Ok(detail)
}

fn statistics() -> Outcome {
    wilcoxon_against_enumeration(200)?;
    let p = wilcoxon_rank_sum(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).p_value;
    require((p - 0.1).abs() < 1e-12, || format!("{{1,2,3}} vs {{4,5,6}} gives p = {p}"))?;
    wer_against_brute_force(500)?;
    Ok(format!("200 exact rank-sum cases equal enumeration, {{1,2,3}} vs {{4,5,6}} p = {p}, 500 WER pairs equal brute force"))
}

fn type_frequencies() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let words: Vec<String> = ["call", "mom", "now"].iter().map(|s| s.to_string()).collect();
    let n = 100_000;
    let mut counts = [0usize; 3];
    for _ in 0..n {
        let t = insert_random_stutter(&words, &TypeWeights::default(), &mut rng).map_err(|e| e.to_string())?;
        counts[t.events()[0].kind.index()] += 1;
    }
    let freq = counts.map(|c| c as f64 / n as f64);
    let detail = format!("{:.4}/{:.4}/{:.4} over {n} draws", freq[0], freq[1], freq[2]);
    for (f, want) in freq.iter().zip([0.520, 0.278, 0.202]) {
        require((f - want).abs() <= 0.01, || format!("{detail}: expected {want:.3} +- 0.01"))?;
    }
    Ok(detail)
}

const REPRO_CORPUS: &str = "[corpus]\nn_speakers = 4\nutts_per_speaker = 4\nmin_words = 2\nmax_words = 3\nseed = 13\n";

const REPRO_TRAIN: &str = r#"
[model]
d_model = 8
n_heads = 2
n_encoder_layers = 1
n_decoder_layers = 1
ff_width = 12
prenet_hidden = 8
prenet_bottleneck = 4
postnet_layers = 2
postnet_width = 8
reference_width = 4
reference_frames = 4
frames_per_step = 2
max_positions = 256

[train]
epochs = 2
steps_per_epoch = 3
seed = 6

[[train.buckets]]
max_frames = 512
batch_size = 2
"#;

const REPRO_BATCH: &str = "{\"id\":\"a\",\"transcript\":\"see s_block dog\",\"reference\":\"data/features/utt000001.stft\",\"seed\":1}\n\
{\"id\":\"b\",\"transcript\":\"mom s_repetition call\",\"speaker\":2,\"reference\":\"data/features/utt000002.stft\",\"seed\":2}\n";

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

/// Full command-line pipeline in `dir` with relative paths and one worker.
fn pipeline(dir: &Path) -> Result<(), String> {
    fs::write(dir.join("corpus.toml"), REPRO_CORPUS).unwrap();
    fs::write(dir.join("train.toml"), REPRO_TRAIN).unwrap();
    fs::write(dir.join("requests.jsonl"), REPRO_BATCH).unwrap();
    let steps: [&[&str]; 4] = [
        &["gen-data", "--config", "corpus.toml", "--out", "data", "--workers", "1"],
        &["train", "--config", "train.toml", "--data", "data", "--out", "run"],
        &["synth", "--ckpt", "run/model.stts", "--batch", "requests.jsonl", "--out", "synth", "--workers", "1"],
        &["eval-f1", "--manifest", "synth/manifest.jsonl", "--data", "data", "--out", "eval"],
    ];
    for args in steps {
        let o = Command::new(env!("CARGO_BIN_EXE_stutter-tts"))
            .args(args)
            .current_dir(dir)
            .output()
            .map_err(|e| e.to_string())?;
        if !o.status.success() {
            return Err(format!("{} failed: {}", args[0], String::from_utf8_lossy(&o.stderr)));
        }
    }
    Ok(())
}

fn reproducibility() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    pipeline(a.path())?;
    pipeline(b.path())?;
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    require(ta.keys().eq(tb.keys()), || "runs produced different file sets".to_string())?;
    for (path, bytes) in &ta {
        require(tb[path] == *bytes, || format!("{} differs between runs", path.display()))?;
    }
    for f in ["run/model.stts", "synth/a.stft", "synth/b.stft", "synth/manifest.jsonl", "eval/f1.csv"] {
        require(ta.contains_key(Path::new(f)), || format!("{f} was not written"))?;
    }
    Ok(format!("gen-data, train, synth and eval-f1 twice: {} files byte-identical", ta.len()))
}

fn main() {
    let mut ok = true;
    ok &= criterion("gradient integrity", gradient_integrity);
    ok &= criterion("loss contract", loss_contract);
    ok &= criterion("overfit sanity", overfit_sanity);
    let mut mixed = Err("not trained".to_string());
    ok &= criterion("control at desk scale", || {
        mixed = caught(|| desk_cell(Ratio::new(90, 10)));
        control(&mixed)
    });
    ok &= criterion("ratio ordering", || {
        let (fluent_only, ..) = caught(|| desk_cell(Ratio::new(100, 0)))?;
        ratio_ordering(&fluent_only, mixed.as_ref().ok().map(|m| &m.0))
    });
    ok &= criterion("detector calibration", detector_calibration);
    ok &= criterion("statistics correctness", statistics);
    ok &= criterion("stutter type frequencies", type_frequencies);
    ok &= criterion("reproducibility", reproducibility);
    if !ok {
        std::process::exit(1);
    }
}
