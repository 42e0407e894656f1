//! Command-line entry point. Exit codes: 0 success, 1 usage error, 2 runtime
//! error. Logs go to stderr; data goes to files under `--out` or to stdout.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand};
use serde::Serialize;
use stutter_core::eval::{probe_set, ratio_cell, sweep_csv, wilcoxon_rank_sum, WilcoxonMethod};
use stutter_core::infer::SynthesisRequest;
use stutter_core::model::ModelConfig;
use stutter_core::synth::{SyntheticCorpus};
use stutter_core::train::TrainingSet;

use crate::checkpoint::{self, AnyCheckpoint};
use crate::config::{load_or_default, write_toml, EvalConfig, GenDataConfig, SweepConfig, SynthConfig, TrainRunConfig};
use crate::dataset::{generate_corpus, par_map, CorpusDir};
use crate::error::{Error, Result};
use crate::formats::{export_spectrogram, read_features, read_sample, write_features, write_manifest, ImageFormat};
use crate::run::{self, RequestLine};

pub const RESOLVED: &str = "resolved.toml";

#[derive(Debug, Parser)]
#[command(name = "stutter-tts", version, about = "Stutter-controllable toy TTS: data, training, synthesis, evaluation")]
pub struct Cli {
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, action = ArgAction::Count, global = true)]
    pub verbose: u8,
    /// Log errors only.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic multi-speaker corpus with stutter annotations.
    GenData(GenDataArgs),
    /// Train a model on a generated corpus.
    Train(TrainArgs),
    /// Synthesize features from an annotated transcript.
    Synth(SynthArgs),
    /// Score stutter events in synthesized features against their transcripts.
    EvalF1(EvalArgs),
    /// Train one model per fluent:stuttered ratio and score each on a probe set.
    RatioSweep(SweepArgs),
    /// Two-sided Wilcoxon rank-sum test between two samples.
    Wilcoxon(WilcoxonArgs),
    /// Export a feature file as a PGM image or CSV table.
    ExportSpec(ExportArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct GenDataArgs {
    /// TOML file with a [corpus] table; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Corpus seed, overriding corpus.seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads for rendering.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// TOML file with [model] and [train] tables; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Corpus directory written by gen-data.
    #[arg(long)]
    pub data: PathBuf,
    /// Training seed (initialization, sampling, dropout), overriding train.seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for metrics.csv, checkpoints and model.stts.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from a training checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Worker threads for loading features.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    /// Model checkpoint.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Transcript with optional stutter tokens, e.g. "please s_block call mom".
    #[arg(long, conflicts_with = "batch")]
    pub text: Option<String>,
    /// Speaker reference feature file (required with --text).
    #[arg(long = "ref", conflicts_with = "batch")]
    pub reference: Option<PathBuf>,
    /// Speaker id recorded in the manifest.
    #[arg(long, default_value_t = 0)]
    pub speaker: u32,
    /// JSON-lines file of requests {id, transcript, speaker, reference, seed}.
    #[arg(long)]
    pub batch: Option<PathBuf>,
    /// TOML file with stop_threshold, max_decode_frames, use_stop.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for prenet dropout at inference.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output feature file with --text, output directory with --batch.
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads for batch synthesis.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// Manifest of synthesized (or oracle) utterances.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Corpus directory defining the speakers.
    #[arg(long)]
    pub data: PathBuf,
    /// TOML file with a [detector] table.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for f1.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SweepArgs {
    /// TOML file with ratios and [corpus], [model], [train], [probe], [detector] tables.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training seed, overriding train.seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for sweep.csv.
    #[arg(long)]
    pub out: PathBuf,
    /// Ratios trained concurrently.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct WilcoxonArgs {
    /// First sample: one number per line (first column of a CSV; header allowed).
    #[arg(long)]
    pub a: PathBuf,
    /// Second sample, same format.
    #[arg(long)]
    pub b: PathBuf,
    /// Optional output directory for wilcoxon.txt.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ExportArgs {
    /// Feature file to export.
    #[arg(long)]
    pub features: PathBuf,
    /// Output format.
    #[arg(long, value_enum, default_value_t = ImageFormat::Pgm)]
    #[serde(skip)]
    pub format: ImageFormat,
    /// Output file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct Resolved<'a, A: Serialize, C: Serialize> {
    command: &'a str,
    args: &'a A,
    config: &'a C,
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(Error::io(path))
}

fn snapshot<A: Serialize, C: Serialize>(dir: &Path, name: &str, command: &str, args: &A, config: &C) -> Result<()> {
    create_dir(dir)?;
    write_toml(&dir.join(name), &Resolved { command, args, config })
}

/// Directory and snapshot name for a run whose `--out` is a file.
fn file_snapshot(out: &Path) -> (PathBuf, String) {
    let dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new(".")).to_path_buf();
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    (dir, format!("{stem}.{RESOLVED}"))
}

fn gen_data(a: &GenDataArgs) -> Result<()> {
    let mut cfg: GenDataConfig = load_or_default(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.corpus.seed = seed;
    }
    snapshot(&a.out, RESOLVED, "gen-data", a, &cfg)?;
    generate_corpus(&cfg.corpus, &a.out, a.workers)?;
    Ok(())
}

fn train(a: &TrainArgs) -> Result<()> {
    let mut cfg: TrainRunConfig = load_or_default(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.train.seed = seed;
    }
    let corpus = CorpusDir::open(&a.data)?;
    cfg.model.n_symbols = corpus.corpus.inventory().len();
    cfg.model.feature_dim = corpus.corpus.config().render.dim;
    snapshot(&a.out, RESOLVED, "train", a, &cfg)?;
    let data = corpus.training_set(a.workers)?;
    run::train(&data, &cfg.model, &cfg.train, &a.out, a.resume.as_deref())
}

fn request(cfg: &SynthConfig, id: String, transcript: String, speaker: u32, reference: &Path, seed: u64) -> Result<SynthesisRequest> {
    Ok(SynthesisRequest {
        stop_threshold: cfg.stop_threshold,
        max_decode_frames: cfg.max_decode_frames,
        use_stop: cfg.use_stop,
        ..SynthesisRequest::new(id, transcript, speaker, read_features(reference)?, seed)
    })
}

fn synth(a: &SynthArgs) -> Result<()> {
    let cfg: SynthConfig = load_or_default(a.config.as_deref())?;
    let ck = checkpoint::load_any(&a.ckpt)?;
    let (lex, inv) = (stutter_core::synth::bundled_lexicon(), stutter_core::synth::bundled_inventory());
    match (&a.text, &a.batch) {
        (Some(text), None) => {
            let Some(reference) = &a.reference else {
                return Err(Error::Usage("--text needs --ref".into()));
            };
            let (dir, snap) = file_snapshot(&a.out);
            snapshot(&dir, &snap, "synth", a, &cfg)?;
            let id = a.out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "synth".into());
            let req = request(&cfg, id, text.clone(), a.speaker, reference, a.seed)?;
            let out = match &ck {
                AnyCheckpoint::F32(c) => stutter_core::infer::synthesize(&c.model, &req, &lex, &inv)?,
                AnyCheckpoint::F64(c) => stutter_core::infer::synthesize(&c.model, &req, &lex, &inv)?,
            };
            write_features(&a.out, &out.features)?;
            let text = stutter_core::text::parse_transcript(text)?;
            let entry = stutter_core::synth::ManifestEntry {
                id: req.id.clone(),
                transcript: req.transcript.clone(),
                speaker: a.speaker,
                features: a.out.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
                frames: out.features.frames(),
                events: text.events().to_vec(),
                alignment: Vec::new(),
                error: None,
            };
            write_manifest(&a.out.with_extension("jsonl"), &[entry])?;
            if !out.stopped {
                log::warn!("stop never fired; output capped at {} frames", out.features.frames());
            }
            Ok(())
        }
        (None, Some(batch)) => {
            snapshot(&a.out, RESOLVED, "synth", a, &cfg)?;
            let text = fs::read_to_string(batch).map_err(Error::io(batch))?;
            let base = batch.parent().unwrap_or(Path::new("."));
            let mut reqs = Vec::new();
            for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let r: RequestLine = serde_json::from_str(line).map_err(|e| Error::format(batch, format!("line {}: {e}", i + 1)))?;
                reqs.push(request(&cfg, r.id, r.transcript, r.speaker, &base.join(&r.reference), r.seed)?);
            }
            run::batch_synthesize_to_dir(&ck, &reqs, &lex, &inv, &a.out, "manifest.jsonl", a.workers)?;
            Ok(())
        }
        _ => Err(Error::Usage("give exactly one of --text or --batch".into())),
    }
}

fn eval_f1(a: &EvalArgs) -> Result<()> {
    let cfg: EvalConfig = load_or_default(a.config.as_deref())?;
    snapshot(&a.out, RESOLVED, "eval-f1", a, &cfg)?;
    let corpus = CorpusDir::open(&a.data)?;
    let report = run::eval_manifest(&a.manifest, &corpus, &cfg.detector)?;
    let csv = run::f1_csv(&report);
    let path = a.out.join("f1.csv");
    fs::write(&path, &csv).map_err(Error::io(&path))?;
    print!("{csv}");
    println!("scored {} excluded {} ({:.1}%)", report.scored, report.excluded, 100.0 * report.exclusion_rate());
    Ok(())
}

fn ratio_sweep(a: &SweepArgs) -> Result<()> {
    let mut cfg: SweepConfig = load_or_default(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.train.seed = seed;
    }
    snapshot(&a.out, RESOLVED, "ratio-sweep", a, &cfg)?;
    let corpus = SyntheticCorpus::new(cfg.corpus.clone())?;
    let data = TrainingSet::from_corpus(&corpus);
    let probe = probe_set(&corpus, &cfg.probe)?;
    let model = ModelConfig {
        feature_dim: cfg.corpus.render.dim,
        ..cfg.model.clone()
    };
    let rows = par_map(cfg.ratios.len(), a.workers, |i| {
        ratio_cell(cfg.ratios[i], &corpus, &data, &probe, &model, &cfg.train, &cfg.probe, &cfg.detector)
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>, _>>()?;
    let csv = sweep_csv(&rows);
    let path = a.out.join("sweep.csv");
    fs::write(&path, &csv).map_err(Error::io(&path))?;
    print!("{csv}");
    Ok(())
}

fn wilcoxon(a: &WilcoxonArgs) -> Result<()> {
    let (x, y) = (read_sample(&a.a)?, read_sample(&a.b)?);
    let r = wilcoxon_rank_sum(&x, &y);
    let method = match r.method {
        WilcoxonMethod::Exact => "exact",
        WilcoxonMethod::NormalApproximation => "normal-approximation",
    };
    let line = format!("statistic={} p={} method={method} n_a={} n_b={}\n", r.statistic, r.p_value, x.len(), y.len());
    if let Some(out) = &a.out {
        snapshot(out, RESOLVED, "wilcoxon", a, &std::collections::BTreeMap::<String, String>::new())?;
        let path = out.join("wilcoxon.txt");
        fs::write(&path, &line).map_err(Error::io(&path))?;
    }
    print!("{line}");
    Ok(())
}

fn export_spec(a: &ExportArgs) -> Result<()> {
    let (dir, snap) = file_snapshot(&a.out);
    let format = match a.format {
        ImageFormat::Pgm => "pgm",
        ImageFormat::Csv => "csv",
    };
    snapshot(&dir, &snap, "export-spec", a, &[("format", format)].into_iter().collect::<std::collections::BTreeMap<_, _>>())?;
    let f = read_features(&a.features)?;
    export_spectrogram(&f, &a.out, a.format)
}

fn init_logging(verbose: u8, quiet: bool) {
    let level = match (quiet, verbose) {
        (true, _) => log::LevelFilter::Error,
        (false, 0) => log::LevelFilter::Warn,
        (false, 1) => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .target(env_logger::Target::Stderr)
        .try_init();
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Synth(a) => synth(a),
        Command::EvalF1(a) => eval_f1(a),
        Command::RatioSweep(a) => ratio_sweep(a),
        Command::Wilcoxon(a) => wilcoxon(a),
        Command::ExportSpec(a) => export_spec(a),
    }
}

/// Parses `argv` and runs it, returning the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    init_logging(cli.verbose, cli.quiet);
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(Error::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}
