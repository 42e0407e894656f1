//! On-disk formats: binary feature files, JSON-lines manifests, spectrogram
//! images, lexicon and inventory files, metrics logs.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use stutter_core::synth::{FeatureMatrix, ManifestEntry};
use stutter_core::text::{Lexicon, PhonemeInventory};
use stutter_core::train::StepMetrics;

use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"STFT";
pub const FEATURE_VERSION: u32 = 1;

pub fn encode_features(f: &FeatureMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * f.data().len());
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&(f.frames() as u32).to_le_bytes());
    out.extend_from_slice(&(f.dim() as u32).to_le_bytes());
    for x in f.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureMatrix, String> {
    if bytes.len() < 16 || &bytes[..4] != FEATURE_MAGIC {
        return Err("not a feature file (bad magic)".into());
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != FEATURE_VERSION {
        return Err(format!("unsupported feature file version {version}"));
    }
    let (t, d) = (word(8) as usize, word(12) as usize);
    let body = &bytes[16..];
    if body.len() != t * d * 4 {
        return Err(format!("{t}x{d} header but {} payload bytes", body.len()));
    }
    let data = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    FeatureMatrix::new(t, d, data).map_err(|e| e.to_string())
}

pub fn write_features(path: &Path, f: &FeatureMatrix) -> Result<()> {
    fs::write(path, encode_features(f)).map_err(Error::io(path))
}

pub fn read_features(path: &Path) -> Result<FeatureMatrix> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    decode_features(&bytes).map_err(|m| Error::format(path, m))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum ImageFormat {
    Pgm,
    Csv,
}

/// Binary PGM with time along columns and feature bins along rows, min-max
/// scaled to 0..=255. A constant matrix maps to mid-gray.
pub fn encode_pgm(f: &FeatureMatrix) -> Vec<u8> {
    let (t, d) = (f.frames(), f.dim());
    let (lo, hi) = f
        .data()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let mut out = format!("P5 {t} {d} 255\n").into_bytes();
    for row in 0..d {
        // highest bin on top
        let k = d - 1 - row;
        for frame in 0..t {
            let x = f.frame(frame)[k];
            let v = if hi > lo {
                ((x - lo) / (hi - lo) * 255.0).round()
            } else {
                128.0
            };
            out.push(v as u8);
        }
    }
    out
}

/// One frame per line, comma separated, shortest round-trip formatting.
pub fn encode_csv(f: &FeatureMatrix) -> String {
    let mut out = String::new();
    for t in 0..f.frames() {
        for (k, x) in f.frame(t).iter().enumerate() {
            if k > 0 {
                out.push(',');
            }
            let _ = write!(out, "{x}");
        }
        out.push('\n');
    }
    out
}

pub fn decode_csv(text: &str) -> Result<FeatureMatrix, String> {
    let mut data = Vec::new();
    let mut dim = None;
    let mut frames = 0;
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let row: Vec<f32> = line
            .split(',')
            .map(|v| v.trim().parse::<f32>().map_err(|e| format!("line {}: {e}", i + 1)))
            .collect::<Result<_, _>>()?;
        if *dim.get_or_insert(row.len()) != row.len() {
            return Err(format!("line {}: ragged row", i + 1));
        }
        data.extend(row);
        frames += 1;
    }
    FeatureMatrix::new(frames, dim.unwrap_or(0), data).map_err(|e| e.to_string())
}

pub fn export_spectrogram(f: &FeatureMatrix, path: &Path, format: ImageFormat) -> Result<()> {
    let bytes = match format {
        ImageFormat::Pgm => encode_pgm(f),
        ImageFormat::Csv => encode_csv(f).into_bytes(),
    };
    fs::write(path, bytes).map_err(Error::io(path))
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut out = Vec::new();
    for e in entries {
        serde_json::to_writer(&mut out, e).expect("manifest entries serialize");
        out.push(b'\n');
    }
    fs::write(path, out).map_err(Error::io(path))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::format(path, format!("line {}: {e}", i + 1))))
        .collect()
}

pub fn write_lexicon(path: &Path, lexicon: &Lexicon) -> Result<()> {
    fs::write(path, lexicon.to_file_string()).map_err(Error::io(path))
}

pub fn read_lexicon(path: &Path) -> Result<Lexicon> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    Lexicon::parse(&text).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_inventory(path: &Path, inventory: &PhonemeInventory) -> Result<()> {
    fs::write(path, inventory.to_file_string()).map_err(Error::io(path))
}

pub fn read_inventory(path: &Path) -> Result<PhonemeInventory> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    PhonemeInventory::parse(&text).map_err(|e| Error::format(path, e.to_string()))
}

pub const METRICS_HEADER: &str = "step,loss_total,loss_pre,loss_post,loss_stop,lr";

/// Appends metric rows to a CSV log, writing the header for a new file.
pub struct MetricsLog {
    file: fs::File,
    path: std::path::PathBuf,
}

impl MetricsLog {
    pub fn create(path: &Path) -> Result<Self> {
        let mut file = fs::File::create(path).map_err(Error::io(path))?;
        writeln!(file, "{METRICS_HEADER}").map_err(Error::io(path))?;
        Ok(Self {
            file,
            path: path.to_path_buf(),
        })
    }

    pub fn append(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Self::create(path);
        }
        let file = fs::OpenOptions::new().append(true).open(path).map_err(Error::io(path))?;
        Ok(Self {
            file,
            path: path.to_path_buf(),
        })
    }

    pub fn write(&mut self, m: &StepMetrics) -> Result<()> {
        writeln!(
            self.file,
            "{},{},{},{},{},{}",
            m.step, m.loss_total, m.loss_pre, m.loss_post, m.loss_stop, m.lr
        )
        .map_err(Error::io(&self.path))
    }
}

/// Numbers from a one-column CSV; a non-numeric first line is a header.
pub fn read_sample(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let cell = line.split(',').next().unwrap_or("").trim();
        if cell.is_empty() {
            continue;
        }
        match cell.parse::<f64>() {
            Ok(v) if v.is_finite() => out.push(v),
            Ok(_) => return Err(Error::format(path, format!("line {}: non-finite value", i + 1))),
            Err(_) if i == 0 => {}
            Err(e) => return Err(Error::format(path, format!("line {}: {e}", i + 1))),
        }
    }
    if out.is_empty() {
        return Err(Error::format(path, "sample is empty"));
    }
    Ok(out)
}
