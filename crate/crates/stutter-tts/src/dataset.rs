//! Corpus directories: feature files, a manifest and the corpus config that
//! regenerates speaker profiles and templates for the detector.

use std::fs;
use std::path::{Path, PathBuf};
use std::thread;

use stutter_core::synth::{CorpusConfig, ManifestEntry, SyntheticCorpus};
use stutter_core::text::g2p;
use stutter_core::train::{Example, TrainingSet};

use crate::config::{read_toml, write_toml};
use crate::error::{Error, Result};
use crate::formats::{read_features, read_manifest, write_features, write_inventory, write_lexicon, write_manifest};

pub const MANIFEST: &str = "manifest.jsonl";
pub const CORPUS_CONFIG: &str = "corpus.toml";
pub const FEATURES_DIR: &str = "features";

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(Error::io(path))
}

/// Runs `f` over `0..n` on up to `workers` threads and returns results in
/// index order, so output never depends on scheduling.
pub fn par_map<T, F>(n: usize, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let workers = workers.clamp(1, n.max(1));
    if workers == 1 {
        return (0..n).map(f).collect();
    }
    let mut slots: Vec<Option<T>> = (0..n).map(|_| None).collect();
    thread::scope(|s| {
        let f = &f;
        let handles: Vec<_> = (0..workers)
            .map(|w| s.spawn(move || (w..n).step_by(workers).map(|i| (i, f(i))).collect::<Vec<_>>()))
            .collect();
        for h in handles {
            for (i, v) in h.join().expect("worker panicked") {
                slots[i] = Some(v);
            }
        }
    });
    slots.into_iter().map(|v| v.expect("every index produced")).collect()
}

/// Renders every utterance into `out`. Each utterance depends only on
/// `(seed, index)`, so the tree is identical for any worker count.
pub fn generate_corpus(cfg: &CorpusConfig, out: &Path, workers: usize) -> Result<Vec<ManifestEntry>> {
    let corpus = SyntheticCorpus::new(cfg.clone())?;
    let feat_dir = out.join(FEATURES_DIR);
    create_dir(&feat_dir)?;
    let results = par_map(corpus.len(), workers, |i| -> Result<ManifestEntry> {
        let u = corpus.utterance(i);
        let rel = format!("{FEATURES_DIR}/{}.stft", u.id);
        write_features(&out.join(&rel), &u.features)?;
        Ok(ManifestEntry::for_utterance(&u, &rel))
    });
    let entries = results.into_iter().collect::<Result<Vec<_>>>()?;
    write_manifest(&out.join(MANIFEST), &entries)?;
    write_lexicon(&out.join("lexicon.txt"), corpus.lexicon())?;
    write_inventory(&out.join("inventory.txt"), corpus.inventory())?;
    write_toml(&out.join(CORPUS_CONFIG), cfg)?;
    log::info!("wrote {} utterances to {}", entries.len(), out.display());
    Ok(entries)
}

/// A generated corpus read back from disk.
pub struct CorpusDir {
    pub root: PathBuf,
    pub corpus: SyntheticCorpus,
    pub entries: Vec<ManifestEntry>,
}

impl CorpusDir {
    pub fn open(root: &Path) -> Result<Self> {
        let cfg: CorpusConfig = read_toml(&root.join(CORPUS_CONFIG))?;
        let corpus = SyntheticCorpus::new(cfg)?;
        let manifest = root.join(MANIFEST);
        let entries = read_manifest(&manifest)?;
        for e in &entries {
            e.validate().map_err(|err| Error::format(&manifest, format!("{}: {err}", e.id)))?;
        }
        Ok(Self {
            root: root.to_path_buf(),
            corpus,
            entries,
        })
    }

    pub fn features_path(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.features)
    }

    /// Loads features and phonemizes transcripts for training.
    pub fn training_set(&self, workers: usize) -> Result<TrainingSet> {
        let (lex, inv) = (self.corpus.lexicon(), self.corpus.inventory());
        let examples = par_map(self.entries.len(), workers, |i| -> Result<Example> {
            let e = &self.entries[i];
            let text = e.validate()?;
            Ok(Example {
                id: e.id.clone(),
                phonemes: g2p(&text, lex, inv)?.0,
                features: read_features(&self.features_path(e))?,
                speaker: e.speaker,
                stuttered: !e.events.is_empty(),
            })
        });
        Ok(TrainingSet::new(examples.into_iter().collect::<Result<_>>()?))
    }
}
