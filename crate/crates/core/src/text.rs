//! Transcript handling: stutter tokens, normalization, random token
//! insertion, phoneme inventory, lexicon and grapheme-to-phoneme conversion.
//!
//! A stutter token sits directly in front of the word it affects:
//! `"please s_block call mom"` marks a block on `call` (word index 1).

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::TextError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StutterType {
    Repetition,
    Phonation,
    Block,
}

impl StutterType {
    pub const ALL: [StutterType; 3] = [StutterType::Repetition, StutterType::Phonation, StutterType::Block];

    /// Transcript token for this type.
    pub fn token(self) -> &'static str {
        match self {
            StutterType::Repetition => "s_repetition",
            StutterType::Phonation => "s_phonation",
            StutterType::Block => "s_block",
        }
    }

    pub fn from_token(token: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.token() == token)
    }

    /// Special phoneme symbol the token maps to during G2P.
    pub fn phoneme(self) -> &'static str {
        match self {
            StutterType::Repetition => "s_rep",
            StutterType::Phonation => "s_phon",
            StutterType::Block => "s_block",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            StutterType::Repetition => "Repetition",
            StutterType::Phonation => "Phonation",
            StutterType::Block => "Block",
        }
    }
}

impl fmt::Display for StutterType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StutterEvent {
    #[serde(rename = "type")]
    pub kind: StutterType,
    pub word_index: usize,
}

impl StutterEvent {
    pub fn new(kind: StutterType, word_index: usize) -> Self {
        Self { kind, word_index }
    }
}

/// Words plus at most one stutter event per word, events sorted by index.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedText {
    words: Vec<String>,
    events: Vec<StutterEvent>,
}

impl AnnotatedText {
    pub fn new(words: Vec<String>, mut events: Vec<StutterEvent>) -> Result<Self, TextError> {
        events.sort_by_key(|e| e.word_index);
        for (i, e) in events.iter().enumerate() {
            if e.word_index >= words.len() {
                return Err(TextError::EventIndex {
                    index: e.word_index,
                    words: words.len(),
                });
            }
            if i > 0 && events[i - 1].word_index == e.word_index {
                return Err(TextError::StackedTokens(e.word_index));
            }
        }
        Ok(Self { words, events })
    }

    pub fn fluent(words: Vec<String>) -> Self {
        Self {
            words,
            events: Vec::new(),
        }
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn events(&self) -> &[StutterEvent] {
        &self.events
    }

    pub fn event_at(&self, word_index: usize) -> Option<StutterType> {
        self.events
            .iter()
            .find(|e| e.word_index == word_index)
            .map(|e| e.kind)
    }

    /// Same words with every stutter token removed.
    pub fn without_events(&self) -> Self {
        Self::fluent(self.words.clone())
    }
}

/// Lowercases, drops punctuation (underscores survive so tokens stay
/// intact) and collapses whitespace to single spaces.
pub fn normalize(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    for word in raw.split_whitespace() {
        let cleaned: String = word
            .chars()
            .filter(|c| c.is_alphanumeric() || *c == '_')
            .flat_map(char::to_lowercase)
            .collect();
        if cleaned.is_empty() {
            continue;
        }
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(&cleaned);
    }
    out
}

pub fn parse_transcript(raw: &str) -> Result<AnnotatedText, TextError> {
    let normalized = normalize(raw);
    let mut words = Vec::new();
    let mut events = Vec::new();
    let mut pending: Option<(StutterType, &str)> = None;
    for tok in normalized.split(' ').filter(|t| !t.is_empty()) {
        if tok.starts_with("s_") {
            let kind = StutterType::from_token(tok).ok_or_else(|| TextError::UnknownToken(tok.to_string()))?;
            if pending.is_some() {
                return Err(TextError::StackedTokens(words.len()));
            }
            pending = Some((kind, tok));
            continue;
        }
        if let Some((kind, _)) = pending.take() {
            events.push(StutterEvent::new(kind, words.len()));
        }
        words.push(tok.to_string());
    }
    if let Some((_, tok)) = pending {
        return Err(TextError::TrailingToken(tok.to_string()));
    }
    Ok(AnnotatedText { words, events })
}

pub fn render_transcript(t: &AnnotatedText) -> String {
    let mut out = String::new();
    for (i, w) in t.words.iter().enumerate() {
        if let Some(kind) = t.event_at(i) {
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(kind.token());
        }
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(w);
    }
    out
}

/// Relative frequencies of the three stutter types.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TypeWeights {
    pub repetition: f64,
    pub phonation: f64,
    pub block: f64,
}

impl Default for TypeWeights {
    /// Annotated-corpus frequencies in percent of utterances; they need not
    /// sum to 100 and are renormalized when sampling.
    fn default() -> Self {
        Self {
            repetition: 40.11,
            phonation: 21.40,
            block: 15.59,
        }
    }
}

impl TypeWeights {
    pub fn uniform() -> Self {
        Self {
            repetition: 1.0,
            phonation: 1.0,
            block: 1.0,
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.repetition, self.phonation, self.block]
    }

    /// Renormalized probabilities in [`StutterType::ALL`] order.
    pub fn probabilities(&self) -> Result<[f64; 3], TextError> {
        let w = self.as_array();
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(TextError::Distribution("weights must be finite and non-negative"));
        }
        let total: f64 = w.iter().sum();
        if total <= 0.0 {
            return Err(TextError::Distribution("weights sum to zero"));
        }
        Ok([w[0] / total, w[1] / total, w[2] / total])
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<StutterType, TextError> {
        self.probabilities()?;
        let dist = WeightedIndex::new(self.as_array()).map_err(|_| TextError::Distribution("invalid weights"))?;
        Ok(StutterType::ALL[dist.sample(rng)])
    }
}

/// Places exactly one stutter token in front of a uniformly chosen word.
pub fn insert_random_stutter<R: Rng + ?Sized>(
    words: &[String],
    weights: &TypeWeights,
    rng: &mut R,
) -> Result<AnnotatedText, TextError> {
    if words.is_empty() {
        return Err(TextError::Empty);
    }
    let index = rng.random_range(0..words.len());
    let kind = weights.sample(rng)?;
    AnnotatedText::new(words.to_vec(), alloc::vec![StutterEvent::new(kind, index)])
}

pub const SILENCE: &str = "SIL";
pub const WORD_BOUNDARY: &str = "WB";

/// Ordered phoneme symbol table: silence, word boundary, ordinary phonemes,
/// then the three stutter phonemes. The position of a symbol is its id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PhonemeInventory {
    symbols: Vec<String>,
    index: BTreeMap<String, usize>,
    ordinary: usize,
}

impl PhonemeInventory {
    pub fn new<I, T>(ordinary: I) -> Result<Self, TextError>
    where
        I: IntoIterator<Item = T>,
        T: AsRef<str>,
    {
        let mut symbols = Vec::new();
        symbols.push(SILENCE.to_string());
        symbols.push(WORD_BOUNDARY.to_string());
        for s in ordinary {
            symbols.push(s.as_ref().to_string());
        }
        let n_ordinary = symbols.len() - 2;
        for kind in StutterType::ALL {
            symbols.push(kind.phoneme().to_string());
        }
        Self::from_symbols(symbols, n_ordinary)
    }

    fn from_symbols(symbols: Vec<String>, ordinary: usize) -> Result<Self, TextError> {
        let mut index = BTreeMap::new();
        for (i, s) in symbols.iter().enumerate() {
            if s.is_empty() || s.chars().any(char::is_whitespace) {
                return Err(TextError::Format {
                    line: i + 1,
                    msg: format!("invalid symbol `{s}`"),
                });
            }
            if index.insert(s.clone(), i).is_some() {
                return Err(TextError::Format {
                    line: i + 1,
                    msg: format!("duplicate symbol `{s}`"),
                });
            }
        }
        if ordinary == 0 {
            return Err(TextError::Format {
                line: 0,
                msg: "inventory has no ordinary phonemes".to_string(),
            });
        }
        Ok(Self {
            symbols,
            index,
            ordinary,
        })
    }

    /// Parses the one-symbol-per-line file format. The layout must be
    /// `SIL`, `WB`, ordinary phonemes, then the stutter phonemes.
    pub fn parse(text: &str) -> Result<Self, TextError> {
        let symbols: Vec<String> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(ToString::to_string)
            .collect();
        let bad = |line: usize, msg: &str| TextError::Format {
            line,
            msg: msg.to_string(),
        };
        if symbols.len() < 6 {
            return Err(bad(symbols.len(), "inventory too short"));
        }
        if symbols[0] != SILENCE || symbols[1] != WORD_BOUNDARY {
            return Err(bad(1, "inventory must start with SIL and WB"));
        }
        let n = symbols.len();
        for (k, kind) in StutterType::ALL.iter().enumerate() {
            if symbols[n - 3 + k] != kind.phoneme() {
                return Err(bad(n - 2 + k, "inventory must end with s_rep, s_phon, s_block"));
            }
        }
        Self::from_symbols(symbols, n - 5)
    }

    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for sym in &self.symbols {
            s.push_str(sym);
            s.push('\n');
        }
        s
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn id(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    pub fn symbol(&self, id: usize) -> Option<&str> {
        self.symbols.get(id).map(String::as_str)
    }

    pub fn silence(&self) -> usize {
        0
    }

    pub fn boundary(&self) -> usize {
        1
    }

    pub fn ordinary_ids(&self) -> core::ops::Range<usize> {
        2..2 + self.ordinary
    }

    pub fn stutter(&self, kind: StutterType) -> usize {
        2 + self.ordinary + kind.index()
    }

    pub fn stutter_kind(&self, id: usize) -> Option<StutterType> {
        let base = 2 + self.ordinary;
        (id >= base && id < base + 3).then(|| StutterType::ALL[id - base])
    }

    pub fn is_silent(&self, id: usize) -> bool {
        id == self.silence() || id == self.boundary()
    }
}

/// Encoder input: phoneme ids drawn from a [`PhonemeInventory`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhonemeSequence(pub Vec<usize>);

impl PhonemeSequence {
    pub fn ids(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Word pronunciations with a per-letter fallback for unknown words.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Lexicon {
    entries: BTreeMap<String, Vec<String>>,
}

impl Lexicon {
    /// Parses `word<TAB>PH PH ...` lines. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self, TextError> {
        let mut entries = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (word, prons) = line.split_once('\t').ok_or_else(|| TextError::Format {
                line: n + 1,
                msg: "expected word<TAB>phonemes".to_string(),
            })?;
            let phones: Vec<String> = prons.split_whitespace().map(ToString::to_string).collect();
            if word.is_empty() || phones.is_empty() {
                return Err(TextError::Format {
                    line: n + 1,
                    msg: "empty word or pronunciation".to_string(),
                });
            }
            entries.insert(normalize(word), phones);
        }
        Ok(Self { entries })
    }

    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for (w, p) in &self.entries {
            s.push_str(w);
            s.push('\t');
            s.push_str(&p.join(" "));
            s.push('\n');
        }
        s
    }

    pub fn insert(&mut self, word: &str, phonemes: &[&str]) {
        self.entries
            .insert(word.to_string(), phonemes.iter().map(|p| p.to_string()).collect());
    }

    pub fn contains(&self, word: &str) -> bool {
        self.entries.contains_key(word)
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Phoneme ids of one word. Unknown words spell out letter by letter,
    /// each character mapped to a fixed ordinary phoneme.
    pub fn pronounce(&self, word: &str, inventory: &PhonemeInventory) -> Result<Vec<usize>, TextError> {
        if let Some(phones) = self.entries.get(word) {
            return phones
                .iter()
                .map(|p| {
                    inventory
                        .id(p)
                        .filter(|&id| inventory.ordinary_ids().contains(&id))
                        .ok_or_else(|| TextError::UnknownSymbol(p.clone()))
                })
                .collect();
        }
        let ordinary = inventory.ordinary_ids();
        let n = ordinary.len() as u32;
        Ok(word
            .chars()
            .map(|c| ordinary.start + ((c as u32).wrapping_mul(7) % n) as usize)
            .collect())
    }
}

/// Ordinary phonemes of each word, in order.
pub fn word_phonemes(
    t: &AnnotatedText,
    lexicon: &Lexicon,
    inventory: &PhonemeInventory,
) -> Result<Vec<Vec<usize>>, TextError> {
    t.words().iter().map(|w| lexicon.pronounce(w, inventory)).collect()
}

/// `SIL [stutter] w0… WB [stutter] w1… … SIL`
pub fn g2p(t: &AnnotatedText, lexicon: &Lexicon, inventory: &PhonemeInventory) -> Result<PhonemeSequence, TextError> {
    let words = word_phonemes(t, lexicon, inventory)?;
    let mut ids = Vec::with_capacity(words.iter().map(Vec::len).sum::<usize>() + 2 * words.len() + 2);
    ids.push(inventory.silence());
    for (i, phones) in words.iter().enumerate() {
        if i > 0 {
            ids.push(inventory.boundary());
        }
        if let Some(kind) = t.event_at(i) {
            ids.push(inventory.stutter(kind));
        }
        ids.extend_from_slice(phones);
    }
    ids.push(inventory.silence());
    Ok(PhonemeSequence(ids))
}
