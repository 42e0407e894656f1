use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::render::{render, Alignment, RenderConfig, RenderRules, SpeakerProfile, WordSpan};
use super::FeatureMatrix;
use crate::error::TextError;
use crate::text::{
    insert_random_stutter, parse_transcript, render_transcript, AnnotatedText, Lexicon, PhonemeInventory,
    StutterEvent, TypeWeights,
};

const BUNDLED_LEXICON: &str = "\
an\tAE N
at\tAE T
be\tB IY
bed\tB EH D
bow\tB OW
bus\tB AH S
call\tK AA L
cat\tK AE T
cup\tK AH P
dad\tD AE D
do\tD UW
dog\tD AA G
feet\tF IY T
food\tF UW D
fun\tF AH N
go\tG OW
key\tK IY
knee\tN IY
low\tL OW
map\tM AE P
me\tM IY
mom\tM AA M
moo\tM UW
moon\tM UW N
no\tN OW
on\tAA N
pea\tP IY
pen\tP EH N
please\tP L IY Z
see\tS IY
so\tS OW
stop\tS T AA P
sun\tS AH N
tea\tT IY
ten\tT EH N
toe\tT OW
top\tT AA P
two\tT UW
up\tAH P
zoo\tZ UW
";

const BUNDLED_PHONEMES: [&str; 19] = [
    "AA", "AE", "AH", "B", "D", "EH", "F", "G", "IY", "K", "L", "M", "N", "OW", "P", "S", "T", "UW", "Z",
];

/// Toy pronunciation lexicon; every entry has at least two phonemes and no
/// doubled phonemes.
pub fn bundled_lexicon() -> Lexicon {
    Lexicon::parse(BUNDLED_LEXICON).expect("bundled lexicon")
}

pub fn bundled_inventory() -> PhonemeInventory {
    PhonemeInventory::new(BUNDLED_PHONEMES).expect("bundled inventory")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub n_speakers: u32,
    pub utts_per_speaker: usize,
    /// Probability that an utterance carries one stutter event.
    pub stutter_fraction: f64,
    pub type_weights: TypeWeights,
    pub min_words: usize,
    pub max_words: usize,
    pub seed: u64,
    pub render: RenderConfig,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_speakers: 4,
            utts_per_speaker: 500,
            stutter_fraction: 0.5,
            type_weights: TypeWeights::default(),
            min_words: 4,
            max_words: 12,
            seed: 7,
            render: RenderConfig::default(),
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<(), TextError> {
        if self.n_speakers == 0 || self.min_words == 0 || self.min_words > self.max_words {
            return Err(TextError::Distribution("corpus needs speakers and 1 <= min_words <= max_words"));
        }
        if !(0.0..=1.0).contains(&self.stutter_fraction) {
            return Err(TextError::Distribution("stutter_fraction outside [0, 1]"));
        }
        self.type_weights.probabilities().map(|_| ())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusUtterance {
    pub index: usize,
    pub id: String,
    pub speaker: u32,
    pub text: AnnotatedText,
    pub features: FeatureMatrix,
    pub alignment: Alignment,
}

/// One JSON-lines manifest record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub transcript: String,
    pub speaker: u32,
    pub features: String,
    pub frames: usize,
    pub events: Vec<StutterEvent>,
    #[serde(default)]
    pub alignment: Vec<WordSpan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ManifestEntry {
    /// Checks that `events` are exactly the tokens in `transcript`.
    pub fn validate(&self) -> Result<AnnotatedText, TextError> {
        let text = parse_transcript(&self.transcript)?;
        if text.events() != self.events.as_slice() {
            return Err(TextError::Format {
                line: 0,
                msg: format!("{}: events disagree with transcript tokens", self.id),
            });
        }
        Ok(text)
    }

    pub fn for_utterance(u: &CorpusUtterance, features_path: &str) -> Self {
        Self {
            id: u.id.clone(),
            transcript: render_transcript(&u.text),
            speaker: u.speaker,
            features: features_path.to_string(),
            frames: u.features.frames(),
            events: u.text.events().to_vec(),
            alignment: u.alignment.words.clone(),
            error: None,
        }
    }
}

/// Lazily rendered synthetic corpus. Utterance `i` depends only on
/// `(seed, i)`, never on generation order.
#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    config: CorpusConfig,
    lexicon: Lexicon,
    inventory: PhonemeInventory,
    rules: RenderRules,
    speakers: Vec<SpeakerProfile>,
    vocabulary: Vec<String>,
}

impl SyntheticCorpus {
    pub fn new(config: CorpusConfig) -> Result<Self, TextError> {
        config.validate()?;
        let lexicon = bundled_lexicon();
        let inventory = bundled_inventory();
        let rules = RenderRules::new(config.render.clone(), &inventory);
        let speakers = (0..config.n_speakers)
            .map(|id| SpeakerProfile::generate(id, &config.render, config.seed))
            .collect();
        let vocabulary = lexicon.words().map(ToString::to_string).collect();
        Ok(Self {
            config,
            lexicon,
            inventory,
            rules,
            speakers,
            vocabulary,
        })
    }

    pub fn config(&self) -> &CorpusConfig {
        &self.config
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }

    pub fn inventory(&self) -> &PhonemeInventory {
        &self.inventory
    }

    pub fn rules(&self) -> &RenderRules {
        &self.rules
    }

    pub fn speakers(&self) -> &[SpeakerProfile] {
        &self.speakers
    }

    pub fn speaker(&self, id: u32) -> &SpeakerProfile {
        &self.speakers[id as usize]
    }

    pub fn len(&self) -> usize {
        self.config.n_speakers as usize * self.config.utts_per_speaker
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Per-index random stream; stream 0 and the speaker streams are reserved.
    pub fn rng_for(&self, index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(1 + index as u64);
        rng
    }

    /// A sentence of uniformly drawn length and words.
    pub fn sentence<R: Rng>(&self, rng: &mut R) -> Vec<String> {
        let n = rng.random_range(self.config.min_words..=self.config.max_words);
        (0..n)
            .map(|_| self.vocabulary[rng.random_range(0..self.vocabulary.len())].clone())
            .collect()
    }

    pub fn utterance(&self, index: usize) -> CorpusUtterance {
        let mut rng = self.rng_for(index);
        let speaker = (index / self.config.utts_per_speaker.max(1)) as u32 % self.config.n_speakers;
        let words = self.sentence(&mut rng);
        let text = if rng.random::<f64>() < self.config.stutter_fraction {
            insert_random_stutter(&words, &self.config.type_weights, &mut rng).expect("validated corpus")
        } else {
            AnnotatedText::fluent(words)
        };
        self.render_text(index, speaker, text, &mut rng)
    }

    /// Renders an arbitrary transcript for a corpus speaker.
    pub fn render_text<R: Rng>(&self, index: usize, speaker: u32, text: AnnotatedText, rng: &mut R) -> CorpusUtterance {
        let (features, alignment) = render(
            &text,
            self.speaker(speaker),
            &self.rules,
            &self.lexicon,
            &self.inventory,
            rng,
        )
        .expect("bundled lexicon covers vocabulary");
        CorpusUtterance {
            index,
            id: format!("utt{index:06}"),
            speaker,
            text,
            features,
            alignment,
        }
    }
}
