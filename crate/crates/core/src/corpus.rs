//! Poem corpora: loading, validation, vocabularies, keyword sampling and
//! training-pair construction.
//!
//! The unit of text is the unicode character throughout; there is no word
//! segmentation. All operations are pure given their inputs and seed.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Token id into a [`Vocabulary`].
pub type TokenId = u32;

/// Padding token, fixed id 0.
pub const PAD: TokenId = 0;
/// Start-of-sequence token, fixed id 1.
pub const BOS: TokenId = 1;
/// End-of-sequence token, fixed id 2.
pub const EOS: TokenId = 2;
/// Line separator token, fixed id 3.
pub const SEP: TokenId = 3;
/// Unknown-character token, fixed id 4.
pub const UNK: TokenId = 4;

/// Number of special tokens occupying ids 0..5.
pub const NUM_SPECIALS: usize = 5;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("io error reading corpus: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("empty poem at record {0}")]
    EmptyPoem(usize),
    #[error("empty line in poem at record {0}")]
    EmptyLine(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Errors from quatrain structural validation.
#[derive(Debug, PartialEq, Eq, thiserror::Error)]
pub enum QuatrainError {
    #[error("expected 4 lines, found {0}")]
    WrongLineCount(usize),
    #[error("line {line} has length {found}, expected {expected}")]
    InconsistentLineLength {
        line: usize,
        found: usize,
        expected: usize,
    },
    #[error("unsupported line length {0} (must be 5 or 7)")]
    UnsupportedLineLength(usize),
}

/// Bijection between characters (plus the five specials) and dense ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    chars: Vec<char>,
    index: HashMap<char, TokenId>,
}

impl Vocabulary {
    /// Builds a vocabulary from characters in first-occurrence order.
    pub fn from_chars(chars: impl IntoIterator<Item = char>) -> Self {
        let mut v = Self {
            chars: Vec::new(),
            index: HashMap::new(),
        };
        for c in chars {
            v.push(c);
        }
        v
    }

    fn push(&mut self, c: char) {
        if !self.index.contains_key(&c) {
            let id = (NUM_SPECIALS + self.chars.len()) as TokenId;
            self.chars.push(c);
            self.index.insert(c, id);
        }
    }

    /// Total size including the five specials.
    pub fn size(&self) -> usize {
        NUM_SPECIALS + self.chars.len()
    }

    /// Ordered non-special characters (ids 5..).
    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    /// Id of a character; unknown characters map to [`UNK`].
    pub fn encode_char(&self, c: char) -> TokenId {
        self.index.get(&c).copied().unwrap_or(UNK)
    }

    pub fn encode(&self, s: impl IntoIterator<Item = char>) -> Vec<TokenId> {
        s.into_iter().map(|c| self.encode_char(c)).collect()
    }

    /// Character for an id; `None` for specials and out-of-range ids.
    pub fn decode_char(&self, id: TokenId) -> Option<char> {
        let i = id as usize;
        if i < NUM_SPECIALS {
            return None;
        }
        self.chars.get(i - NUM_SPECIALS).copied()
    }

    /// Decodes ids to a string, skipping special tokens.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter().filter_map(|&id| self.decode_char(id)).collect()
    }

    pub fn is_special(id: TokenId) -> bool {
        (id as usize) < NUM_SPECIALS
    }

    /// Printable name of a token, for diagnostics.
    pub fn token_name(&self, id: TokenId) -> String {
        match id {
            PAD => "<pad>".into(),
            BOS => "<bos>".into(),
            EOS => "<eos>".into(),
            SEP => "<sep>".into(),
            UNK => "<unk>".into(),
            _ => self
                .decode_char(id)
                .map(String::from)
                .unwrap_or_else(|| format!("<id:{id}>")),
        }
    }
}

/// A poem: optional title plus one or more non-empty lines of characters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Poem {
    pub title: String,
    pub lines: Vec<Vec<char>>,
}

impl Poem {
    pub fn from_lines(title: &str, lines: &[&str]) -> Self {
        Self {
            title: title.to_string(),
            lines: lines.iter().map(|l| l.chars().collect()).collect(),
        }
    }

    /// All characters in reading order, lines concatenated.
    pub fn all_chars(&self) -> impl Iterator<Item = char> + '_ {
        self.lines.iter().flatten().copied()
    }
}

impl fmt::Display for Poem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, line) in self.lines.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            for c in line {
                write!(f, "{c}")?;
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct PoemRecord {
    #[serde(default)]
    title: String,
    lines: Vec<String>,
}

/// A validated four-line poem with uniform line length 5 or 7.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Quatrain {
    lines: [Vec<char>; 4],
    line_len: usize,
}

impl Quatrain {
    pub fn lines(&self) -> &[Vec<char>; 4] {
        &self.lines
    }

    pub fn line_len(&self) -> usize {
        self.line_len
    }

    pub fn to_poem(&self, title: &str) -> Poem {
        Poem {
            title: title.to_string(),
            lines: self.lines.to_vec(),
        }
    }
}

/// One supervised example: encoder keywords and a BOS-prefixed,
/// EOS-terminated decoder target.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainingPair {
    pub keywords: Vec<TokenId>,
    pub target: Vec<TokenId>,
}

/// Input file format for [`load_corpus`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    /// One JSON object per line: {"title": "...", "lines": ["...", ...]}.
    Jsonl,
    /// One poem per line, split into poem lines on '。' and '，'.
    Plain,
}

/// Loads poems from a file. An empty file yields an empty list.
pub fn load_corpus(path: impl AsRef<Path>, format: CorpusFormat) -> Result<Vec<Poem>, CorpusError> {
    let text = std::fs::read_to_string(path)?;
    parse_corpus(&text, format)
}

/// Parses corpus text; see [`load_corpus`].
pub fn parse_corpus(text: &str, format: CorpusFormat) -> Result<Vec<Poem>, CorpusError> {
    let mut poems = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let record_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let poem = match format {
            CorpusFormat::Jsonl => {
                let rec: PoemRecord =
                    serde_json::from_str(line).map_err(|e| CorpusError::MalformedRecord {
                        line: record_no,
                        reason: e.to_string(),
                    })?;
                Poem {
                    title: rec.title,
                    lines: rec.lines.iter().map(|l| l.chars().collect()).collect(),
                }
            }
            CorpusFormat::Plain => {
                let lines: Vec<Vec<char>> = line
                    .split(['。', '，'])
                    .map(str::trim)
                    .filter(|seg| !seg.is_empty())
                    .map(|seg| seg.chars().collect())
                    .collect();
                Poem {
                    title: String::new(),
                    lines,
                }
            }
        };
        if poem.lines.is_empty() {
            return Err(CorpusError::EmptyPoem(record_no));
        }
        if poem.lines.iter().any(|l| l.is_empty()) {
            return Err(CorpusError::EmptyLine(record_no));
        }
        poems.push(poem);
    }
    Ok(poems)
}

/// Serializes poems to the JSONL corpus format.
pub fn poems_to_jsonl(poems: &[Poem]) -> String {
    let mut out = String::new();
    for poem in poems {
        let rec = PoemRecord {
            title: poem.title.clone(),
            lines: poem.lines.iter().map(|l| l.iter().collect()).collect(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("poem record serializes"));
        out.push('\n');
    }
    out
}

/// Collects all distinct characters after the five specials, ordered by
/// first occurrence.
pub fn build_vocabulary(poems: &[Poem]) -> Vocabulary {
    Vocabulary::from_chars(poems.iter().flat_map(|p| p.all_chars()))
}

/// Validates the quatrain structure: exactly 4 lines of uniform length 5 or 7.
pub fn parse_quatrain(poem: &Poem) -> Result<Quatrain, QuatrainError> {
    if poem.lines.len() != 4 {
        return Err(QuatrainError::WrongLineCount(poem.lines.len()));
    }
    let line_len = poem.lines[0].len();
    for (i, line) in poem.lines.iter().enumerate() {
        if line.len() != line_len {
            return Err(QuatrainError::InconsistentLineLength {
                line: i + 1,
                found: line.len(),
                expected: line_len,
            });
        }
    }
    if line_len != 5 && line_len != 7 {
        return Err(QuatrainError::UnsupportedLineLength(line_len));
    }
    let mut it = poem.lines.iter().cloned();
    let lines = [
        it.next().unwrap(),
        it.next().unwrap(),
        it.next().unwrap(),
        it.next().unwrap(),
    ];
    Ok(Quatrain { lines, line_len })
}

fn sample_keywords_with<R: Rng>(line: &[TokenId], k: usize, rng: &mut R) -> Vec<TokenId> {
    let k = k.min(line.len());
    // Partial Fisher-Yates over positions, then sort to preserve source order.
    let mut positions: Vec<usize> = (0..line.len()).collect();
    for i in 0..k {
        let j = rng.gen_range(i..positions.len());
        positions.swap(i, j);
    }
    let mut chosen = positions[..k].to_vec();
    chosen.sort_unstable();
    chosen.into_iter().map(|p| line[p]).collect()
}

/// Samples `k` distinct characters from a line, uniformly without
/// replacement, preserving source order. `k` is clamped to the line length.
pub fn sample_keywords(line: &[TokenId], k: usize, seed: u64) -> Result<Vec<TokenId>, CorpusError> {
    if k == 0 {
        return Err(CorpusError::InvalidArgument(
            "keyword count k must be at least 1".into(),
        ));
    }
    if line.is_empty() {
        return Err(CorpusError::InvalidArgument("line must be non-empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample_keywords_with(line, k, &mut rng))
}

/// Sampling unit for training pairs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleUnit {
    /// One target per poem line.
    Line,
    /// The whole poem as one target, lines joined by SEP.
    Poem,
}

/// Controls keyword sampling for [`make_training_pairs`].
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PairConfig {
    pub unit: SampleUnit,
    pub k_min: usize,
    pub k_max: usize,
    pub samples_per_unit: usize,
}

impl Default for PairConfig {
    fn default() -> Self {
        Self {
            unit: SampleUnit::Line,
            k_min: 1,
            k_max: 3,
            samples_per_unit: 1,
        }
    }
}

/// Builds supervised pairs by sampling keywords from each unit. Targets are
/// BOS-prefixed and EOS-terminated; poem-unit targets join lines with SEP.
pub fn make_training_pairs(
    poems: &[Poem],
    vocab: &Vocabulary,
    cfg: &PairConfig,
    seed: u64,
) -> Result<Vec<TrainingPair>, CorpusError> {
    if cfg.k_min > cfg.k_max || cfg.k_min == 0 {
        return Err(CorpusError::InvalidArgument(format!(
            "keyword range [{}, {}] is invalid",
            cfg.k_min, cfg.k_max
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::new();

    let mut emit = |source: &[TokenId], target_body: &[TokenId], rng: &mut ChaCha8Rng| {
        for _ in 0..cfg.samples_per_unit {
            let k = rng.gen_range(cfg.k_min..=cfg.k_max);
            let keywords = sample_keywords_with(source, k, rng);
            let mut target = Vec::with_capacity(target_body.len() + 2);
            target.push(BOS);
            target.extend_from_slice(target_body);
            target.push(EOS);
            pairs.push(TrainingPair { keywords, target });
        }
    };

    for poem in poems {
        match cfg.unit {
            SampleUnit::Line => {
                for line in &poem.lines {
                    let ids = vocab.encode(line.iter().copied());
                    emit(&ids, &ids, &mut rng);
                }
            }
            SampleUnit::Poem => {
                let mut body = Vec::new();
                let mut source = Vec::new();
                for (i, line) in poem.lines.iter().enumerate() {
                    if i > 0 {
                        body.push(SEP);
                    }
                    let ids = vocab.encode(line.iter().copied());
                    body.extend_from_slice(&ids);
                    source.extend_from_slice(&ids);
                }
                emit(&source, &body, &mut rng);
            }
        }
    }
    Ok(pairs)
}

/// Deterministic seeded split into (train, validation).
/// |val| = floor(val_fraction · |poems|).
pub fn split_corpus(poems: Vec<Poem>, val_fraction: f64, seed: u64) -> (Vec<Poem>, Vec<Poem>) {
    let n_val = ((poems.len() as f64) * val_fraction).floor() as usize;
    let mut shuffled = poems;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);
    let train = shuffled.split_off(n_val);
    (train, shuffled)
}
