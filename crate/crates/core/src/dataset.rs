//! Benchmark data: synthetic key-value extraction samples and
//! question-answering samples with one gold document among distractors.
//!
//! Both kinds are stored as JSON lines. A QA record carries `id`,
//! `question`, `gold_answers` and `documents` (`id`, `text`, `is_gold`); a
//! key-value record carries `id`, `pairs` (array of `[key, value]`) and
//! `gold_index`.
//!
//! Key-value generation uses ChaCha8 seeded with `seed_from_u64(seed)`;
//! every hex digit is one `random_range(0..16)` draw.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;

const HEX_DIGITS: &[u8; 16] = b"0123456789abcdef";
const UUID_GROUPS: [usize; 5] = [8, 4, 4, 4, 12];

pub const KV_INSTRUCTION: &str =
    "Extract the value corresponding to the specified key in the JSON object below.";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid generation config: {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("not a lowercase hexadecimal string: {0:?}")]
    InvalidHex(String),
    #[error("invalid format style: {0}")]
    InvalidStyle(String),
    #[error("a {0}-character string cannot be split into 4-character groups")]
    NotGroupable(usize),
    #[error("gold position {position} out of range for {len} items")]
    PositionOutOfRange { position: usize, len: usize },
    #[error("line {line}: parse error: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: sample {id:?}: {reason}")]
    Invalid {
        line: usize,
        id: String,
        reason: String,
    },
    #[error("line {line}: duplicate sample id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: dataset mixes key-value and QA records")]
    MixedKinds { line: usize },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Lowercase hexadecimal string, at least one character long.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct HexString(String);

impl HexString {
    pub fn new(s: impl Into<String>) -> Result<Self, DatasetError> {
        let s = s.into();
        if s.is_empty() || !s.bytes().all(|b| HEX_DIGITS.contains(&b)) {
            return Err(DatasetError::InvalidHex(s));
        }
        Ok(Self(s))
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Self {
        let s = (0..len)
            .map(|_| HEX_DIGITS[rng.random_range(0..16)] as char)
            .collect();
        Self(s)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<String> for HexString {
    type Error = DatasetError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        Self::new(s)
    }
}

impl From<HexString> for String {
    fn from(h: HexString) -> Self {
        h.0
    }
}

impl fmt::Display for HexString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Surface format of a key or value in the key-value task.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FormatStyle {
    /// Hyphen-separated groups (8-4-4-4-12 for 32 characters).
    Uuid,
    /// The raw string.
    PlainText,
    /// The UUID grouping with the hyphen replaced by another character.
    ModifiedUuid(char),
}

impl FormatStyle {
    pub fn modified(delimiter: char) -> Result<Self, DatasetError> {
        if delimiter.is_ascii_hexdigit() || delimiter.is_whitespace() || delimiter.is_control() {
            return Err(DatasetError::InvalidStyle(format!(
                "delimiter {delimiter:?} must be printable and non-hexadecimal"
            )));
        }
        Ok(Self::ModifiedUuid(delimiter))
    }

    fn separator(self) -> Option<char> {
        match self {
            FormatStyle::Uuid => Some('-'),
            FormatStyle::PlainText => None,
            FormatStyle::ModifiedUuid(c) => Some(c),
        }
    }

    pub fn label(self) -> String {
        match self {
            FormatStyle::Uuid => "uuid".into(),
            FormatStyle::PlainText => "plain".into(),
            FormatStyle::ModifiedUuid(c) => format!("modified-uuid({c})"),
        }
    }
}

/// Group sizes used when displaying a string of `len` characters.
fn group_sizes(len: usize) -> Result<Vec<usize>, DatasetError> {
    if len == 32 {
        Ok(UUID_GROUPS.to_vec())
    } else if len > 0 && len.is_multiple_of(4) {
        Ok(vec![4; len / 4])
    } else {
        Err(DatasetError::NotGroupable(len))
    }
}

/// Render `s` in the given style. 32-character strings use the 8-4-4-4-12
/// layout; other lengths use consecutive 4-character groups.
pub fn apply_format_style(s: &HexString, style: FormatStyle) -> Result<String, DatasetError> {
    let Some(sep) = style.separator() else {
        return Ok(s.0.clone());
    };
    let sizes = group_sizes(s.len())?;
    let mut out = String::with_capacity(s.len() + sizes.len());
    let mut start = 0;
    for (i, size) in sizes.into_iter().enumerate() {
        if i > 0 {
            out.push(sep);
        }
        out.push_str(&s.0[start..start + size]);
        start += size;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KvGenConfig {
    pub num_pairs: usize,
    pub char_len: usize,
    pub num_samples: usize,
    pub seed: u64,
}

impl KvGenConfig {
    /// 40 pairs of 32-character strings.
    pub fn low_density(num_samples: usize, seed: u64) -> Self {
        Self {
            num_pairs: 40,
            char_len: 32,
            num_samples,
            seed,
        }
    }

    /// 10 pairs of 128-character strings.
    pub fn high_density(num_samples: usize, seed: u64) -> Self {
        Self {
            num_pairs: 10,
            char_len: 128,
            num_samples,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.num_pairs < 2 {
            return Err(DatasetError::InvalidConfig {
                field: "num_pairs",
                reason: format!("need at least 2 pairs, got {}", self.num_pairs),
            });
        }
        if self.char_len < 8 || !self.char_len.is_multiple_of(4) {
            return Err(DatasetError::InvalidConfig {
                field: "char_len",
                reason: format!(
                    "must be >= 8 and divisible by 4, got {}",
                    self.char_len
                ),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KvSample {
    pub id: String,
    pub pairs: Vec<(HexString, HexString)>,
    pub gold_index: usize,
}

impl KvSample {
    pub fn gold(&self) -> &(HexString, HexString) {
        &self.pairs[self.gold_index]
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.pairs.is_empty() {
            return Err("no pairs".into());
        }
        if self.gold_index >= self.pairs.len() {
            return Err(format!(
                "gold_index {} out of range for {} pairs",
                self.gold_index,
                self.pairs.len()
            ));
        }
        let mut seen = HashSet::with_capacity(self.pairs.len() * 2);
        for (k, v) in &self.pairs {
            if !seen.insert(k.as_str()) {
                return Err(format!("key or value {k} occurs more than once"));
            }
            if !seen.insert(v.as_str()) {
                return Err(format!("key or value {v} occurs more than once"));
            }
        }
        Ok(())
    }

    /// The same pairs with the gold pair moved to `position`; the other
    /// pairs keep their relative order.
    pub fn with_gold_at(&self, position: usize) -> Result<KvSample, DatasetError> {
        if position >= self.pairs.len() {
            return Err(DatasetError::PositionOutOfRange {
                position,
                len: self.pairs.len(),
            });
        }
        let mut pairs = self.pairs.clone();
        let gold = pairs.remove(self.gold_index);
        pairs.insert(position, gold);
        Ok(KvSample {
            id: self.id.clone(),
            pairs,
            gold_index: position,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub is_gold: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaSample {
    pub id: String,
    pub question: String,
    pub gold_answers: Vec<String>,
    pub documents: Vec<Document>,
}

impl QaSample {
    pub fn validate(&self) -> Result<(), String> {
        if self.gold_answers.is_empty() {
            return Err("gold_answers is empty".into());
        }
        let golds = self.documents.iter().filter(|d| d.is_gold).count();
        if golds != 1 {
            return Err(format!("expected exactly one gold document, found {golds}"));
        }
        if let Some(d) = self.documents.iter().find(|d| d.text.is_empty()) {
            return Err(format!("document {:?} has empty text", d.id));
        }
        Ok(())
    }

    pub fn gold_document(&self) -> &Document {
        self.documents
            .iter()
            .find(|d| d.is_gold)
            .expect("validated sample has a gold document")
    }

    pub fn distractors(&self) -> impl Iterator<Item = &Document> {
        self.documents.iter().filter(|d| !d.is_gold)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Sample {
    Qa(QaSample),
    Kv(KvSample),
}

impl Sample {
    pub fn id(&self) -> &str {
        match self {
            Sample::Qa(s) => &s.id,
            Sample::Kv(s) => &s.id,
        }
    }

    /// Number of slots the gold item can occupy.
    pub fn slot_count(&self) -> usize {
        match self {
            Sample::Qa(s) => s.documents.len(),
            Sample::Kv(s) => s.pairs.len(),
        }
    }

    fn validate(&self) -> Result<(), String> {
        match self {
            Sample::Qa(s) => s.validate(),
            Sample::Kv(s) => s.validate(),
        }
    }

    fn to_json_line(&self) -> String {
        let encoded = match self {
            Sample::Qa(s) => serde_json::to_string(s),
            Sample::Kv(s) => serde_json::to_string(s),
        };
        encoded.expect("samples always serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DatasetSource {
    Generated(KvGenConfig),
    File(PathBuf),
    InMemory,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub source: DatasetSource,
}

impl PartialEq for Dataset {
    /// Datasets compare by content; the source is provenance only.
    fn eq(&self, other: &Self) -> bool {
        self.samples == other.samples
    }
}

impl Dataset {
    /// Build an in-memory dataset, checking sample invariants and id
    /// uniqueness.
    pub fn new(samples: Vec<Sample>) -> Result<Self, DatasetError> {
        let mut ids = HashSet::new();
        for (i, sample) in samples.iter().enumerate() {
            let line = i + 1;
            sample.validate().map_err(|reason| DatasetError::Invalid {
                line,
                id: sample.id().to_owned(),
                reason,
            })?;
            if !ids.insert(sample.id().to_owned()) {
                return Err(DatasetError::DuplicateId {
                    line,
                    id: sample.id().to_owned(),
                });
            }
        }
        Ok(Self {
            samples,
            source: DatasetSource::InMemory,
        })
    }

    pub fn from_qa(samples: Vec<QaSample>) -> Result<Self, DatasetError> {
        Self::new(samples.into_iter().map(Sample::Qa).collect())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id() == id)
    }

    /// Short provenance label for reports.
    pub fn label(&self) -> String {
        match &self.source {
            DatasetSource::Generated(c) => format!(
                "kv(pairs={},chars={},n={},seed={})",
                c.num_pairs, c.char_len, c.num_samples, c.seed
            ),
            DatasetSource::File(p) => p.display().to_string(),
            DatasetSource::InMemory => "in-memory".into(),
        }
    }
}

/// Generate the synthetic key-value benchmark. Pure function of `config`.
pub fn generate_kv_dataset(config: &KvGenConfig) -> Result<Dataset, DatasetError> {
    config.validate()?;
    let mut rng = seed::rng(config.seed);
    let width = config.num_samples.max(1).to_string().len().max(5);
    let mut samples = Vec::with_capacity(config.num_samples);
    for i in 0..config.num_samples {
        let mut seen = HashSet::with_capacity(config.num_pairs * 2);
        let mut draw = |rng: &mut rand_chacha::ChaCha8Rng| loop {
            let h = HexString::random(rng, config.char_len);
            if seen.insert(h.clone()) {
                break h;
            }
        };
        let pairs = (0..config.num_pairs)
            .map(|_| {
                let k = draw(&mut rng);
                let v = draw(&mut rng);
                (k, v)
            })
            .collect();
        let gold_index = rng.random_range(0..config.num_pairs);
        samples.push(Sample::Kv(KvSample {
            id: format!("kv-{i:0width$}"),
            pairs,
            gold_index,
        }));
    }
    Ok(Dataset {
        samples,
        source: DatasetSource::Generated(*config),
    })
}

/// A rendered key-value prompt and the byte range of the gold pair's line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KvPrompt {
    pub text: String,
    pub gold_line: Range<usize>,
}

/// Render the extraction prompt with the gold pair moved to `gold_position`.
pub fn render_kv_prompt(
    sample: &KvSample,
    style: FormatStyle,
    gold_position: usize,
) -> Result<String, DatasetError> {
    render_kv_prompt_with_span(sample, style, gold_position).map(|p| p.text)
}

pub fn render_kv_prompt_with_span(
    sample: &KvSample,
    style: FormatStyle,
    gold_position: usize,
) -> Result<KvPrompt, DatasetError> {
    let placed = sample.with_gold_at(gold_position)?;
    render_kv_pairs(&placed, style)
}

/// Render `sample` exactly as ordered, with `sample.gold_index` as the gold.
pub(crate) fn render_kv_pairs(
    sample: &KvSample,
    style: FormatStyle,
) -> Result<KvPrompt, DatasetError> {
    let mut text = String::new();
    text.push_str(KV_INSTRUCTION);
    text.push_str("\n\n");
    let mut gold_line = 0..0;
    for (i, (k, v)) in sample.pairs.iter().enumerate() {
        let start = text.len();
        text.push_str(&apply_format_style(k, style)?);
        text.push_str(": ");
        text.push_str(&apply_format_style(v, style)?);
        if i == sample.gold_index {
            gold_line = start..text.len();
        }
        text.push('\n');
    }
    text.push_str("\nKey: ");
    text.push_str(&apply_format_style(&sample.gold().0, style)?);
    text.push_str("\nCorresponding value:");
    Ok(KvPrompt { text, gold_line })
}

fn parse_line(line: &str, lineno: usize) -> Result<Sample, DatasetError> {
    let value: serde_json::Value =
        serde_json::from_str(line).map_err(|source| DatasetError::Parse {
            line: lineno,
            source,
        })?;
    let is_kv = value.get("pairs").is_some();
    let parsed = if is_kv {
        serde_json::from_value(value).map(Sample::Kv)
    } else {
        serde_json::from_value(value).map(Sample::Qa)
    };
    parsed.map_err(|source| DatasetError::Parse {
        line: lineno,
        source,
    })
}

/// Load a JSON-lines dataset. Blank lines are skipped; every record is
/// validated and reported with its 1-based line number.
pub fn load_qa_dataset(path: impl AsRef<Path>) -> Result<Dataset, DatasetError> {
    let path = path.as_ref();
    let io_err = |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::open(path).map_err(io_err)?;
    let mut samples = Vec::new();
    let mut ids = HashSet::new();
    let mut kind: Option<bool> = None;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err)?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let sample = parse_line(&line, lineno)?;
        let is_kv = matches!(sample, Sample::Kv(_));
        if *kind.get_or_insert(is_kv) != is_kv {
            return Err(DatasetError::MixedKinds { line: lineno });
        }
        sample.validate().map_err(|reason| DatasetError::Invalid {
            line: lineno,
            id: sample.id().to_owned(),
            reason,
        })?;
        if !ids.insert(sample.id().to_owned()) {
            return Err(DatasetError::DuplicateId {
                line: lineno,
                id: sample.id().to_owned(),
            });
        }
        samples.push(sample);
    }
    Ok(Dataset {
        samples,
        source: DatasetSource::File(path.to_path_buf()),
    })
}

pub fn write_dataset<W: Write>(dataset: &Dataset, mut out: W) -> std::io::Result<()> {
    for sample in &dataset.samples {
        out.write_all(sample.to_json_line().as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let io_err = |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::create(path).map_err(io_err)?;
    write_dataset(dataset, std::io::BufWriter::new(file)).map_err(io_err)
}
