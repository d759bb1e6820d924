//! Candidate formatting and format application.
//!
//! A passage is split into sentences after `.`, `!` or `?` followed by
//! whitespace. For a [`FormatConfig`] `(delimiter, ratio)`, `ceil(ratio * n)`
//! of the `n` sentences have every intra-sentence whitespace run replaced by
//! a single delimiter character. Whitespace between sentences is never
//! touched, so the rewrite is a pure whitespace substitution.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Document;
use crate::seed;

/// Bumped whenever the sentence-selection rule changes.
pub const SELECTION_VERSION: &str = "ctxnorm-select/v1";

pub const DEFAULT_DELIMITERS: [Delimiter; 9] = [
    Delimiter::None,
    Delimiter::Char('-'),
    Delimiter::Char('_'),
    Delimiter::Char(':'),
    Delimiter::Char('.'),
    Delimiter::Char('~'),
    Delimiter::Char('+'),
    Delimiter::Char('/'),
    Delimiter::Char('&'),
];

#[derive(Debug, Error, PartialEq)]
pub enum NormalizeError {
    #[error("ratio must lie in [0, 1], got {0}")]
    InvalidRatio(f64),
    #[error("invalid delimiter {0:?}: must be `none` or one printable non-whitespace character")]
    InvalidDelimiter(String),
    #[error("candidate delimiter list is empty")]
    EmptyCandidates,
    #[error("duplicate candidate delimiter {0}")]
    DuplicateDelimiter(Delimiter),
    #[error("template {template:?} is missing the {placeholder} placeholder")]
    MissingPlaceholder {
        template: String,
        placeholder: &'static str,
    },
    #[error("cannot read template {path}: {reason}")]
    TemplateIo { path: String, reason: String },
}

/// `none` sorts before every character; characters sort by code point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Delimiter {
    None,
    Char(char),
}

impl Delimiter {
    pub fn new(c: char) -> Result<Self, NormalizeError> {
        if c.is_whitespace() || c.is_control() {
            return Err(NormalizeError::InvalidDelimiter(c.to_string()));
        }
        Ok(Delimiter::Char(c))
    }

    pub fn as_char(self) -> Option<char> {
        match self {
            Delimiter::None => None,
            Delimiter::Char(c) => Some(c),
        }
    }
}

impl fmt::Display for Delimiter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Delimiter::None => f.write_str("none"),
            Delimiter::Char(c) => write!(f, "{c}"),
        }
    }
}

impl FromStr for Delimiter {
    type Err = NormalizeError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "none" {
            return Ok(Delimiter::None);
        }
        let mut chars = s.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => Delimiter::new(c),
            _ => Err(NormalizeError::InvalidDelimiter(s.to_owned())),
        }
    }
}

impl Serialize for Delimiter {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Delimiter {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One candidate context format: a delimiter and the fraction of sentences
/// it is applied to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawFormatConfig")]
pub struct FormatConfig {
    pub delimiter: Delimiter,
    pub ratio: f64,
}

#[derive(Deserialize)]
struct RawFormatConfig {
    delimiter: Delimiter,
    ratio: f64,
}

impl TryFrom<RawFormatConfig> for FormatConfig {
    type Error = NormalizeError;
    fn try_from(raw: RawFormatConfig) -> Result<Self, Self::Error> {
        FormatConfig::new(raw.delimiter, raw.ratio)
    }
}

impl FormatConfig {
    pub fn new(delimiter: Delimiter, ratio: f64) -> Result<Self, NormalizeError> {
        if !(0.0..=1.0).contains(&ratio) {
            return Err(NormalizeError::InvalidRatio(ratio));
        }
        Ok(Self { delimiter, ratio })
    }

    pub fn none() -> Self {
        Self {
            delimiter: Delimiter::None,
            ratio: 0.0,
        }
    }

    pub fn tag(&self) -> String {
        self.delimiter.to_string()
    }

    /// Number of sentences rewritten out of `n`.
    pub fn reformat_count(&self, n: usize) -> usize {
        if self.delimiter == Delimiter::None {
            return 0;
        }
        // The epsilon keeps products like 0.3 * 10 = 3.0000000000000004 at 3.
        let k = (self.ratio * n as f64 - 1e-9).ceil();
        (k.max(0.0) as usize).min(n)
    }
}

impl fmt::Display for FormatConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.delimiter, self.ratio)
    }
}

/// A text split into sentences with the whitespace around them recorded.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Segmentation {
    /// Whitespace before the first sentence.
    pub leading: String,
    /// Each sentence with the whitespace that follows it.
    pub sentences: Vec<(String, String)>,
}

impl Segmentation {
    pub fn parse(text: &str) -> Self {
        let body = text.trim_start();
        let leading = text[..text.len() - body.len()].to_owned();
        let mut sentences = Vec::new();
        let mut rest = body;
        while !rest.is_empty() {
            let end = sentence_end(rest);
            let (sentence, tail) = rest.split_at(end);
            let next = tail.trim_start();
            let gap = &tail[..tail.len() - next.len()];
            sentences.push((sentence.to_owned(), gap.to_owned()));
            rest = next;
        }
        Self { leading, sentences }
    }

    pub fn join(&self) -> String {
        let mut out = self.leading.clone();
        for (s, gap) in &self.sentences {
            out.push_str(s);
            out.push_str(gap);
        }
        out
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

/// Byte offset just past the first sentence of `text` (which starts with a
/// non-whitespace character). Trailing whitespace of the text is excluded.
fn sentence_end(text: &str) -> usize {
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') {
            if let Some(&(_, next)) = chars.peek() {
                if next.is_whitespace() {
                    return i + c.len_utf8();
                }
            }
        }
    }
    text.trim_end().len()
}

/// Split `text` into sentences. Rejoining them with the recorded whitespace
/// (see [`Segmentation`]) reproduces the input.
pub fn segment_sentences(text: &str) -> Vec<String> {
    Segmentation::parse(text)
        .sentences
        .into_iter()
        .map(|(s, _)| s)
        .collect()
}

/// Replace every maximal whitespace run in `sentence` by one `delimiter`.
pub fn reformat_sentence(sentence: &str, delimiter: char) -> String {
    reformat_tracked(sentence, delimiter).0
}

/// Like [`reformat_sentence`], also returning the byte offsets of the
/// inserted delimiters in the output.
fn reformat_tracked(sentence: &str, delimiter: char) -> (String, Vec<usize>) {
    let mut out = String::with_capacity(sentence.len());
    let mut inserted = Vec::new();
    let mut in_ws = false;
    for c in sentence.chars() {
        if c.is_whitespace() {
            if !in_ws {
                inserted.push(out.len());
                out.push(delimiter);
                in_ws = true;
            }
        } else {
            out.push(c);
            in_ws = false;
        }
    }
    (out, inserted)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedDocument {
    pub original: Document,
    pub text: String,
    pub config: FormatConfig,
    pub reformatted_indices: BTreeSet<usize>,
    /// Byte offsets in `text` of every delimiter inserted by rewriting.
    pub inserted_positions: Vec<usize>,
}

impl NormalizedDocument {
    /// `text` with every inserted delimiter turned back into a single space.
    pub fn revert_delimiters(&self) -> String {
        let mut bytes = self.text.clone().into_bytes();
        let width = self
            .config
            .delimiter
            .as_char()
            .map_or(0, char::len_utf8);
        for &pos in self.inserted_positions.iter().rev() {
            bytes.splice(pos..pos + width, *b" ");
        }
        String::from_utf8(bytes).expect("delimiters replaced on char boundaries")
    }
}

/// Indices of the sentences to rewrite: a seeded sample of `k` out of `n`,
/// keyed by document id so a passage is rewritten the same way wherever it
/// appears.
fn select_sentences(doc_id: &str, selection_seed: u64, n: usize, k: usize) -> BTreeSet<usize> {
    if k >= n {
        return (0..n).collect();
    }
    if k == 0 {
        return BTreeSet::new();
    }
    let s = seed::derive_seed(
        SELECTION_VERSION,
        &[doc_id.as_bytes(), &selection_seed.to_le_bytes()],
    );
    let mut rng = seed::rng(s);
    rand::seq::index::sample(&mut rng, n, k).into_iter().collect()
}

pub fn normalize_document(
    doc: &Document,
    config: &FormatConfig,
    selection_seed: u64,
) -> NormalizedDocument {
    let unchanged = || NormalizedDocument {
        original: doc.clone(),
        text: doc.text.clone(),
        config: *config,
        reformatted_indices: BTreeSet::new(),
        inserted_positions: Vec::new(),
    };
    let Some(delimiter) = config.delimiter.as_char() else {
        return unchanged();
    };
    let seg = Segmentation::parse(&doc.text);
    let k = config.reformat_count(seg.len());
    if k == 0 {
        return unchanged();
    }
    let chosen = select_sentences(&doc.id, selection_seed, seg.len(), k);

    let mut text = seg.leading.clone();
    let mut inserted = Vec::new();
    for (i, (sentence, gap)) in seg.sentences.iter().enumerate() {
        if chosen.contains(&i) {
            let (rewritten, offsets) = reformat_tracked(sentence, delimiter);
            inserted.extend(offsets.into_iter().map(|o| o + text.len()));
            text.push_str(&rewritten);
        } else {
            text.push_str(sentence);
        }
        text.push_str(gap);
    }
    NormalizedDocument {
        original: doc.clone(),
        text,
        config: *config,
        reformatted_indices: chosen,
        inserted_positions: inserted,
    }
}

/// One config per delimiter, all sharing `ratio`.
pub fn candidate_formats(
    delimiters: &[Delimiter],
    ratio: f64,
) -> Result<Vec<FormatConfig>, NormalizeError> {
    if delimiters.is_empty() {
        return Err(NormalizeError::EmptyCandidates);
    }
    let mut seen = BTreeSet::new();
    delimiters
        .iter()
        .map(|&d| {
            if !seen.insert(d) {
                return Err(NormalizeError::DuplicateDelimiter(d));
            }
            FormatConfig::new(d, ratio)
        })
        .collect()
}

pub const BASE_TEMPLATE: &str = "Write a high-quality answer for the given question using only the provided search results (some of which might be irrelevant).\n\n{documents}\n\nQuestion: {question}\nAnswer:";

pub const ALIGNED_TEMPLATE: &str = "### Instruction:\nAnswer the question using only the search results below (some of which might be irrelevant). Reply with a short answer.\n\n{documents}\n\nQuestion: {question}\n\n### Response:\n";

/// Prompt layout with `{question}` and `{documents}` placeholders. Each
/// document is rendered as `doc_prefix` (with `{k}` replaced by its 1-based
/// index) followed by its text; documents are separated by newlines.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: String,
    body: String,
    pub doc_prefix: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Piece<'a> {
    Literal(&'a str),
    Question,
    Documents,
}

impl PromptTemplate {
    pub fn new(id: impl Into<String>, body: impl Into<String>) -> Result<Self, NormalizeError> {
        let template = Self {
            id: id.into(),
            body: body.into(),
            doc_prefix: "Document [{k}]: ".into(),
        };
        for (needle, name) in [("{question}", "{question}"), ("{documents}", "{documents}")] {
            if !template.body.contains(needle) {
                return Err(NormalizeError::MissingPlaceholder {
                    template: template.id.clone(),
                    placeholder: name,
                });
            }
        }
        Ok(template)
    }

    /// Plain QA prompt for base models.
    pub fn base() -> Self {
        Self::new("base", BASE_TEMPLATE).expect("builtin template is valid")
    }

    /// Instruction-style prompt for instruction-tuned models.
    pub fn aligned() -> Self {
        Self::new("aligned", ALIGNED_TEMPLATE).expect("builtin template is valid")
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, NormalizeError> {
        let path = path.as_ref();
        let body = fs::read_to_string(path).map_err(|e| NormalizeError::TemplateIo {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::new(path.display().to_string(), body)
    }

    pub fn with_doc_prefix(mut self, prefix: impl Into<String>) -> Self {
        self.doc_prefix = prefix.into();
        self
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    fn pieces(&self) -> Vec<Piece<'_>> {
        let mut pieces = Vec::new();
        let mut rest = self.body.as_str();
        loop {
            let q = rest.find("{question}").map(|i| (i, Piece::Question, 10));
            let d = rest.find("{documents}").map(|i| (i, Piece::Documents, 11));
            let next = match (q, d) {
                (Some(a), Some(b)) => Some(if a.0 <= b.0 { a } else { b }),
                (a, b) => a.or(b),
            };
            match next {
                Some((i, piece, len)) => {
                    if i > 0 {
                        pieces.push(Piece::Literal(&rest[..i]));
                    }
                    pieces.push(piece);
                    rest = &rest[i + len..];
                }
                None => {
                    if !rest.is_empty() {
                        pieces.push(Piece::Literal(rest));
                    }
                    return pieces;
                }
            }
        }
    }
}

/// An assembled prompt with the byte range of each document's text, in
/// rendering order. Ranges refer to the first `{documents}` occurrence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssembledPrompt {
    pub text: String,
    pub doc_spans: Vec<Range<usize>>,
}

pub fn assemble_prompt(
    question: &str,
    docs: &[NormalizedDocument],
    template: &PromptTemplate,
) -> String {
    assemble_prompt_with_spans(question, docs, template).text
}

pub fn assemble_prompt_with_spans(
    question: &str,
    docs: &[NormalizedDocument],
    template: &PromptTemplate,
) -> AssembledPrompt {
    let mut text = String::new();
    let mut doc_spans = Vec::new();
    let mut spans_recorded = false;
    for piece in template.pieces() {
        match piece {
            Piece::Literal(s) => text.push_str(s),
            Piece::Question => text.push_str(question),
            Piece::Documents => {
                for (k, doc) in docs.iter().enumerate() {
                    if k > 0 {
                        text.push('\n');
                    }
                    text.push_str(&template.doc_prefix.replace("{k}", &(k + 1).to_string()));
                    let start = text.len();
                    text.push_str(&doc.text);
                    if !spans_recorded {
                        doc_spans.push(start..text.len());
                    }
                }
                spans_recorded = true;
            }
        }
    }
    AssembledPrompt { text, doc_spans }
}
