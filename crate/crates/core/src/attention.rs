//! Attention balance scoring over final-token attention vectors.
//!
//! For weights `a_1..a_T` the mean normalized position is
//! `mu = sum_t ((t-1)/(T-1)) * a_t / sum_j a_j` and the balance score is
//! `1 - 2|mu - 0.5|`: 1 when the attention mass is centred, 0 when it all
//! sits on the first or last token.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::normalizer::{Delimiter, FormatConfig};

/// Means closer than this are treated as tied in [`select_format`].
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum AttentionError {
    #[error("attention vector needs at least 2 weights, got {0}")]
    TooShort(usize),
    #[error("attention weight {index} is negative or not finite: {value}")]
    BadWeight { index: usize, value: f64 },
    #[error("attention weights sum to zero")]
    ZeroMass,
    #[error("no formats to select from")]
    NoFormats,
    #[error("format {0} has no scores")]
    EmptyScores(Delimiter),
    #[error("format {format} was scored on a different prompt set than {reference}")]
    UnequalPromptSets {
        format: Delimiter,
        reference: Delimiter,
    },
    #[error("span {start}..{end} is empty, reversed or outside 0..{len}")]
    SpanOutOfRange { start: usize, end: usize, len: usize },
    #[error("spans {0:?} and {1:?} overlap")]
    OverlappingSpans(Range<usize>, Range<usize>),
    #[error("trace line {line}: {reason}")]
    Trace { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionVector {
    pub prompt_id: String,
    pub format_tag: String,
    pub weights: Vec<f64>,
}

impl AttentionVector {
    pub fn new(
        prompt_id: impl Into<String>,
        format_tag: impl Into<String>,
        weights: Vec<f64>,
    ) -> Result<Self, AttentionError> {
        validate_weights(&weights)?;
        Ok(Self {
            prompt_id: prompt_id.into(),
            format_tag: format_tag.into(),
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

fn validate_weights(weights: &[f64]) -> Result<f64, AttentionError> {
    if weights.len() < 2 {
        return Err(AttentionError::TooShort(weights.len()));
    }
    let mut sum = 0.0;
    for (index, &value) in weights.iter().enumerate() {
        if !value.is_finite() || value < 0.0 {
            return Err(AttentionError::BadWeight { index, value });
        }
        sum += value;
    }
    if sum <= 0.0 {
        return Err(AttentionError::ZeroMass);
    }
    Ok(sum)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbsResult {
    pub mu: f64,
    pub score: f64,
}

/// Balance score of a raw weight slice.
pub fn balance_score(weights: &[f64]) -> Result<AbsResult, AttentionError> {
    let sum = validate_weights(weights)?;
    let span = (weights.len() - 1) as f64;
    let mu: f64 = weights
        .iter()
        .enumerate()
        .map(|(i, &w)| (i as f64 / span) * (w / sum))
        .sum();
    let mu = mu.clamp(0.0, 1.0);
    Ok(AbsResult {
        mu,
        score: 1.0 - 2.0 * (mu - 0.5).abs(),
    })
}

pub fn attention_balance_score(a: &AttentionVector) -> Result<AbsResult, AttentionError> {
    balance_score(&a.weights)
}

/// Balance scores of one candidate format, keyed by prompt (sample) id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormatScores {
    pub config: FormatConfig,
    pub scores: BTreeMap<String, AbsResult>,
}

impl FormatScores {
    pub fn mean(&self) -> f64 {
        self.scores.values().map(|r| r.score).sum::<f64>() / self.scores.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub selected: FormatConfig,
    /// Mean score per candidate, in input order.
    pub means: Vec<(Delimiter, f64)>,
}

/// Pick the format with the highest mean balance score. Ties go to `none`,
/// then to the smallest delimiter character.
pub fn select_format(formats: &[FormatScores]) -> Result<Selection, AttentionError> {
    let first = formats.first().ok_or(AttentionError::NoFormats)?;
    for f in formats {
        if f.scores.is_empty() {
            return Err(AttentionError::EmptyScores(f.config.delimiter));
        }
        if !f.scores.keys().eq(first.scores.keys()) {
            return Err(AttentionError::UnequalPromptSets {
                format: f.config.delimiter,
                reference: first.config.delimiter,
            });
        }
    }
    let means: Vec<(Delimiter, f64)> = formats
        .iter()
        .map(|f| (f.config.delimiter, f.mean()))
        .collect();
    let best = means
        .iter()
        .map(|&(_, m)| m)
        .fold(f64::NEG_INFINITY, f64::max);
    let selected = formats
        .iter()
        .zip(&means)
        .filter(|(_, &(_, m))| best - m <= TIE_TOLERANCE)
        .map(|(f, _)| f.config)
        .min_by_key(|c| c.delimiter)
        .expect("at least one format attains the maximum");
    Ok(Selection { selected, means })
}

/// Share of the total attention mass inside each span. Spans are half-open
/// token ranges and must be disjoint.
pub fn span_attention_profile(
    a: &AttentionVector,
    spans: &[Range<usize>],
) -> Result<Vec<f64>, AttentionError> {
    let total = validate_weights(&a.weights)?;
    let len = a.weights.len();
    for s in spans {
        if s.start >= s.end || s.end > len {
            return Err(AttentionError::SpanOutOfRange {
                start: s.start,
                end: s.end,
                len,
            });
        }
    }
    let mut sorted: Vec<&Range<usize>> = spans.iter().collect();
    sorted.sort_by_key(|s| s.start);
    for pair in sorted.windows(2) {
        if pair[1].start < pair[0].end {
            return Err(AttentionError::OverlappingSpans(
                pair[0].clone(),
                pair[1].clone(),
            ));
        }
    }
    Ok(spans
        .iter()
        .map(|s| a.weights[s.clone()].iter().sum::<f64>() / total)
        .collect())
}

#[derive(Deserialize)]
struct TraceLine {
    prompt_id: String,
    format_tag: String,
    #[serde(rename = "T")]
    len: usize,
    weights: Vec<f64>,
}

/// Read an attention trace: one JSON object per line with `prompt_id`,
/// `format_tag`, `T` and `weights`. Other fields are ignored.
pub fn read_attention_trace(path: impl AsRef<Path>) -> Result<Vec<AttentionVector>, AttentionError> {
    let file = fs::File::open(path.as_ref()).map_err(|e| AttentionError::Trace {
        line: 0,
        reason: e.to_string(),
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let trace_err = |reason: String| AttentionError::Trace {
            line: line_no,
            reason,
        };
        let line = line.map_err(|e| trace_err(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TraceLine = serde_json::from_str(&line).map_err(|e| trace_err(e.to_string()))?;
        if rec.len != rec.weights.len() {
            return Err(trace_err(format!(
                "T = {} but {} weights",
                rec.len,
                rec.weights.len()
            )));
        }
        out.push(
            AttentionVector::new(rec.prompt_id, rec.format_tag, rec.weights)
                .map_err(|e| trace_err(e.to_string()))?,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn av(w: Vec<f64>) -> AttentionVector {
        AttentionVector::new("p", "-", w).unwrap()
    }

    fn scores(d: char, values: &[f64]) -> FormatScores {
        FormatScores {
            config: FormatConfig::new(Delimiter::Char(d), 0.5).unwrap(),
            scores: values
                .iter()
                .enumerate()
                .map(|(i, &s)| (format!("q{i}"), AbsResult { mu: 0.5, score: s }))
                .collect(),
        }
    }

    #[test]
    fn two_token_example() {
        let r = balance_score(&[1.0, 3.0]).unwrap();
        assert_eq!(r.mu, 0.75);
        assert_eq!(r.score, 0.5);
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(balance_score(&[1.0]), Err(AttentionError::TooShort(1)));
        assert_eq!(balance_score(&[0.0, 0.0]), Err(AttentionError::ZeroMass));
        assert!(matches!(
            balance_score(&[1.0, -0.5]),
            Err(AttentionError::BadWeight { index: 1, .. })
        ));
        assert!(balance_score(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn argmax_and_ties() {
        let s = select_format(&[scores('-', &[0.8]), scores(':', &[0.9])]).unwrap();
        assert_eq!(s.selected.delimiter, Delimiter::Char(':'));

        let s = select_format(&[scores('-', &[0.6, 0.8]), scores('&', &[0.7, 0.7])]).unwrap();
        assert_eq!(s.selected.delimiter, Delimiter::Char('&'));

        let mut none = scores('x', &[0.7, 0.7]);
        none.config = FormatConfig::none();
        let s = select_format(&[scores('&', &[0.7, 0.7]), none]).unwrap();
        assert_eq!(s.selected.delimiter, Delimiter::None);
    }

    #[test]
    fn selection_errors() {
        assert_eq!(select_format(&[]), Err(AttentionError::NoFormats));
        let err = select_format(&[scores('-', &[0.5, 0.5]), scores('&', &[0.5])]);
        assert!(matches!(err, Err(AttentionError::UnequalPromptSets { .. })));
        assert!(matches!(
            select_format(&[scores('-', &[])]),
            Err(AttentionError::EmptyScores(_))
        ));
    }

    #[test]
    fn span_profiles() {
        let m = span_attention_profile(&av(vec![1.0, 2.0, 3.0, 4.0]), &[0..2, 2..4]).unwrap();
        assert!((m[0] - 0.3).abs() < 1e-15 && (m[1] - 0.7).abs() < 1e-15);

        let m = span_attention_profile(&av(vec![1.0; 10]), &[0..5, 5..10]).unwrap();
        assert_eq!(m, vec![0.5, 0.5]);

        let m = span_attention_profile(&av(vec![0.0, 1.0, 0.0]), &[Range { start: 1, end: 2 }]).unwrap();
        assert_eq!(m, vec![1.0]);

        assert!(matches!(
            span_attention_profile(&av(vec![1.0; 4]), &[0..3, 2..4]),
            Err(AttentionError::OverlappingSpans(..))
        ));
        assert!(matches!(
            span_attention_profile(&av(vec![1.0; 4]), &[Range { start: 2, end: 5 }]),
            Err(AttentionError::SpanOutOfRange { .. })
        ));
    }

    #[test]
    fn reads_trace_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        std::fs::write(
            &path,
            "{\"prompt_id\":\"a\",\"format_tag\":\"-\",\"T\":3,\"weights\":[1,2,3],\"text\":\"x\"}\n\n",
        )
        .unwrap();
        let v = read_attention_trace(&path).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].weights, vec![1.0, 2.0, 3.0]);

        std::fs::write(&path, "{\"prompt_id\":\"a\",\"format_tag\":\"-\",\"T\":4,\"weights\":[1,2,3]}\n").unwrap();
        assert!(matches!(read_attention_trace(&path), Err(AttentionError::Trace { line: 1, .. })));
    }
}
