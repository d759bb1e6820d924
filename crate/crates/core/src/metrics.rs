//! Answer grading, position-wise accuracy summaries and Pearson correlation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("accuracy vector is empty")]
    Empty,
    #[error("accuracy {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("per-position denominators must be equal and positive")]
    BadDenominators,
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("{0} series is constant; correlation undefined")]
    ConstantSeries(&'static str),
}

/// Accuracy per gold position. `per_position[i]` is the accuracy when the
/// gold item sits at `positions[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionAccuracy {
    pub positions: Vec<usize>,
    pub per_position: Vec<f64>,
    pub sample_counts: Vec<usize>,
}

impl PositionAccuracy {
    pub fn new(
        positions: Vec<usize>,
        per_position: Vec<f64>,
        sample_counts: Vec<usize>,
    ) -> Result<Self, MetricsError> {
        if per_position.is_empty() {
            return Err(MetricsError::Empty);
        }
        if let Some(&bad) = per_position.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(MetricsError::OutOfRange(bad));
        }
        let denominators_ok = sample_counts.len() == per_position.len()
            && positions.len() == per_position.len()
            && sample_counts[0] > 0
            && sample_counts.iter().all(|&c| c == sample_counts[0]);
        if !denominators_ok {
            return Err(MetricsError::BadDenominators);
        }
        Ok(Self {
            positions,
            per_position,
            sample_counts,
        })
    }

    /// From per-position correct counts sharing one denominator.
    pub fn from_counts(
        positions: Vec<usize>,
        correct: &[usize],
        denominator: usize,
    ) -> Result<Self, MetricsError> {
        if denominator == 0 {
            return Err(MetricsError::BadDenominators);
        }
        let per_position = correct
            .iter()
            .map(|&c| c as f64 / denominator as f64)
            .collect();
        Self::new(positions, per_position, vec![denominator; correct.len()])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub oaa: f64,
    pub opa: f64,
}

impl MetricSummary {
    pub fn of(p: &PositionAccuracy) -> Self {
        Self {
            oaa: mean(&p.per_position),
            opa: max(&p.per_position),
        }
    }

    /// Field-wise mean of several summaries (e.g. one per shuffle seed).
    pub fn mean_of(summaries: &[MetricSummary]) -> Option<Self> {
        if summaries.is_empty() {
            return None;
        }
        let n = summaries.len() as f64;
        Some(Self {
            oaa: summaries.iter().map(|s| s.oaa).sum::<f64>() / n,
            opa: summaries.iter().map(|s| s.opa).sum::<f64>() / n,
        })
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn max(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Overall averaged accuracy: unweighted mean over positions.
pub fn compute_oaa(p: &PositionAccuracy) -> Result<f64, MetricsError> {
    if p.per_position.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(mean(&p.per_position))
}

/// Optimal positioned accuracy: best accuracy over positions.
pub fn compute_opa(p: &PositionAccuracy) -> Result<f64, MetricsError> {
    if p.per_position.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(max(&p.per_position))
}

/// Lowercase, trim punctuation off each whitespace token, single-space join.
fn normalize_answer(s: &str) -> String {
    s.split_whitespace()
        .map(|tok| tok.trim_matches(|c: char| c.is_ascii_punctuation() || c.is_ascii_whitespace()))
        .filter(|tok| !tok.is_empty())
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// True iff some normalized gold answer occurs in the normalized generation.
pub fn score_answer(generated: &str, gold_answers: &[String]) -> bool {
    let generated = normalize_answer(generated);
    gold_answers
        .iter()
        .map(|g| normalize_answer(g))
        .any(|g| !g.is_empty() && generated.contains(&g))
}

/// Key-value grading: some whitespace-separated token of the generation,
/// stripped of every non-hex character, equals the gold value. A value
/// echoed back in UUID or any delimited form still counts.
pub fn score_kv_answer(generated: &str, gold_value: &str) -> bool {
    let gold = gold_value.to_ascii_lowercase();
    generated.split_whitespace().any(|tok| {
        let hex: String = tok
            .chars()
            .filter(char::is_ascii_hexdigit)
            .map(|c| c.to_ascii_lowercase())
            .collect();
        hex == gold
    })
}

/// Sample Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    if x.len() != y.len() {
        return Err(MetricsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(MetricsError::TooFewPoints(x.len()));
    }
    let mx = mean(x);
    let my = mean(y);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(MetricsError::ConstantSeries("x"));
    }
    if syy == 0.0 {
        return Err(MetricsError::ConstantSeries("y"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}
