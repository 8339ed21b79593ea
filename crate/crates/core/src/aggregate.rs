//! Vote aggregation over annotation runs.
//!
//! Each character's probability is the share of valid runs that marked it.
//! Runs that failed to parse or align are left out of both the count and the
//! denominator.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::model::{charset_to_spans, normalize_spans, CharProbVector, ModelError, SpanLabel};
use crate::scalar::Probability;

pub const DEFAULT_RUNS: usize = 12;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum AggregationError {
    #[error("item {0} has no valid annotation runs")]
    NoValidRuns(String),
    #[error("item {item}: {source}")]
    Span {
        item: String,
        #[source]
        source: ModelError,
    },
}

/// One annotator's output for an item.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationRun {
    /// Raw reply text as returned by the model.
    pub raw: String,
    /// Spans over the original answer.
    pub spans: Vec<SpanLabel>,
    pub similarity: f64,
    pub valid: bool,
    pub role: String,
}

impl AnnotationRun {
    pub fn valid(spans: Vec<SpanLabel>, role: impl Into<String>) -> Self {
        Self {
            raw: String::new(),
            spans,
            similarity: 1.0,
            valid: true,
            role: role.into(),
        }
    }

    pub fn invalid(raw: impl Into<String>, role: impl Into<String>) -> Self {
        Self {
            raw: raw.into(),
            spans: Vec::new(),
            similarity: 0.0,
            valid: false,
            role: role.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSet {
    pub item_id: String,
    pub runs: Vec<AnnotationRun>,
    pub answer_len: usize,
}

impl RunSet {
    pub fn valid_runs(&self) -> impl Iterator<Item = &AnnotationRun> {
        self.runs.iter().filter(|r| r.valid)
    }
}

pub fn aggregate<P: Probability>(runs: &RunSet) -> Result<CharProbVector<P>, AggregationError> {
    let len = runs.answer_len;
    let mut counts = vec![0usize; len];
    let mut total = 0usize;
    for run in runs.valid_runs() {
        total += 1;
        for span in &run.spans {
            span.check_bounds(len).map_err(|source| AggregationError::Span {
                item: runs.item_id.clone(),
                source,
            })?;
        }
        // a run votes at most once per character
        for span in normalize_spans(&run.spans) {
            for c in &mut counts[span.start..span.end] {
                *c += 1;
            }
        }
    }
    if total == 0 {
        return Err(AggregationError::NoValidRuns(runs.item_id.clone()));
    }
    let probs = counts.into_iter().map(|k| P::ratio(k, total)).collect();
    CharProbVector::new(probs).map_err(|source| AggregationError::Span {
        item: runs.item_id.clone(),
        source,
    })
}

/// Maximal runs of equal, non-zero probability.
pub fn to_soft_labels<P: Probability>(probs: &CharProbVector<P>) -> Vec<SpanLabel<P>> {
    let mut out: Vec<SpanLabel<P>> = Vec::new();
    for (i, &p) in probs.as_slice().iter().enumerate() {
        if p == P::zero() {
            continue;
        }
        match out.last_mut() {
            Some(last) if last.end == i && last.prob == Some(p) => last.end = i + 1,
            _ => out.push(SpanLabel::soft(i, i + 1, p)),
        }
    }
    out
}

/// Characters whose probability reaches `threshold`, grouped into spans.
pub fn to_hard_labels<P: Probability>(probs: &CharProbVector<P>, threshold: P) -> Vec<SpanLabel> {
    let chars: BTreeSet<usize> = probs
        .as_slice()
        .iter()
        .enumerate()
        .filter(|(_, &p)| p >= threshold)
        .map(|(i, _)| i)
        .collect();
    charset_to_spans(&chars)
}
