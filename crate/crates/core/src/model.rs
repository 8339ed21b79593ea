//! Domain types, span algebra and the JSONL dataset formats.
//!
//! Every character offset in this crate counts Unicode scalar values of the
//! answer text, and spans are half-open `[start, end)`.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::scalar::Probability;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("span [{start}, {end}) is out of range for text of length {len}")]
    Offset { start: usize, end: usize, len: usize },
    #[error("spans [{0}, {1}) and [{2}, {3}) overlap or are out of order")]
    Overlap(usize, usize, usize, usize),
    #[error("probability {0} is outside [0, 1]")]
    Probability(f64),
    #[error("soft label [{start}, {end}) must carry a positive probability")]
    MissingProbability { start: usize, end: usize },
    #[error("length mismatch: {left} vs {right}")]
    Shape { left: usize, right: usize },
    #[error("line {line}: malformed JSON: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One dataset record: a question and the answer whose spans get annotated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QAItem {
    pub id: String,
    pub lang: String,
    pub question: String,
    pub answer: String,
}

impl QAItem {
    pub fn new(
        id: impl Into<String>,
        lang: impl Into<String>,
        question: impl Into<String>,
        answer: impl Into<String>,
    ) -> Self {
        Self {
            id: id.into(),
            lang: lang.into(),
            question: question.into(),
            answer: answer.into(),
        }
    }

    /// Answer length in Unicode scalar values.
    pub fn answer_len(&self) -> usize {
        self.answer.chars().count()
    }
}

/// Half-open character span, optionally carrying a probability.
///
/// Hard labels have `prob == None`; soft labels carry a positive probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpanLabel<P = f64> {
    pub start: usize,
    pub end: usize,
    pub prob: Option<P>,
}

impl<P> SpanLabel<P> {
    pub fn hard(start: usize, end: usize) -> Self {
        Self {
            start,
            end,
            prob: None,
        }
    }

    pub fn soft(start: usize, end: usize, prob: P) -> Self {
        Self {
            start,
            end,
            prob: Some(prob),
        }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, index: usize) -> bool {
        self.start <= index && index < self.end
    }

    pub fn check_bounds(&self, len: usize) -> Result<(), ModelError> {
        if self.start < self.end && self.end <= len {
            Ok(())
        } else {
            Err(ModelError::Offset {
                start: self.start,
                end: self.end,
                len,
            })
        }
    }

    pub fn map_prob<Q>(self, f: impl FnOnce(P) -> Q) -> SpanLabel<Q> {
        SpanLabel {
            start: self.start,
            end: self.end,
            prob: self.prob.map(f),
        }
    }
}

/// Checks that a label list is in range, sorted by start and non-overlapping.
pub fn check_label_list<P>(spans: &[SpanLabel<P>], len: Option<usize>) -> Result<(), ModelError> {
    for span in spans {
        match len {
            Some(len) => span.check_bounds(len)?,
            None if span.start >= span.end => {
                return Err(ModelError::Offset {
                    start: span.start,
                    end: span.end,
                    len: span.end,
                })
            }
            None => {}
        }
    }
    for pair in spans.windows(2) {
        if pair[1].start < pair[0].end {
            return Err(ModelError::Overlap(
                pair[0].start,
                pair[0].end,
                pair[1].start,
                pair[1].end,
            ));
        }
    }
    Ok(())
}

/// Per-character hallucination probability over an answer.
#[derive(Debug, Clone, PartialEq)]
pub struct CharProbVector<P = f64> {
    probs: Vec<P>,
}

impl<P: Probability> CharProbVector<P> {
    pub fn new(probs: Vec<P>) -> Result<Self, ModelError> {
        if let Some(bad) = probs.iter().find(|p| !p.is_unit_interval()) {
            return Err(ModelError::Probability(bad.to_f64_lossy()));
        }
        Ok(Self { probs })
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            probs: vec![P::zero(); len],
        }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn as_slice(&self) -> &[P] {
        &self.probs
    }

    pub fn into_vec(self) -> Vec<P> {
        self.probs
    }

    pub fn to_f64(&self) -> CharProbVector<f64> {
        CharProbVector {
            probs: self.probs.iter().map(|p| p.to_f64_lossy()).collect(),
        }
    }
}

/// Expands spans into the set of character indices they cover.
pub fn spans_to_charset<P>(spans: &[SpanLabel<P>], len: usize) -> Result<BTreeSet<usize>, ModelError> {
    let mut chars = BTreeSet::new();
    for span in spans {
        span.check_bounds(len)?;
        chars.extend(span.start..span.end);
    }
    Ok(chars)
}

/// Groups character indices into the minimal sorted list of maximal runs.
pub fn charset_to_spans(chars: &BTreeSet<usize>) -> Vec<SpanLabel> {
    let mut spans: Vec<SpanLabel> = Vec::new();
    for &i in chars {
        match spans.last_mut() {
            Some(last) if last.end == i => last.end = i + 1,
            _ => spans.push(SpanLabel::hard(i, i + 1)),
        }
    }
    spans
}

/// Sorts spans and merges any that overlap or touch. Probabilities are dropped.
pub fn normalize_spans<P>(spans: &[SpanLabel<P>]) -> Vec<SpanLabel> {
    let mut sorted: Vec<(usize, usize)> = spans
        .iter()
        .filter(|s| s.start < s.end)
        .map(|s| (s.start, s.end))
        .collect();
    sorted.sort_unstable();
    let mut out: Vec<SpanLabel> = Vec::with_capacity(sorted.len());
    for (start, end) in sorted {
        match out.last_mut() {
            Some(last) if start <= last.end => last.end = last.end.max(end),
            _ => out.push(SpanLabel::hard(start, end)),
        }
    }
    out
}

/// Output of the pipeline for one item.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub id: String,
    pub lang: String,
    pub hard_labels: Vec<SpanLabel>,
    pub soft_labels: Vec<SpanLabel>,
    pub runs_used: usize,
}

/// A reference annotation, as distributed with the shared-task data.
#[derive(Debug, Clone, PartialEq)]
pub struct GoldRecord {
    pub id: String,
    pub lang: String,
    pub answer: String,
    pub hard_labels: Vec<SpanLabel>,
    pub soft_labels: Vec<SpanLabel>,
}

impl GoldRecord {
    pub fn answer_len(&self) -> usize {
        self.answer.chars().count()
    }
}

#[derive(Serialize, Deserialize)]
struct ItemLine {
    id: String,
    lang: String,
    model_input: String,
    model_output_text: String,
}

#[derive(Serialize, Deserialize)]
struct SoftLine {
    start: usize,
    end: usize,
    prob: f64,
}

#[derive(Serialize, Deserialize)]
struct PredictionLine {
    id: String,
    lang: String,
    hard_labels: Vec<[usize; 2]>,
    soft_labels: Vec<SoftLine>,
    #[serde(default)]
    runs_used: usize,
}

#[derive(Deserialize)]
struct GoldLine {
    id: String,
    lang: String,
    model_output_text: String,
    #[serde(default)]
    hard_labels: Vec<[usize; 2]>,
    #[serde(default)]
    soft_labels: Vec<SoftLine>,
}

fn hard_from_pairs(pairs: Vec<[usize; 2]>) -> Vec<SpanLabel> {
    pairs.into_iter().map(|[s, e]| SpanLabel::hard(s, e)).collect()
}

fn soft_from_lines(lines: Vec<SoftLine>) -> Vec<SpanLabel> {
    lines
        .into_iter()
        .map(|l| SpanLabel::soft(l.start, l.end, l.prob))
        .collect()
}

impl From<ItemLine> for QAItem {
    fn from(line: ItemLine) -> Self {
        QAItem::new(line.id, line.lang, line.model_input, line.model_output_text)
    }
}

impl From<&PredictionRecord> for PredictionLine {
    fn from(r: &PredictionRecord) -> Self {
        PredictionLine {
            id: r.id.clone(),
            lang: r.lang.clone(),
            hard_labels: r.hard_labels.iter().map(|s| [s.start, s.end]).collect(),
            soft_labels: r
                .soft_labels
                .iter()
                .map(|s| SoftLine {
                    start: s.start,
                    end: s.end,
                    prob: s.prob.unwrap_or(0.0),
                })
                .collect(),
            runs_used: r.runs_used,
        }
    }
}

fn check_soft(spans: &[SpanLabel], line: usize) -> Result<(), ModelError> {
    for s in spans {
        match s.prob {
            Some(p) if p > 0.0 && p <= 1.0 => {}
            _ => {
                return Err(ModelError::Schema {
                    line,
                    message: format!("soft label [{}, {}) needs a probability in (0, 1]", s.start, s.end),
                })
            }
        }
    }
    Ok(())
}

fn schema_at(line: usize) -> impl Fn(ModelError) -> ModelError {
    move |e| ModelError::Schema {
        line,
        message: e.to_string(),
    }
}

/// Parses JSONL, one object per non-blank line, requiring `required` keys.
fn parse_jsonl<T: DeserializeOwned, R: BufRead>(
    reader: R,
    required: &[&str],
) -> Result<Vec<(usize, T)>, ModelError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| ModelError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let Some(obj) = value.as_object() else {
            return Err(ModelError::Schema {
                line: line_no,
                message: "expected a JSON object".into(),
            });
        };
        if let Some(key) = required.iter().find(|k| !obj.contains_key(**k)) {
            return Err(ModelError::Schema {
                line: line_no,
                message: format!("missing required key `{key}`"),
            });
        }
        let record = serde_json::from_value(value).map_err(|e| ModelError::Schema {
            line: line_no,
            message: e.to_string(),
        })?;
        out.push((line_no, record));
    }
    Ok(out)
}

pub fn parse_items<R: BufRead>(reader: R) -> Result<Vec<QAItem>, ModelError> {
    let lines: Vec<(usize, ItemLine)> =
        parse_jsonl(reader, &["id", "lang", "model_input", "model_output_text"])?;
    Ok(lines.into_iter().map(|(_, l)| l.into()).collect())
}

pub fn read_items(path: impl AsRef<Path>) -> Result<Vec<QAItem>, ModelError> {
    parse_items(BufReader::new(File::open(path)?))
}

pub fn parse_predictions<R: BufRead>(reader: R) -> Result<Vec<PredictionRecord>, ModelError> {
    let lines: Vec<(usize, PredictionLine)> =
        parse_jsonl(reader, &["id", "lang", "hard_labels", "soft_labels"])?;
    lines
        .into_iter()
        .map(|(line_no, l)| {
            let hard_labels = hard_from_pairs(l.hard_labels);
            let soft_labels = soft_from_lines(l.soft_labels);
            check_label_list(&hard_labels, None).map_err(schema_at(line_no))?;
            check_label_list(&soft_labels, None).map_err(schema_at(line_no))?;
            check_soft(&soft_labels, line_no)?;
            Ok(PredictionRecord {
                id: l.id,
                lang: l.lang,
                hard_labels,
                soft_labels,
                runs_used: l.runs_used,
            })
        })
        .collect()
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionRecord>, ModelError> {
    parse_predictions(BufReader::new(File::open(path)?))
}

/// Reads reference annotations. Overlapping soft labels are rejected later,
/// when they are expanded for scoring.
pub fn parse_gold<R: BufRead>(reader: R) -> Result<Vec<GoldRecord>, ModelError> {
    let lines: Vec<(usize, GoldLine)> = parse_jsonl(reader, &["id", "lang", "model_output_text"])?;
    lines
        .into_iter()
        .map(|(line_no, l)| {
            let hard_labels = hard_from_pairs(l.hard_labels);
            let soft_labels = soft_from_lines(l.soft_labels);
            let len = l.model_output_text.chars().count();
            for span in hard_labels.iter().chain(&soft_labels) {
                span.check_bounds(len).map_err(schema_at(line_no))?;
            }
            check_soft(&soft_labels, line_no)?;
            Ok(GoldRecord {
                id: l.id,
                lang: l.lang,
                answer: l.model_output_text,
                hard_labels,
                soft_labels,
            })
        })
        .collect()
}

pub fn read_gold(path: impl AsRef<Path>) -> Result<Vec<GoldRecord>, ModelError> {
    parse_gold(BufReader::new(File::open(path)?))
}

/// Writes one compact JSON object per line.
pub fn write_predictions_to<W: Write>(records: &[PredictionRecord], mut out: W) -> Result<(), ModelError> {
    for record in records {
        let line = serde_json::to_string(&PredictionLine::from(record)).map_err(io::Error::other)?;
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_predictions(records: &[PredictionRecord], path: impl AsRef<Path>) -> Result<(), ModelError> {
    write_predictions_to(records, BufWriter::new(File::create(path)?))
}

/// Writes items back out in the input JSONL format.
pub fn write_items_to<W: Write>(items: &[QAItem], mut out: W) -> Result<(), ModelError> {
    for item in items {
        let line = serde_json::to_string(&ItemLine {
            id: item.id.clone(),
            lang: item.lang.clone(),
            model_input: item.question.clone(),
            model_output_text: item.answer.clone(),
        })
        .map_err(io::Error::other)?;
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}
