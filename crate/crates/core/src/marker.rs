//! Parsing of in-place hallucination markers and projection of the marked
//! spans back onto the original answer.
//!
//! Annotators are asked to return the answer rewritten with `⟨⟨…⟩⟩` around
//! hallucinated terms. The echoed text drifts from the original now and then
//! (typos fixed, words dropped), so marked spans are projected through a
//! global character alignment rather than by assuming identical offsets.

use thiserror::Error;

use crate::model::SpanLabel;

/// Delimiter alphabets in priority order.
pub const DELIMITERS: [(&str, &str); 3] = [("⟨⟨", "⟩⟩"), ("«", "»"), ("<<", ">>")];

pub const DEFAULT_MIN_SIMILARITY: f64 = 0.7;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MarkerError {
    #[error("closing `{delimiter}` at char {at} has no matching opener")]
    UnmatchedClose { delimiter: &'static str, at: usize },
    #[error("opening `{delimiter}` at char {at} is never closed")]
    UnclosedOpen { delimiter: &'static str, at: usize },
    #[error("nested `{delimiter}` at char {at}")]
    Nested { delimiter: &'static str, at: usize },
}

/// The marked answer with delimiters stripped.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedMarking {
    pub clean_text: String,
    /// Spans over `clean_text`, sorted and non-overlapping.
    pub marked_spans: Vec<SpanLabel>,
}

fn pick_alphabet(marked: &str) -> Option<(&'static str, &'static str)> {
    DELIMITERS
        .iter()
        .copied()
        .find(|(open, close)| marked.contains(open) || marked.contains(close))
}

pub fn parse_marked(marked: &str) -> Result<ParsedMarking, MarkerError> {
    let Some((open, close)) = pick_alphabet(marked) else {
        return Ok(ParsedMarking {
            clean_text: marked.to_owned(),
            marked_spans: Vec::new(),
        });
    };

    let mut clean_text = String::with_capacity(marked.len());
    let mut marked_spans = Vec::new();
    let mut clean_len = 0usize;
    // (char offset in the marked text, clean offset) of the open delimiter
    let mut opened: Option<(usize, usize)> = None;
    let mut rest = marked;
    let mut raw_pos = 0usize;

    while let Some(c) = rest.chars().next() {
        if rest.starts_with(open) {
            if opened.is_some() {
                return Err(MarkerError::Nested {
                    delimiter: open,
                    at: raw_pos,
                });
            }
            opened = Some((raw_pos, clean_len));
            rest = &rest[open.len()..];
            raw_pos += open.chars().count();
        } else if rest.starts_with(close) {
            let Some((_, start)) = opened.take() else {
                return Err(MarkerError::UnmatchedClose {
                    delimiter: close,
                    at: raw_pos,
                });
            };
            if clean_len > start {
                marked_spans.push(SpanLabel::hard(start, clean_len));
            }
            rest = &rest[close.len()..];
            raw_pos += close.chars().count();
        } else {
            clean_text.push(c);
            clean_len += 1;
            rest = &rest[c.len_utf8()..];
            raw_pos += 1;
        }
    }
    if let Some((at, _)) = opened {
        return Err(MarkerError::UnclosedOpen { delimiter: open, at });
    }
    Ok(ParsedMarking {
        clean_text,
        marked_spans,
    })
}

/// Wraps each span of `text` in the given delimiters. Spans must be sorted,
/// non-overlapping and in range.
pub fn insert_markers<P>(text: &str, spans: &[SpanLabel<P>], open: &str, close: &str) -> String {
    let mut out = String::with_capacity(text.len() + spans.len() * (open.len() + close.len()));
    let mut spans = spans.iter().peekable();
    let mut inside: Option<usize> = None;
    for (i, c) in text.chars().enumerate() {
        if inside == Some(i) {
            out.push_str(close);
            inside = None;
        }
        if inside.is_none() {
            if let Some(span) = spans.next_if(|s| s.start == i) {
                out.push_str(open);
                inside = Some(span.end);
            }
        }
        out.push(c);
    }
    if inside.is_some() {
        out.push_str(close);
    }
    out
}

/// Character alignment of an annotator's cleaned text against the original.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentResult {
    /// For each char of the clean text, the aligned original index or `None`
    /// for a gap.
    pub mapping: Vec<Option<usize>>,
    /// Number of aligned pairs with identical characters.
    pub matches: usize,
    /// `matches / max(len(clean), len(original))`, 1.0 for two empty texts.
    pub similarity: f64,
}

/// Global alignment maximising the number of identical aligned characters
/// (match 1, mismatch 0, gap 0).
///
/// Traceback runs from the end and prefers, in order: match, substitution,
/// a gap in the original (clean char unmapped), a gap in the clean text.
pub fn align(clean: &str, original: &str) -> AlignmentResult {
    let a: Vec<char> = clean.chars().collect();
    let b: Vec<char> = original.chars().collect();
    let (m, n) = (a.len(), b.len());
    let width = n + 1;
    let mut score = vec![0u32; (m + 1) * width];
    for i in 1..=m {
        for j in 1..=n {
            let diag = score[(i - 1) * width + j - 1] + u32::from(a[i - 1] == b[j - 1]);
            let up = score[(i - 1) * width + j];
            let left = score[i * width + j - 1];
            score[i * width + j] = diag.max(up).max(left);
        }
    }

    let mut mapping = vec![None; m];
    let (mut i, mut j) = (m, n);
    while i > 0 && j > 0 {
        let here = score[i * width + j];
        let gain = u32::from(a[i - 1] == b[j - 1]);
        if here == score[(i - 1) * width + j - 1] + gain {
            mapping[i - 1] = Some(j - 1);
            i -= 1;
            j -= 1;
        } else if here == score[(i - 1) * width + j] {
            i -= 1;
        } else {
            j -= 1;
        }
    }

    let matches = score[m * width + n] as usize;
    let longest = m.max(n);
    let similarity = if longest == 0 {
        1.0
    } else {
        matches as f64 / longest as f64
    };
    AlignmentResult {
        mapping,
        matches,
        similarity,
    }
}

/// Maps spans over the clean text onto original-answer offsets.
///
/// A span becomes `[min mapped, max mapped + 1)` over its non-gap chars;
/// fully unmapped spans vanish. Overlapping results are merged.
pub fn project_spans(parsed: &ParsedMarking, alignment: &AlignmentResult) -> Vec<SpanLabel> {
    let mut projected: Vec<(usize, usize)> = parsed
        .marked_spans
        .iter()
        .filter_map(|span| {
            let mut mapped = alignment
                .mapping
                .get(span.start..span.end.min(alignment.mapping.len()))?
                .iter()
                .flatten()
                .copied();
            let first = mapped.next()?;
            let last = mapped.last().unwrap_or(first);
            Some((first, last + 1))
        })
        .collect();
    projected.sort_unstable();

    let mut out: Vec<SpanLabel> = Vec::with_capacity(projected.len());
    for (start, end) in projected {
        match out.last_mut() {
            Some(last) if start < last.end => last.end = last.end.max(end),
            _ => out.push(SpanLabel::hard(start, end)),
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunVerdict {
    Accept,
    Reject,
}

/// Accepts a run iff its alignment similarity reaches `min_similarity`.
pub fn validate_run(alignment: &AlignmentResult, min_similarity: f64) -> RunVerdict {
    if alignment.similarity >= min_similarity {
        RunVerdict::Accept
    } else {
        RunVerdict::Reject
    }
}
