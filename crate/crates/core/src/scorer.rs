//! Task metrics: character IoU over hard labels and Spearman correlation over
//! per-character soft probabilities.
//!
//! Empty-case conventions live here and nowhere else:
//! - IoU of two empty character sets is 1.0.
//! - Spearman of two constant vectors is 1.0, of exactly one constant vector 0.0.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{spans_to_charset, CharProbVector, GoldRecord, ModelError, PredictionRecord, SpanLabel};
use crate::scalar::Probability;

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error(transparent)]
    Offset(#[from] ModelError),
    #[error("vectors differ in length: {0} vs {1}")]
    Shape(usize, usize),
    #[error("spearman needs at least one value")]
    Empty,
    #[error("soft labels [{0}, {1}) and [{2}, {3}) overlap")]
    Overlap(usize, usize, usize, usize),
    #[error("soft label [{0}, {1}) has no probability")]
    MissingProbability(usize, usize),
    #[error("item {id}: {source}")]
    Item {
        id: String,
        #[source]
        source: Box<ScoreError>,
    },
    #[error("{}", describe_ids(.missing_gold, .missing_pred, .duplicates))]
    Ids {
        missing_gold: Vec<String>,
        missing_pred: Vec<String>,
        duplicates: Vec<String>,
    },
}

fn describe_ids(missing_gold: &[String], missing_pred: &[String], duplicates: &[String]) -> String {
    let mut parts = Vec::new();
    if !missing_gold.is_empty() {
        parts.push(format!("predictions without gold: {}", missing_gold.join(", ")));
    }
    if !missing_pred.is_empty() {
        parts.push(format!("gold items without prediction: {}", missing_pred.join(", ")));
    }
    if !duplicates.is_empty() {
        parts.push(format!("duplicate ids: {}", duplicates.join(", ")));
    }
    parts.join("; ")
}

fn cast<T: Float>(n: usize) -> T {
    T::from(n).expect("count representable as float")
}

/// `|pred ∩ gold| / |pred ∪ gold|` over covered characters.
pub fn iou<T: Float, P>(pred: &[SpanLabel<P>], gold: &[SpanLabel<P>], len: usize) -> Result<T, ScoreError> {
    let pred = spans_to_charset(pred, len)?;
    let gold = spans_to_charset(gold, len)?;
    let union = pred.union(&gold).count();
    if union == 0 {
        return Ok(T::one());
    }
    let inter = pred.intersection(&gold).count();
    Ok(cast::<T>(inter) / cast::<T>(union))
}

fn cmp<T: Float>(a: &T, b: &T) -> Ordering {
    a.partial_cmp(b).unwrap_or(Ordering::Equal)
}

/// 1-based ranks, tied values sharing the mean of their positions.
pub fn average_ranks<T: Float>(values: &[T]) -> Vec<T> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| cmp(&values[a], &values[b]));
    let mut ranks = vec![T::zero(); values.len()];
    let two = T::one() + T::one();
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1 ..= end
        let rank = cast::<T>(start + 1 + end) / two;
        for &idx in &order[start..end] {
            ranks[idx] = rank;
        }
        start = end;
    }
    ranks
}

fn pearson<T: Float>(x: &[T], y: &[T]) -> T {
    let n = cast::<T>(x.len());
    let mean_x = x.iter().fold(T::zero(), |acc, &v| acc + v) / n;
    let mean_y = y.iter().fold(T::zero(), |acc, &v| acc + v) / n;
    let (mut cov, mut var_x, mut var_y) = (T::zero(), T::zero(), T::zero());
    for (&a, &b) in x.iter().zip(y) {
        let dx = a - mean_x;
        let dy = b - mean_y;
        cov = cov + dx * dy;
        var_x = var_x + dx * dx;
        var_y = var_y + dy * dy;
    }
    let r = cov / (var_x * var_y).sqrt();
    r.max(-T::one()).min(T::one())
}

fn is_constant<T: Float>(values: &[T]) -> bool {
    values.windows(2).all(|w| w[0] == w[1])
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman<T: Float>(pred: &[T], gold: &[T]) -> Result<T, ScoreError> {
    if pred.len() != gold.len() {
        return Err(ScoreError::Shape(pred.len(), gold.len()));
    }
    if pred.is_empty() {
        return Err(ScoreError::Empty);
    }
    match (is_constant(pred), is_constant(gold)) {
        (true, true) => return Ok(T::one()),
        (true, false) | (false, true) => return Ok(T::zero()),
        (false, false) => {}
    }
    Ok(pearson(&average_ranks(pred), &average_ranks(gold)))
}

/// Soft labels to a per-character vector; uncovered characters get 0.
pub fn expand_soft<P: Probability>(labels: &[SpanLabel<P>], len: usize) -> Result<CharProbVector<P>, ScoreError> {
    let mut sorted: Vec<&SpanLabel<P>> = labels.iter().collect();
    sorted.sort_by_key(|s| (s.start, s.end));
    for pair in sorted.windows(2) {
        if pair[1].start < pair[0].end {
            return Err(ScoreError::Overlap(pair[0].start, pair[0].end, pair[1].start, pair[1].end));
        }
    }
    let mut probs = vec![P::zero(); len];
    for span in sorted {
        span.check_bounds(len)?;
        let p = span
            .prob
            .ok_or(ScoreError::MissingProbability(span.start, span.end))?;
        probs[span.start..span.end].fill(p);
    }
    Ok(CharProbVector::new(probs)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemScore {
    pub id: String,
    pub lang: String,
    pub iou: f64,
    pub cor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean_iou: f64,
    pub mean_cor: f64,
    pub n: usize,
}

impl Summary {
    fn of<'a>(scores: impl IntoIterator<Item = &'a ItemScore>) -> Self {
        let (mut iou, mut cor, mut n) = (0.0, 0.0, 0usize);
        for s in scores {
            iou += s.iou;
            cor += s.cor;
            n += 1;
        }
        if n == 0 {
            return Summary {
                mean_iou: 0.0,
                mean_cor: 0.0,
                n,
            };
        }
        Summary {
            mean_iou: iou / n as f64,
            mean_cor: cor / n as f64,
            n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_item: Vec<ItemScore>,
    pub per_lang: BTreeMap<String, Summary>,
    pub overall: Summary,
}

impl EvalReport {
    /// Aligned plain-text table, one row per language plus an overall row.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<8} {:>8} {:>8} {:>6}", "Lang", "IoU", "Cor", "N");
        for (lang, s) in &self.per_lang {
            let _ = writeln!(out, "{:<8} {:>8.4} {:>8.4} {:>6}", lang, s.mean_iou, s.mean_cor, s.n);
        }
        let o = &self.overall;
        let _ = writeln!(out, "{:<8} {:>8.4} {:>8.4} {:>6}", "ALL", o.mean_iou, o.mean_cor, o.n);
        out
    }
}

pub fn score_item(pred: &PredictionRecord, gold: &GoldRecord) -> Result<ItemScore, ScoreError> {
    let len = gold.answer_len();
    let wrap = |source: ScoreError| ScoreError::Item {
        id: gold.id.clone(),
        source: Box::new(source),
    };
    let iou = iou::<f64, f64>(&pred.hard_labels, &gold.hard_labels, len).map_err(wrap)?;
    let pred_probs = expand_soft(&pred.soft_labels, len).map_err(wrap)?;
    let gold_probs = expand_soft(&gold.soft_labels, len).map_err(wrap)?;
    let cor = if len == 0 {
        1.0
    } else {
        spearman(pred_probs.as_slice(), gold_probs.as_slice()).map_err(wrap)?
    };
    Ok(ItemScore {
        id: gold.id.clone(),
        lang: gold.lang.clone(),
        iou,
        cor,
    })
}

fn duplicates<'a>(ids: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut dups: Vec<String> = ids.filter(|id| !seen.insert(*id)).map(str::to_owned).collect();
    dups.sort();
    dups.dedup();
    dups
}

/// Scores predictions against gold, one row per gold item in gold order.
pub fn evaluate(preds: &[PredictionRecord], golds: &[GoldRecord]) -> Result<EvalReport, ScoreError> {
    let by_id: HashMap<&str, &PredictionRecord> = preds.iter().map(|p| (p.id.as_str(), p)).collect();
    let gold_ids: HashSet<&str> = golds.iter().map(|g| g.id.as_str()).collect();
    let missing_gold: Vec<String> = preds
        .iter()
        .filter(|p| !gold_ids.contains(p.id.as_str()))
        .map(|p| p.id.clone())
        .collect();
    let missing_pred: Vec<String> = golds
        .iter()
        .filter(|g| !by_id.contains_key(g.id.as_str()))
        .map(|g| g.id.clone())
        .collect();
    let mut dups = duplicates(preds.iter().map(|p| p.id.as_str()));
    dups.extend(duplicates(golds.iter().map(|g| g.id.as_str())));
    if !missing_gold.is_empty() || !missing_pred.is_empty() || !dups.is_empty() {
        return Err(ScoreError::Ids {
            missing_gold,
            missing_pred,
            duplicates: dups,
        });
    }

    let per_item = golds
        .iter()
        .map(|gold| score_item(by_id[gold.id.as_str()], gold))
        .collect::<Result<Vec<_>, _>>()?;
    let mut langs: BTreeMap<String, Vec<&ItemScore>> = BTreeMap::new();
    for score in &per_item {
        langs.entry(score.lang.clone()).or_default().push(score);
    }
    let per_lang = langs
        .into_iter()
        .map(|(lang, scores)| (lang, Summary::of(scores)))
        .collect();
    let overall = Summary::of(&per_item);
    Ok(EvalReport {
        per_item,
        per_lang,
        overall,
    })
}
