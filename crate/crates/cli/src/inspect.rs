use anyhow::{anyhow, Context};
use halluspan::marker::insert_markers;
use halluspan::model::{normalize_spans, read_gold, read_items, read_predictions};
use halluspan::{iou, SpanLabel};

use crate::{Failure, InspectArgs, EXIT_IDS};

pub fn render(answer: &str, spans: &[SpanLabel]) -> String {
    insert_markers(answer, &normalize_spans(spans), "⟨⟨", "⟩⟩")
}

fn soft_summary(spans: &[SpanLabel]) -> String {
    spans
        .iter()
        .map(|s| format!("[{},{}) {:.2}", s.start, s.end, s.prob.unwrap_or(0.0)))
        .collect::<Vec<_>>()
        .join("  ")
}

pub fn run(args: InspectArgs) -> Result<u8, Failure> {
    let preds = read_predictions(&args.pred).with_context(|| format!("reading {}", args.pred.display()))?;
    let Some(pred) = preds.iter().find(|p| p.id == args.id) else {
        return Err(Failure::new(EXIT_IDS, anyhow!("id `{}` not in {}", args.id, args.pred.display())));
    };

    let gold = match &args.gold {
        Some(path) => {
            let golds = read_gold(path).with_context(|| format!("reading {}", path.display()))?;
            match golds.into_iter().find(|g| g.id == args.id) {
                Some(g) => Some(g),
                None => return Err(Failure::new(EXIT_IDS, anyhow!("id `{}` not in {}", args.id, path.display()))),
            }
        }
        None => None,
    };
    let answer = match (&gold, &args.input) {
        (Some(g), _) => g.answer.clone(),
        (None, Some(path)) => {
            let items = read_items(path).with_context(|| format!("reading {}", path.display()))?;
            match items.into_iter().find(|i| i.id == args.id) {
                Some(item) => item.answer,
                None => return Err(Failure::new(EXIT_IDS, anyhow!("id `{}` not in {}", args.id, path.display()))),
            }
        }
        (None, None) => return Err(anyhow!("inspect needs --gold or --input for the answer text").into()),
    };
    let len = answer.chars().count();
    for span in pred.hard_labels.iter().chain(&pred.soft_labels) {
        span.check_bounds(len)
            .map_err(|e| anyhow!("prediction for `{}` does not fit the answer: {e}", args.id))?;
    }

    println!("{} ({}), runs used {}", pred.id, pred.lang, pred.runs_used);
    println!("pred: {}", render(&answer, &pred.hard_labels));
    if !pred.soft_labels.is_empty() {
        println!("soft: {}", soft_summary(&pred.soft_labels));
    }
    if let Some(g) = &gold {
        println!("gold: {}", render(&answer, &g.hard_labels));
        let score: f64 = iou(&pred.hard_labels, &g.hard_labels, len).map_err(anyhow::Error::from)?;
        println!("IoU: {score:.4}");
    }
    Ok(0)
}
