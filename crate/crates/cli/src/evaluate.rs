use std::path::PathBuf;

use anyhow::Context;
use halluspan::model::{read_gold, read_predictions};
use halluspan::scorer::ScoreError;
use halluspan::evaluate;

use crate::{EvaluateArgs, Failure, EXIT_IDS};

fn default_report(pred: &std::path::Path) -> PathBuf {
    let stem = pred.file_stem().and_then(|s| s.to_str()).unwrap_or("predictions");
    pred.with_file_name(format!("{stem}.report.json"))
}

pub fn run(args: EvaluateArgs) -> Result<u8, Failure> {
    let preds = read_predictions(&args.pred).with_context(|| format!("reading {}", args.pred.display()))?;
    let golds = read_gold(&args.gold).with_context(|| format!("reading {}", args.gold.display()))?;
    let report = match evaluate(&preds, &golds) {
        Ok(r) => r,
        Err(e @ ScoreError::Ids { .. }) => return Err(Failure::new(EXIT_IDS, e)),
        Err(e) => return Err(Failure::from(anyhow::Error::from(e))),
    };
    print!("{}", report.render_table());

    let path = args.report.unwrap_or_else(|| default_report(&args.pred));
    let json = serde_json::to_string_pretty(&report).context("serializing report")?;
    std::fs::write(&path, json + "\n").with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(0)
}
