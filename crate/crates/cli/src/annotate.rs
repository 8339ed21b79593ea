use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use anyhow::Context;
use async_trait::async_trait;
use futures::stream::{self, StreamExt};
use halluspan::knowledge::{MockWiki, MockWikiScript, WikiError, WikiHit, WikiSource, WikipediaClient};
use halluspan::knowledge::wikipedia::DEFAULT_BASE;
use halluspan::llm::{Cache, ChatProvider, LlmError, MockProvider, MockScript, OpenAiProvider};
use halluspan::model::{read_items, write_predictions};
use halluspan::prompts::PromptSet;
use halluspan::{Annotator, KnowledgeService, LlmGateway, PredictionRecord};
use serde::Deserialize;

use crate::config::Settings;
use crate::{AnnotateArgs, Failure, EXIT_MISSING_KEY, EXIT_PARTIAL};

/// Mock provider script plus an optional `wikipedia` section.
#[derive(Debug, Default, Deserialize)]
struct MockBundle {
    #[serde(flatten)]
    provider: MockScript,
    #[serde(default)]
    wikipedia: MockWikiScript,
}

fn load_mock_bundle(path: &Path) -> anyhow::Result<MockBundle> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Counts lookups so the summary can report Wikipedia traffic.
struct CountingWiki {
    inner: Box<dyn WikiSource>,
    calls: AtomicUsize,
}

#[async_trait]
impl WikiSource for CountingWiki {
    async fn search(&self, lang: &str, query: &str) -> Result<Option<WikiHit>, WikiError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.search(lang, query).await
    }

    async fn extract(&self, lang: &str, title: &str) -> Result<String, WikiError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.extract(lang, title).await
    }
}

fn settings_from(args: &AnnotateArgs) -> anyhow::Result<Settings> {
    let mut s = match &args.config {
        Some(path) => Settings::load(path)?,
        None => Settings::default(),
    };
    if let Some(name) = &args.provider {
        s.set_provider(name)?;
    }
    if let Some(model) = &args.model {
        s.set_model(model);
    }
    let p = &mut s.pipeline;
    if let Some(n) = args.runs {
        p.runs_n = n;
    }
    if let Some(t) = args.threshold {
        p.threshold = t;
    }
    if let Some(t) = args.temperature {
        p.temperature = t;
    }
    if let Some(m) = args.min_similarity {
        p.min_similarity = m;
    }
    if args.no_roles {
        p.use_roles = false;
    }
    if args.no_external {
        p.use_external = false;
    }
    if let Some(n) = args.max_parallel {
        p.max_parallel_items = n;
        p.max_parallel_runs = n;
    }
    if args.cache_dir.is_some() {
        s.cache_dir.clone_from(&args.cache_dir);
    }
    if args.prompts_dir.is_some() {
        s.prompts_dir.clone_from(&args.prompts_dir);
    }
    if args.mock_script.is_some() {
        s.mock_script.clone_from(&args.mock_script);
    }
    if args.wiki_base.is_some() {
        s.wiki_base.clone_from(&args.wiki_base);
    }
    s.validate()?;
    Ok(s)
}

pub async fn run(args: AnnotateArgs) -> Result<u8, Failure> {
    let settings = settings_from(&args)?;
    let config = &settings.pipeline;

    let bundle = match &settings.mock_script {
        Some(path) => load_mock_bundle(path)?,
        None => MockBundle::default(),
    };
    let provider: Arc<dyn ChatProvider> = if config.provider.is_mock() {
        Arc::new(MockProvider::new(bundle.provider))
    } else {
        match OpenAiProvider::from_config(&config.provider) {
            Ok(p) => Arc::new(p),
            Err(e @ LlmError::MissingKey(_)) => return Err(Failure::new(EXIT_MISSING_KEY, e)),
            Err(e) => return Err(Failure::new(1, e)),
        }
    };
    let wiki_inner: Box<dyn WikiSource> = match &settings.wiki_base {
        Some(base) => Box::new(WikipediaClient::new(base.clone())),
        None if config.provider.is_mock() => Box::new(MockWiki::new(bundle.wikipedia)),
        None => Box::new(WikipediaClient::new(DEFAULT_BASE)),
    };
    let wiki = Arc::new(CountingWiki {
        inner: wiki_inner,
        calls: AtomicUsize::new(0),
    });
    let prompts = Arc::new(match &settings.prompts_dir {
        Some(dir) => PromptSet::load_dir(dir).map_err(anyhow::Error::from)?,
        None => PromptSet::builtin(),
    });
    let cache = Arc::new(match &settings.cache_dir {
        Some(dir) => Cache::on_disk(dir).with_context(|| format!("cache directory {}", dir.display()))?,
        None => Cache::in_memory(),
    });

    let items = read_items(&args.input).with_context(|| format!("reading {}", args.input.display()))?;

    let gateway = Arc::new(LlmGateway::new(provider, config.provider.clone(), cache));
    let knowledge = Arc::new(KnowledgeService::new(gateway.clone(), wiki.clone(), prompts.clone(), &config.model));
    let annotator = Annotator::new(gateway.clone(), knowledge, prompts, config.clone()).map_err(anyhow::Error::from)?;

    println!(
        "annotating {} items with {} ({}), {} runs each",
        items.len(),
        config.model,
        config.provider.name,
        config.runs_n
    );
    let total = items.len();
    let mut records: Vec<PredictionRecord> = Vec::with_capacity(total);
    let mut failed: Vec<String> = Vec::new();
    let mut outcomes = stream::iter(&items)
        .map(|item| annotator.annotate_item(item))
        .buffered(config.max_parallel_items);
    while let Some(outcome) = outcomes.next().await {
        let record = outcome.map_err(anyhow::Error::from)?;
        let item = &items[records.len()];
        let unannotated = record.runs_used == 0 && !item.answer.is_empty();
        println!(
            "[{}/{}] {} ({}): runs used {}/{}, {} hard spans{}",
            records.len() + 1,
            total,
            record.id,
            record.lang,
            record.runs_used,
            config.runs_n,
            record.hard_labels.len(),
            if unannotated { ", UNANNOTATED" } else { "" }
        );
        if unannotated {
            failed.push(record.id.clone());
        }
        records.push(record);
    }
    drop(outcomes);

    write_predictions(&records, &args.output).with_context(|| format!("writing {}", args.output.display()))?;

    let mean_runs = if records.is_empty() {
        0.0
    } else {
        records.iter().map(|r| r.runs_used).sum::<usize>() as f64 / records.len() as f64
    };
    println!("items: {total}");
    println!("mean runs used: {mean_runs:.2}");
    println!("failures: {}", failed.len());
    println!("provider calls: {}", gateway.provider_calls());
    println!("wikipedia calls: {}", wiki.calls.load(Ordering::SeqCst));
    println!("wrote {}", args.output.display());
    if failed.is_empty() {
        Ok(0)
    } else {
        eprintln!("unannotated items: {}", failed.join(", "));
        Ok(EXIT_PARTIAL)
    }
}
