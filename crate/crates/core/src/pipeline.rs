//! Per-item annotation: knowledge bundle, N role-conditioned runs, marker
//! parsing and alignment, vote aggregation.

use std::sync::Arc;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregate::{aggregate, to_hard_labels, to_soft_labels, AnnotationRun, RunSet, DEFAULT_RUNS, DEFAULT_THRESHOLD};
use crate::knowledge::{KnowledgeBundle, KnowledgeService};
use crate::llm::{CompletionRequest, LlmGateway, ProviderConfig, DEFAULT_MAX_TOKENS, DEFAULT_TEMPERATURE};
use crate::marker::{align, parse_marked, project_spans, validate_run, RunVerdict, DEFAULT_MIN_SIMILARITY};
use crate::model::{CharProbVector, PredictionRecord, QAItem};
use crate::prompts::{PromptError, PromptSet};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub runs_n: usize,
    pub threshold: f64,
    pub min_similarity: f64,
    pub use_roles: bool,
    pub use_external: bool,
    pub provider: ProviderConfig,
    pub model: String,
    /// Sampling temperature of the annotation runs.
    pub temperature: f64,
    pub max_tokens: u32,
    pub max_parallel_items: usize,
    pub max_parallel_runs: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            runs_n: DEFAULT_RUNS,
            threshold: DEFAULT_THRESHOLD,
            min_similarity: DEFAULT_MIN_SIMILARITY,
            use_roles: true,
            use_external: true,
            provider: ProviderConfig::mock(),
            model: "mock".into(),
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            max_parallel_items: 4,
            max_parallel_runs: 4,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: String| Err(ConfigError::Invalid(msg));
        if self.runs_n < 1 {
            return bad("runs must be at least 1".into());
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return bad(format!("threshold {} outside (0, 1]", self.threshold));
        }
        if !(0.0..=1.0).contains(&self.min_similarity) {
            return bad(format!("min_similarity {} outside [0, 1]", self.min_similarity));
        }
        if !(self.temperature >= 0.0) {
            return bad(format!("temperature {} is negative", self.temperature));
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be positive".into());
        }
        if self.max_parallel_items < 1 || self.max_parallel_runs < 1 {
            return bad("parallelism bounds must be at least 1".into());
        }
        if self.provider.requests_per_minute == 0 {
            return bad("requests_per_minute must be positive".into());
        }
        Ok(())
    }
}

const MARKED_LABEL: &str = "Marked answer:";

/// The marked answer from a reply that may also carry reasoning. Takes the
/// text after the last `Marked answer:` label, or the whole reply.
pub fn extract_marked_answer(reply: &str) -> &str {
    match reply.rfind(MARKED_LABEL) {
        Some(pos) => reply[pos + MARKED_LABEL.len()..].trim(),
        None => reply.trim(),
    }
}

/// Everything produced while annotating one item.
#[derive(Debug, Clone)]
pub struct ItemOutcome {
    pub record: PredictionRecord,
    pub runs: Vec<AnnotationRun>,
    pub prompts: Vec<String>,
    pub probs: Option<CharProbVector>,
    pub bundle: KnowledgeBundle,
}

pub struct Annotator {
    gateway: Arc<LlmGateway>,
    knowledge: Arc<KnowledgeService>,
    prompts: Arc<PromptSet>,
    config: PipelineConfig,
}

impl Annotator {
    pub fn new(
        gateway: Arc<LlmGateway>,
        knowledge: Arc<KnowledgeService>,
        prompts: Arc<PromptSet>,
        config: PipelineConfig,
    ) -> Result<Self, ConfigError> {
        config.validate()?;
        Ok(Self {
            gateway,
            knowledge,
            prompts,
            config,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    /// Round-robin role for run `i`.
    fn role_for<'a>(roles: &'a [String], run: usize) -> &'a str {
        roles.get(run % roles.len().max(1)).map(String::as_str).unwrap_or(crate::knowledge::FALLBACK_ROLE)
    }

    fn interpret(&self, item: &QAItem, reply: String, role: &str) -> AnnotationRun {
        let marked = extract_marked_answer(&reply);
        let parsed = match parse_marked(marked) {
            Ok(p) => p,
            Err(e) => {
                tracing::debug!("item {}: discarding run: {e}", item.id);
                return AnnotationRun::invalid(reply, role);
            }
        };
        let alignment = align(&parsed.clean_text, &item.answer);
        if validate_run(&alignment, self.config.min_similarity) == RunVerdict::Reject {
            tracing::debug!(
                "item {}: discarding run with similarity {:.3}",
                item.id,
                alignment.similarity
            );
            return AnnotationRun {
                similarity: alignment.similarity,
                ..AnnotationRun::invalid(reply, role)
            };
        }
        AnnotationRun {
            spans: project_spans(&parsed, &alignment),
            similarity: alignment.similarity,
            valid: true,
            raw: reply,
            role: role.to_owned(),
        }
    }

    pub async fn annotate_item_detailed(&self, item: &QAItem) -> Result<ItemOutcome, ConfigError> {
        let bundle = self
            .knowledge
            .bundle(item, self.config.use_roles, self.config.use_external)
            .await;
        let knowledge = bundle.refined_external.as_deref();

        let mut prompts = Vec::with_capacity(self.config.runs_n);
        let mut roles = Vec::with_capacity(self.config.runs_n);
        for run in 0..self.config.runs_n {
            let role = Self::role_for(&bundle.roles, run);
            prompts.push(self.prompts.build_main_prompt(item, role, knowledge)?);
            roles.push(role.to_owned());
        }

        let runs: Vec<AnnotationRun> = stream::iter(prompts.iter().zip(&roles).enumerate())
            .map(|(run, (prompt, role))| async move {
                let req = CompletionRequest::new(&self.config.model, prompt.as_str())
                    .with_temperature(self.config.temperature)
                    .with_max_tokens(self.config.max_tokens)
                    .with_seed_tag(format!("run-{run}"));
                match self.gateway.complete(&req).await {
                    Ok(reply) => self.interpret(item, reply, role),
                    Err(e) => {
                        tracing::warn!("item {} run {run}: {e}", item.id);
                        AnnotationRun::invalid(String::new(), role.as_str())
                    }
                }
            })
            .buffered(self.config.max_parallel_runs)
            .collect()
            .await;

        let set = RunSet {
            item_id: item.id.clone(),
            runs,
            answer_len: item.answer_len(),
        };
        let valid = set.valid_runs().count();
        let probs = if item.answer.is_empty() {
            tracing::warn!("item {}: empty answer, nothing to annotate", item.id);
            None
        } else {
            match aggregate::<f64>(&set) {
                Ok(p) => Some(p),
                Err(e) => {
                    tracing::warn!("{e}; emitting empty labels");
                    None
                }
            }
        };
        let record = match &probs {
            Some(p) => PredictionRecord {
                id: item.id.clone(),
                lang: item.lang.clone(),
                hard_labels: to_hard_labels(p, self.config.threshold),
                soft_labels: to_soft_labels(p),
                runs_used: valid,
            },
            None => PredictionRecord {
                id: item.id.clone(),
                lang: item.lang.clone(),
                hard_labels: Vec::new(),
                soft_labels: Vec::new(),
                runs_used: 0,
            },
        };
        Ok(ItemOutcome {
            record,
            runs: set.runs,
            prompts,
            probs,
            bundle,
        })
    }

    pub async fn annotate_item(&self, item: &QAItem) -> Result<PredictionRecord, ConfigError> {
        Ok(self.annotate_item_detailed(item).await?.record)
    }

    /// Annotates items concurrently; results come back in input order.
    pub async fn annotate_dataset_detailed(&self, items: &[QAItem]) -> Result<Vec<ItemOutcome>, ConfigError> {
        stream::iter(items)
            .map(|item| self.annotate_item_detailed(item))
            .buffered(self.config.max_parallel_items)
            .collect::<Vec<_>>()
            .await
            .into_iter()
            .collect()
    }

    pub async fn annotate_dataset(&self, items: &[QAItem]) -> Result<Vec<PredictionRecord>, ConfigError> {
        Ok(self
            .annotate_dataset_detailed(items)
            .await?
            .into_iter()
            .map(|o| o.record)
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn marked_answer_follows_last_label() {
        let reply = "Reference answer: gold\nExplanation: x\nMarked answer: won a ⟨⟨silver⟩⟩ medal\n";
        assert_eq!(extract_marked_answer(reply), "won a ⟨⟨silver⟩⟩ medal");
        assert_eq!(extract_marked_answer("  plain  "), "plain");
        assert_eq!(extract_marked_answer("Marked answer:\nnext line"), "next line");
    }

    #[test]
    fn config_validation() {
        assert!(PipelineConfig::default().validate().is_ok());
        let bad = PipelineConfig {
            runs_n: 0,
            ..PipelineConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = PipelineConfig {
            threshold: 0.0,
            ..PipelineConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = PipelineConfig {
            max_parallel_runs: 0,
            ..PipelineConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn roles_rotate_round_robin() {
        let roles: Vec<String> = ["a", "b", "c", "d", "e"].iter().map(|s| s.to_string()).collect();
        let picked: Vec<&str> = (0..12).map(|i| Annotator::role_for(&roles, i)).collect();
        assert_eq!(picked, ["a", "b", "c", "d", "e", "a", "b", "c", "d", "e", "a", "b"]);
        assert_eq!(Annotator::role_for(&[], 3), crate::knowledge::FALLBACK_ROLE);
    }

    #[test]
    fn config_reads_partial_toml_like_json() {
        let cfg: PipelineConfig = serde_json::from_str(r#"{"runs_n": 4, "use_external": false}"#).unwrap();
        assert_eq!(cfg.runs_n, 4);
        assert!(!cfg.use_external);
        assert_eq!(cfg.threshold, 0.5);
    }
}
