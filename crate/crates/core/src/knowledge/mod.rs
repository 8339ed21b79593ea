//! Per-item knowledge: expert roles for the annotation runs and refined
//! Wikipedia evidence.
//!
//! Nothing here aborts an item. Role assignment falls back to a single
//! generic role, and any failure along keyword → search → summary leaves the
//! bundle without external knowledge.

pub mod wikipedia;

use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::llm::{Cache, CompletionRequest, LlmError, LlmGateway};
use crate::model::QAItem;
use crate::prompts::{PromptError, PromptSet};
pub use wikipedia::{MockPage, MockWiki, MockWikiScript, WikiError, WikiHit, WikiSource, WikipediaClient};

pub const FALLBACK_ROLE: &str = "fact-checking expert";
pub const MAX_ROLES: usize = 5;
pub const DEFAULT_MAX_EXTRACT_CHARS: usize = 8000;
pub const SUMMARY_FALLBACK_CHARS: usize = 2000;
/// Re-asks after a malformed JSON reply.
pub const PARSE_RETRIES: usize = 2;
const FALLBACK_LANG: &str = "EN";

#[derive(Debug, Error)]
pub enum KnowledgeError {
    #[error("no `Keyword:` line in reply")]
    NoKeyword,
    #[error("no wikipedia result for {0:?}")]
    NoResults(String),
    #[error(transparent)]
    Wiki(#[from] WikiError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct KnowledgeBundle {
    pub roles: Vec<String>,
    pub keyword: Option<String>,
    pub raw_external: Option<String>,
    pub refined_external: Option<String>,
    /// Title and URL of the page the evidence came from.
    pub provenance: Option<WikiHit>,
}

/// Raw page text plus where it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WikiText {
    pub hit: WikiHit,
    pub lang: String,
    pub text: String,
}

fn truncate_chars(text: &str, max: usize) -> &str {
    match text.char_indices().nth(max) {
        Some((byte, _)) => &text[..byte],
        None => text,
    }
}

/// The outermost `{…}` object in a reply, tolerating code fences and chatter.
fn json_object(reply: &str) -> Option<serde_json::Map<String, Value>> {
    let start = reply.find('{')?;
    let end = reply.rfind('}')?;
    if end < start {
        return None;
    }
    match serde_json::from_str(&reply[start..=end]).ok()? {
        Value::Object(map) => Some(map),
        _ => None,
    }
}

fn field<'a>(map: &'a serde_json::Map<String, Value>, key: &str) -> Option<&'a Value> {
    map.get(key).or_else(|| {
        map.iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(key))
            .map(|(_, v)| v)
    })
}

/// Up to five distinct, non-empty identities from a role-assignment reply.
pub fn parse_roles(reply: &str) -> Option<Vec<String>> {
    let map = json_object(reply)?;
    let raw: Vec<String> = match field(&map, "Identities")? {
        Value::Array(items) => items
            .iter()
            .filter_map(|v| match v {
                Value::String(s) => Some(s.clone()),
                Value::Object(o) => o.values().find_map(|x| x.as_str().map(str::to_owned)),
                _ => None,
            })
            .collect(),
        Value::String(s) => s.split([',', ';', '\n']).map(str::to_owned).collect(),
        _ => return None,
    };
    let mut roles: Vec<String> = Vec::new();
    for role in raw {
        let role = role.trim().to_owned();
        if !role.is_empty() && !roles.iter().any(|r| r.eq_ignore_ascii_case(&role)) {
            roles.push(role);
        }
    }
    roles.truncate(MAX_ROLES);
    (!roles.is_empty()).then_some(roles)
}

/// The value of the first `Keyword:` line.
pub fn parse_keyword(reply: &str) -> Option<String> {
    reply.lines().find_map(|line| {
        let rest = line.trim_start().strip_prefix("Keyword:")?;
        let keyword = rest.trim();
        (!keyword.is_empty()).then(|| keyword.to_owned())
    })
}

pub fn parse_summary(reply: &str) -> Option<String> {
    let map = json_object(reply)?;
    let text = match field(&map, "Knowledge")? {
        Value::String(s) => s.trim().to_owned(),
        Value::Null => return None,
        other => other.to_string(),
    };
    (!text.is_empty()).then_some(text)
}

#[derive(Serialize)]
struct OpInputs<'a> {
    item: &'a str,
    model: &'a str,
    input: Value,
}

pub struct KnowledgeService {
    gateway: Arc<LlmGateway>,
    wiki: Arc<dyn WikiSource>,
    prompts: Arc<PromptSet>,
    model: String,
    max_extract_chars: usize,
}

impl KnowledgeService {
    pub fn new(
        gateway: Arc<LlmGateway>,
        wiki: Arc<dyn WikiSource>,
        prompts: Arc<PromptSet>,
        model: impl Into<String>,
    ) -> Self {
        Self {
            gateway,
            wiki,
            prompts,
            model: model.into(),
            max_extract_chars: DEFAULT_MAX_EXTRACT_CHARS,
        }
    }

    pub fn with_max_extract_chars(mut self, max: usize) -> Self {
        self.max_extract_chars = max;
        self
    }

    fn cache(&self) -> &Cache {
        self.gateway.cache()
    }

    fn key(&self, op: &str, item: &QAItem, input: Value) -> String {
        Cache::key(
            op,
            &OpInputs {
                item: &item.id,
                model: &self.model,
                input,
            },
        )
    }

    fn cached<T: DeserializeOwned>(&self, key: &str) -> Option<T> {
        self.cache().get(key)
    }

    fn store<T: Serialize>(&self, key: &str, value: &T) {
        if let Err(e) = self.cache().put(key, value) {
            tracing::warn!("knowledge cache write failed: {e}");
        }
    }

    fn request(&self, prompt: String, tag: String) -> CompletionRequest {
        CompletionRequest::new(&self.model, prompt)
            .with_temperature(0.0)
            .with_seed_tag(tag)
    }

    /// Asks the model repeatedly until `parse` accepts a reply.
    async fn ask_parsed<T>(&self, op: &str, prompt: &str, parse: impl Fn(&str) -> Option<T>) -> Option<T> {
        for attempt in 0..=PARSE_RETRIES {
            let req = self.request(prompt.to_owned(), format!("{op}-{attempt}"));
            match self.gateway.complete(&req).await {
                Ok(reply) => {
                    if let Some(parsed) = parse(&reply) {
                        return Some(parsed);
                    }
                    tracing::debug!("{op}: unparseable reply on attempt {attempt}");
                }
                Err(e) => {
                    tracing::warn!("{op}: {e}");
                    return None;
                }
            }
        }
        None
    }

    pub async fn assign_roles(&self, item: &QAItem) -> Vec<String> {
        let key = self.key(
            "assign_roles",
            item,
            serde_json::json!([item.lang, item.question, item.answer]),
        );
        if let Some(roles) = self.cached(&key) {
            return roles;
        }
        let prompt = match self.prompts.build_roles_prompt(item) {
            Ok(p) => p,
            Err(e) => {
                tracing::warn!("item {}: {e}", item.id);
                return vec![FALLBACK_ROLE.to_owned()];
            }
        };
        match self.ask_parsed("assign_roles", &prompt, parse_roles).await {
            Some(roles) => {
                self.store(&key, &roles);
                roles
            }
            None => {
                tracing::warn!("item {}: role assignment degraded to `{FALLBACK_ROLE}`", item.id);
                vec![FALLBACK_ROLE.to_owned()]
            }
        }
    }

    pub async fn extract_keyword(&self, item: &QAItem) -> Result<String, KnowledgeError> {
        let key = self.key("extract_keyword", item, serde_json::json!([item.question]));
        if let Some(keyword) = self.cached(&key) {
            return Ok(keyword);
        }
        let prompt = self.prompts.build_keyword_prompt(item)?;
        let reply = self
            .gateway
            .complete(&self.request(prompt, "extract_keyword-0".into()))
            .await?;
        let keyword = parse_keyword(&reply).ok_or(KnowledgeError::NoKeyword)?;
        self.store(&key, &keyword);
        Ok(keyword)
    }

    /// First search hit on the item-language wiki, else on English Wikipedia.
    pub async fn fetch_wikipedia(&self, item: &QAItem, keyword: &str) -> Result<WikiText, KnowledgeError> {
        let key = self.key(
            "fetch_wikipedia",
            item,
            serde_json::json!([keyword, item.lang, self.max_extract_chars]),
        );
        // a cached `None` records a search that found nothing
        if let Some(found) = self.cached::<Option<WikiText>>(&key) {
            return found.ok_or_else(|| KnowledgeError::NoResults(keyword.to_owned()));
        }
        let mut langs = vec![item.lang.as_str()];
        if !item.lang.eq_ignore_ascii_case(FALLBACK_LANG) {
            langs.push(FALLBACK_LANG);
        }
        for lang in langs {
            if let Some(hit) = self.wiki.search(lang, keyword).await? {
                let text = self.wiki.extract(lang, &hit.title).await?;
                let found = WikiText {
                    hit,
                    lang: lang.to_ascii_lowercase(),
                    text: truncate_chars(&text, self.max_extract_chars).to_owned(),
                };
                self.store(&key, &Some(&found));
                return Ok(found);
            }
        }
        self.store(&key, &None::<WikiText>);
        Err(KnowledgeError::NoResults(keyword.to_owned()))
    }

    /// Condenses raw page text into evidence for the item; falls back to the
    /// first 2000 characters of `raw` when no usable summary comes back.
    pub async fn summarize_knowledge(&self, item: &QAItem, raw: &str) -> String {
        let key = self.key(
            "summarize_knowledge",
            item,
            serde_json::json!([item.lang, item.question, item.answer, raw]),
        );
        if let Some(summary) = self.cached(&key) {
            return summary;
        }
        let knowledge = serde_json::json!({ "extract": raw }).to_string();
        let summary = match self.prompts.build_summarize_prompt(item, &knowledge) {
            Ok(prompt) => self.ask_parsed("summarize_knowledge", &prompt, parse_summary).await,
            Err(e) => {
                tracing::warn!("item {}: {e}", item.id);
                None
            }
        };
        match summary {
            Some(summary) => {
                self.store(&key, &summary);
                summary
            }
            None => {
                tracing::warn!("item {}: summary degraded to truncated extract", item.id);
                truncate_chars(raw, SUMMARY_FALLBACK_CHARS).to_owned()
            }
        }
    }

    async fn external(&self, item: &QAItem, bundle: &mut KnowledgeBundle) -> Result<(), KnowledgeError> {
        let keyword = self.extract_keyword(item).await?;
        bundle.keyword = Some(keyword.clone());
        let page = self.fetch_wikipedia(item, &keyword).await?;
        bundle.provenance = Some(page.hit.clone());
        if page.text.trim().is_empty() {
            return Err(KnowledgeError::NoResults(keyword));
        }
        bundle.refined_external = Some(self.summarize_knowledge(item, &page.text).await);
        bundle.raw_external = Some(page.text);
        Ok(())
    }

    pub async fn bundle(&self, item: &QAItem, use_roles: bool, use_external: bool) -> KnowledgeBundle {
        let mut bundle = KnowledgeBundle {
            roles: if use_roles {
                self.assign_roles(item).await
            } else {
                vec![FALLBACK_ROLE.to_owned()]
            },
            ..KnowledgeBundle::default()
        };
        if use_external {
            if let Err(e) = self.external(item, &mut bundle).await {
                tracing::warn!("item {}: continuing without external knowledge: {e}", item.id);
                bundle.raw_external = None;
                bundle.refined_external = None;
            }
        }
        bundle
    }
}
