//! Wikipedia access: page search plus plain-text extracts.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WikiError {
    #[error("wikipedia request failed: {0}")]
    Network(String),
    #[error("unexpected wikipedia response: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WikiHit {
    pub title: String,
    /// Page URL, kept as provenance.
    pub url: String,
}

#[async_trait]
pub trait WikiSource: Send + Sync {
    /// First search hit for `query` on the `lang` wiki, if any.
    async fn search(&self, lang: &str, query: &str) -> Result<Option<WikiHit>, WikiError>;
    /// Plain-text extract of a page.
    async fn extract(&self, lang: &str, title: &str) -> Result<String, WikiError>;
}

pub const DEFAULT_BASE: &str = "https://{lang}.wikipedia.org";

/// Client for the public Wikipedia endpoints. `base` may contain `{lang}`,
/// replaced by the lowercase language code.
pub struct WikipediaClient {
    base: String,
    max_retries: u32,
    backoff: Duration,
    client: reqwest::Client,
}

impl Default for WikipediaClient {
    fn default() -> Self {
        Self::new(DEFAULT_BASE)
    }
}

impl WikipediaClient {
    pub fn new(base: impl Into<String>) -> Self {
        Self {
            base: base.into(),
            max_retries: 2,
            backoff: Duration::from_millis(500),
            client: reqwest::Client::builder()
                .user_agent(concat!("halluspan/", env!("CARGO_PKG_VERSION")))
                .timeout(Duration::from_secs(30))
                .build()
                .expect("http client"),
        }
    }

    pub fn with_retries(mut self, max_retries: u32, backoff: Duration) -> Self {
        self.max_retries = max_retries;
        self.backoff = backoff;
        self
    }

    fn base_for(&self, lang: &str) -> String {
        self.base
            .replace("{lang}", &lang.to_ascii_lowercase())
            .trim_end_matches('/')
            .to_owned()
    }

    async fn get_json(&self, url: &str, query: &[(&str, &str)]) -> Result<Value, WikiError> {
        let mut attempt = 0;
        loop {
            let outcome = match self.client.get(url).query(query).send().await {
                Ok(resp) if resp.status().is_success() => {
                    return resp.json().await.map_err(|e| WikiError::Format(e.to_string()));
                }
                Ok(resp) if resp.status().is_client_error() && resp.status().as_u16() != 429 => {
                    return Err(WikiError::Network(format!("HTTP {}", resp.status())));
                }
                Ok(resp) => format!("HTTP {}", resp.status()),
                Err(e) => e.to_string(),
            };
            if attempt >= self.max_retries {
                return Err(WikiError::Network(outcome));
            }
            tokio::time::sleep(self.backoff * 2u32.pow(attempt)).await;
            attempt += 1;
        }
    }
}

#[async_trait]
impl WikiSource for WikipediaClient {
    async fn search(&self, lang: &str, query: &str) -> Result<Option<WikiHit>, WikiError> {
        let base = self.base_for(lang);
        let body = self
            .get_json(&format!("{base}/w/rest.php/v1/search/page"), &[("q", query), ("limit", "1")])
            .await?;
        let pages = body["pages"]
            .as_array()
            .ok_or_else(|| WikiError::Format("search response lacks `pages`".into()))?;
        Ok(pages.first().and_then(|page| {
            let title = page["title"].as_str()?.to_owned();
            let key = page["key"]
                .as_str()
                .map(str::to_owned)
                .unwrap_or_else(|| title.replace(' ', "_"));
            Some(WikiHit {
                url: format!("{base}/wiki/{key}"),
                title,
            })
        }))
    }

    async fn extract(&self, lang: &str, title: &str) -> Result<String, WikiError> {
        let base = self.base_for(lang);
        let body = self
            .get_json(
                &format!("{base}/w/api.php"),
                &[
                    ("action", "query"),
                    ("prop", "extracts"),
                    ("explaintext", "1"),
                    ("redirects", "1"),
                    ("format", "json"),
                    ("formatversion", "2"),
                    ("titles", title),
                ],
            )
            .await?;
        body["query"]["pages"]
            .as_array()
            .and_then(|pages| pages.first())
            .and_then(|page| page["extract"].as_str())
            .map(str::to_owned)
            .ok_or_else(|| WikiError::Format(format!("no extract for `{title}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockPage {
    /// Language the page lives in; `None` matches every language.
    #[serde(default)]
    pub lang: Option<String>,
    pub query: String,
    pub title: String,
    pub extract: String,
}

/// Offline stand-in for Wikipedia.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockWikiScript {
    pub fail: bool,
    pub pages: Vec<MockPage>,
}

#[derive(Debug, Default)]
pub struct MockWiki {
    script: MockWikiScript,
    calls: AtomicUsize,
}

impl MockWiki {
    pub fn new(script: MockWikiScript) -> Self {
        Self {
            script,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn failing() -> Self {
        Self::new(MockWikiScript {
            fail: true,
            pages: Vec::new(),
        })
    }

    pub fn with_page(mut self, lang: Option<&str>, query: &str, title: &str, extract: &str) -> Self {
        self.script.pages.push(MockPage {
            lang: lang.map(str::to_owned),
            query: query.into(),
            title: title.into(),
            extract: extract.into(),
        });
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn matches(page: &MockPage, lang: &str) -> bool {
        page.lang.as_deref().is_none_or(|l| l.eq_ignore_ascii_case(lang))
    }
}

#[async_trait]
impl WikiSource for MockWiki {
    async fn search(&self, lang: &str, query: &str) -> Result<Option<WikiHit>, WikiError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if self.script.fail {
            return Err(WikiError::Network("mock wikipedia is down".into()));
        }
        Ok(self
            .script
            .pages
            .iter()
            .find(|p| Self::matches(p, lang) && p.query.eq_ignore_ascii_case(query))
            .map(|p| WikiHit {
                title: p.title.clone(),
                url: format!("mock://{}/{}", lang.to_ascii_lowercase(), p.title.replace(' ', "_")),
            }))
    }

    async fn extract(&self, lang: &str, title: &str) -> Result<String, WikiError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if self.script.fail {
            return Err(WikiError::Network("mock wikipedia is down".into()));
        }
        let pages: HashMap<&str, &MockPage> = self
            .script
            .pages
            .iter()
            .filter(|p| Self::matches(p, lang))
            .map(|p| (p.title.as_str(), p))
            .collect();
        pages
            .get(title)
            .map(|p| p.extract.clone())
            .ok_or_else(|| WikiError::Format(format!("no page `{title}`")))
    }
}
