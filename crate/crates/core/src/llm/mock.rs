//! Deterministic provider for offline tests and dry runs.
//!
//! Lookup order for a request:
//! 1. exact reply registered under the SHA-256 of the user prompt;
//! 2. annotation fixture whose answer equals the answer embedded in the
//!    prompt; run `i` (from the `run-i` seed tag) gets `runs[i % len]`;
//! 3. the first substring rule whose needles all occur in the prompt;
//! 4. strict mode: [`MockError`]; otherwise an unmarked echo of the embedded
//!    answer, or an empty reply.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{ChatProvider, CompletionRequest, ProviderError};
use crate::marker::insert_markers;
use crate::model::SpanLabel;
use crate::prompts::embedded_answer;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MockError {
    #[error("no scripted reply for prompt {0}")]
    Unscripted(String),
    #[error("fixture for {answer:?}: substring {needle:?} not found")]
    MissingSubstring { answer: String, needle: String },
}

/// What one annotation run replies with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunReply {
    /// Mark these substrings, each searched after the previous one.
    Mark(Vec<String>),
    /// Mark these char spans of the answer.
    Spans(Vec<[usize; 2]>),
    /// Reply verbatim.
    Raw(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationFixture {
    pub answer: String,
    pub runs: Vec<RunReply>,
}

impl AnnotationFixture {
    /// Every run marks the same substrings.
    pub fn unanimous(answer: impl Into<String>, marks: &[&str]) -> Self {
        Self {
            answer: answer.into(),
            runs: vec![RunReply::Mark(marks.iter().map(|s| s.to_string()).collect())],
        }
    }

    fn reply_for(&self, run: usize) -> Result<String, MockError> {
        if self.runs.is_empty() {
            return Ok(self.answer.clone());
        }
        let spans = match &self.runs[run % self.runs.len()] {
            RunReply::Raw(text) => return Ok(text.clone()),
            RunReply::Spans(pairs) => pairs.iter().map(|&[s, e]| SpanLabel::<f64>::hard(s, e)).collect(),
            RunReply::Mark(needles) => self.locate(needles)?,
        };
        Ok(insert_markers(&self.answer, &spans, "⟨⟨", "⟩⟩"))
    }

    fn locate(&self, needles: &[String]) -> Result<Vec<SpanLabel>, MockError> {
        let mut spans = Vec::with_capacity(needles.len());
        let mut from_byte = 0;
        for needle in needles {
            let found = self.answer[from_byte..]
                .find(needle.as_str())
                .filter(|_| !needle.is_empty())
                .ok_or_else(|| MockError::MissingSubstring {
                    answer: self.answer.clone(),
                    needle: needle.clone(),
                })?;
            let byte_start = from_byte + found;
            let start = self.answer[..byte_start].chars().count();
            let end = start + needle.chars().count();
            spans.push(SpanLabel::hard(start, end));
            from_byte = byte_start + needle.len();
        }
        Ok(spans)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubstringRule {
    pub contains: Vec<String>,
    pub reply: String,
}

/// Serializable description of a mock provider.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockScript {
    pub strict: bool,
    /// SHA-256 (hex) of the user prompt → reply.
    pub replies: HashMap<String, String>,
    pub annotations: Vec<AnnotationFixture>,
    pub rules: Vec<SubstringRule>,
}

#[derive(Debug, Default)]
pub struct MockProvider {
    script: MockScript,
    calls: AtomicUsize,
}

impl MockProvider {
    pub fn new(script: MockScript) -> Self {
        Self {
            script,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn strict() -> Self {
        Self::new(MockScript {
            strict: true,
            ..MockScript::default()
        })
    }

    pub fn prompt_hash(prompt: &str) -> String {
        hex::encode(Sha256::digest(prompt.as_bytes()))
    }

    pub fn with_reply(mut self, prompt: &str, reply: impl Into<String>) -> Self {
        self.script.replies.insert(Self::prompt_hash(prompt), reply.into());
        self
    }

    pub fn with_annotation(mut self, fixture: AnnotationFixture) -> Self {
        self.script.annotations.push(fixture);
        self
    }

    pub fn with_rule(mut self, contains: &[&str], reply: impl Into<String>) -> Self {
        self.script.rules.push(SubstringRule {
            contains: contains.iter().map(|s| s.to_string()).collect(),
            reply: reply.into(),
        });
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn respond(&self, req: &CompletionRequest) -> Result<String, MockError> {
        let prompt = &req.user_prompt;
        if let Some(reply) = self.script.replies.get(&Self::prompt_hash(prompt)) {
            return Ok(reply.clone());
        }
        let answer = embedded_answer(prompt);
        if let Some(answer) = answer {
            if let Some(fixture) = self.script.annotations.iter().find(|f| f.answer == answer) {
                return fixture.reply_for(run_index(&req.seed_tag));
            }
        }
        if let Some(rule) = self
            .script
            .rules
            .iter()
            .find(|r| r.contains.iter().all(|needle| prompt.contains(needle.as_str())))
        {
            return Ok(rule.reply.clone());
        }
        if self.script.strict {
            let head: String = prompt.chars().take(60).collect();
            return Err(MockError::Unscripted(head));
        }
        Ok(answer.map(str::to_owned).unwrap_or_default())
    }
}

/// Trailing number of a `run-<i>` style tag; 0 when absent.
fn run_index(seed_tag: &str) -> usize {
    seed_tag
        .rsplit('-')
        .next()
        .and_then(|n| n.parse().ok())
        .unwrap_or(0)
}

#[async_trait]
impl ChatProvider for MockProvider {
    async fn send(&self, req: &CompletionRequest) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(self.respond(req)?)
    }
}
