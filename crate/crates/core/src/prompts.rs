//! Prompt templates with `{name}` placeholders.
//!
//! Templates are checked when loaded: every required placeholder must be
//! present and no unknown placeholder may appear. A `{` that does not start a
//! `{identifier}` is literal text.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::QAItem;

/// Annotation prompt. A reconstruction rather than an original text: role,
/// task definition, steps, worked example, knowledge, input. Override it with
/// a prompts directory.
pub const MAIN_TEMPLATE: &str = include_str!("../templates/main.txt");
pub const ROLES_TEMPLATE: &str = include_str!("../templates/roles.txt");
pub const KEYWORD_TEMPLATE: &str = include_str!("../templates/keyword.txt");
pub const SUMMARIZE_TEMPLATE: &str = include_str!("../templates/summarize.txt");

pub const NO_KNOWLEDGE: &str = "No external knowledge available.";

const INPUT_OPEN: &str = "### Input\n";
const ANSWER_PREFIX: &str = "Answer: ";
const INPUT_CLOSE: &str = "\n### End of input";

const MAIN_KEYS: &[&str] = &[
    "role",
    "lang",
    "question",
    "answer",
    "knowledge",
    "example_question",
    "example_answer",
    "example_marked",
];
const ROLES_KEYS: &[&str] = &["lang", "question", "answer"];
const KEYWORD_KEYS: &[&str] = &["question"];
const SUMMARIZE_KEYS: &[&str] = &["lang", "question", "answer", "knowledge"];

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("template `{template}` lacks placeholder {{{key}}}")]
    MissingPlaceholder { template: String, key: String },
    #[error("template `{template}` has unknown placeholder {{{key}}}")]
    UnknownPlaceholder { template: String, key: String },
    #[error("no value for placeholder {{{0}}}")]
    MissingValue(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("bad worked example {path}: {message}")]
    Example { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Piece<'a> {
    Text(&'a str),
    Slot(&'a str),
}

fn pieces(text: &str) -> Vec<Piece<'_>> {
    let mut out = Vec::new();
    let mut rest = text;
    let mut literal_start = 0;
    let mut offset = 0;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        let ident_len = after
            .find(|c: char| !(c.is_ascii_lowercase() || c == '_'))
            .unwrap_or(after.len());
        if ident_len > 0 && after[ident_len..].starts_with('}') {
            let slot_start = offset + open;
            out.push(Piece::Text(&text[literal_start..slot_start]));
            out.push(Piece::Slot(&after[..ident_len]));
            let consumed = open + 1 + ident_len + 1;
            offset += consumed;
            literal_start = offset;
            rest = &rest[consumed..];
        } else {
            offset += open + 1;
            rest = &rest[open + 1..];
        }
    }
    out.push(Piece::Text(&text[literal_start..]));
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    name: String,
    text: String,
}

impl Template {
    pub fn parse(name: &str, text: impl Into<String>, keys: &[&str]) -> Result<Self, PromptError> {
        let text = text.into();
        let found: BTreeSet<&str> = pieces(&text)
            .into_iter()
            .filter_map(|p| match p {
                Piece::Slot(k) => Some(k),
                Piece::Text(_) => None,
            })
            .collect();
        if let Some(key) = found.iter().find(|k| !keys.contains(k)) {
            return Err(PromptError::UnknownPlaceholder {
                template: name.into(),
                key: key.to_string(),
            });
        }
        if let Some(key) = keys.iter().find(|k| !found.contains(*k)) {
            return Err(PromptError::MissingPlaceholder {
                template: name.into(),
                key: key.to_string(),
            });
        }
        Ok(Self {
            name: name.into(),
            text,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Single-pass substitution; substituted values are never re-expanded.
    pub fn render(&self, values: &HashMap<&str, &str>) -> Result<String, PromptError> {
        let mut out = String::with_capacity(self.text.len() + 256);
        for piece in pieces(&self.text) {
            match piece {
                Piece::Text(t) => out.push_str(t),
                Piece::Slot(k) => out.push_str(values.get(k).ok_or_else(|| PromptError::MissingValue(k.into()))?),
            }
        }
        Ok(out)
    }
}

/// English name of a task language code; unknown codes pass through.
pub fn language_name(code: &str) -> &str {
    match code.to_ascii_uppercase().as_str() {
        "AR" => "Arabic",
        "EU" => "Basque",
        "CA" => "Catalan",
        "ZH" => "Chinese",
        "CS" => "Czech",
        "EN" => "English",
        "FA" => "Farsi",
        "FI" => "Finnish",
        "FR" => "French",
        "DE" => "German",
        "HI" => "Hindi",
        "IT" => "Italian",
        "ES" => "Spanish",
        "SV" => "Swedish",
        _ => code,
    }
}

/// A demonstration shown inside the main prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkedExample {
    pub question: String,
    pub answer: String,
    pub marked: String,
}

impl Default for WorkedExample {
    fn default() -> Self {
        Self {
            question: "What did Petra van Staveren win a gold medal for?".into(),
            answer: "Petra van Stoveren won a silver medal in the 2008 Summer Olympics in Beijing, China."
                .into(),
            marked: "Petra van Stoveren won a ⟨⟨silver⟩⟩ medal in the ⟨⟨2008⟩⟩ Summer Olympics in ⟨⟨Beijing, China⟩⟩."
                .into(),
        }
    }
}

/// The closing block of the main prompt, holding the item under annotation.
pub fn annotation_input_block(question: &str, answer: &str) -> String {
    format!("{INPUT_OPEN}Question: {question}\n{ANSWER_PREFIX}{answer}{INPUT_CLOSE}\n")
}

/// Recovers the answer embedded in a rendered main prompt.
pub fn embedded_answer(prompt: &str) -> Option<&str> {
    let block_start = prompt.rfind(INPUT_OPEN)? + INPUT_OPEN.len();
    let block = &prompt[block_start..];
    let answer_start = block.find(&format!("\n{ANSWER_PREFIX}"))? + 1 + ANSWER_PREFIX.len();
    let answer_end = block.rfind(INPUT_CLOSE)?;
    (answer_start <= answer_end).then(|| &block[answer_start..answer_end])
}

/// All templates used by the pipeline and knowledge chain.
#[derive(Debug, Clone)]
pub struct PromptSet {
    pub main: Template,
    pub roles: Template,
    pub keyword: Template,
    pub summarize: Template,
    default_example: WorkedExample,
    examples: HashMap<String, WorkedExample>,
}

impl PromptSet {
    pub fn builtin() -> Self {
        Self::from_texts(MAIN_TEMPLATE, ROLES_TEMPLATE, KEYWORD_TEMPLATE, SUMMARIZE_TEMPLATE)
            .expect("built-in templates are valid")
    }

    pub fn from_texts(main: &str, roles: &str, keyword: &str, summarize: &str) -> Result<Self, PromptError> {
        Ok(Self {
            main: Template::parse("main", main, MAIN_KEYS)?,
            roles: Template::parse("roles", roles, ROLES_KEYS)?,
            keyword: Template::parse("keyword", keyword, KEYWORD_KEYS)?,
            summarize: Template::parse("summarize", summarize, SUMMARIZE_KEYS)?,
            default_example: WorkedExample::default(),
            examples: HashMap::new(),
        })
    }

    /// Loads `main.txt`, `roles.txt`, `keyword.txt` and `summarize.txt` from
    /// `dir`, falling back to the built-in text for absent files. Worked
    /// examples are read from `examples/<LANG>.json` when present.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let read = |file: &str, fallback: &str| -> Result<String, PromptError> {
            let path = dir.join(file);
            match fs::read_to_string(&path) {
                Ok(text) => Ok(text),
                Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(fallback.to_owned()),
                Err(source) => Err(PromptError::Io {
                    path: path.display().to_string(),
                    source,
                }),
            }
        };
        let mut set = Self::from_texts(
            &read("main.txt", MAIN_TEMPLATE)?,
            &read("roles.txt", ROLES_TEMPLATE)?,
            &read("keyword.txt", KEYWORD_TEMPLATE)?,
            &read("summarize.txt", SUMMARIZE_TEMPLATE)?,
        )?;
        let examples_dir = dir.join("examples");
        if let Ok(entries) = fs::read_dir(&examples_dir) {
            for entry in entries.flatten() {
                let path = entry.path();
                if path.extension().and_then(|e| e.to_str()) != Some("json") {
                    continue;
                }
                let Some(lang) = path.file_stem().and_then(|s| s.to_str()) else {
                    continue;
                };
                let text = fs::read_to_string(&path).map_err(|source| PromptError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                let example: WorkedExample = serde_json::from_str(&text).map_err(|e| PromptError::Example {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })?;
                set.examples.insert(lang.to_ascii_uppercase(), example);
            }
        }
        Ok(set)
    }

    pub fn with_example(mut self, lang: &str, example: WorkedExample) -> Self {
        self.examples.insert(lang.to_ascii_uppercase(), example);
        self
    }

    pub fn example_for(&self, lang: &str) -> &WorkedExample {
        self.examples
            .get(&lang.to_ascii_uppercase())
            .unwrap_or(&self.default_example)
    }

    pub fn build_main_prompt(&self, item: &QAItem, role: &str, knowledge: Option<&str>) -> Result<String, PromptError> {
        let example = self.example_for(&item.lang);
        let values = HashMap::from([
            ("role", role),
            ("lang", language_name(&item.lang)),
            ("question", item.question.as_str()),
            ("answer", item.answer.as_str()),
            ("knowledge", knowledge.filter(|k| !k.trim().is_empty()).unwrap_or(NO_KNOWLEDGE)),
            ("example_question", example.question.as_str()),
            ("example_answer", example.answer.as_str()),
            ("example_marked", example.marked.as_str()),
        ]);
        self.main.render(&values)
    }

    pub fn build_roles_prompt(&self, item: &QAItem) -> Result<String, PromptError> {
        self.roles.render(&HashMap::from([
            ("lang", language_name(&item.lang)),
            ("question", item.question.as_str()),
            ("answer", item.answer.as_str()),
        ]))
    }

    pub fn build_keyword_prompt(&self, item: &QAItem) -> Result<String, PromptError> {
        self.keyword
            .render(&HashMap::from([("question", item.question.as_str())]))
    }

    pub fn build_summarize_prompt(&self, item: &QAItem, knowledge: &str) -> Result<String, PromptError> {
        self.summarize.render(&HashMap::from([
            ("lang", language_name(&item.lang)),
            ("question", item.question.as_str()),
            ("answer", item.answer.as_str()),
            ("knowledge", knowledge),
        ]))
    }
}

impl Default for PromptSet {
    fn default() -> Self {
        Self::builtin()
    }
}
