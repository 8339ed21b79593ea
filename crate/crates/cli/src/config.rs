//! Annotation settings: built-in defaults, then the TOML config file, then
//! command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use halluspan::{PipelineConfig, ProviderConfig};
use serde::Deserialize;
use toml::Value;

/// Keys understood at the top level of the config file.
const PIPELINE_KEYS: &[&str] = &[
    "runs_n",
    "threshold",
    "min_similarity",
    "use_roles",
    "use_external",
    "model",
    "temperature",
    "max_tokens",
    "max_parallel_items",
    "max_parallel_runs",
];
const PATH_KEYS: &[&str] = &["cache_dir", "prompts_dir", "mock_script", "wiki_base"];

/// Default model for each built-in provider.
pub fn default_model(provider: &str) -> Option<&'static str> {
    match provider {
        "mock" => Some("mock"),
        "openai" => Some("gpt-4o"),
        "deepseek" => Some("deepseek-chat"),
        _ => None,
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    pub pipeline: PipelineConfig,
    pub cache_dir: Option<PathBuf>,
    pub prompts_dir: Option<PathBuf>,
    pub mock_script: Option<PathBuf>,
    pub wiki_base: Option<String>,
    model_set: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PathsSection {
    cache_dir: Option<PathBuf>,
    prompts_dir: Option<PathBuf>,
    mock_script: Option<PathBuf>,
    wiki_base: Option<String>,
}

/// `provider = "deepseek"`, or a table whose `name` picks a preset and whose
/// other keys override it.
fn provider_from(value: Value) -> Result<ProviderConfig> {
    let table = match value {
        Value::String(name) => return preset(&name),
        Value::Table(t) => t,
        other => bail!("`provider` must be a name or a table, got {other}"),
    };
    let Some(name) = table.get("name").and_then(Value::as_str).map(str::to_owned) else {
        bail!("`provider` table needs a `name`");
    };
    let Ok(base) = preset(&name) else {
        return ProviderConfig::deserialize(Value::Table(table))
            .with_context(|| format!("custom provider `{name}`"));
    };
    let mut merged = Value::try_from(base)?
        .as_table()
        .cloned()
        .expect("provider serializes to a table");
    merged.extend(table);
    ProviderConfig::deserialize(Value::Table(merged)).with_context(|| format!("provider `{name}`"))
}

pub fn preset(name: &str) -> Result<ProviderConfig> {
    ProviderConfig::preset(name).ok_or_else(|| anyhow!("unknown provider `{name}` (expected mock, openai or deepseek)"))
}

impl Settings {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).with_context(|| format!("parsing {}", origin.display()))?;
        let base = origin.parent().unwrap_or(Path::new("."));

        let mut settings = Settings::default();
        if let Some(provider) = table.remove("provider") {
            settings.pipeline.provider = provider_from(provider)?;
            settings.pipeline.model = default_model(&settings.pipeline.provider.name)
                .unwrap_or_default()
                .to_owned();
        }
        let mut paths = toml::Table::new();
        for key in PATH_KEYS {
            if let Some(v) = table.remove(*key) {
                paths.insert((*key).to_owned(), v);
            }
        }
        if let Some(key) = table.keys().find(|k| !PIPELINE_KEYS.contains(&k.as_str())) {
            bail!("{}: unknown key `{key}`", origin.display());
        }
        settings.model_set = table.contains_key("model");

        let mut merged = Value::try_from(&settings.pipeline)?
            .as_table()
            .cloned()
            .expect("config serializes to a table");
        merged.extend(table);
        settings.pipeline = PipelineConfig::deserialize(Value::Table(merged))
            .with_context(|| format!("parsing {}", origin.display()))?;

        // relative paths in the file are relative to the file
        let paths = PathsSection::deserialize(Value::Table(paths))?;
        let resolve = |p: PathBuf| if p.is_relative() { base.join(p) } else { p };
        settings.cache_dir = paths.cache_dir.map(resolve);
        settings.prompts_dir = paths.prompts_dir.map(resolve);
        settings.mock_script = paths.mock_script.map(resolve);
        settings.wiki_base = paths.wiki_base;
        Ok(settings)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text, path)
    }

    pub fn set_provider(&mut self, name: &str) -> Result<()> {
        if self.pipeline.provider.name != name {
            self.pipeline.provider = preset(name)?;
            if !self.model_set {
                self.pipeline.model = default_model(name).unwrap_or_default().to_owned();
            }
        }
        Ok(())
    }

    pub fn set_model(&mut self, model: &str) {
        self.pipeline.model = model.to_owned();
        self.model_set = true;
    }

    /// Checks done before any network traffic.
    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        if self.pipeline.model.trim().is_empty() {
            bail!("no model given for provider `{}`; pass --model", self.pipeline.provider.name);
        }
        if self.mock_script.is_some() && !self.pipeline.provider.is_mock() {
            bail!("--mock-script only applies to the mock provider");
        }
        Ok(())
    }
}
