//! Run configuration: defaults, then a config file, then flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use toolshed_core::embedding::{DEFAULT_DIMENSION, ENV_EMBED_ENDPOINT, ENV_EMBED_MODEL};
use toolshed_core::{ComposerConfig, FusionConfig, ProviderConfig, ProviderMode, TransformerConfig, ValueMatch};

pub const DEFAULT_SEED: u64 = 20_240_917;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Inputs {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub catalog: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub golden: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub index: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub query: Option<String>,
    /// One query per line.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub queries: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predictions: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub curve: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub query_fixtures: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub enrichment_fixtures: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum EnrichmentMode {
    #[default]
    Null,
    Fixture,
    Llm,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ProviderChoice {
    /// HTTP when the endpoint variable is set, offline otherwise.
    #[default]
    Auto,
    Offline,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderSection {
    pub mode: ProviderChoice,
    pub dimension: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache_path: Option<PathBuf>,
}

impl Default for ProviderSection {
    fn default() -> Self {
        ProviderSection {
            mode: ProviderChoice::Auto,
            dimension: DEFAULT_DIMENSION,
            endpoint: None,
            model: None,
            cache_path: None,
        }
    }
}

impl ProviderSection {
    /// Pin `auto` to a concrete mode so the manifest replays the same way.
    pub fn resolve(&mut self) {
        if self.mode != ProviderChoice::Auto {
            return;
        }
        let env_endpoint = std::env::var(ENV_EMBED_ENDPOINT).ok().filter(|s| !s.is_empty());
        match self.endpoint.clone().or(env_endpoint) {
            Some(endpoint) => {
                self.mode = ProviderChoice::Http;
                self.endpoint = Some(endpoint);
                if self.model.is_none() {
                    self.model = std::env::var(ENV_EMBED_MODEL).ok().filter(|s| !s.is_empty());
                }
            }
            None => self.mode = ProviderChoice::Offline,
        }
    }

    pub fn to_provider_config(&self) -> ProviderConfig {
        ProviderConfig {
            mode: match self.mode {
                ProviderChoice::Http => ProviderMode::Http,
                _ => ProviderMode::OfflineHashedBow,
            },
            dimension: self.dimension,
            endpoint: self.endpoint.clone(),
            model: self.model.clone(),
            cache_path: self.cache_path.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub ks: Vec<usize>,
    pub value_match: ValueMatch,
    pub bytes_per_token: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { ks: vec![1, 5, 10], value_match: ValueMatch::Normalized, bytes_per_token: 4 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub m_values: Vec<usize>,
    pub k_values: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub inputs: Inputs,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub composer: ComposerConfig,
    pub enrichment: EnrichmentMode,
    pub provider: ProviderSection,
    pub transformer: TransformerConfig,
    pub fusion: FusionConfig,
    pub eval: EvalSection,
    pub sweep: SweepSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: DEFAULT_SEED,
            inputs: Inputs::default(),
            output: None,
            composer: ComposerConfig::default(),
            enrichment: EnrichmentMode::Null,
            provider: ProviderSection::default(),
            transformer: TransformerConfig::default(),
            fusion: FusionConfig::default(),
            eval: EvalSection::default(),
            sweep: SweepSection::default(),
        }
    }
}

impl RunConfig {
    /// TOML or JSON by extension. A run manifest is accepted too: its
    /// embedded config is used.
    pub fn load(path: &Path) -> anyhow::Result<(RunConfig, Option<String>)> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
        if is_toml {
            let cfg = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            return Ok((cfg, None));
        }
        let value: serde_json::Value =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        match value {
            serde_json::Value::Object(mut map) if map.contains_key("config") && map.contains_key("command") => {
                let command = map.get("command").and_then(|c| c.as_str()).map(str::to_owned);
                let cfg = serde_json::from_value(map.remove("config").unwrap())
                    .with_context(|| format!("parsing the config embedded in {}", path.display()))?;
                Ok((cfg, command))
            }
            other => Ok((serde_json::from_value(other).with_context(|| format!("parsing {}", path.display()))?, None)),
        }
    }

    pub fn require<'a, T>(value: &'a Option<T>, what: &str) -> anyhow::Result<&'a T> {
        match value {
            Some(v) => Ok(v),
            None => bail!("missing {what}"),
        }
    }
}
