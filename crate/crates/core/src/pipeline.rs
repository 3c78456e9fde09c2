//! Query-side transformation: rewrite, split into independent intents,
//! expand each intent into phrasings, and retrieve candidates for every
//! phrasing.
//!
//! Four transformer modes share one interface. `null` is the identity,
//! `rule` is a crude offline heuristic, `fixture` reads canned outputs from
//! a table, and `llm` prompts a chat model.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::PathBuf;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::Embedder;
use crate::error::{Result, ToolshedError};
use crate::knowledge_base::{RankedResult, ToolshedIndex};
use crate::llm::{parse_string_list, LlmClient};
use crate::prompts::PromptSet;

pub const DEFAULT_VARIATION_COUNT: usize = 3;

/// Order in which the query stages run; recorded in run manifests.
pub const STAGE_ORDER: [&str; 5] = ["rewrite", "decompose", "expand", "fuse", "combine"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformerMode {
    Null,
    Rule,
    Fixture,
    Llm,
}

impl TransformerMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TransformerMode::Null => "null",
            TransformerMode::Rule => "rule",
            TransformerMode::Fixture => "fixture",
            TransformerMode::Llm => "llm",
        }
    }
}

impl std::str::FromStr for TransformerMode {
    type Err = ToolshedError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "null" => Ok(TransformerMode::Null),
            "rule" => Ok(TransformerMode::Rule),
            "fixture" => Ok(TransformerMode::Fixture),
            "llm" => Ok(TransformerMode::Llm),
            other => Err(ToolshedError::config(format!(
                "unknown transformer mode `{other}` (expected null, rule, fixture or llm)"
            ))),
        }
    }
}

fn default_variation_count() -> usize {
    DEFAULT_VARIATION_COUNT
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformerConfig {
    pub mode: TransformerMode,
    /// Total phrasings per intent, the intent itself included.
    #[serde(default = "default_variation_count")]
    pub variation_count: usize,
    /// Template name → file overriding the built-in prompt.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub prompt_paths: BTreeMap<String, PathBuf>,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        TransformerConfig::with_mode(TransformerMode::Null)
    }
}

impl TransformerConfig {
    pub fn with_mode(mode: TransformerMode) -> Self {
        TransformerConfig { mode, variation_count: DEFAULT_VARIATION_COUNT, prompt_paths: BTreeMap::new() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.variation_count == 0 {
            return Err(ToolshedError::config("variation_count must be at least 1"));
        }
        Ok(())
    }

    pub fn prompts(&self) -> Result<PromptSet> {
        let mut set = PromptSet::default();
        for (name, path) in &self.prompt_paths {
            set.override_from_file(name, path)?;
        }
        Ok(set)
    }
}

/// Canned transformer outputs keyed by exact query / intent text.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QueryFixtures {
    rewrites: HashMap<String, String>,
    intents: HashMap<String, Vec<String>>,
    variations: HashMap<String, Vec<String>>,
}

#[derive(Deserialize)]
struct QueryFixtureRecord {
    query: String,
    #[serde(default)]
    rewritten: Option<String>,
    #[serde(default)]
    intents: Option<Vec<String>>,
    #[serde(default)]
    variations: Option<BTreeMap<String, Vec<String>>>,
}

impl QueryFixtures {
    /// Parse `{"query", "rewritten"?, "intents"?:[...], "variations"?:{intent:[...]}}`
    /// lines.
    pub fn parse(raw: &str) -> Result<Self> {
        let mut out = QueryFixtures::default();
        for (i, line) in raw.lines().enumerate() {
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let rec: QueryFixtureRecord = serde_json::from_str(t)
                .map_err(|e| ToolshedError::Parse { line: i + 1, message: e.to_string() })?;
            if let Some(r) = rec.rewritten {
                out.rewrites.insert(rec.query.clone(), r);
            }
            if let Some(intents) = rec.intents {
                out.intents.insert(rec.query.clone(), intents);
            }
            for (intent, vars) in rec.variations.unwrap_or_default() {
                out.variations.insert(intent, vars);
            }
        }
        Ok(out)
    }

    pub fn with_rewrite(mut self, query: impl Into<String>, rewritten: impl Into<String>) -> Self {
        self.rewrites.insert(query.into(), rewritten.into());
        self
    }

    pub fn with_intents<S: Into<String>>(mut self, query: impl Into<String>, intents: impl IntoIterator<Item = S>) -> Self {
        self.intents.insert(query.into(), intents.into_iter().map(Into::into).collect());
        self
    }

    pub fn with_variations<S: Into<String>>(
        mut self,
        intent: impl Into<String>,
        variations: impl IntoIterator<Item = S>,
    ) -> Self {
        self.variations.insert(intent.into(), variations.into_iter().map(Into::into).collect());
        self
    }
}

/// The decomposition of one user query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IntentPlan {
    pub original_query: String,
    pub rewritten_query: String,
    pub intents: Vec<String>,
}

/// An intent and the phrasings used to search for it. The first phrasing is
/// always the intent itself.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VariationSet {
    pub intent: String,
    pub variations: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Retrieval results for every phrasing of one intent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateSet {
    pub intent: String,
    pub variations: Vec<String>,
    pub per_variation_results: Vec<Vec<RankedResult>>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Runs rewrite / decompose / expand in one configured mode.
#[derive(Clone)]
pub struct QueryTransformer {
    config: TransformerConfig,
    fixtures: QueryFixtures,
    llm: Option<Arc<dyn LlmClient>>,
    prompts: PromptSet,
}

impl std::fmt::Debug for QueryTransformer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("QueryTransformer")
            .field("mode", &self.config.mode)
            .field("variation_count", &self.config.variation_count)
            .finish()
    }
}

impl QueryTransformer {
    pub fn new(config: TransformerConfig, fixtures: QueryFixtures, llm: Option<Arc<dyn LlmClient>>) -> Result<Self> {
        config.validate()?;
        if config.mode == TransformerMode::Llm && llm.is_none() {
            return Err(ToolshedError::config(
                "llm transformer mode needs a chat endpoint (TOOLSHED_LLM_ENDPOINT)",
            ));
        }
        let prompts = config.prompts()?;
        Ok(QueryTransformer { config, fixtures, llm, prompts })
    }

    pub fn null() -> Self {
        Self::new(TransformerConfig::default(), QueryFixtures::default(), None).expect("null config is valid")
    }

    pub fn rule() -> Self {
        Self::new(TransformerConfig::with_mode(TransformerMode::Rule), QueryFixtures::default(), None)
            .expect("rule config is valid")
    }

    pub fn fixture(fixtures: QueryFixtures, variation_count: usize) -> Result<Self> {
        let config = TransformerConfig { variation_count, ..TransformerConfig::with_mode(TransformerMode::Fixture) };
        Self::new(config, fixtures, None)
    }

    pub fn llm(client: Arc<dyn LlmClient>, variation_count: usize) -> Result<Self> {
        let config = TransformerConfig { variation_count, ..TransformerConfig::with_mode(TransformerMode::Llm) };
        Self::new(config, QueryFixtures::default(), Some(client))
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.config
    }

    pub fn mode(&self) -> TransformerMode {
        self.config.mode
    }

    pub fn llm_client(&self) -> Option<&Arc<dyn LlmClient>> {
        self.llm.as_ref()
    }

    pub fn prompts(&self) -> &PromptSet {
        &self.prompts
    }

    fn client(&self) -> &dyn LlmClient {
        self.llm.as_deref().expect("llm mode is checked at construction")
    }

    /// Clean up a query before decomposition.
    pub fn rewrite_query(&self, query: &str, history: Option<&[String]>) -> Result<String> {
        require_text(query, "query")?;
        match self.config.mode {
            TransformerMode::Null => Ok(query.to_owned()),
            TransformerMode::Rule => Ok(normalize_whitespace(query)),
            TransformerMode::Fixture => Ok(self.fixtures.rewrites.get(query).cloned().unwrap_or_else(|| query.to_owned())),
            TransformerMode::Llm => {
                let history = history.map(|h| h.join("\n")).unwrap_or_default();
                let prompt = self.prompts.rewrite.render(&[("query", query), ("chat_history", &history)]);
                let out = self.client().complete(&prompt).map_err(|e| e.context("rewriting query"))?;
                let out = out.trim().trim_matches('"').trim();
                Ok(if out.is_empty() { query.to_owned() } else { out.to_owned() })
            }
        }
    }

    /// Split a query into independent intents, in the order they appear.
    pub fn decompose_query(&self, query: &str) -> Result<IntentPlan> {
        require_text(query, "query")?;
        let intents = match self.config.mode {
            TransformerMode::Null => vec![query.to_owned()],
            TransformerMode::Rule => rule_decompose(query),
            TransformerMode::Fixture => {
                self.fixtures.intents.get(query).cloned().unwrap_or_else(|| vec![query.to_owned()])
            }
            TransformerMode::Llm => self.llm_list(
                &self.prompts.decomposition.render(&[("query", query)]),
                "steps",
                "decomposing query",
            )?
            .ok_or_else(|| ToolshedError::Pipeline {
                message: "could not read a step list from the decomposition output".into(),
                raw: None,
            })?,
        };
        let intents: Vec<String> =
            intents.into_iter().map(|s| s.trim().to_owned()).filter(|s| !s.is_empty()).collect();
        if intents.is_empty() {
            return Err(ToolshedError::Pipeline {
                message: format!("decomposition of `{query}` produced no intents"),
                raw: None,
            });
        }
        Ok(IntentPlan { original_query: query.to_owned(), rewritten_query: query.to_owned(), intents })
    }

    /// Rewrite, then decompose the rewritten query.
    pub fn plan_query(&self, query: &str, history: Option<&[String]>) -> Result<IntentPlan> {
        let rewritten = self.rewrite_query(query, history)?;
        let mut plan = self.decompose_query(&rewritten)?;
        plan.original_query = query.to_owned();
        plan.rewritten_query = rewritten;
        Ok(plan)
    }

    /// Phrasings to search for one intent. Never fabricates: when the source
    /// yields fewer distinct phrasings than configured, the set is shorter
    /// and a warning says so.
    pub fn expand_query(&self, intent: &str) -> Result<VariationSet> {
        require_text(intent, "intent")?;
        let wanted = self.config.variation_count;
        let mut warnings = Vec::new();
        let generated: Vec<String> = match self.config.mode {
            TransformerMode::Null | TransformerMode::Rule => {
                return Ok(VariationSet { intent: intent.to_owned(), variations: vec![intent.to_owned()], warnings })
            }
            TransformerMode::Fixture => match self.fixtures.variations.get(intent) {
                Some(v) => v.clone(),
                None => {
                    if wanted > 1 {
                        warnings.push(format!("no fixture variations for intent `{intent}`"));
                    }
                    Vec::new()
                }
            },
            TransformerMode::Llm if wanted > 1 => {
                let count = (wanted - 1).to_string();
                let prompt = self.prompts.expansion.render(&[("user_question", intent), ("variation_count", &count)]);
                match self.llm_list(&prompt, "sentences", "expanding intent")? {
                    Some(list) => list,
                    None => {
                        warnings.push("could not read variations from the expansion output".into());
                        Vec::new()
                    }
                }
            }
            TransformerMode::Llm => Vec::new(),
        };
        let mut seen: HashSet<String> = HashSet::from([intent.trim().to_owned()]);
        let mut variations = vec![intent.to_owned()];
        let mut collapsed = 0;
        for v in generated {
            let v = v.trim().to_owned();
            if v.is_empty() {
                continue;
            }
            if !seen.insert(v.clone()) {
                collapsed += 1;
                continue;
            }
            variations.push(v);
        }
        if collapsed > 0 {
            warnings.push(format!("collapsed {collapsed} duplicate variation(s) for intent `{intent}`"));
        }
        variations.truncate(wanted);
        if variations.len() < wanted {
            warnings.push(format!(
                "intent `{intent}` has {} of {wanted} requested variations",
                variations.len()
            ));
        }
        Ok(VariationSet { intent: intent.to_owned(), variations, warnings })
    }

    /// Two-call pattern: free-form answer first, then a structuring call that
    /// turns it into a JSON list. Falls back to reading the free-form answer
    /// directly when the structuring call does not yield a list.
    fn llm_list(&self, prompt: &crate::prompts::Prompt, item_kind: &str, what: &str) -> Result<Option<Vec<String>>> {
        let raw = self.client().complete(prompt).map_err(|e| e.context(what))?;
        let structuring = self.prompts.structure.render(&[("raw_output", &raw), ("item_kind", item_kind)]);
        let structured = self.client().complete(&structuring).map_err(|e| e.context(what))?;
        match parse_string_list(&structured).or_else(|| parse_string_list(&raw)) {
            Some(items) => Ok(Some(items)),
            None if item_kind == "steps" => Err(ToolshedError::Pipeline {
                message: format!("{what}: model output is not a step list"),
                raw: Some(format!("{raw}\n---\n{structured}")),
            }),
            None => Ok(None),
        }
    }
}

fn require_text(s: &str, what: &str) -> Result<()> {
    if s.trim().is_empty() {
        return Err(ToolshedError::contract(format!("{what} must be non-empty")));
    }
    Ok(())
}

fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

const CLAUSE_MARKERS: [&str; 3] = ["and", "also", "additionally"];

/// Sentence-level split, then clause-level split at `, and` / `, also` /
/// `, additionally`; leading markers are removed from each fragment.
pub fn rule_decompose(query: &str) -> Vec<String> {
    let mut out = Vec::new();
    for sentence in split_sentences(query) {
        for clause in split_clauses(sentence) {
            let fragment = strip_leading_marker(clause.trim());
            if fragment.chars().any(char::is_alphanumeric) {
                out.push(fragment);
            }
        }
    }
    if out.is_empty() {
        out.push(normalize_whitespace(query));
    }
    out
}

fn split_sentences(text: &str) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '?' | '!' | ';') {
            let at_boundary = chars.peek().is_none_or(|(_, n)| n.is_whitespace());
            if at_boundary {
                let end = i + c.len_utf8();
                parts.push(&text[start..end]);
                start = end;
            }
        }
    }
    if start < text.len() {
        parts.push(&text[start..]);
    }
    parts
}

fn marker_at(s: &str) -> Option<usize> {
    CLAUSE_MARKERS.iter().find_map(|m| {
        let head = s.get(..m.len())?;
        let follows = s[m.len()..].chars().next();
        (head.eq_ignore_ascii_case(m) && follows.is_none_or(|c| c.is_whitespace() || c == ','))
            .then_some(m.len())
    })
}

fn split_clauses(sentence: &str) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut start = 0;
    for (i, _) in sentence.match_indices(',') {
        let after = &sentence[i + 1..];
        let trimmed = after.trim_start();
        if trimmed.len() < after.len() && marker_at(trimmed).is_some() {
            parts.push(&sentence[start..i]);
            start = i + 1;
        }
    }
    parts.push(&sentence[start..]);
    parts
}

fn strip_leading_marker(fragment: &str) -> String {
    let mut rest = fragment;
    let mut stripped = false;
    while let Some(len) = marker_at(rest) {
        rest = rest[len..].trim_start_matches(|c: char| c == ',' || c.is_whitespace());
        stripped = true;
    }
    if !stripped {
        return fragment.to_owned();
    }
    let mut chars = rest.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Expand every intent of `plan`, embed each phrasing and query the index.
/// Output keeps plan order, and variation order within each intent.
pub fn retrieve_for_plan(
    index: &ToolshedIndex,
    plan: &IntentPlan,
    transformer: &QueryTransformer,
    embedder: &Embedder,
    per_variation_k: usize,
) -> Result<Vec<CandidateSet>> {
    index.check_compatible(embedder)?;
    plan.intents
        .iter()
        .enumerate()
        .map(|(i, intent)| {
            let expanded = transformer.expand_query(intent).map_err(|e| e.context(format!("intent {i}")))?;
            let per_variation_results = expanded
                .variations
                .par_iter()
                .enumerate()
                .map(|(j, text)| {
                    embedder
                        .embed(text)
                        .and_then(|v| index.query_top_k(&v, per_variation_k, None))
                        .map_err(|e| e.context(format!("intent {i}, variation {j}")))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(CandidateSet {
                intent: expanded.intent,
                variations: expanded.variations,
                per_variation_results,
                warnings: expanded.warnings,
            })
        })
        .collect()
}
