//! Enhanced tool documents: the text that gets embedded for each tool.
//!
//! A document concatenates, one component per line and always in this
//! order: the humanized tool name, the description, optionally one
//! `name: description` line per argument, then any synthetic questions and
//! key topics. The code-level name lives only in the metadata map.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dataset_io::ToolDefinition;
use crate::error::{Result, ToolshedError};
use crate::llm::{parse_string_list, LlmClient};
use crate::prompts::PromptSet;

pub const TOOL_NAME_KEY: &str = "tool_name";
pub const MAX_ENRICHMENT_COUNT: usize = 10;

/// Which components go into the embedded text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct ComposerConfig {
    pub include_schema: bool,
    pub question_count: usize,
    pub topic_count: usize,
}

impl Default for ComposerConfig {
    fn default() -> Self {
        ComposerConfig::NAME_DESCRIPTION_SCHEMA
    }
}

impl ComposerConfig {
    pub const NAME_DESCRIPTION: ComposerConfig =
        ComposerConfig { include_schema: false, question_count: 0, topic_count: 0 };
    pub const NAME_DESCRIPTION_SCHEMA: ComposerConfig =
        ComposerConfig { include_schema: true, question_count: 0, topic_count: 0 };

    /// The six benchmark document layouts: 1 name+description, 2 +schema,
    /// 3 +1 question, 4 +schema+1 question, 5 +2 questions, 6 +schema+2 questions.
    pub fn preset(n: u8) -> Option<Self> {
        let (include_schema, question_count) = match n {
            1 => (false, 0),
            2 => (true, 0),
            3 => (false, 1),
            4 => (true, 1),
            5 => (false, 2),
            6 => (true, 2),
            _ => return None,
        };
        Some(ComposerConfig { include_schema, question_count, topic_count: 0 })
    }

    pub fn validate(&self) -> Result<()> {
        if self.question_count > MAX_ENRICHMENT_COUNT || self.topic_count > MAX_ENRICHMENT_COUNT {
            return Err(ToolshedError::config(format!(
                "question_count and topic_count must be at most {MAX_ENRICHMENT_COUNT} \
                 (got {} and {})",
                self.question_count, self.topic_count
            )));
        }
        Ok(())
    }

    /// Canonical text identifying this configuration, folded into index
    /// fingerprints.
    pub fn fingerprint_material(&self) -> String {
        format!(
            "schema={};questions={};topics={}",
            u8::from(self.include_schema),
            self.question_count,
            self.topic_count
        )
    }
}

/// Synthetic content appended to a tool document.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Enrichment {
    pub synthetic_questions: Vec<String>,
    pub key_topics: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnhancedToolDocument {
    pub embeddable_text: String,
    pub humanized_name: String,
    pub metadata: BTreeMap<String, String>,
}

impl EnhancedToolDocument {
    /// The code-level tool identifier this document stands for.
    pub fn tool_name(&self) -> &str {
        self.metadata.get(TOOL_NAME_KEY).map(String::as_str).unwrap_or_default()
    }
}

/// Split an identifier into space-separated words.
///
/// Splits on `_` and `-` and at lower→upper case transitions. A run of
/// capitals stays together as one word, ending just before a capital that
/// starts a lowercase word (`NPVTool` → `NPV Tool`). Letter case is kept.
pub fn humanize_tool_name(name: &str) -> String {
    let mut words: Vec<String> = Vec::new();
    for segment in name.split(|c: char| c == '_' || c == '-' || c.is_whitespace()) {
        let chars: Vec<char> = segment.chars().collect();
        let mut word = String::new();
        for (i, &c) in chars.iter().enumerate() {
            if i > 0 {
                let prev = chars[i - 1];
                let next_lower = chars.get(i + 1).is_some_and(|n| n.is_lowercase());
                let boundary = (prev.is_lowercase() && c.is_uppercase())
                    || (prev.is_uppercase() && c.is_uppercase() && next_lower);
                if boundary && !word.is_empty() {
                    words.push(std::mem::take(&mut word));
                }
            }
            word.push(c);
        }
        if !word.is_empty() {
            words.push(word);
        }
    }
    words.join(" ")
}

/// Per-tool questions and topics read from a fixture file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EnrichmentFixtures {
    entries: HashMap<String, Enrichment>,
}

#[derive(Deserialize)]
struct FixtureRecord {
    tool_name: String,
    #[serde(default)]
    questions: Vec<String>,
    #[serde(default)]
    topics: Vec<String>,
}

impl EnrichmentFixtures {
    /// Parse `{"tool_name", "questions":[...], "topics":[...]}` lines.
    pub fn parse(raw: &str) -> Result<Self> {
        let mut entries = HashMap::new();
        for (i, line) in raw.lines().enumerate() {
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let rec: FixtureRecord = serde_json::from_str(t)
                .map_err(|e| ToolshedError::Parse { line: i + 1, message: e.to_string() })?;
            entries.insert(
                rec.tool_name,
                Enrichment { synthetic_questions: rec.questions, key_topics: rec.topics },
            );
        }
        Ok(EnrichmentFixtures { entries })
    }

    pub fn insert(&mut self, tool_name: impl Into<String>, enrichment: Enrichment) {
        self.entries.insert(tool_name.into(), enrichment);
    }

    pub fn get(&self, tool_name: &str) -> Option<&Enrichment> {
        self.entries.get(tool_name)
    }
}

/// Where synthetic questions and topics come from.
#[derive(Clone, Default)]
pub enum EnrichmentGenerator {
    /// No enrichment at all.
    #[default]
    Null,
    Fixture(EnrichmentFixtures),
    Llm { client: Arc<dyn LlmClient>, prompts: Box<PromptSet> },
}

impl std::fmt::Debug for EnrichmentGenerator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EnrichmentGenerator::Null => f.write_str("Null"),
            EnrichmentGenerator::Fixture(_) => f.write_str("Fixture"),
            EnrichmentGenerator::Llm { client, .. } => write!(f, "Llm({})", client.identity()),
        }
    }
}

impl EnrichmentGenerator {
    pub fn identity(&self) -> String {
        match self {
            EnrichmentGenerator::Null => "null".into(),
            EnrichmentGenerator::Fixture(_) => "fixture".into(),
            EnrichmentGenerator::Llm { client, .. } => format!("llm:{}", client.identity()),
        }
    }
}

fn distinct_nonempty(items: impl IntoIterator<Item = String>, limit: usize) -> Vec<String> {
    let mut seen = HashSet::new();
    items
        .into_iter()
        .map(|s| s.trim().to_owned())
        .filter(|s| !s.is_empty() && seen.insert(s.clone()))
        .take(limit)
        .collect()
}

/// Produce synthetic questions and key topics for one tool.
///
/// Duplicates are dropped; when the generator yields fewer distinct entries
/// than requested the lists come back shorter rather than padded.
pub fn enrich_tool(
    tool: &ToolDefinition,
    generator: &EnrichmentGenerator,
    config: &ComposerConfig,
) -> Result<Enrichment> {
    config.validate()?;
    if config.question_count == 0 && config.topic_count == 0 {
        return Ok(Enrichment::default());
    }
    match generator {
        EnrichmentGenerator::Null => Ok(Enrichment::default()),
        EnrichmentGenerator::Fixture(fixtures) => {
            let entry = fixtures.get(&tool.name).ok_or_else(|| {
                ToolshedError::config(format!("enrichment fixture has no entry for tool `{}`", tool.name))
            })?;
            Ok(Enrichment {
                synthetic_questions: distinct_nonempty(
                    entry.synthetic_questions.iter().cloned(),
                    config.question_count,
                ),
                key_topics: distinct_nonempty(entry.key_topics.iter().cloned(), config.topic_count),
            })
        }
        EnrichmentGenerator::Llm { client, prompts } => llm_enrich(tool, client.as_ref(), prompts, config),
    }
}

fn llm_enrich(
    tool: &ToolDefinition,
    client: &dyn LlmClient,
    prompts: &PromptSet,
    config: &ComposerConfig,
) -> Result<Enrichment> {
    // topics are conditioned on questions, so questions are generated even when
    // none are kept
    let wanted_questions = if config.question_count > 0 { config.question_count } else { MAX_ENRICHMENT_COUNT };
    let examples = tool
        .extra
        .get("example_questions")
        .and_then(|v| v.as_array())
        .map(|qs| qs.iter().filter_map(|q| q.as_str()).collect::<Vec<_>>().join("\n"))
        .unwrap_or_default();
    let count = wanted_questions.to_string();
    let prompt = prompts.reverse_hyde.render(&[
        ("tool_name", &tool.name),
        ("tool_description", &tool.description),
        ("example_questions", &examples),
        ("question_count", &count),
    ]);
    let raw = client.complete(&prompt).map_err(|e| e.context(format!("questions for `{}`", tool.name)))?;
    let questions = parse_string_list(&raw).ok_or_else(|| ToolshedError::Pipeline {
        message: format!("could not read a question list for tool `{}`", tool.name),
        raw: Some(raw.clone()),
    })?;
    let questions = distinct_nonempty(questions, wanted_questions);

    let key_topics = if config.topic_count > 0 {
        let quoted: Vec<String> = questions.iter().map(|q| format!("\"{q}\"")).collect();
        let joined = format!("\n{}\n", quoted.join("\n"));
        let count = config.topic_count.to_string();
        let prompt = prompts.key_topics.render(&[
            ("tool_name", &tool.name),
            ("tool_description", &tool.description),
            ("example_questions", &joined),
            ("topic_count", &count),
        ]);
        let raw = client.complete(&prompt).map_err(|e| e.context(format!("topics for `{}`", tool.name)))?;
        let topics = parse_string_list(&raw).ok_or_else(|| ToolshedError::Pipeline {
            message: format!("could not read a topic list for tool `{}`", tool.name),
            raw: Some(raw.clone()),
        })?;
        distinct_nonempty(topics, config.topic_count)
    } else {
        Vec::new()
    };
    let synthetic_questions = questions.into_iter().take(config.question_count).collect();
    Ok(Enrichment { synthetic_questions, key_topics })
}

/// Concatenate the configured components into the embeddable document.
pub fn compose_document(
    tool: &ToolDefinition,
    enrichment: &Enrichment,
    config: &ComposerConfig,
) -> EnhancedToolDocument {
    let humanized_name = humanize_tool_name(&tool.name);
    let mut lines: Vec<String> = vec![humanized_name.clone(), tool.description.clone()];
    if config.include_schema {
        lines.extend(tool.parameters.iter().map(|p| format!("{}: {}", p.name, p.description)));
    }
    lines.extend(enrichment.synthetic_questions.iter().take(config.question_count).cloned());
    lines.extend(enrichment.key_topics.iter().take(config.topic_count).cloned());
    let mut metadata = BTreeMap::new();
    metadata.insert(TOOL_NAME_KEY.to_owned(), tool.name.clone());
    EnhancedToolDocument { embeddable_text: lines.join("\n"), humanized_name, metadata }
}

/// Enrich and compose every tool of a catalog, preserving catalog order.
pub fn compose_catalog(
    catalog: &[ToolDefinition],
    generator: &EnrichmentGenerator,
    config: &ComposerConfig,
) -> Result<Vec<EnhancedToolDocument>> {
    use rayon::prelude::*;
    catalog
        .par_iter()
        .map(|tool| {
            let enrichment = enrich_tool(tool, generator, config)?;
            Ok(compose_document(tool, &enrichment, config))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset_io::ValueType;
    use crate::llm::ScriptedLlm;
    use proptest::prelude::*;

    fn npv_tool() -> ToolDefinition {
        ToolDefinition::new(
            "get_net_present_value",
            "Calculates the net present value (NPV) of a series of cash inflows and outflows.",
        )
        .with_parameter("initial_value", "The initial cash flow.", ValueType::Number, true)
        .with_parameter("discount_rate", "The discount rate.", ValueType::Number, true)
    }

    const NPV_QUESTIONS: [&str; 3] = [
        "What is the NPV for a project starting on January 1, 2025, with an initial outflow of $100,000, annual cash flows of $15,000, and a discount rate of 8%?",
        "Calculate the net present value for cash flows of $20,000 per year over 10 years, with a 7% discount rate.",
        "What is the NPV if my project ends in December 2030, with an initial cost of $50,000 and a scrap value of $5,000?",
    ];

    fn npv_fixture() -> EnrichmentGenerator {
        let mut f = EnrichmentFixtures::default();
        f.insert(
            "get_net_present_value",
            Enrichment {
                synthetic_questions: NPV_QUESTIONS.iter().map(|s| s.to_string()).collect(),
                key_topics: vec!["Investment Valuation".into(), "Cash Flow Analysis".into()],
            },
        );
        EnrichmentGenerator::Fixture(f)
    }

    #[test]
    fn humanizes_names() {
        assert_eq!(humanize_tool_name("GetRecord"), "Get Record");
        assert_eq!(humanize_tool_name("get_net_present_value"), "get net present value");
        assert_eq!(humanize_tool_name("search"), "search");
        assert_eq!(humanize_tool_name("NPVTool"), "NPV Tool");
        assert_eq!(humanize_tool_name("getNPV"), "get NPV");
        assert_eq!(humanize_tool_name("fetch-user__Data"), "fetch user Data");
    }

    #[test]
    fn null_enrichment_is_empty() {
        let cfg = ComposerConfig { include_schema: true, question_count: 3, topic_count: 2 };
        assert_eq!(enrich_tool(&npv_tool(), &EnrichmentGenerator::Null, &cfg).unwrap(), Enrichment::default());
    }

    #[test]
    fn fixture_enrichment_returns_entries_verbatim() {
        let cfg = ComposerConfig { include_schema: true, question_count: 3, topic_count: 2 };
        let e = enrich_tool(&npv_tool(), &npv_fixture(), &cfg).unwrap();
        assert_eq!(e.synthetic_questions, NPV_QUESTIONS);
        assert_eq!(e.key_topics, ["Investment Valuation", "Cash Flow Analysis"]);
    }

    #[test]
    fn fixture_miss_is_config_error() {
        let cfg = ComposerConfig { include_schema: false, question_count: 1, topic_count: 0 };
        let other = ToolDefinition::new("other", "d");
        assert!(matches!(enrich_tool(&other, &npv_fixture(), &cfg), Err(ToolshedError::Config(_))));
    }

    #[test]
    fn fixture_duplicates_shrink_instead_of_padding() {
        let mut f = EnrichmentFixtures::default();
        f.insert(
            "t",
            Enrichment {
                synthetic_questions: vec!["q".into(), "q".into(), " ".into()],
                key_topics: vec![],
            },
        );
        let cfg = ComposerConfig { include_schema: false, question_count: 3, topic_count: 2 };
        let e = enrich_tool(&ToolDefinition::new("t", "d"), &EnrichmentGenerator::Fixture(f), &cfg).unwrap();
        assert_eq!(e.synthetic_questions, ["q"]);
        assert!(e.key_topics.is_empty());
    }

    #[test]
    fn counts_above_ten_rejected() {
        let cfg = ComposerConfig { include_schema: false, question_count: 11, topic_count: 0 };
        assert!(matches!(cfg.validate(), Err(ToolshedError::Config(_))));
    }

    #[test]
    fn llm_enrichment_conditions_topics_on_questions() {
        let llm = Arc::new(ScriptedLlm::new([
            "1. What is the NPV of my project?\n2. What is the NPV of my project?\n3. How do I discount cash flows?",
            "['Investment Valuation', 'Cash Flow Analysis', 'Discounting']",
        ]));
        let generator = EnrichmentGenerator::Llm { client: llm.clone(), prompts: Box::default() };
        let cfg = ComposerConfig { include_schema: false, question_count: 3, topic_count: 2 };
        let e = enrich_tool(&npv_tool(), &generator, &cfg).unwrap();
        assert_eq!(e.synthetic_questions, ["What is the NPV of my project?", "How do I discount cash flows?"]);
        assert_eq!(e.key_topics, ["Investment Valuation", "Cash Flow Analysis"]);
        let prompts = llm.prompts();
        assert!(prompts[0].user.contains("FUNCTION NAME: `get_net_present_value`"));
        assert!(prompts[1].user.contains("\"How do I discount cash flows?\""));
    }

    #[test]
    fn composes_all_components_in_order() {
        let cfg = ComposerConfig { include_schema: true, question_count: 2, topic_count: 2 };
        let e = enrich_tool(&npv_tool(), &npv_fixture(), &cfg).unwrap();
        let doc = compose_document(&npv_tool(), &e, &cfg);
        let lines: Vec<&str> = doc.embeddable_text.lines().collect();
        assert_eq!(lines.len(), 8);
        assert_eq!(lines[0], "get net present value");
        assert!(lines[1].starts_with("Calculates the net present value"));
        assert_eq!(lines[2], "initial_value: The initial cash flow.");
        assert_eq!(lines[3], "discount_rate: The discount rate.");
        assert_eq!(lines[4], NPV_QUESTIONS[0]);
        assert_eq!(lines[5], NPV_QUESTIONS[1]);
        assert_eq!(lines[6], "Investment Valuation");
        assert_eq!(lines[7], "Cash Flow Analysis");
        assert_eq!(doc.metadata, BTreeMap::from([("tool_name".to_owned(), "get_net_present_value".to_owned())]));
    }

    #[test]
    fn name_description_layout_is_two_lines() {
        let tool = npv_tool();
        let doc = compose_document(&tool, &Enrichment::default(), &ComposerConfig::NAME_DESCRIPTION);
        assert_eq!(doc.embeddable_text, format!("get net present value\n{}", tool.description));
        assert_eq!(doc.tool_name(), "get_net_present_value");
    }

    #[test]
    fn presets_match_layouts() {
        assert_eq!(ComposerConfig::preset(1), Some(ComposerConfig::NAME_DESCRIPTION));
        assert_eq!(ComposerConfig::preset(2), Some(ComposerConfig::NAME_DESCRIPTION_SCHEMA));
        assert_eq!(ComposerConfig::preset(6).unwrap().question_count, 2);
        assert_eq!(ComposerConfig::preset(7), None);
    }

    proptest! {
        #[test]
        fn humanized_names_have_clean_spacing(name in "[A-Za-z0-9_-]{1,24}") {
            let h = humanize_tool_name(&name);
            prop_assert!(!h.starts_with(' ') && !h.ends_with(' ') && !h.contains("  "));
            prop_assert_eq!(h.replace(' ', ""), name.replace(['_', '-'], ""));
        }

        #[test]
        fn single_lowercase_word_is_fixed_point(word in "[a-z]{1,12}") {
            prop_assert_eq!(humanize_tool_name(&word), word);
        }

        #[test]
        fn schema_layout_extends_name_description_layout(
            name in "[a-zA-Z_]{1,16}",
            desc in "[^\n]{0,40}",
            params in prop::collection::vec(("[a-z_]{1,8}", "[^\n]{0,20}"), 0..4),
        ) {
            let mut tool = ToolDefinition::new(name, desc);
            for (n, d) in params {
                tool = tool.with_parameter(n, d, ValueType::String, false);
            }
            let e = Enrichment::default();
            let a = compose_document(&tool, &e, &ComposerConfig::NAME_DESCRIPTION);
            let b = compose_document(&tool, &e, &ComposerConfig::NAME_DESCRIPTION_SCHEMA);
            prop_assert!(b.embeddable_text.starts_with(&a.embeddable_text));
            prop_assert_eq!(&b, &compose_document(&tool, &e, &ComposerConfig::NAME_DESCRIPTION_SCHEMA));
            prop_assert_eq!(b.tool_name(), tool.name.as_str());
            prop_assert!(b.embeddable_text.starts_with(&b.humanized_name));
        }
    }
}
