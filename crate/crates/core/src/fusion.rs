//! Post-retrieval: fuse the per-phrasing rankings of an intent, then merge
//! the per-intent lists into the final tool selection.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Result, ToolshedError};
use crate::llm::{parse_string_list, LlmClient};
use crate::pipeline::CandidateSet;
use crate::prompts::PromptSet;

pub const DEFAULT_RRF_CONSTANT: f64 = 60.0;
pub const DEFAULT_FINAL_TOP_K: usize = 5;
/// Function-definition limit of chat-completion APIs.
pub const MAX_TOOLS_PER_REQUEST: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RerankerMode {
    Rrf,
    Llm,
}

/// How the final budget is shared between intents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntentBudget {
    /// Every intent ranks up to `final_top_k` tools; round-robin merging
    /// decides how many each contributes.
    RoundRobin,
    /// Each intent is truncated to its share from [`allocate_sub_top_k`]
    /// before merging.
    FixedSplit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub rrf_constant: f64,
    pub final_top_k: usize,
    pub reranker: RerankerMode,
    pub intent_budget: IntentBudget,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig::new(DEFAULT_FINAL_TOP_K)
    }
}

impl FusionConfig {
    pub fn new(final_top_k: usize) -> Self {
        FusionConfig {
            rrf_constant: DEFAULT_RRF_CONSTANT,
            final_top_k,
            reranker: RerankerMode::Rrf,
            intent_budget: IntentBudget::RoundRobin,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rrf_constant.is_finite() && self.rrf_constant > 0.0) {
            return Err(ToolshedError::config(format!("rrf_constant must be positive, got {}", self.rrf_constant)));
        }
        check_top_k(self.final_top_k)
    }
}

/// `1 <= k <= 128`.
pub fn check_top_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(ToolshedError::config("top-k must be at least 1"));
    }
    if k > MAX_TOOLS_PER_REQUEST {
        return Err(ToolshedError::config(format!(
            "top-k = {k} exceeds the {MAX_TOOLS_PER_REQUEST} tool definitions a function-calling request may carry"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FusedTool {
    pub name: String,
    pub score: f64,
}

/// Reciprocal rank fusion: `score(t) = Σ 1 / (constant + rank)` over the
/// lists containing `t`, ranks 1-based. Sorted by score, then name.
///
/// Each tool's terms are summed in ascending rank order, so a tool's score
/// depends only on the multiset of its ranks and never on list order.
pub fn rrf_fuse(result_lists: &[Vec<String>], rrf_constant: f64) -> Vec<FusedTool> {
    let mut ranks: HashMap<&str, Vec<usize>> = HashMap::new();
    for list in result_lists {
        for (i, name) in list.iter().enumerate() {
            ranks.entry(name.as_str()).or_default().push(i + 1);
        }
    }
    let mut fused: Vec<FusedTool> = ranks
        .into_iter()
        .map(|(name, mut rs)| {
            rs.sort_unstable();
            let score = rs.iter().map(|&r| 1.0 / (rrf_constant + r as f64)).sum();
            FusedTool { name: name.to_owned(), score }
        })
        .collect();
    fused.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.name.cmp(&b.name)));
    fused
}

/// Drop repeated names, keeping each first occurrence in place.
pub fn dedupe<S: AsRef<str>>(candidates: &[S]) -> Vec<String> {
    let mut seen = HashSet::new();
    candidates
        .iter()
        .map(AsRef::as_ref)
        .filter(|n| seen.insert(*n))
        .map(str::to_owned)
        .collect()
}

/// Fused ranking for one intent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntentFusion {
    pub tools: Vec<FusedTool>,
    /// Tool → indices of the phrasings that retrieved it.
    pub contributing_variations: BTreeMap<String, Vec<usize>>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    /// True when the LLM reranker was requested but its answer was unusable.
    pub downgraded: bool,
}

impl IntentFusion {
    pub fn names(&self) -> Vec<String> {
        self.tools.iter().map(|t| t.name.clone()).collect()
    }
}

/// Condense the per-phrasing lists of one intent to `per_intent_k` tools.
pub fn fuse_intent(
    candidate_set: &CandidateSet,
    config: &FusionConfig,
    per_intent_k: usize,
    reranker: Option<(&dyn LlmClient, &PromptSet)>,
) -> Result<IntentFusion> {
    let lists: Vec<Vec<String>> = candidate_set
        .per_variation_results
        .iter()
        .map(|rs| dedupe(&rs.iter().map(|r| r.tool_name.as_str()).collect::<Vec<_>>()))
        .collect();
    let mut contributing_variations: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (j, list) in lists.iter().enumerate() {
        for name in list {
            contributing_variations.entry(name.clone()).or_default().push(j);
        }
    }
    let fused = rrf_fuse(&lists, config.rrf_constant);
    let mut warnings = Vec::new();
    let mut downgraded = false;

    let tools = match (config.reranker, reranker) {
        (RerankerMode::Rrf, _) => fused.into_iter().take(per_intent_k).collect(),
        (RerankerMode::Llm, None) => {
            return Err(ToolshedError::config("llm reranker requested but no chat client is configured"))
        }
        (RerankerMode::Llm, Some((client, prompts))) => {
            let blocks = candidate_set
                .variations
                .iter()
                .zip(&lists)
                .enumerate()
                .map(|(j, (text, names))| {
                    let label = if j == 0 {
                        "USER QUESTION EMBEDDED AND RETRIEVED TOOLS:".to_owned()
                    } else {
                        format!("SENTENCE {j} EMBEDDED AND RETRIEVED TOOLS:")
                    };
                    format!("{label}\n({text})\n{names:?}")
                })
                .collect::<Vec<_>>()
                .join("\n");
            let k = per_intent_k.to_string();
            let prompt = prompts.reranker.render(&[("variation_blocks", &blocks), ("top_k", &k)]);
            let raw = client.complete(&prompt).map_err(|e| e.context("reranking intent"))?;
            let picked = parse_string_list(&raw).unwrap_or_default();
            let by_name: HashMap<&str, &FusedTool> = fused.iter().map(|t| (t.name.as_str(), t)).collect();
            let mut chosen: Vec<FusedTool> = Vec::new();
            let mut seen = HashSet::new();
            for name in &picked {
                match by_name.get(name.as_str()) {
                    Some(t) if seen.insert(name.clone()) => chosen.push((*t).clone()),
                    Some(_) => {}
                    None => warnings.push(format!("reranker named unknown tool `{name}`; dropped")),
                }
            }
            chosen.truncate(per_intent_k);
            if chosen.is_empty() {
                warnings.push("reranker returned no valid tool names; using rank fusion order".into());
                downgraded = true;
            }
            for t in &fused {
                if chosen.len() >= per_intent_k {
                    break;
                }
                if seen.insert(t.name.clone()) {
                    chosen.push(t.clone());
                }
            }
            chosen
        }
    };
    contributing_variations.retain(|name, _| tools.iter().any(|t| &t.name == name));
    Ok(IntentFusion { tools, contributing_variations, warnings, downgraded })
}

/// Why a tool is in the final selection.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionProvenance {
    pub tool_name: String,
    /// 0-based index of the intent that contributed the tool.
    pub intent_index: usize,
    /// 1-based position within that intent's fused list.
    pub rank_in_intent: usize,
    /// 1-based combining round in which the tool was taken.
    pub round: usize,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub contributing_variations: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fused_score: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FinalSelection {
    pub tools: Vec<String>,
    pub provenance: Vec<SelectionProvenance>,
}

/// Round-robin merge: rank 1 of every intent in order, then rank 2 of every
/// intent, and so on. A tool already taken is skipped. Stops at
/// `final_top_k` tools or when every list is exhausted.
pub fn combine_intents<S: AsRef<str>>(per_intent_lists: &[Vec<S>], final_top_k: usize) -> FinalSelection {
    let mut selection = FinalSelection::default();
    let mut taken = HashSet::new();
    let depth = per_intent_lists.iter().map(Vec::len).max().unwrap_or(0);
    'rounds: for position in 0..depth {
        for (intent_index, list) in per_intent_lists.iter().enumerate() {
            if selection.tools.len() >= final_top_k {
                break 'rounds;
            }
            let Some(name) = list.get(position).map(AsRef::as_ref) else { continue };
            if !taken.insert(name.to_owned()) {
                continue;
            }
            selection.tools.push(name.to_owned());
            selection.provenance.push(SelectionProvenance {
                tool_name: name.to_owned(),
                intent_index,
                rank_in_intent: position + 1,
                round: position + 1,
                contributing_variations: Vec::new(),
                fused_score: None,
            });
        }
    }
    selection
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SubTopK {
    pub per_intent: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// Split a budget of `final_top_k` tools across `intent_count` intents:
/// floor division, remainder one each to the earliest intents.
pub fn allocate_sub_top_k(final_top_k: usize, intent_count: usize) -> SubTopK {
    if intent_count == 0 {
        return SubTopK { per_intent: Vec::new(), warning: None };
    }
    if final_top_k < intent_count {
        let per_intent = (0..intent_count).map(|i| usize::from(i < final_top_k)).collect();
        return SubTopK {
            per_intent,
            warning: Some(format!(
                "top-k = {final_top_k} is smaller than the {intent_count} intents; the last {} get no tools",
                intent_count - final_top_k
            )),
        };
    }
    let base = final_top_k / intent_count;
    let extra = final_top_k % intent_count;
    SubTopK { per_intent: (0..intent_count).map(|i| base + usize::from(i < extra)).collect(), warning: None }
}

/// Merge per-intent lists through the LLM combiner, keeping only names that
/// some intent actually retrieved and backfilling from the round-robin order.
pub fn combine_intents_llm(
    user_question: &str,
    intents: &[String],
    per_intent_lists: &[Vec<String>],
    final_top_k: usize,
    client: &dyn LlmClient,
    prompts: &PromptSet,
) -> Result<(FinalSelection, Vec<String>)> {
    let fallback = combine_intents(per_intent_lists, final_top_k);
    let blocks = intents
        .iter()
        .zip(per_intent_lists)
        .enumerate()
        .map(|(i, (intent, tools))| {
            format!("INTENT {}: '{intent}'\nLIST OF TOOLS FOR INTENT {}: {tools:?}\n", i + 1, i + 1)
        })
        .collect::<Vec<_>>()
        .join("\n");
    let k = final_top_k.to_string();
    let prompt = prompts.decomposed_reranker.render(&[
        ("user_question", user_question),
        ("intent_blocks", &blocks),
        ("top_k", &k),
    ]);
    let raw = client.complete(&prompt).map_err(|e| e.context("combining intents"))?;
    let picked = parse_string_list(&raw).unwrap_or_default();
    let mut warnings = Vec::new();
    let locate = |name: &str| {
        per_intent_lists.iter().enumerate().find_map(|(i, l)| l.iter().position(|t| t == name).map(|p| (i, p)))
    };
    let mut selection = FinalSelection::default();
    let mut taken = HashSet::new();
    for name in picked {
        if selection.tools.len() >= final_top_k {
            break;
        }
        match locate(&name) {
            Some((intent_index, pos)) if taken.insert(name.clone()) => {
                selection.tools.push(name.clone());
                selection.provenance.push(SelectionProvenance {
                    tool_name: name,
                    intent_index,
                    rank_in_intent: pos + 1,
                    round: 1,
                    contributing_variations: Vec::new(),
                    fused_score: None,
                });
            }
            Some(_) => {}
            None => warnings.push(format!("combiner named unknown tool `{name}`; dropped")),
        }
    }
    if selection.tools.is_empty() {
        warnings.push("combiner returned no valid tool names; using round-robin order".into());
    }
    for p in fallback.provenance {
        if selection.tools.len() >= final_top_k {
            break;
        }
        if taken.insert(p.tool_name.clone()) {
            selection.tools.push(p.tool_name.clone());
            selection.provenance.push(p);
        }
    }
    Ok((selection, warnings))
}
