//! Retrieval recall, tool-call scoring and token-cost estimation.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::dataset_io::{GoldenRecord, PredictionRecord, ToolCall, ToolDefinition};
use crate::error::{Result, ToolshedError};
use crate::knowledge_base::ToolshedIndex;
use crate::retriever::ToolRetriever;

pub const NAME_WEIGHT: f64 = 0.50;
pub const KEY_WEIGHT: f64 = 0.25;
pub const VALUE_WEIGHT: f64 = 0.25;

/// `|golden ∩ retrieved[..k]| / |golden|`.
pub fn recall_at_k<S: AsRef<str>>(retrieved: &[S], golden: &BTreeSet<String>, k: usize) -> Result<f64> {
    if golden.is_empty() {
        return Err(ToolshedError::contract("recall is undefined for an empty golden set"));
    }
    let hits = retrieved.iter().take(k).filter(|t| golden.contains(t.as_ref())).count();
    Ok(hits as f64 / golden.len() as f64)
}

/// Per-call recall of name, argument keys and argument values. All in `[0, 1]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SubScores {
    pub name_score: f64,
    pub key_score: f64,
    pub value_score: f64,
}

impl SubScores {
    pub const PERFECT: SubScores = SubScores { name_score: 1.0, key_score: 1.0, value_score: 1.0 };
    pub const MISS: SubScores = SubScores { name_score: 0.0, key_score: 0.0, value_score: 0.0 };

    pub fn new(name_score: f64, key_score: f64, value_score: f64) -> Self {
        SubScores { name_score, key_score, value_score }
    }
}

pub fn weighted_accuracy(s: &SubScores) -> f64 {
    NAME_WEIGHT * s.name_score + KEY_WEIGHT * s.key_score + VALUE_WEIGHT * s.value_score
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueMatch {
    /// Strings compared after trimming; numbers compared numerically.
    #[default]
    Normalized,
    /// Exact JSON equality.
    Strict,
}

pub fn values_match(predicted: &Value, golden: &Value, mode: ValueMatch) -> bool {
    if mode == ValueMatch::Strict {
        return predicted == golden;
    }
    match (predicted, golden) {
        (Value::String(a), Value::String(b)) => a.trim() == b.trim(),
        (Value::Number(a), Value::Number(b)) => match (a.as_f64(), b.as_f64()) {
            (Some(x), Some(y)) => x == y,
            _ => a == b,
        },
        (Value::Array(a), Value::Array(b)) => {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| values_match(x, y, mode))
        }
        (Value::Object(a), Value::Object(b)) => {
            a.len() == b.len() && a.iter().all(|(k, x)| b.get(k).is_some_and(|y| values_match(x, y, mode)))
        }
        _ => predicted == golden,
    }
}

/// Score one predicted call against one golden call. Extra predicted keys
/// affect neither key nor value score.
pub fn score_tool_call(predicted: &ToolCall, golden: &ToolCall, mode: ValueMatch) -> SubScores {
    let name_score = if predicted.tool_name == golden.tool_name { 1.0 } else { 0.0 };
    if golden.arguments.is_empty() {
        return SubScores { name_score, key_score: 1.0, value_score: 1.0 };
    }
    let total = golden.arguments.len() as f64;
    let mut keys = 0usize;
    let mut values = 0usize;
    for (key, gv) in &golden.arguments {
        if let Some(pv) = predicted.arguments.get(key) {
            keys += 1;
            if values_match(pv, gv, mode) {
                values += 1;
            }
        }
    }
    SubScores { name_score, key_score: keys as f64 / total, value_score: values as f64 / total }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RecordScore {
    pub scores: SubScores,
    pub weighted: f64,
    /// Predicted calls left over after pairing.
    pub surplus_predicted: usize,
    pub unmatched_golden: usize,
}

/// Pair each golden call with the first unmatched predicted call of the same
/// name; unpaired golden calls score zero. Averaged over golden calls.
pub fn aggregate_record(predicted: &[ToolCall], golden: &[ToolCall], mode: ValueMatch) -> Result<RecordScore> {
    if golden.is_empty() {
        return Err(ToolshedError::contract("a golden record needs at least one expected call"));
    }
    let mut used = vec![false; predicted.len()];
    let mut sum = SubScores::default();
    let mut unmatched_golden = 0;
    for g in golden {
        let slot = predicted.iter().enumerate().position(|(i, p)| !used[i] && p.tool_name == g.tool_name);
        let s = match slot {
            Some(i) => {
                used[i] = true;
                score_tool_call(&predicted[i], g, mode)
            }
            None => {
                unmatched_golden += 1;
                SubScores::MISS
            }
        };
        sum.name_score += s.name_score;
        sum.key_score += s.key_score;
        sum.value_score += s.value_score;
    }
    let n = golden.len() as f64;
    let scores = SubScores::new(sum.name_score / n, sum.key_score / n, sum.value_score / n);
    Ok(RecordScore {
        scores,
        weighted: weighted_accuracy(&scores),
        surplus_predicted: used.iter().filter(|u| !**u).count(),
        unmatched_golden,
    })
}

/// Prompt-token estimate for a set of tool definitions: each tool's
/// function-definition JSON costs `ceil(bytes / bytes_per_token)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenEstimator {
    pub bytes_per_token: usize,
}

impl Default for TokenEstimator {
    fn default() -> Self {
        TokenEstimator { bytes_per_token: 4 }
    }
}

impl TokenEstimator {
    pub fn tool_bytes(tool: &ToolDefinition) -> usize {
        serde_json::to_string(&tool.to_function_definition()).expect("json values serialize").len()
    }

    pub fn count_tool(&self, tool: &ToolDefinition) -> u64 {
        Self::tool_bytes(tool).div_ceil(self.bytes_per_token.max(1)) as u64
    }

    pub fn count(&self, tools: &[ToolDefinition]) -> u64 {
        tools.iter().map(|t| self.count_tool(t)).sum()
    }
}

pub fn count_tokens(tools: &[ToolDefinition]) -> u64 {
    TokenEstimator::default().count(tools)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryRecall {
    pub query_id: String,
    pub recall_at: BTreeMap<usize, f64>,
}

/// Mean recall at each k over a query set. Monotone in k by construction.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RetrievalMetrics {
    pub recall_at: BTreeMap<usize, f64>,
    pub per_query: Vec<QueryRecall>,
}

impl RetrievalMetrics {
    pub fn from_rankings(rankings: &[(String, Vec<String>, BTreeSet<String>)], ks: &[usize]) -> Result<Self> {
        let mut per_query = Vec::with_capacity(rankings.len());
        let mut totals: BTreeMap<usize, f64> = ks.iter().map(|&k| (k, 0.0)).collect();
        for (query_id, retrieved, golden) in rankings {
            let mut recall_at = BTreeMap::new();
            for &k in ks {
                let r = recall_at_k(retrieved, golden, k).map_err(|e| e.context(format!("query {query_id}")))?;
                recall_at.insert(k, r);
                *totals.get_mut(&k).expect("k registered") += r;
            }
            per_query.push(QueryRecall { query_id: query_id.clone(), recall_at });
        }
        let n = rankings.len().max(1) as f64;
        let recall_at = totals.into_iter().map(|(k, s)| (k, s / n)).collect();
        Ok(RetrievalMetrics { recall_at, per_query })
    }
}

/// Every golden tool must exist in the index.
pub fn check_goldens_in_index(index: &ToolshedIndex, goldens: &[GoldenRecord]) -> Result<()> {
    for g in goldens {
        for t in g.golden_tools() {
            if !index.contains(&t) {
                return Err(ToolshedError::contract(format!(
                    "golden tool `{t}` for query {} is not in the index",
                    g.query_id
                )));
            }
        }
    }
    Ok(())
}

/// Run the pipeline once per query at the largest k and score every k as a
/// prefix of that ranking.
pub fn evaluate_retrieval(
    retriever: &ToolRetriever<'_>,
    goldens: &[GoldenRecord],
    ks: &[usize],
) -> Result<(RetrievalMetrics, Vec<Vec<String>>)> {
    check_goldens_in_index(retriever.index, goldens)?;
    let max_k = ks.iter().copied().max().ok_or_else(|| ToolshedError::config("k list is empty"))?;
    let mut fusion = retriever.fusion;
    fusion.final_top_k = max_k;
    let at_max = ToolRetriever { fusion, ..*retriever };
    let selections: Vec<Vec<String>> = goldens
        .par_iter()
        .map(|g| {
            at_max
                .retrieve(&g.query_text, None)
                .map(|o| o.selection.tools)
                .map_err(|e| e.context(format!("query {}", g.query_id)))
        })
        .collect::<Result<_>>()?;
    let rankings: Vec<_> = goldens
        .iter()
        .zip(&selections)
        .map(|(g, sel)| (g.query_id.clone(), sel.clone(), g.golden_tools().into_iter().collect()))
        .collect();
    Ok((RetrievalMetrics::from_rankings(&rankings, ks)?, selections))
}

/// Score predicted calls against goldens. Queries without a prediction score
/// as if nothing was predicted.
pub fn score_predictions(
    goldens: &[GoldenRecord],
    predictions: &[PredictionRecord],
    mode: ValueMatch,
) -> Result<BTreeMap<String, RecordScore>> {
    let by_id: HashMap<&str, &PredictionRecord> = predictions.iter().map(|p| (p.query_id.as_str(), p)).collect();
    goldens
        .iter()
        .map(|g| {
            let predicted = by_id.get(g.query_id.as_str()).map(|p| p.predicted_calls.as_slice()).unwrap_or(&[]);
            aggregate_record(predicted, &g.expected_calls, mode)
                .map(|s| (g.query_id.clone(), s))
                .map_err(|e| e.context(format!("query {}", g.query_id)))
        })
        .collect()
}

/// Per-query records followed by one summary record.
pub fn report_records(metrics: &RetrievalMetrics, calls: Option<&BTreeMap<String, RecordScore>>) -> Vec<Value> {
    let mut out = Vec::with_capacity(metrics.per_query.len() + 1);
    let mut sums = SubScores::default();
    let mut weighted_sum = 0.0;
    let mut scored = 0usize;
    for q in &metrics.per_query {
        let mut rec = Map::new();
        rec.insert("record".into(), json!("query"));
        rec.insert("query_id".into(), json!(q.query_id));
        for (k, r) in &q.recall_at {
            rec.insert(format!("recall@{k}"), json!(r));
        }
        if let Some(s) = calls.and_then(|c| c.get(&q.query_id)) {
            rec.insert("name_score".into(), json!(s.scores.name_score));
            rec.insert("key_score".into(), json!(s.scores.key_score));
            rec.insert("value_score".into(), json!(s.scores.value_score));
            rec.insert("weighted_score".into(), json!(s.weighted));
            rec.insert("surplus_predicted_calls".into(), json!(s.surplus_predicted));
            sums.name_score += s.scores.name_score;
            sums.key_score += s.scores.key_score;
            sums.value_score += s.scores.value_score;
            weighted_sum += s.weighted;
            scored += 1;
        }
        out.push(Value::Object(rec));
    }
    let mut summary = Map::new();
    summary.insert("record".into(), json!("summary"));
    summary.insert("queries".into(), json!(metrics.per_query.len()));
    for (k, r) in &metrics.recall_at {
        summary.insert(format!("recall@{k}"), json!(r));
    }
    if scored > 0 {
        let n = scored as f64;
        summary.insert("name_score".into(), json!(sums.name_score / n));
        summary.insert("key_score".into(), json!(sums.key_score / n));
        summary.insert("value_score".into(), json!(sums.value_score / n));
        summary.insert("mean_weighted_accuracy".into(), json!(weighted_sum / n));
    }
    out.push(Value::Object(summary));
    out
}

pub fn records_to_jsonl(records: &[Value]) -> String {
    records.iter().map(|r| format!("{r}\n")).collect()
}
