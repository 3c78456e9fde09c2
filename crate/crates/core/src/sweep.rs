//! Retrieval accuracy and token cost over a (tool-M × top-k) grid, plus the
//! product model of expected agent accuracy.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::Serialize;

use crate::dataset_io::{GoldenRecord, ToolDefinition};
use crate::embedding::Embedder;
use crate::error::{Result, ToolshedError};
use crate::evaluation::{recall_at_k, TokenEstimator};
use crate::fusion::{check_top_k, FusionConfig, MAX_TOOLS_PER_REQUEST};
use crate::knowledge_base::ToolshedIndex;
use crate::pipeline::QueryTransformer;
use crate::retriever::ToolRetriever;

/// How tool-M subsets are drawn; recorded in sweep manifests.
pub const SUBSET_SAMPLING: &str =
    "per query: its golden tools plus a seeded uniform draw of distractors, nested across tool_M";

pub const GRID_HEADER: [&str; 5] = ["tool_M", "top_k", "retrieval_accuracy", "token_estimate", "modeled_agent_accuracy"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub tool_m: usize,
    pub top_k: usize,
    /// Mean recall@k over queries.
    pub retrieval_accuracy: f64,
    /// Fraction of queries whose golden tools were all selected.
    pub all_golden_found_rate: f64,
    /// Mean token estimate of the selected tools, rounded to the nearest integer.
    pub token_estimate: u64,
    pub modeled_agent_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellIssue {
    pub tool_m: usize,
    pub top_k: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SweepOutcome {
    pub cells: Vec<SweepCell>,
    /// Cells outside `top_k <= tool_M`.
    pub skipped: Vec<CellIssue>,
    pub failed: Vec<CellIssue>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPlan {
    pub m_values: Vec<usize>,
    pub k_values: Vec<usize>,
    pub seed: u64,
}

impl SweepPlan {
    /// Sorted, deduplicated, bounds-checked against a corpus of `catalog_len` tools.
    pub fn new(m_values: &[usize], k_values: &[usize], seed: u64, catalog_len: usize) -> Result<Self> {
        if m_values.is_empty() || k_values.is_empty() {
            return Err(ToolshedError::config("sweep needs at least one tool-M and one top-k value"));
        }
        for &k in k_values {
            check_top_k(k)?;
        }
        for &m in m_values {
            if m == 0 || m > catalog_len {
                return Err(ToolshedError::config(format!(
                    "tool-M = {m} is outside 1..={catalog_len} (catalog size)"
                )));
            }
        }
        let sorted = |xs: &[usize]| xs.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
        Ok(SweepPlan { m_values: sorted(m_values), k_values: sorted(k_values), seed })
    }
}

/// Everything a sweep reads. `index` holds the full catalog.
#[derive(Clone, Copy)]
pub struct SweepInputs<'a> {
    pub index: &'a ToolshedIndex,
    pub catalog: &'a [ToolDefinition],
    pub goldens: &'a [GoldenRecord],
    pub embedder: &'a Embedder,
    pub transformer: &'a QueryTransformer,
    /// `final_top_k` is overridden per cell.
    pub fusion: FusionConfig,
    pub tokens: TokenEstimator,
}

/// Run the grid. For each tool-M, every query gets its own subset that keeps
/// its golden tools; subsets share the seed, so they nest across tool-M.
/// The pipeline runs once per (tool-M, query) at the largest admissible k and
/// every smaller k scores a prefix of that selection.
pub fn run_retrieval_sweep(inputs: &SweepInputs<'_>, plan: &SweepPlan) -> Result<SweepOutcome> {
    let SweepInputs { index, catalog, goldens, embedder, transformer, fusion, tokens } = *inputs;
    if goldens.is_empty() {
        return Err(ToolshedError::config("sweep needs at least one golden query"));
    }
    index.check_compatible(embedder)?;
    let definitions: HashMap<&str, &ToolDefinition> = catalog.iter().map(|t| (t.name.as_str(), t)).collect();
    let mut outcome = SweepOutcome::default();

    for &m in &plan.m_values {
        let ks: Vec<usize> = plan.k_values.iter().copied().filter(|&k| k <= m).collect();
        for &k in plan.k_values.iter().filter(|&&k| k > m) {
            outcome.skipped.push(CellIssue { tool_m: m, top_k: k, reason: format!("top_k {k} > tool_M {m}") });
        }
        let Some(&max_k) = ks.last() else { continue };
        let max_k = max_k.min(MAX_TOOLS_PER_REQUEST);

        let per_query: Result<Vec<(Vec<String>, BTreeSet<String>)>> = goldens
            .par_iter()
            .map(|g| {
                let golden: BTreeSet<String> = g.golden_tools().into_iter().collect();
                let sub = index.subset(m, &golden, plan.seed)?;
                let fusion = FusionConfig { final_top_k: max_k, ..fusion };
                let retriever = ToolRetriever::new(&sub, embedder, transformer, fusion)?;
                let tools = retriever.retrieve(&g.query_text, None)?.selection.tools;
                Ok((tools, golden))
            })
            .collect::<Vec<Result<_>>>()
            .into_iter()
            .zip(goldens)
            .map(|(r, g)| r.map_err(|e| e.context(format!("query {}", g.query_id))))
            .collect();

        let per_query = match per_query {
            Ok(v) => v,
            Err(e) => {
                log::warn!("tool_M {m}: {e}");
                outcome.failed.extend(ks.iter().map(|&k| CellIssue { tool_m: m, top_k: k, reason: e.to_string() }));
                continue;
            }
        };

        for &k in &ks {
            let mut recall_sum = 0.0;
            let mut all_found = 0usize;
            let mut token_sum = 0u64;
            let mut failure = None;
            for (tools, golden) in &per_query {
                let prefix = &tools[..k.min(tools.len())];
                let r = recall_at_k(prefix, golden, k)?;
                recall_sum += r;
                all_found += usize::from(golden.iter().all(|t| prefix.contains(t)));
                let mut cost = 0;
                for name in prefix {
                    match definitions.get(name.as_str()) {
                        Some(def) => cost += tokens.count_tool(def),
                        None => failure = Some(format!("selected tool `{name}` has no definition in the catalog")),
                    }
                }
                token_sum += cost;
            }
            if let Some(reason) = failure {
                outcome.failed.push(CellIssue { tool_m: m, top_k: k, reason });
                continue;
            }
            let n = per_query.len() as f64;
            outcome.cells.push(SweepCell {
                tool_m: m,
                top_k: k,
                retrieval_accuracy: recall_sum / n,
                all_golden_found_rate: all_found as f64 / n,
                token_estimate: (token_sum as f64 / n).round() as u64,
                modeled_agent_accuracy: None,
            });
        }
    }
    outcome.cells.sort_by_key(|c| (c.tool_m, c.top_k));
    Ok(outcome)
}

/// Accuracy of an agent equipped with `m` tools, from an input curve.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SimpleAgentCurve {
    points: BTreeMap<usize, f64>,
}

impl SimpleAgentCurve {
    pub fn new(points: BTreeMap<usize, f64>) -> Result<Self> {
        for (&m, &a) in &points {
            if m == 0 || m > MAX_TOOLS_PER_REQUEST {
                return Err(ToolshedError::Model(format!("curve point m = {m} is outside 1..=128")));
            }
            if !(0.0..=1.0).contains(&a) {
                return Err(ToolshedError::Model(format!("curve accuracy {a} at m = {m} is outside [0, 1]")));
            }
        }
        Ok(SimpleAgentCurve { points })
    }

    /// CSV with header `m,accuracy`.
    pub fn parse_csv(raw: &[u8]) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(raw);
        let headers = reader.headers().map_err(|e| ToolshedError::Model(format!("curve header: {e}")))?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| ToolshedError::Model(format!("curve file lacks a `{name}` column")))
        };
        let (mi, ai) = (col("m")?, col("accuracy")?);
        let mut points = BTreeMap::new();
        for (i, row) in reader.records().enumerate() {
            let line = i + 2;
            let row = row.map_err(|e| ToolshedError::Parse { line, message: e.to_string() })?;
            let field = |j: usize| row.get(j).unwrap_or("").trim();
            let m: usize = field(mi)
                .parse()
                .map_err(|_| ToolshedError::Parse { line, message: format!("m `{}` is not an integer", field(mi)) })?;
            let a: f64 = field(ai)
                .parse()
                .map_err(|_| ToolshedError::Parse { line, message: format!("accuracy `{}` is not a number", field(ai)) })?;
            if points.insert(m, a).is_some() {
                return Err(ToolshedError::Parse { line, message: format!("m = {m} appears twice") });
            }
        }
        Self::new(points)
    }

    pub fn points(&self) -> &BTreeMap<usize, f64> {
        &self.points
    }

    /// Exact point, or linear interpolation between the bracketing points.
    pub fn at(&self, m: usize) -> Result<f64> {
        if let Some(&a) = self.points.get(&m) {
            return Ok(a);
        }
        let below = self.points.range(..m).next_back();
        let above = self.points.range(m..).next();
        match (below, above) {
            (Some((&m0, &a0)), Some((&m1, &a1))) => {
                let t = (m - m0) as f64 / (m1 - m0) as f64;
                Ok(a0 + t * (a1 - a0))
            }
            _ if self.points.is_empty() => Err(ToolshedError::Model("simple-agent curve is empty".into())),
            _ => Err(ToolshedError::Model(format!(
                "top_k = {m} is outside the curve's range {}..={}",
                self.points.keys().next().unwrap(),
                self.points.keys().next_back().unwrap()
            ))),
        }
    }
}

/// `curve(top_k) × retrieval_accuracy`, clamped to `[0, 1]`.
pub fn expected_agent_accuracy(cell: &SweepCell, curve: &SimpleAgentCurve) -> Result<f64> {
    Ok((curve.at(cell.top_k)? * cell.retrieval_accuracy).clamp(0.0, 1.0))
}

/// Fill the modeled column of every cell.
pub fn apply_curve(cells: &mut [SweepCell], curve: &SimpleAgentCurve) -> Result<()> {
    for c in cells {
        c.modeled_agent_accuracy = Some(expected_agent_accuracy(c, curve)?);
    }
    Ok(())
}

fn write_csv(header: &[&str], rows: Vec<Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("writing to a Vec cannot fail");
    for r in rows {
        w.write_record(&r).expect("writing to a Vec cannot fail");
    }
    w.into_inner().expect("writing to a Vec cannot fail")
}

fn real(x: f64) -> String {
    format!("{x:.6}")
}

fn optional(x: Option<f64>) -> String {
    x.map(real).unwrap_or_default()
}

/// The grid CSV: rows sorted by (tool_M, top_k), reals to 6 decimals.
pub fn emit_grid(cells: &[SweepCell]) -> Vec<u8> {
    let mut sorted: Vec<&SweepCell> = cells.iter().collect();
    sorted.sort_by_key(|c| (c.tool_m, c.top_k));
    let rows = sorted
        .into_iter()
        .map(|c| {
            vec![
                c.tool_m.to_string(),
                c.top_k.to_string(),
                real(c.retrieval_accuracy),
                c.token_estimate.to_string(),
                optional(c.modeled_agent_accuracy),
            ]
        })
        .collect();
    write_csv(&GRID_HEADER, rows)
}

/// Every cell including skipped and failed ones, with the all-found rate.
pub fn emit_detail(outcome: &SweepOutcome) -> Vec<u8> {
    let header = [
        "tool_M",
        "top_k",
        "status",
        "retrieval_accuracy",
        "all_golden_found_rate",
        "token_estimate",
        "modeled_agent_accuracy",
        "note",
    ];
    let mut rows: Vec<((usize, usize), Vec<String>)> = Vec::new();
    for c in &outcome.cells {
        rows.push((
            (c.tool_m, c.top_k),
            vec![
                c.tool_m.to_string(),
                c.top_k.to_string(),
                "ok".into(),
                real(c.retrieval_accuracy),
                real(c.all_golden_found_rate),
                c.token_estimate.to_string(),
                optional(c.modeled_agent_accuracy),
                String::new(),
            ],
        ));
    }
    for (status, issues) in [("skipped", &outcome.skipped), ("failed", &outcome.failed)] {
        for i in issues {
            let mut row = vec![i.tool_m.to_string(), i.top_k.to_string(), status.into()];
            row.extend(std::iter::repeat_n(String::new(), 4));
            row.push(i.reason.clone());
            rows.push(((i.tool_m, i.top_k), row));
        }
    }
    rows.sort_by_key(|(key, _)| *key);
    write_csv(&header, rows.into_iter().map(|(_, r)| r).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(m: usize, k: usize, acc: f64, tokens: u64, modeled: Option<f64>) -> SweepCell {
        SweepCell {
            tool_m: m,
            top_k: k,
            retrieval_accuracy: acc,
            all_golden_found_rate: acc,
            token_estimate: tokens,
            modeled_agent_accuracy: modeled,
        }
    }

    #[test]
    fn grid_serialization() {
        assert_eq!(emit_grid(&[]), b"tool_M,top_k,retrieval_accuracy,token_estimate,modeled_agent_accuracy\n");
        let one = String::from_utf8(emit_grid(&[cell(100, 5, 0.95, 1200, None)])).unwrap();
        assert_eq!(one.lines().nth(1).unwrap(), "100,5,0.950000,1200,");
        let unsorted = [cell(100, 5, 0.5, 1, Some(0.25)), cell(50, 5, 0.5, 1, None), cell(50, 1, 0.5, 1, None)];
        let text = String::from_utf8(emit_grid(&unsorted)).unwrap();
        let keys: Vec<&str> = text.lines().skip(1).map(|l| &l[..l.find(',').unwrap() + 2]).collect();
        assert_eq!(keys, ["50,1", "50,5", "100,5"]);
        assert!(text.ends_with("100,5,0.500000,1,0.250000\n"));
    }

    #[test]
    fn curve_interpolation_and_hull() {
        let curve = SimpleAgentCurve::parse_csv(b"m,accuracy\n1,1.0\n5,0.95\n25,0.75\n").unwrap();
        assert_eq!(curve.at(5).unwrap(), 0.95);
        assert!((curve.at(15).unwrap() - 0.85).abs() < 1e-12);
        assert!(matches!(curve.at(30), Err(ToolshedError::Model(_))));
        assert!(matches!(SimpleAgentCurve::default().at(1), Err(ToolshedError::Model(_))));
        assert!(SimpleAgentCurve::parse_csv(b"m,accuracy\n1,1.5\n").is_err());
        assert!(SimpleAgentCurve::parse_csv(b"m,accuracy\n200,0.5\n").is_err());
    }

    #[test]
    fn product_model_examples() {
        let curve = SimpleAgentCurve::parse_csv(b"m,accuracy\n1,1.0\n5,0.95\n").unwrap();
        assert_eq!(expected_agent_accuracy(&cell(10, 1, 0.9, 0, None), &curve).unwrap(), 0.9);
        assert!((expected_agent_accuracy(&cell(10, 5, 0.80, 0, None), &curve).unwrap() - 0.76).abs() < 1e-12);
        assert_eq!(expected_agent_accuracy(&cell(10, 5, 0.0, 0, None), &curve).unwrap(), 0.0);
    }

    #[test]
    fn plan_validation() {
        assert!(SweepPlan::new(&[50, 100], &[1, 200], 0, 100).is_err());
        assert!(SweepPlan::new(&[500], &[1], 0, 100).is_err());
        let p = SweepPlan::new(&[100, 50, 50], &[5, 1], 0, 100).unwrap();
        assert_eq!(p.m_values, [50, 100]);
        assert_eq!(p.k_values, [1, 5]);
    }
}
