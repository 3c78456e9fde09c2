//! One function per subcommand. Each takes the merged config.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context};
use serde_json::json;
use toolshed_core::composer::EnrichmentGenerator;
use toolshed_core::evaluation::{evaluate_retrieval, records_to_jsonl, report_records, score_predictions};
use toolshed_core::pipeline::STAGE_ORDER;
use toolshed_core::sweep::{apply_curve, emit_detail, SweepInputs, SUBSET_SAMPLING};
use toolshed_core::{
    build_index, compose_catalog, emit_grid, load_index, parse_golden_dataset, parse_predictions, parse_tool_catalog,
    run_retrieval_sweep, save_index, validate_catalog, Embedder, EnrichmentFixtures, GoldenRecord, HttpLlmClient,
    LlmClient, QueryFixtures, QueryTransformer, RerankerMode, SimpleAgentCurve, SweepPlan, TokenEstimator,
    ToolDefinition, ToolRetriever, ToolshedError, ToolshedIndex, TransformerMode,
};

use crate::config::{EnrichmentMode, RunConfig};
use crate::output::{manifest_path_for, now, read_input, sidecar_path, RunManifest};

/// Catalog or golden findings; exit status 1.
#[derive(Debug)]
pub struct ValidationFailed(pub String);

impl std::fmt::Display for ValidationFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ValidationFailed {}

fn load_catalog(path: &Path) -> anyhow::Result<Vec<ToolDefinition>> {
    let raw = read_input(path, "catalog")?;
    Ok(parse_tool_catalog(&raw).map_err(|e| e.context(path.display()))?)
}

fn load_goldens(path: &Path) -> anyhow::Result<Vec<GoldenRecord>> {
    let raw = read_input(path, "golden dataset")?;
    Ok(parse_golden_dataset(&raw).map_err(|e| e.context(path.display()))?)
}

/// Print findings to stderr and fail when there are any.
fn require_clean(catalog: &[ToolDefinition]) -> anyhow::Result<()> {
    let report = validate_catalog(catalog);
    if report.is_clean() {
        return Ok(());
    }
    for f in &report.findings {
        eprintln!("finding: {f}");
    }
    Err(ValidationFailed(format!("catalog has {} validation finding(s)", report.findings.len())).into())
}

fn llm_client(config: &RunConfig) -> anyhow::Result<Option<Arc<dyn LlmClient>>> {
    let needed = config.transformer.mode == TransformerMode::Llm
        || config.fusion.reranker == RerankerMode::Llm
        || config.enrichment == EnrichmentMode::Llm;
    if !needed {
        return Ok(None);
    }
    match HttpLlmClient::from_env() {
        Some(c) => Ok(Some(Arc::new(c))),
        None => Err(ToolshedError::config(
            "an llm stage is configured but TOOLSHED_LLM_ENDPOINT is not set",
        )
        .into()),
    }
}

fn embedder(config: &mut RunConfig, index: Option<&ToolshedIndex>) -> anyhow::Result<Embedder> {
    config.provider.resolve();
    if let Some(idx) = index {
        config.provider.dimension = idx.dimension();
    }
    Ok(Embedder::from_config(&config.provider.to_provider_config())?)
}

fn save_embed_cache(config: &RunConfig, embedder: &Embedder) -> anyhow::Result<()> {
    if let Some(path) = &config.provider.cache_path {
        crate::output::write_atomic(path, &embedder.cache_to_bytes())?;
    }
    Ok(())
}

fn transformer(config: &RunConfig, llm: Option<Arc<dyn LlmClient>>) -> anyhow::Result<QueryTransformer> {
    let fixtures = match &config.inputs.query_fixtures {
        Some(p) => {
            let raw = String::from_utf8(read_input(p, "query fixtures")?).context("query fixtures are not UTF-8")?;
            QueryFixtures::parse(&raw).map_err(|e| e.context(p.display()))?
        }
        None => QueryFixtures::default(),
    };
    Ok(QueryTransformer::new(config.transformer.clone(), fixtures, llm)?)
}

fn enrichment_generator(config: &RunConfig, llm: Option<Arc<dyn LlmClient>>) -> anyhow::Result<EnrichmentGenerator> {
    Ok(match config.enrichment {
        EnrichmentMode::Null => EnrichmentGenerator::Null,
        EnrichmentMode::Fixture => {
            let p = RunConfig::require(&config.inputs.enrichment_fixtures, "--enrichment-fixtures")?;
            let raw = String::from_utf8(read_input(p, "enrichment fixtures")?).context("fixtures are not UTF-8")?;
            EnrichmentGenerator::Fixture(EnrichmentFixtures::parse(&raw).map_err(|e| e.context(p.display()))?)
        }
        EnrichmentMode::Llm => EnrichmentGenerator::Llm {
            client: llm.expect("checked by llm_client"),
            prompts: Box::new(config.transformer.prompts()?),
        },
    })
}

fn build_from_catalog(
    config: &mut RunConfig,
    catalog: &[ToolDefinition],
) -> anyhow::Result<(ToolshedIndex, Embedder)> {
    let llm = llm_client(config)?;
    let generator = enrichment_generator(config, llm)?;
    let docs = compose_catalog(catalog, &generator, &config.composer)?;
    let embedder = embedder(config, None)?;
    let index = build_index(docs, &embedder, &config.composer)?;
    Ok((index, embedder))
}

pub fn validate(config: RunConfig) -> anyhow::Result<()> {
    let path = RunConfig::require(&config.inputs.catalog, "--catalog")?;
    let catalog = load_catalog(path)?;
    require_clean(&catalog)?;
    println!("catalog ok: {} tools", catalog.len());
    if let Some(golden_path) = &config.inputs.golden {
        let goldens = load_goldens(golden_path)?;
        let names: BTreeSet<&str> = catalog.iter().map(|t| t.name.as_str()).collect();
        let mut missing = 0;
        for g in &goldens {
            for t in g.golden_tools() {
                if !names.contains(t.as_str()) {
                    eprintln!("finding: query {} expects tool `{t}`, which is not in the catalog", g.query_id);
                    missing += 1;
                }
            }
        }
        if missing > 0 {
            return Err(ValidationFailed(format!("{missing} golden tool reference(s) are not in the catalog")).into());
        }
        println!("golden ok: {} queries", goldens.len());
    }
    Ok(())
}

pub fn index(mut config: RunConfig, manifest_path: Option<&Path>) -> anyhow::Result<()> {
    let started = now();
    let catalog_path = RunConfig::require(&config.inputs.catalog, "--catalog")?.clone();
    let out = RunConfig::require(&config.output, "--out")?.clone();
    let catalog = load_catalog(&catalog_path)?;
    require_clean(&catalog)?;
    let (index, embedder) = build_from_catalog(&mut config, &catalog)?;

    let mut manifest = RunManifest::new("index", &config, started);
    manifest.emit(&out, &save_index(&index))?;
    save_embed_cache(&config, &embedder)?;
    manifest.summary = json!({
        "entries": index.len(),
        "dimension": index.dimension(),
        "fingerprint": index.fingerprint(),
        "embedder": index.embedder_id(),
        "provider_calls": embedder.provider_calls(),
    });
    manifest.finish(&manifest_path.map(Path::to_owned).unwrap_or_else(|| manifest_path_for(&out)))?;
    println!("indexed {} tools, fingerprint {}", index.len(), index.fingerprint());
    Ok(())
}

fn load_index_file(path: &Path) -> anyhow::Result<ToolshedIndex> {
    let raw = read_input(path, "index")?;
    Ok(load_index(&raw).map_err(|e| e.context(path.display()))?)
}

fn queries(config: &RunConfig) -> anyhow::Result<Vec<String>> {
    let mut out = Vec::new();
    if let Some(q) = &config.inputs.query {
        out.push(q.clone());
    }
    if let Some(p) = &config.inputs.queries {
        let raw = String::from_utf8(read_input(p, "queries")?).context("queries file is not UTF-8")?;
        out.extend(raw.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_owned));
    }
    if out.is_empty() {
        bail!("missing --query or --queries");
    }
    Ok(out)
}

pub fn retrieve(mut config: RunConfig, manifest_path: Option<&Path>) -> anyhow::Result<()> {
    let started = now();
    config.fusion.validate()?;
    let index = load_index_file(RunConfig::require(&config.inputs.index, "--index")?)?;
    let queries = queries(&config)?;
    let embedder = embedder(&mut config, Some(&index))?;
    let transformer = transformer(&config, llm_client(&config)?)?;
    let retriever = ToolRetriever::new(&index, &embedder, &transformer, config.fusion)?;

    let mut lines = String::new();
    for (qi, q) in queries.iter().enumerate() {
        let outcome = retriever.retrieve(q, None).map_err(|e| e.context(format!("query {qi}")))?;
        for w in &outcome.warnings {
            log::warn!("query {qi}: {w}");
        }
        for (rank, p) in outcome.selection.provenance.iter().enumerate() {
            let rec = json!({
                "query_index": qi,
                "query": q,
                "rank": rank + 1,
                "tool_name": p.tool_name,
                "intent_index": p.intent_index,
                "intent": outcome.plan.intents[p.intent_index],
                "rank_in_intent": p.rank_in_intent,
                "round": p.round,
                "fused_score": p.fused_score,
                "contributing_variations": p.contributing_variations,
            });
            lines.push_str(&rec.to_string());
            lines.push('\n');
        }
        if outcome.re_retrieval.would_re_retrieve {
            log::info!("query {qi}: re-retrieval would be advised: {}", outcome.re_retrieval.reasons.join("; "));
        }
    }
    save_embed_cache(&config, &embedder)?;

    match config.output.clone() {
        Some(out) => {
            let mut manifest = RunManifest::new("retrieve", &config, started);
            manifest.emit(&out, lines.as_bytes())?;
            manifest.summary = json!({ "queries": queries.len(), "index_fingerprint": index.fingerprint(), "stage_order": STAGE_ORDER });
            manifest.finish(&manifest_path.map(Path::to_owned).unwrap_or_else(|| manifest_path_for(&out)))?;
        }
        None => {
            std::io::stdout().lock().write_all(lines.as_bytes())?;
            if let Some(mp) = manifest_path {
                let mut manifest = RunManifest::new("retrieve", &config, started);
                manifest.summary = json!({ "queries": queries.len(), "index_fingerprint": index.fingerprint(), "stage_order": STAGE_ORDER });
                manifest.finish(mp)?;
            }
        }
    }
    Ok(())
}

pub fn eval(mut config: RunConfig, manifest_path: Option<&Path>) -> anyhow::Result<()> {
    let started = now();
    config.fusion.validate()?;
    for &k in &config.eval.ks {
        toolshed_core::fusion::check_top_k(k)?;
    }
    let out = RunConfig::require(&config.output, "--out")?.clone();
    let index = load_index_file(RunConfig::require(&config.inputs.index, "--index")?)?;
    let goldens = load_goldens(RunConfig::require(&config.inputs.golden, "--golden")?)?;
    let embedder = embedder(&mut config, Some(&index))?;
    let transformer = transformer(&config, llm_client(&config)?)?;
    let retriever = ToolRetriever::new(&index, &embedder, &transformer, config.fusion)?;
    let (metrics, _) = evaluate_retrieval(&retriever, &goldens, &config.eval.ks)?;

    let calls = match &config.inputs.predictions {
        Some(p) => {
            let raw = read_input(p, "predictions")?;
            let preds = parse_predictions(&raw).map_err(|e| e.context(p.display()))?;
            Some(score_predictions(&goldens, &preds, config.eval.value_match)?)
        }
        None => None,
    };
    let records = report_records(&metrics, calls.as_ref());
    let summary = records.last().cloned().expect("summary record is always present");
    save_embed_cache(&config, &embedder)?;

    let mut manifest = RunManifest::new("eval", &config, started);
    manifest.emit(&out, records_to_jsonl(&records).as_bytes())?;
    manifest.summary = summary.clone();
    manifest.summary["stage_order"] = json!(STAGE_ORDER);
    manifest.finish(&manifest_path.map(Path::to_owned).unwrap_or_else(|| manifest_path_for(&out)))?;

    for (k, r) in &metrics.recall_at {
        println!("recall@{k}: {r:.6}");
    }
    if let Some(w) = summary.get("mean_weighted_accuracy").and_then(|v| v.as_f64()) {
        println!("mean weighted accuracy: {w:.6}");
    }
    Ok(())
}

pub fn sweep(mut config: RunConfig, manifest_path: Option<&Path>) -> anyhow::Result<()> {
    let started = now();
    config.fusion.validate()?;
    let out = RunConfig::require(&config.output, "--out")?.clone();
    let catalog = load_catalog(RunConfig::require(&config.inputs.catalog, "--catalog")?)?;
    require_clean(&catalog)?;
    let goldens = load_goldens(RunConfig::require(&config.inputs.golden, "--golden")?)?;
    let plan = SweepPlan::new(&config.sweep.m_values, &config.sweep.k_values, config.seed, catalog.len())?;
    let curve = match &config.inputs.curve {
        Some(p) => Some(SimpleAgentCurve::parse_csv(&read_input(p, "curve")?).map_err(|e| e.context(p.display()))?),
        None => None,
    };

    let (index, embedder) = build_from_catalog(&mut config, &catalog)?;
    let transformer = transformer(&config, llm_client(&config)?)?;
    let inputs = SweepInputs {
        index: &index,
        catalog: &catalog,
        goldens: &goldens,
        embedder: &embedder,
        transformer: &transformer,
        fusion: config.fusion,
        tokens: TokenEstimator { bytes_per_token: config.eval.bytes_per_token },
    };
    let mut outcome = run_retrieval_sweep(&inputs, &plan)?;
    if let Some(c) = &curve {
        apply_curve(&mut outcome.cells, c)?;
    }
    save_embed_cache(&config, &embedder)?;

    let mut manifest = RunManifest::new("sweep", &config, started);
    manifest.emit(&out, &emit_grid(&outcome.cells))?;
    manifest.emit(&sidecar_path(&out, "detail"), &emit_detail(&outcome))?;
    manifest.summary = json!({
        "cells": outcome.cells.len(),
        "subset_sampling": SUBSET_SAMPLING,
        "stage_order": STAGE_ORDER,
        "skipped": outcome.skipped,
        "failed": outcome.failed,
    });
    manifest.finish(&manifest_path.map(Path::to_owned).unwrap_or_else(|| manifest_path_for(&out)))?;
    println!(
        "{} cells written, {} skipped, {} failed",
        outcome.cells.len(),
        outcome.skipped.len(),
        outcome.failed.len()
    );
    Ok(())
}
