use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use toolshed_core::serialize_tool_catalog;
use toolshed_core::synthetic::SyntheticCorpus;

fn toolshed(dir: &Path, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_toolshed"));
    for (key, _) in std::env::vars_os() {
        if key.to_string_lossy().starts_with("TOOLSHED_") {
            cmd.env_remove(key);
        }
    }
    cmd.args(args).current_dir(dir).output().unwrap()
}

fn setup() -> (tempfile::TempDir, SyntheticCorpus) {
    let dir = tempfile::tempdir().unwrap();
    let corpus = SyntheticCorpus::generate(40, 10, 7);
    std::fs::write(dir.path().join("catalog.jsonl"), serialize_tool_catalog(&corpus.tools)).unwrap();
    let out = toolshed(dir.path(), &["index", "--catalog", "catalog.jsonl", "--out", "kb.tskb"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    (dir, corpus)
}

#[test]
fn top_k_over_provider_limit_exits_one() {
    let (dir, _) = setup();
    let out = toolshed(dir.path(), &["retrieve", "--index", "kb.tskb", "--query", "anything", "--top-k", "200"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("128"));
}

#[test]
fn missing_input_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = toolshed(dir.path(), &["index", "--catalog", "absent.jsonl", "--out", "kb.tskb"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn duplicate_tool_names_fail_validation() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = SyntheticCorpus::generate(3, 0, 1);
    let tools = vec![corpus.tools[0].clone(), corpus.tools[1].clone(), corpus.tools[0].clone()];
    std::fs::write(dir.path().join("catalog.jsonl"), serialize_tool_catalog(&tools)).unwrap();
    let out = toolshed(dir.path(), &["validate", "--catalog", "catalog.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn fixture_decomposition_reports_provenance() {
    let (dir, corpus) = setup();
    let (a, b) = (&corpus.goldens[0].query_text, &corpus.goldens[1].query_text);
    let query = format!("{a}, and {b}");
    let fixture = serde_json::json!({ "query": query, "intents": [a, b] });
    std::fs::write(dir.path().join("fixtures.jsonl"), format!("{fixture}\n")).unwrap();
    let out = toolshed(
        dir.path(),
        &[
            "retrieve", "--index", "kb.tskb", "--query", &query, "--transformer", "fixture",
            "--query-fixtures", "fixtures.jsonl", "--top-k", "4",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let records: Vec<Value> =
        String::from_utf8(out.stdout).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 4);
    let firsts: Vec<(&str, u64)> =
        records[..2].iter().map(|r| (r["tool_name"].as_str().unwrap(), r["intent_index"].as_u64().unwrap())).collect();
    assert_eq!(
        firsts,
        [
            (corpus.goldens[0].expected_calls[0].tool_name.as_str(), 0),
            (corpus.goldens[1].expected_calls[0].tool_name.as_str(), 1)
        ]
    );
    assert!(records.iter().all(|r| r["round"].as_u64().unwrap() >= 1));
}

#[test]
fn eval_writes_report_and_manifest() {
    let (dir, corpus) = setup();
    std::fs::write(dir.path().join("golden.jsonl"), toolshed_core::serialize_golden_dataset(&corpus.goldens)).unwrap();
    let out = toolshed(
        dir.path(),
        &["eval", "--index", "kb.tskb", "--golden", "golden.jsonl", "--k", "1,5", "--out", "report.jsonl"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = std::fs::read_to_string(dir.path().join("report.jsonl")).unwrap();
    let summary: Value = serde_json::from_str(report.lines().last().unwrap()).unwrap();
    assert_eq!(summary["record"], "summary");
    let manifest: Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("report.jsonl.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "eval");
    assert_eq!(manifest["config"]["provider"]["mode"], "offline");
}

#[test]
fn sweep_grid_has_exact_header() {
    let (dir, corpus) = setup();
    std::fs::write(dir.path().join("golden.jsonl"), toolshed_core::serialize_golden_dataset(&corpus.goldens)).unwrap();
    let out = toolshed(
        dir.path(),
        &["sweep", "--catalog", "catalog.jsonl", "--golden", "golden.jsonl", "--m", "10,40", "--k", "1,5,20", "--out", "grid.csv"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let grid = std::fs::read_to_string(dir.path().join("grid.csv")).unwrap();
    let mut lines = grid.lines();
    assert_eq!(lines.next(), Some("tool_M,top_k,retrieval_accuracy,token_estimate,modeled_agent_accuracy"));
    // k=20 does not fit M=10
    assert_eq!(lines.count(), 5);
    assert!(dir.path().join("grid.detail.csv").exists());
}
