//! Seeded synthetic catalogs for tests and benchmarks.
//!
//! Tool `i` carries signature tokens that no other tool uses; its golden
//! query repeats them next to vocabulary shared across the catalog.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{Map, Value};

use crate::dataset_io::{GoldenRecord, ToolCall, ToolDefinition, TraceType, ValueType};

const VERBS: [&str; 12] =
    ["fetch", "update", "list", "create", "delete", "search", "compute", "export", "import", "track", "rank", "merge"];
const NOUNS: [&str; 12] = [
    "invoice", "shipment", "ticket", "account", "report", "forecast", "order", "profile", "payment", "route",
    "booking", "metric",
];
const PARAMS: [(&str, &str, ValueType); 6] = [
    ("record_id", "Identifier of the record", ValueType::String),
    ("limit", "Maximum number of results", ValueType::Integer),
    ("region", "Region code", ValueType::String),
    ("start_date", "First day of the range", ValueType::String),
    ("amount", "Monetary amount", ValueType::Number),
    ("verbose", "Include extra detail", ValueType::Boolean),
];

/// Letters-only pseudo-word unique to `(tool, slot)`.
pub fn signature_word(tool: usize, slot: usize) -> String {
    let mut n = tool * 7 + slot;
    let mut out = String::from("zq");
    for _ in 0..4 {
        out.push((b'a' + (n % 26) as u8) as char);
        n /= 26;
    }
    out.push((b'a' + slot as u8) as char);
    out
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub tools: Vec<ToolDefinition>,
    pub goldens: Vec<GoldenRecord>,
}

pub fn tool(i: usize, rng: &mut ChaCha8Rng) -> ToolDefinition {
    let verb = VERBS[rng.gen_range(0..VERBS.len())];
    let noun = NOUNS[rng.gen_range(0..NOUNS.len())];
    let (s0, s1, s2) = (signature_word(i, 0), signature_word(i, 1), signature_word(i, 2));
    let mut t = ToolDefinition::new(
        format!("{verb}_{noun}_{s0}"),
        format!("Use this to {verb} {noun} records tagged {s0} {s1} {s2}."),
    );
    let mut params: Vec<_> = PARAMS.iter().collect();
    params.shuffle(rng);
    for (name, desc, ty) in params.into_iter().take(2) {
        t = t.with_parameter(*name, *desc, *ty, rng.gen_bool(0.5));
    }
    t
}

/// Query that names tool `i`'s signature tokens amid shared vocabulary.
pub fn query_for(i: usize, tool: &ToolDefinition) -> String {
    let verb = tool.name.split('_').next().unwrap_or("use");
    format!("{verb} records tagged {} {} {}", signature_word(i, 0), signature_word(i, 1), signature_word(i, 2))
}

impl SyntheticCorpus {
    /// `n_tools` tools; the first `n_queries` of them get a golden query.
    pub fn generate(n_tools: usize, n_queries: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tools: Vec<ToolDefinition> = (0..n_tools).map(|i| tool(i, &mut rng)).collect();
        let goldens = tools
            .iter()
            .enumerate()
            .take(n_queries)
            .map(|(i, t)| {
                let mut arguments = Map::new();
                for p in &t.parameters {
                    arguments.insert(p.name.clone(), Value::String(format!("v{i}")));
                }
                GoldenRecord {
                    query_id: format!("q{i:04}"),
                    query_text: query_for(i, t),
                    trace_type: TraceType::Single,
                    expected_calls: vec![ToolCall { tool_name: t.name.clone(), arguments }],
                    extra: Map::new(),
                }
            })
            .collect();
        SyntheticCorpus { tools, goldens }
    }
}
