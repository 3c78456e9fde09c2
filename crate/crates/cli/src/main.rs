mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use toolshed_core::{ComposerConfig, IntentBudget, RerankerMode, ToolshedError, TransformerMode, ValueMatch};

use crate::commands::ValidationFailed;
use crate::config::{EnrichmentMode, ProviderChoice, RunConfig};

/// Tool retrieval for function-calling agents: index a tool catalog, select
/// tools for a query, evaluate recall, and sweep corpus size against top-k.
#[derive(Parser)]
#[command(name = "toolshed", version)]
struct Cli {
    /// Repeat for more log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a catalog (and optionally a golden set) for problems.
    Validate(ValidateArgs),
    /// Compose, embed and persist an index for a catalog.
    Index(IndexArgs),
    /// Select tools for one query or a file of queries.
    Retrieve(RetrieveArgs),
    /// Recall@k over a golden set, plus call scoring when predictions are given.
    Eval(EvalArgs),
    /// Retrieval accuracy and token cost over a tool-M × top-k grid.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct Common {
    /// TOML or JSON config file, or a previous run's manifest. Flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Primary output file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Manifest location. Defaults to `<out>.manifest.json`.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct ProviderFlags {
    #[arg(long, value_enum)]
    embed_mode: Option<ProviderChoice>,
    /// Embedding dimension (offline mode).
    #[arg(long)]
    dimension: Option<usize>,
    /// Embedding cache file, loaded if present and rewritten after the run.
    #[arg(long)]
    embed_cache: Option<PathBuf>,
}

#[derive(Args)]
struct ComposerFlags {
    /// Document composition preset 1..=6.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=6))]
    preset: Option<u8>,
    #[arg(long)]
    include_schema: Option<bool>,
    /// Synthetic questions per tool.
    #[arg(long)]
    questions: Option<usize>,
    /// Key topics per tool.
    #[arg(long)]
    topics: Option<usize>,
    #[arg(long, value_enum)]
    enrichment: Option<EnrichmentMode>,
    /// JSONL of {"tool_name", "questions", "topics"}.
    #[arg(long)]
    enrichment_fixtures: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineFlags {
    /// null, rule, fixture or llm.
    #[arg(long)]
    transformer: Option<TransformerMode>,
    /// Phrasings per intent, the intent itself included.
    #[arg(long)]
    variations: Option<usize>,
    /// JSONL of {"query", "rewritten"?, "intents"?, "variations"?}.
    #[arg(long)]
    query_fixtures: Option<PathBuf>,
    /// Final number of tools (at most 128).
    #[arg(long)]
    top_k: Option<usize>,
    /// rrf or llm.
    #[arg(long, value_parser = serde_enum::<RerankerMode>)]
    reranker: Option<RerankerMode>,
    /// round_robin or fixed_split.
    #[arg(long, value_parser = serde_enum::<IntentBudget>)]
    intent_budget: Option<IntentBudget>,
    #[arg(long)]
    rrf_constant: Option<f64>,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    catalog: Option<PathBuf>,
    #[arg(long)]
    golden: Option<PathBuf>,
}

#[derive(Args)]
struct IndexArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    catalog: Option<PathBuf>,
    #[command(flatten)]
    composer: ComposerFlags,
    #[command(flatten)]
    provider: ProviderFlags,
}

#[derive(Args)]
struct RetrieveArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    query: Option<String>,
    /// File with one query per line.
    #[arg(long)]
    queries: Option<PathBuf>,
    #[command(flatten)]
    pipeline: PipelineFlags,
    #[command(flatten)]
    provider: ProviderFlags,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    golden: Option<PathBuf>,
    /// JSONL of {"query_id", "predicted_calls"}.
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Comma-separated k values, e.g. 1,5,10.
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<usize>>,
    /// normalized or strict.
    #[arg(long, value_parser = serde_enum::<ValueMatch>)]
    value_match: Option<ValueMatch>,
    #[command(flatten)]
    pipeline: PipelineFlags,
    #[command(flatten)]
    provider: ProviderFlags,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    catalog: Option<PathBuf>,
    #[arg(long)]
    golden: Option<PathBuf>,
    /// Comma-separated corpus sizes.
    #[arg(long, value_delimiter = ',')]
    m: Option<Vec<usize>>,
    /// Comma-separated top-k values.
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<usize>>,
    /// CSV with header m,accuracy.
    #[arg(long)]
    curve: Option<PathBuf>,
    #[arg(long)]
    bytes_per_token: Option<usize>,
    #[command(flatten)]
    composer: ComposerFlags,
    #[command(flatten)]
    pipeline: PipelineFlags,
    #[command(flatten)]
    provider: ProviderFlags,
}

fn serde_enum<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_owned())).map_err(|e| e.to_string())
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

fn set_some<T>(slot: &mut Option<T>, flag: Option<T>) {
    if flag.is_some() {
        *slot = flag;
    }
}

impl Common {
    fn base(&self, command: &str) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let (cfg, from) = RunConfig::load(path)?;
                if let Some(from) = from.filter(|f| f != command) {
                    log::warn!("replaying a `{from}` manifest as `{command}`");
                }
                cfg
            }
            None => RunConfig::default(),
        };
        set(&mut cfg.seed, self.seed);
        set_some(&mut cfg.output, self.out.clone());
        Ok(cfg)
    }
}

impl ProviderFlags {
    fn apply(self, cfg: &mut RunConfig) {
        set(&mut cfg.provider.mode, self.embed_mode);
        set(&mut cfg.provider.dimension, self.dimension);
        set_some(&mut cfg.provider.cache_path, self.embed_cache);
    }
}

impl ComposerFlags {
    fn apply(self, cfg: &mut RunConfig) {
        if let Some(p) = self.preset {
            cfg.composer = ComposerConfig::preset(p).expect("range checked by clap");
        }
        set(&mut cfg.composer.include_schema, self.include_schema);
        set(&mut cfg.composer.question_count, self.questions);
        set(&mut cfg.composer.topic_count, self.topics);
        set(&mut cfg.enrichment, self.enrichment);
        set_some(&mut cfg.inputs.enrichment_fixtures, self.enrichment_fixtures);
    }
}

impl PipelineFlags {
    fn apply(self, cfg: &mut RunConfig) {
        set(&mut cfg.transformer.mode, self.transformer);
        set(&mut cfg.transformer.variation_count, self.variations);
        set_some(&mut cfg.inputs.query_fixtures, self.query_fixtures);
        set(&mut cfg.fusion.final_top_k, self.top_k);
        set(&mut cfg.fusion.reranker, self.reranker);
        set(&mut cfg.fusion.intent_budget, self.intent_budget);
        set(&mut cfg.fusion.rrf_constant, self.rrf_constant);
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Validate(a) => {
            let mut cfg = a.common.base("validate")?;
            set_some(&mut cfg.inputs.catalog, a.catalog);
            set_some(&mut cfg.inputs.golden, a.golden);
            commands::validate(cfg)
        }
        Command::Index(a) => {
            let mut cfg = a.common.base("index")?;
            set_some(&mut cfg.inputs.catalog, a.catalog);
            a.composer.apply(&mut cfg);
            a.provider.apply(&mut cfg);
            commands::index(cfg, a.common.manifest.as_deref())
        }
        Command::Retrieve(a) => {
            let mut cfg = a.common.base("retrieve")?;
            set_some(&mut cfg.inputs.index, a.index);
            set_some(&mut cfg.inputs.query, a.query);
            set_some(&mut cfg.inputs.queries, a.queries);
            a.pipeline.apply(&mut cfg);
            a.provider.apply(&mut cfg);
            commands::retrieve(cfg, a.common.manifest.as_deref())
        }
        Command::Eval(a) => {
            let mut cfg = a.common.base("eval")?;
            set_some(&mut cfg.inputs.index, a.index);
            set_some(&mut cfg.inputs.golden, a.golden);
            set_some(&mut cfg.inputs.predictions, a.predictions);
            set(&mut cfg.eval.ks, a.k);
            set(&mut cfg.eval.value_match, a.value_match);
            a.pipeline.apply(&mut cfg);
            a.provider.apply(&mut cfg);
            commands::eval(cfg, a.common.manifest.as_deref())
        }
        Command::Sweep(a) => {
            let mut cfg = a.common.base("sweep")?;
            set_some(&mut cfg.inputs.catalog, a.catalog);
            set_some(&mut cfg.inputs.golden, a.golden);
            set_some(&mut cfg.inputs.curve, a.curve);
            set(&mut cfg.sweep.m_values, a.m);
            set(&mut cfg.sweep.k_values, a.k);
            set(&mut cfg.eval.bytes_per_token, a.bytes_per_token);
            a.composer.apply(&mut cfg);
            a.pipeline.apply(&mut cfg);
            a.provider.apply(&mut cfg);
            commands::sweep(cfg, a.common.manifest.as_deref())
        }
    }
}

/// 1 for bad data or configuration, 2 for files and providers.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ValidationFailed>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<ToolshedError>() {
            return if e.is_environmental() { 2 } else { 1 };
        }
        if cause.is::<std::io::Error>() {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
