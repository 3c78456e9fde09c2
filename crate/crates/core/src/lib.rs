//! Tool retrieval for function-calling agents: enhanced tool documents in a
//! vector index, a decompose / expand / fuse query pipeline, and the
//! evaluation and sweep harnesses that measure it.

mod binio;
pub mod composer;
pub mod dataset_io;
pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod fusion;
pub mod knowledge_base;
pub mod llm;
pub mod pipeline;
pub mod prompts;
pub mod retriever;
pub mod sweep;
pub mod synthetic;

pub use composer::{
    compose_catalog, compose_document, humanize_tool_name, ComposerConfig, EnhancedToolDocument, Enrichment,
    EnrichmentFixtures, EnrichmentGenerator,
};
pub use dataset_io::{
    parse_golden_dataset, parse_predictions, parse_tool_catalog, serialize_golden_dataset, serialize_tool_catalog,
    validate_catalog, GoldenRecord, PredictionRecord, ToolCall, ToolDefinition, ToolParameter, TraceType,
    ValidationReport, ValueType,
};
pub use embedding::{cosine_similarity, hashed_bow_embed, Embedder, EmbeddingVector, ProviderConfig, ProviderMode};
pub use error::{Result, ToolshedError};
pub use evaluation::{
    aggregate_record, count_tokens, recall_at_k, score_tool_call, weighted_accuracy, RetrievalMetrics, SubScores,
    TokenEstimator, ValueMatch,
};
pub use fusion::{
    allocate_sub_top_k, combine_intents, dedupe, fuse_intent, rrf_fuse, FinalSelection, FusionConfig, IntentBudget,
    RerankerMode,
};
pub use knowledge_base::{build_index, load_index, save_index, subset_index, RankedResult, ToolshedIndex};
pub use llm::{HttpLlmClient, LlmClient, ScriptedLlm};
pub use pipeline::{QueryFixtures, QueryTransformer, TransformerConfig, TransformerMode};
pub use prompts::PromptSet;
pub use retriever::{RetrievalOutcome, ToolRetriever};
pub use sweep::{
    emit_grid, expected_agent_accuracy, run_retrieval_sweep, SimpleAgentCurve, SweepCell, SweepInputs, SweepPlan,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
