//! Shared fixtures for the criterion benchmarks.

use toolshed_core::synthetic::SyntheticCorpus;
use toolshed_core::{build_index, compose_catalog, ComposerConfig, Embedder, EnrichmentGenerator, ToolshedIndex};

pub struct BenchFixture {
    pub corpus: SyntheticCorpus,
    pub embedder: Embedder,
    pub index: ToolshedIndex,
}

impl BenchFixture {
    pub fn new(n_tools: usize, n_queries: usize, dimension: usize) -> Self {
        let corpus = SyntheticCorpus::generate(n_tools, n_queries, 7);
        let embedder = Embedder::offline(dimension);
        let composer = ComposerConfig::default();
        let docs = compose_catalog(&corpus.tools, &EnrichmentGenerator::Null, &composer).expect("null enrichment");
        let index = build_index(docs, &embedder, &composer).expect("synthetic catalog is valid");
        BenchFixture { corpus, embedder, index }
    }

    pub fn queries(&self) -> impl Iterator<Item = &str> {
        self.corpus.goldens.iter().map(|g| g.query_text.as_str())
    }
}
