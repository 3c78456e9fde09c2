//! The tool knowledge base: an immutable vector index over enhanced tool
//! documents.
//!
//! Queries are an exact cosine scan. Results are ordered by score, then by
//! ascending tool name, so output never depends on insertion order.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::binio::{ByteReader, ByteWriter};
use crate::composer::{ComposerConfig, EnhancedToolDocument, TOOL_NAME_KEY};
use crate::embedding::{squared_norm, Embedder, EmbeddingVector, SparseQuery};
use crate::error::{Result, ToolshedError};

const INDEX_MAGIC: &[u8; 4] = b"TSKB";
pub const INDEX_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub ordinal: usize,
    pub document: Arc<EnhancedToolDocument>,
    pub vector: Arc<EmbeddingVector>,
    squared_norm: f64,
}

impl IndexEntry {
    pub fn new(ordinal: usize, document: EnhancedToolDocument, vector: EmbeddingVector) -> Self {
        let squared_norm = squared_norm(vector.values());
        IndexEntry { ordinal, document: Arc::new(document), vector: Arc::new(vector), squared_norm }
    }

    pub fn tool_name(&self) -> &str {
        self.document.tool_name()
    }
}

/// One subsetting step applied to produce an index from its parent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SubsetStep {
    pub parent_size: usize,
    pub tool_m: usize,
    pub kept: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToolshedIndex {
    entries: Vec<IndexEntry>,
    dimension: usize,
    fingerprint: String,
    embedder_id: String,
    composer: String,
    lineage: Vec<SubsetStep>,
}

/// Predicate over an entry's metadata map.
pub type MetadataFilter<'a> = &'a dyn Fn(&BTreeMap<String, String>) -> bool;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedResult {
    pub tool_name: String,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
}

fn fingerprint(composer: &str, embedder_id: &str) -> String {
    let digest = Sha256::digest(format!("{composer}|{embedder_id}").as_bytes());
    digest[..16].iter().map(|b| format!("{b:02x}")).collect()
}

/// Embed every document and build the index. Document order is kept.
pub fn build_index(
    documents: Vec<EnhancedToolDocument>,
    embedder: &Embedder,
    composer: &ComposerConfig,
) -> Result<ToolshedIndex> {
    if documents.is_empty() {
        return Err(ToolshedError::Build("cannot build an index from zero documents".into()));
    }
    let mut seen = HashSet::new();
    for doc in &documents {
        let name = doc.tool_name();
        if name.is_empty() {
            return Err(ToolshedError::Build(format!(
                "document `{}` has no `{TOOL_NAME_KEY}` metadata",
                doc.humanized_name
            )));
        }
        if !seen.insert(name) {
            return Err(ToolshedError::Build(format!("duplicate tool name `{name}`")));
        }
    }
    let vectors: Vec<EmbeddingVector> = documents
        .par_iter()
        .map(|d| {
            embedder
                .embed(&d.embeddable_text)
                .map(|v| v.to_f32_precision())
                .map_err(|e| e.context(format!("embedding tool `{}`", d.tool_name())))
        })
        .collect::<Result<_>>()?;
    let entries = documents
        .into_iter()
        .zip(vectors)
        .enumerate()
        .map(|(ordinal, (document, vector))| IndexEntry::new(ordinal, document, vector))
        .collect();
    let composer = composer.fingerprint_material();
    let embedder_id = embedder.identity();
    Ok(ToolshedIndex {
        entries,
        dimension: embedder.dimension(),
        fingerprint: fingerprint(&composer, &embedder_id),
        embedder_id,
        composer,
        lineage: Vec::new(),
    })
}

impl ToolshedIndex {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Hash of the composer configuration and embedder identity.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn embedder_id(&self) -> &str {
        &self.embedder_id
    }

    pub fn composer_material(&self) -> &str {
        &self.composer
    }

    pub fn lineage(&self) -> &[SubsetStep] {
        &self.lineage
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn tool_names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(IndexEntry::tool_name)
    }

    pub fn contains(&self, tool_name: &str) -> bool {
        self.entries.iter().any(|e| e.tool_name() == tool_name)
    }

    pub fn entry(&self, tool_name: &str) -> Option<&IndexEntry> {
        self.entries.iter().find(|e| e.tool_name() == tool_name)
    }

    /// Check that queries embedded by `embedder` are comparable with this
    /// index.
    pub fn check_compatible(&self, embedder: &Embedder) -> Result<()> {
        if embedder.identity() != self.embedder_id || embedder.dimension() != self.dimension {
            return Err(ToolshedError::config(format!(
                "index was built with embedder `{}` (dimension {}), session uses `{}` (dimension {})",
                self.embedder_id,
                self.dimension,
                embedder.identity(),
                embedder.dimension()
            )));
        }
        Ok(())
    }

    /// Exact top-k by cosine similarity over entries accepted by `filter`.
    pub fn query_top_k(
        &self,
        query: &EmbeddingVector,
        k: usize,
        filter: Option<MetadataFilter<'_>>,
    ) -> Result<Vec<RankedResult>> {
        if query.dimension() != self.dimension {
            return Err(ToolshedError::contract(format!(
                "query vector has dimension {}, index has {}",
                query.dimension(),
                self.dimension
            )));
        }
        if k == 0 {
            return Err(ToolshedError::contract("k must be positive"));
        }
        let sparse = SparseQuery::new(query.values());
        let mut scored: Vec<(f64, &str)> = self
            .entries
            .iter()
            .filter(|e| filter.is_none_or(|f| f(&e.document.metadata)))
            .map(|e| (sparse.cosine(e.vector.values(), e.squared_norm), e.tool_name()))
            .collect();
        let order = |a: &(f64, &str), b: &(f64, &str)| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1));
        if scored.len() > k {
            scored.select_nth_unstable_by(k - 1, order);
            scored.truncate(k);
        }
        scored.sort_unstable_by(order);
        Ok(scored
            .into_iter()
            .enumerate()
            .map(|(i, (score, name))| RankedResult { tool_name: name.to_owned(), score, rank: i + 1 })
            .collect())
    }

    /// Keep every `must_keep` tool plus `tool_m - |must_keep|` distractors
    /// drawn by a seeded shuffle of the rest. For a fixed seed and keep-set
    /// the subsets for increasing `tool_m` are nested.
    pub fn subset(&self, tool_m: usize, must_keep: &BTreeSet<String>, seed: u64) -> Result<ToolshedIndex> {
        if tool_m < must_keep.len() {
            return Err(ToolshedError::contract(format!(
                "tool_M = {tool_m} is smaller than the {} tools that must be kept",
                must_keep.len()
            )));
        }
        if tool_m > self.entries.len() {
            return Err(ToolshedError::contract(format!(
                "tool_M = {tool_m} exceeds the {} tools in the index",
                self.entries.len()
            )));
        }
        if let Some(missing) = must_keep.iter().find(|n| !self.contains(n)) {
            return Err(ToolshedError::contract(format!("must-keep tool `{missing}` is not in the index")));
        }
        let mut rest: Vec<usize> = (0..self.entries.len())
            .filter(|&i| !must_keep.contains(self.entries[i].tool_name()))
            .collect();
        rest.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut chosen: Vec<bool> = self.entries.iter().map(|e| must_keep.contains(e.tool_name())).collect();
        for &i in rest.iter().take(tool_m - must_keep.len()) {
            chosen[i] = true;
        }
        let entries = self
            .entries
            .iter()
            .zip(&chosen)
            .filter(|(_, &keep)| keep)
            .enumerate()
            .map(|(ordinal, (e, _))| IndexEntry { ordinal, ..e.clone() })
            .collect();
        let mut lineage = self.lineage.clone();
        lineage.push(SubsetStep { parent_size: self.entries.len(), tool_m, kept: must_keep.len(), seed });
        Ok(ToolshedIndex {
            entries,
            dimension: self.dimension,
            fingerprint: self.fingerprint.clone(),
            embedder_id: self.embedder_id.clone(),
            composer: self.composer.clone(),
            lineage,
        })
    }

    /// Binary image: `TSKB`, format version, dimension, entry count, header
    /// strings, subset lineage, then per entry the metadata block, humanized
    /// name, document text and the vector as `f32`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::default();
        w.bytes(INDEX_MAGIC);
        w.u32(INDEX_FORMAT_VERSION);
        w.u32(self.dimension as u32);
        w.u64(self.entries.len() as u64);
        w.str(&self.fingerprint);
        w.str(&self.embedder_id);
        w.str(&self.composer);
        w.u32(self.lineage.len() as u32);
        for step in &self.lineage {
            w.u64(step.parent_size as u64);
            w.u64(step.tool_m as u64);
            w.u64(step.kept as u64);
            w.u64(step.seed);
        }
        for e in &self.entries {
            w.u32(e.document.metadata.len() as u32);
            for (k, v) in &e.document.metadata {
                w.str(k);
                w.str(v);
            }
            w.str(&e.document.humanized_name);
            w.str(&e.document.embeddable_text);
            for &v in e.vector.values() {
                w.f32(v as f32);
            }
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<ToolshedIndex> {
        let mut r = ByteReader::new(bytes);
        if r.take(4, "magic")? != INDEX_MAGIC {
            return Err(ToolshedError::Load { offset: 0, message: "not a toolshed index (bad magic)".into() });
        }
        let version = r.u32("format version")?;
        if version != INDEX_FORMAT_VERSION {
            return Err(ToolshedError::Load {
                offset: 4,
                message: format!("unsupported index format version {version} (expected {INDEX_FORMAT_VERSION})"),
            });
        }
        let dimension = r.u32("dimension")? as usize;
        if dimension == 0 {
            return Err(r.error("index dimension is zero"));
        }
        let count = r.count("entry count", 12 + 4 * dimension)?;
        let fingerprint = r.str("fingerprint")?;
        let embedder_id = r.str("embedder identity")?;
        let composer = r.str("composer configuration")?;
        let steps = r.u32("lineage length")?;
        let lineage = (0..steps)
            .map(|_| {
                Ok(SubsetStep {
                    parent_size: r.u64("lineage")? as usize,
                    tool_m: r.u64("lineage")? as usize,
                    kept: r.u64("lineage")? as usize,
                    seed: r.u64("lineage")?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut entries = Vec::with_capacity(count);
        let mut names = HashSet::new();
        for ordinal in 0..count {
            let at = r.offset();
            let pairs = r.u32("metadata size")?;
            let mut metadata = BTreeMap::new();
            for _ in 0..pairs {
                let k = r.str("metadata key")?;
                let v = r.str("metadata value")?;
                metadata.insert(k, v);
            }
            let humanized_name = r.str("humanized name")?;
            let embeddable_text = r.str("document text")?;
            let values = (0..dimension).map(|_| r.f32("vector").map(f64::from)).collect::<Result<Vec<_>>>()?;
            let vector = EmbeddingVector::new(values).map_err(|e| r.error(e.to_string()))?;
            let document = EnhancedToolDocument { embeddable_text, humanized_name, metadata };
            if !names.insert(document.tool_name().to_owned()) {
                return Err(ToolshedError::Load {
                    offset: at,
                    message: format!("duplicate tool `{}` in index", document.tool_name()),
                });
            }
            entries.push(IndexEntry::new(ordinal, document, vector));
        }
        if !r.is_at_end() {
            return Err(r.error("trailing bytes after last entry"));
        }
        Ok(ToolshedIndex { entries, dimension, fingerprint, embedder_id, composer, lineage })
    }
}

/// Subset of `index` keeping `must_keep` plus seeded distractors.
pub fn subset_index(
    index: &ToolshedIndex,
    tool_m: usize,
    must_keep: &BTreeSet<String>,
    seed: u64,
) -> Result<ToolshedIndex> {
    index.subset(tool_m, must_keep, seed)
}

pub fn save_index(index: &ToolshedIndex) -> Vec<u8> {
    index.to_bytes()
}

pub fn load_index(bytes: &[u8]) -> Result<ToolshedIndex> {
    ToolshedIndex::from_bytes(bytes)
}

/// Compare two results by the index ordering rule.
pub fn result_order(a: &RankedResult, b: &RankedResult) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.tool_name.cmp(&b.tool_name))
}
