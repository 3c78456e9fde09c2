//! End-to-end selection: plan, expand, search, fuse, combine.

use serde::Serialize;

use crate::embedding::Embedder;
use crate::error::Result;
use crate::fusion::{
    allocate_sub_top_k, combine_intents, combine_intents_llm, fuse_intent, FinalSelection, FusionConfig,
    IntentBudget, IntentFusion, RerankerMode,
};
use crate::knowledge_base::ToolshedIndex;
use crate::pipeline::{retrieve_for_plan, CandidateSet, IntentPlan, QueryTransformer};

/// Advisory output of the re-retrieval hook. Never acted on.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ReRetrievalDecision {
    pub would_re_retrieve: bool,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub reasons: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalOutcome {
    pub plan: IntentPlan,
    pub candidates: Vec<CandidateSet>,
    pub intent_fusions: Vec<IntentFusion>,
    pub selection: FinalSelection,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    pub re_retrieval: ReRetrievalDecision,
}

impl RetrievalOutcome {
    pub fn tools(&self) -> &[String] {
        &self.selection.tools
    }
}

/// Borrowed view of everything a query needs. Cheap to build per query.
pub struct ToolRetriever<'a> {
    pub index: &'a ToolshedIndex,
    pub embedder: &'a Embedder,
    pub transformer: &'a QueryTransformer,
    pub fusion: FusionConfig,
    /// Minimum best-phrasing similarity below which the hook flags an intent.
    pub re_retrieval_min_score: f64,
}

impl<'a> ToolRetriever<'a> {
    pub fn new(
        index: &'a ToolshedIndex,
        embedder: &'a Embedder,
        transformer: &'a QueryTransformer,
        fusion: FusionConfig,
    ) -> Result<Self> {
        fusion.validate()?;
        index.check_compatible(embedder)?;
        Ok(ToolRetriever { index, embedder, transformer, fusion, re_retrieval_min_score: 0.0 })
    }

    pub fn retrieve(&self, query: &str, history: Option<&[String]>) -> Result<RetrievalOutcome> {
        let k = self.fusion.final_top_k;
        let plan = self.transformer.plan_query(query, history)?;
        let mut warnings = Vec::new();

        let budgets = match self.fusion.intent_budget {
            IntentBudget::RoundRobin => vec![k; plan.intents.len()],
            IntentBudget::FixedSplit => {
                let split = allocate_sub_top_k(k, plan.intents.len());
                warnings.extend(split.warning);
                split.per_intent
            }
        };

        let candidates = retrieve_for_plan(self.index, &plan, self.transformer, self.embedder, k)?;
        let reranker = match self.fusion.reranker {
            RerankerMode::Llm => self.transformer.llm_client().map(|c| (c.as_ref(), self.transformer.prompts())),
            RerankerMode::Rrf => None,
        };

        let mut intent_fusions = Vec::with_capacity(candidates.len());
        for (i, (cs, &budget)) in candidates.iter().zip(&budgets).enumerate() {
            warnings.extend(cs.warnings.iter().map(|w| format!("intent {i}: {w}")));
            let fusion = if budget == 0 {
                IntentFusion {
                    tools: Vec::new(),
                    contributing_variations: Default::default(),
                    warnings: Vec::new(),
                    downgraded: false,
                }
            } else {
                fuse_intent(cs, &self.fusion, budget, reranker).map_err(|e| e.context(format!("intent {i}")))?
            };
            warnings.extend(fusion.warnings.iter().map(|w| format!("intent {i}: {w}")));
            intent_fusions.push(fusion);
        }

        let lists: Vec<Vec<String>> = intent_fusions.iter().map(IntentFusion::names).collect();
        let mut selection = match (reranker, lists.len()) {
            (Some((client, prompts)), n) if n > 1 => {
                let (sel, w) = combine_intents_llm(&plan.rewritten_query, &plan.intents, &lists, k, client, prompts)?;
                warnings.extend(w);
                sel
            }
            _ => combine_intents(&lists, k),
        };
        for p in &mut selection.provenance {
            let fusion = &intent_fusions[p.intent_index];
            p.contributing_variations = fusion.contributing_variations.get(&p.tool_name).cloned().unwrap_or_default();
            p.fused_score = fusion.tools.iter().find(|t| t.name == p.tool_name).map(|t| t.score);
        }

        let re_retrieval = self.re_retrieval_hook(&candidates, &selection);
        Ok(RetrievalOutcome { plan, candidates, intent_fusions, selection, warnings, re_retrieval })
    }

    fn re_retrieval_hook(&self, candidates: &[CandidateSet], selection: &FinalSelection) -> ReRetrievalDecision {
        let mut reasons = Vec::new();
        for (i, cs) in candidates.iter().enumerate() {
            if !selection.provenance.iter().any(|p| p.intent_index == i) {
                reasons.push(format!("intent {i} contributed no tools"));
            }
            let best = cs
                .per_variation_results
                .iter()
                .filter_map(|r| r.first())
                .map(|r| r.score)
                .fold(f64::NEG_INFINITY, f64::max);
            if best <= self.re_retrieval_min_score {
                reasons.push(format!("intent {i} best similarity {best:.4} is at or below the threshold"));
            }
        }
        ReRetrievalDecision { would_re_retrieve: !reasons.is_empty(), reasons }
    }
}
