//! End-to-end query answering over a prepared graph, label table, dominance
//! encoder and per-length index bundle.

use serde::{Deserialize, Serialize};

use crate::dominance::{DominanceEmbedding, DominanceEncoder};
use crate::embeddings::{EmbeddingProvider, LabelTable};
use crate::error::{Error, Result};
use crate::generation::{
    generate_answer, render_subgraph_prompt, AnswerContext, AnswerProvider, AnswerRecord, DEFAULT_TOKEN_BUDGET,
};
use crate::graph::{Graph, QueryGraph};
use crate::index::{IndexBundle, RStarIndex};
use crate::matcher::{match_query, match_single_vertex, MatchConfig, MatchResult, MatchedSubgraph};
use crate::query::{
    complete_unknown_labels, decompose_into_paths, default_path_length, enumerate_completions, normalize_entities,
    valid_path_lengths, LabelCandidateMap, NormalizedVertex, DEFAULT_COMPLETION_CAP,
};

pub const DEFAULT_INDEX_LENGTHS: [usize; 2] = [1, 2];

/// Everything a query needs, built once per data graph.
pub struct Engine {
    pub graph: Graph,
    pub table: LabelTable,
    pub encoder: DominanceEncoder,
    pub bundle: IndexBundle,
}

impl Engine {
    pub fn build(
        graph: Graph,
        provider: &dyn EmbeddingProvider,
        encoder: DominanceEncoder,
        lengths: &[usize],
        max_fanout: Option<usize>,
    ) -> Result<Self> {
        let table = LabelTable::build(&graph, provider)?;
        Self::build_with_table(graph, table, encoder, lengths, max_fanout)
    }

    pub fn build_with_table(
        graph: Graph,
        table: LabelTable,
        encoder: DominanceEncoder,
        lengths: &[usize],
        max_fanout: Option<usize>,
    ) -> Result<Self> {
        if lengths.is_empty() {
            return Err(Error::Config("at least one index path length is required".into()));
        }
        let dom = dominance_embeddings(&graph, &table, &encoder)?;
        let mut bundle = IndexBundle::new();
        for &l in lengths {
            bundle.insert(RStarIndex::build_from_graph(&graph, l, &table, &dom, max_fanout)?)?;
        }
        Ok(Engine {
            graph,
            table,
            encoder,
            bundle,
        })
    }

    /// Reassembles an engine from persisted parts, refusing stale indexes.
    pub fn from_parts(graph: Graph, table: LabelTable, encoder: DominanceEncoder, bundle: IndexBundle) -> Result<Self> {
        let fp = graph.fingerprint();
        if let Some(idx) = bundle.iter().find(|i| i.fingerprint() != fp) {
            return Err(Error::FingerprintMismatch {
                index: idx.fingerprint().to_string(),
                graph: fp,
            });
        }
        if bundle.is_empty() {
            return Err(Error::Config("index bundle is empty".into()));
        }
        Ok(Engine {
            graph,
            table,
            encoder,
            bundle,
        })
    }
}

pub fn dominance_embeddings(
    g: &Graph,
    table: &LabelTable,
    encoder: &DominanceEncoder,
) -> Result<Vec<DominanceEmbedding>> {
    encoder.node_embeddings(g, |v| Some(table.vertex(v).0.as_slice()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Preferred path length; the default length of the query when unset.
    pub l: Option<usize>,
    pub completion_cap: usize,
    pub matching: MatchConfig,
    pub token_budget: usize,
    /// Map known query labels onto their nearest data labels first.
    pub normalize: bool,
    pub similarity_threshold: Option<f64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            l: None,
            completion_cap: DEFAULT_COMPLETION_CAP,
            matching: MatchConfig::default(),
            token_budget: DEFAULT_TOKEN_BUDGET,
            normalize: true,
            similarity_threshold: None,
        }
    }
}

/// The retrieval half of a query.
#[derive(Clone, Debug)]
pub struct Retrieval {
    pub query: QueryGraph,
    pub normalization: Vec<NormalizedVertex>,
    /// `None` for edgeless queries.
    pub l: Option<usize>,
    pub plan: Vec<Vec<String>>,
    pub label_candidates: LabelCandidateMap,
    pub result: MatchResult,
}

pub fn retrieve(
    engine: &Engine,
    q: &QueryGraph,
    provider: Option<&dyn EmbeddingProvider>,
    cfg: &PipelineConfig,
) -> Result<Retrieval> {
    let (query, normalization) = match provider.filter(|_| cfg.normalize) {
        Some(p) => {
            let n = normalize_entities(q, &engine.graph, &engine.table, p, cfg.similarity_threshold)?;
            (n.query, n.provenance)
        }
        None => (q.clone(), Vec::new()),
    };
    if query.graph.edge_count() == 0 {
        if query.graph.vertex_count() != 1 {
            return Err(Error::NoEdges);
        }
        return Ok(Retrieval {
            result: match_single_vertex(&query, &engine.graph, &cfg.matching),
            query,
            normalization,
            l: None,
            plan: Vec::new(),
            label_candidates: LabelCandidateMap::default(),
        });
    }
    let range = valid_path_lengths(&query.graph)?;
    let preferred = match cfg.l {
        Some(l) => l,
        None => default_path_length(&query.graph)?,
    };
    let l = engine.bundle.choose_length(&range, Some(preferred))?;
    let idx = engine.bundle.get(l).expect("chosen length is in the bundle");
    let plan = decompose_into_paths(&query.graph, l)?;
    let (candidates, label_stats) = complete_unknown_labels(&query, &plan, idx, &engine.table)?;
    let completions = enumerate_completions(&query, &candidates, cfg.completion_cap)?;
    let mut result = match_query(
        &query,
        &plan,
        &completions,
        idx,
        &engine.graph,
        &engine.table,
        &engine.encoder,
        &cfg.matching,
    )?;
    result.stats.traversal.merge(&label_stats);
    Ok(Retrieval {
        plan: plan.signatures(&query.graph),
        query,
        normalization,
        l: Some(l),
        label_candidates: candidates,
        result,
    })
}

/// Machine-readable outcome of one question.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub question: String,
    pub answer: String,
    pub record: AnswerRecord,
    pub l: Option<usize>,
    pub plan: Vec<Vec<String>>,
    pub normalization: Vec<NormalizedVertex>,
    pub label_candidates: LabelCandidateMap,
    pub bindings: Vec<MatchedSubgraph>,
    pub result: MatchResult,
}

pub fn answer_query(
    engine: &Engine,
    q: &QueryGraph,
    question: &str,
    provider: Option<&dyn EmbeddingProvider>,
    answerer: &dyn AnswerProvider,
    cfg: &PipelineConfig,
) -> Result<QueryOutcome> {
    let r = retrieve(engine, q, provider, cfg)?;
    let prompt = render_subgraph_prompt(
        &engine.graph,
        &r.result.exact,
        r.result.fallback.as_ref(),
        question,
        cfg.token_budget,
    )?;
    let ctx = AnswerContext {
        query: &r.query,
        result: &r.result,
        graph: &engine.graph,
    };
    let record = generate_answer(prompt, answerer, &ctx)?;
    Ok(QueryOutcome {
        question: question.to_string(),
        answer: record.answer.clone(),
        record,
        l: r.l,
        plan: r.plan,
        normalization: r.normalization,
        label_candidates: r.label_candidates,
        bindings: r.result.exact.clone(),
        result: r.result,
    })
}
