//! Prompt rendering over matched or fallback subgraphs and answer production.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EdgeIx, Graph, QueryGraph};
use crate::http::{HttpSettings, JsonClient};
use crate::matcher::{FallbackSubgraph, MatchResult, MatchedSubgraph};

pub const DEFAULT_TOKEN_BUDGET: usize = 1_200;
pub const UNABLE: &str = "UNABLE";
pub const UNABLE_TEXT: &str = "Unable to determine";
const EMPTY_RELATION: &str = "related to";

const INSTRUCTION: &str = "Below is a paragraph describing the relationships among entities in a structured graph.\n\
This paragraph contains the answer to a user question. Read and reason carefully.\n\
Note: The final answer must be one of the entity labels mentioned in the paragraph.";
const CONSTRAINT: &str = "Answer: [Entity] or \"Unable to determine\"";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerMode {
    Exact,
    Fallback,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptDocument {
    pub instruction: String,
    /// One sentence per kept edge.
    pub relations: Vec<String>,
    pub question: String,
    pub constraint: String,
    /// Labels mentioned in the relation paragraph, sorted.
    pub entities: Vec<String>,
    pub omitted_relations: usize,
    pub rendered: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub answer: String,
    pub raw: String,
    pub mode: AnswerMode,
    pub prompt: PromptDocument,
}

impl AnswerRecord {
    pub fn is_unable(&self) -> bool {
        self.answer == UNABLE
    }
}

fn whitespace_tokens(s: &str) -> usize {
    s.split_whitespace().count()
}

fn relation_sentence(g: &Graph, e: EdgeIx) -> String {
    let edge = g.edge(e);
    let (a, b) = g.endpoints(e);
    let rel = if edge.description.trim().is_empty() {
        EMPTY_RELATION
    } else {
        edge.description.trim()
    };
    format!("{} is related to {} via: {}.", g.label(a), g.label(b), rel)
}

fn edge_ixs<'a>(g: &Graph, ids: impl IntoIterator<Item = &'a String>) -> BTreeSet<EdgeIx> {
    let by_id: BTreeMap<&str, EdgeIx> = g.edge_indices().map(|e| (g.edge(e).id.as_str(), e)).collect();
    ids.into_iter()
        .filter_map(|id| by_id.get(id.as_str()).copied())
        .collect()
}

fn sort_edges(g: &Graph, edges: impl IntoIterator<Item = EdgeIx>) -> Vec<EdgeIx> {
    let mut v: Vec<EdgeIx> = edges.into_iter().collect();
    v.sort_by(|a, b| {
        let key = |e: &EdgeIx| {
            let (s, d) = g.endpoints(*e);
            (g.id(s), g.id(d), g.edge(*e).id.as_str())
        };
        key(a).cmp(&key(b))
    });
    v
}

/// Renders the answer prompt. `token_budget` bounds the whitespace tokens of
/// the relation paragraph; fallback edges are dropped before exact-subgraph
/// edges, each group from the end of its sorted order.
pub fn render_subgraph_prompt(
    g: &Graph,
    exact: &[MatchedSubgraph],
    fallback: Option<&FallbackSubgraph>,
    question: &str,
    token_budget: usize,
) -> Result<PromptDocument> {
    let exact_edges = edge_ixs(g, exact.iter().flat_map(|m| m.edges.iter()));
    let fallback_edges: BTreeSet<EdgeIx> = fallback
        .map(|f| edge_ixs(g, f.edges.iter()))
        .unwrap_or_default()
        .difference(&exact_edges)
        .copied()
        .collect();
    if exact_edges.is_empty() && fallback_edges.is_empty() {
        return Err(Error::EmptyPrompt);
    }
    let ranked: Vec<EdgeIx> = sort_edges(g, exact_edges)
        .into_iter()
        .chain(sort_edges(g, fallback_edges))
        .collect();

    let question_line = format!("User Question: {}", question.trim());
    let sentences: Vec<String> = ranked.iter().map(|e| relation_sentence(g, *e)).collect();
    let mut keep = sentences.len();
    let marker = |n: usize| format!("[{n} relations omitted to fit the token budget]");
    // the budget covers the relation paragraph, marker included
    let cost = |k: usize| {
        let body: usize = sentences[..k].iter().map(|s| whitespace_tokens(s)).sum();
        let mark = if k < sentences.len() {
            whitespace_tokens(&marker(sentences.len() - k))
        } else {
            0
        };
        body + mark
    };
    while keep > 0 && cost(keep) > token_budget {
        keep -= 1;
    }
    let kept = &ranked[..keep];
    let mut relations: Vec<String> = sort_edges(g, kept.iter().copied())
        .into_iter()
        .map(|e| relation_sentence(g, e))
        .collect();
    let omitted = sentences.len() - keep;
    let mut paragraph = relations.clone();
    if omitted > 0 {
        paragraph.push(marker(omitted));
    }
    let entities: Vec<String> = kept
        .iter()
        .flat_map(|e| {
            let (a, b) = g.endpoints(*e);
            [g.label(a).to_string(), g.label(b).to_string()]
        })
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let rendered = format!(
        "{INSTRUCTION}\n---\nKnown Relations:\n{}\n---\n{question_line}\n{CONSTRAINT}\n",
        paragraph.join("\n")
    );
    relations.shrink_to_fit();
    Ok(PromptDocument {
        instruction: INSTRUCTION.to_string(),
        relations,
        question: question.trim().to_string(),
        constraint: CONSTRAINT.to_string(),
        entities,
        omitted_relations: omitted,
        rendered,
    })
}

/// Everything a provider may consult besides the prompt text.
pub struct AnswerContext<'a> {
    pub query: &'a QueryGraph,
    pub result: &'a MatchResult,
    pub graph: &'a Graph,
}

pub trait AnswerProvider: Send + Sync {
    fn answer(&self, prompt: &PromptDocument, ctx: &AnswerContext<'_>) -> Result<String>;
}

/// Deterministic stand-in for an LLM.
///
/// With exact matches it names the label bound to the first unknown query
/// vertex (majority over matches, ties to the smaller label). Otherwise it
/// names the fallback vertex adjacent to the most known entities, or gives
/// up on a tie.
#[derive(Clone, Copy, Debug, Default)]
pub struct MockAnswerer;

impl AnswerProvider for MockAnswerer {
    fn answer(&self, _prompt: &PromptDocument, ctx: &AnswerContext<'_>) -> Result<String> {
        let g = ctx.graph;
        let q = ctx.query;
        if !ctx.result.exact.is_empty() {
            let Some(first_unknown) = q
                .unknown_vertices()
                .into_iter()
                .min_by_key(|v| q.graph.id(*v).to_string())
            else {
                return Ok(UNABLE_TEXT.to_string());
            };
            let mut votes: BTreeMap<&str, usize> = BTreeMap::new();
            for m in &ctx.result.exact {
                if let Some(v) = m.binding.get(q.graph.id(first_unknown)).and_then(|id| g.ix(id)) {
                    *votes.entry(g.label(v)).or_default() += 1;
                }
            }
            let best = votes.iter().max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)));
            return Ok(best.map_or(UNABLE_TEXT.to_string(), |(l, _)| format!("Answer: {l}")));
        }
        let Some(fb) = &ctx.result.fallback else {
            return Ok(UNABLE_TEXT.to_string());
        };
        let known: BTreeSet<&str> = q.known_vertices().into_iter().map(|v| q.graph.label(v)).collect();
        let kept: BTreeSet<&str> = fb.vertices.iter().map(String::as_str).collect();
        let mut scores: Vec<(usize, &str)> = fb
            .vertices
            .iter()
            .filter_map(|id| g.ix(id))
            .filter(|v| !known.contains(g.label(*v)))
            .map(|v| {
                let hits = g
                    .neighbors(v)
                    .iter()
                    .filter(|n| kept.contains(g.id(**n)) && known.contains(g.label(**n)))
                    .count();
                (hits, g.label(v))
            })
            .collect();
        scores.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(b.1)));
        match scores.as_slice() {
            [(top, label), rest @ ..] if *top > 0 && rest.first().is_none_or(|r| r.0 < *top) => {
                Ok(format!("Answer: {label}"))
            }
            _ => Ok(UNABLE_TEXT.to_string()),
        }
    }
}

/// Always returns the same text.
#[derive(Clone, Debug)]
pub struct FixedAnswerer(pub String);

impl AnswerProvider for FixedAnswerer {
    fn answer(&self, _: &PromptDocument, _: &AnswerContext<'_>) -> Result<String> {
        Ok(self.0.clone())
    }
}

/// Remote generation: `{"prompt"}` in, `{"text"}` out.
pub struct RemoteAnswerer {
    client: JsonClient,
}

impl RemoteAnswerer {
    pub fn new(settings: HttpSettings) -> Self {
        RemoteAnswerer {
            client: JsonClient::new(settings),
        }
    }
}

impl AnswerProvider for RemoteAnswerer {
    fn answer(&self, prompt: &PromptDocument, _: &AnswerContext<'_>) -> Result<String> {
        self.client.complete(&prompt.rendered)
    }
}

/// The longest prompt entity occurring in `text` (case-insensitive), in the
/// prompt's spelling.
pub fn extract_answer(text: &str, entities: &[String]) -> Option<String> {
    let hay = text.to_lowercase();
    entities
        .iter()
        .filter(|e| !e.trim().is_empty() && hay.contains(&e.to_lowercase()))
        .max_by(|a, b| a.chars().count().cmp(&b.chars().count()).then_with(|| b.cmp(a)))
        .cloned()
}

pub fn generate_answer(
    prompt: PromptDocument,
    provider: &dyn AnswerProvider,
    ctx: &AnswerContext<'_>,
) -> Result<AnswerRecord> {
    let raw = provider.answer(&prompt, ctx)?;
    let answer = extract_answer(&raw, &prompt.entities).unwrap_or_else(|| UNABLE.to_string());
    let mode = if ctx.result.exact.is_empty() {
        AnswerMode::Fallback
    } else {
        AnswerMode::Exact
    };
    Ok(AnswerRecord {
        answer,
        raw,
        mode,
        prompt,
    })
}

#[derive(Serialize)]
struct LogLine<'a> {
    question: &'a str,
    prompt: &'a str,
    raw: &'a str,
    answer: &'a str,
    mode: AnswerMode,
}

/// Appends one JSON line per answered prompt.
pub fn log_answer(path: &FsPath, record: &AnswerRecord) -> Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    let line = serde_json::to_string(&LogLine {
        question: &record.prompt.question,
        prompt: &record.prompt.rendered,
        raw: &record.raw,
        answer: &record.answer,
        mode: record.mode,
    })?;
    writeln!(f, "{line}")?;
    Ok(())
}

/// Reviewer prompt scoring several methods' answers to one question.
/// Scoring itself is left to whoever consumes the prompt.
pub fn render_empowerment_prompt(question: &str, gold: &str, answers: &[(String, String)]) -> Result<PromptDocument> {
    if answers.is_empty() {
        return Err(Error::NoCandidates);
    }
    let instruction = "Goal: Automatically evaluate answers from multiple methods to the same question. The LLM acts \
as a reviewer and scores each answer independently according to the criteria below.";
    let listing: Vec<String> = answers.iter().map(|(m, a)| format!("  [{m}] {a}")).collect();
    let schema: Vec<String> = answers
        .iter()
        .enumerate()
        .map(|(i, (m, _))| {
            let n = i + 1;
            let sep = if n == answers.len() { "" } else { "," };
            format!("  \"{m}\": {{\"logic\": L{n}, \"insight\": I{n}, \"total\": T{n}}}{sep}")
        })
        .collect();
    let criteria = "Scoring Criteria:\n\
- Logical Coherence (0-2): Is the reasoning clear, complete, and well-sequenced?\n\
- Insight (0-1): Does the answer offer new insight or helpful suggestions?";
    let rendered = format!(
        "{instruction}\n\
Input:\n\
- Question: {question}\n\
- Gold Answer: {gold}\n\
- Answer List:\n{}\n\
Evaluation Instruction: You are a senior evaluator. Please carefully read the question, the gold-standard answer, \
and the list of candidate answers. For each answer, assign scores based on the criteria below. Return the \
evaluation as a structured JSON.\n\
{criteria}\n\
Output Format: Return the scores as follows:\n{{\n{}\n}}\n",
        listing.join("\n"),
        schema.join("\n")
    );
    Ok(PromptDocument {
        instruction: instruction.to_string(),
        relations: listing,
        question: question.to_string(),
        constraint: criteria.to_string(),
        entities: answers.iter().map(|(m, _)| m.clone()).collect(),
        omitted_relations: 0,
        rendered,
    })
}
