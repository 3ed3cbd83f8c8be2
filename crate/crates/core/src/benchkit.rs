//! Bridge-star QA generation, evaluation metrics and the end-to-end harness.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embeddings::EmbeddingProvider;
use crate::error::{Error, Result};
use crate::generation::{AnswerMode, AnswerProvider, UNABLE};
use crate::graph::{Graph, NodeIx, QueryGraph, UNKNOWN_LABEL};
use crate::http::{HttpSettings, JsonClient};
use crate::pipeline::{answer_query, Engine, PipelineConfig};

pub const DEFAULT_MIN_CENTER_DEGREE: usize = 3;
const DEFAULT_TYPE: &str = "entity";

/// Two star centers sharing at least one bridge neighbor.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BridgeStar {
    pub centers: [String; 2],
    pub bridges: Vec<String>,
    /// Neighbors of each center that the other center does not touch.
    pub unique: [Vec<String>; 2],
}

fn qualifying_pairs(g: &Graph, min_degree: usize) -> Vec<BridgeStar> {
    let mut hubs: Vec<NodeIx> = g.node_indices().filter(|v| g.degree(*v) >= min_degree).collect();
    hubs.sort_by(|a, b| g.id(*a).cmp(g.id(*b)));
    let mut out = Vec::new();
    for (i, &a) in hubs.iter().enumerate() {
        for &b in &hubs[i + 1..] {
            let na = g.neighbors(a);
            let nb = g.neighbors(b);
            let ids = |s: Vec<NodeIx>| {
                let mut v: Vec<String> = s.into_iter().map(|x| g.id(x).to_string()).collect();
                v.sort();
                v
            };
            let bridges = ids(na.intersection(nb).copied().collect());
            let ua = ids(na.iter().filter(|x| !nb.contains(x) && **x != b).copied().collect());
            let ub = ids(nb.iter().filter(|x| !na.contains(x) && **x != a).copied().collect());
            if !bridges.is_empty() && !ua.is_empty() && !ub.is_empty() {
                out.push(BridgeStar {
                    centers: [g.id(a).to_string(), g.id(b).to_string()],
                    bridges,
                    unique: [ua, ub],
                });
            }
        }
    }
    out
}

pub fn sample_bridge_star(g: &Graph, seed: u64) -> Result<BridgeStar> {
    sample_bridge_star_with(g, seed, DEFAULT_MIN_CENTER_DEGREE)
}

pub fn sample_bridge_star_with(g: &Graph, seed: u64, min_degree: usize) -> Result<BridgeStar> {
    let pairs = qualifying_pairs(g, min_degree);
    if pairs.is_empty() {
        return Err(Error::NoBridgeStar);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(pairs[rng.gen_range(0..pairs.len())].clone())
}

/// Up to `count` distinct bridge stars in seeded order.
pub fn sample_bridge_stars(g: &Graph, count: usize, seed: u64, min_degree: usize) -> Result<Vec<BridgeStar>> {
    let mut pairs = qualifying_pairs(g, min_degree);
    if pairs.is_empty() {
        return Err(Error::NoBridgeStar);
    }
    pairs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    pairs.truncate(count);
    Ok(pairs)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Constraint {
    pub id: String,
    pub label: String,
    /// Description of the edge tying it to the hidden center.
    pub relation: String,
    pub bridge: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub centers: [String; 2],
    pub bridges: Vec<String>,
    pub hidden: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaRecord {
    pub question: String,
    pub constraints: Vec<Constraint>,
    pub gold: String,
    pub provenance: Provenance,
    pub constraint_count: usize,
}

impl QaRecord {
    /// Unknown center `q0` joined to one vertex per constraint.
    pub fn query_graph(&self) -> QueryGraph {
        let mut q = Graph::new();
        q.add_vertex("q0", UNKNOWN_LABEL, "").expect("fresh id");
        for (i, c) in self.constraints.iter().enumerate() {
            let id = format!("q{}", i + 1);
            q.add_vertex(id.clone(), c.label.clone(), "").expect("fresh id");
            q.add_edge(format!("r{}", i + 1), "q0", &id, c.relation.clone())
                .expect("endpoints exist");
        }
        QueryGraph::new(q)
    }

    /// The query in extraction-grammar form.
    pub fn query_document(&self) -> String {
        self.query_graph().graph.to_document()
    }
}

/// Turns a question-generation prompt into a question.
pub trait QuestionWriter {
    fn write(&self, prompt: &str) -> Result<String>;
}

pub struct RemoteQuestionWriter {
    client: JsonClient,
}

impl RemoteQuestionWriter {
    pub fn new(settings: HttpSettings) -> Self {
        RemoteQuestionWriter {
            client: JsonClient::new(settings),
        }
    }
}

impl QuestionWriter for RemoteQuestionWriter {
    fn write(&self, prompt: &str) -> Result<String> {
        Ok(self.client.complete(prompt)?.trim().to_string())
    }
}

fn describe(cs: &[&Constraint]) -> String {
    cs.iter()
        .map(|c| {
            if c.relation.is_empty() {
                c.label.clone()
            } else {
                format!("{} ({})", c.label, c.relation)
            }
        })
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn question_generation_prompt(core_type: &str, constraints: &[Constraint]) -> String {
    let unique: Vec<&Constraint> = constraints.iter().filter(|c| !c.bridge).collect();
    let common: Vec<&Constraint> = constraints.iter().filter(|c| c.bridge).collect();
    format!(
        "Generate a fluent and concise natural language question that starts with \"Which {core_type}...\". \
The question must simultaneously reference:\n\
- Unique neighbors of the core node: {}\n\
- Shared bridge neighbors: {}\n\
This ensures that the answer must satisfy all structural constraints while avoiding ambiguity caused by bridge \
entities.\n\
Do not reveal or explain the answer. Return only the question sentence.",
        describe(&unique),
        describe(&common)
    )
}

fn join_list(items: &[String]) -> String {
    match items {
        [] => String::new(),
        [one] => one.clone(),
        [a, b] => format!("{a} and {b}"),
        [init @ .., last] => format!("{}, and {last}", init.join(", ")),
    }
}

/// Deterministic English rendering used when no writer is configured.
pub fn template_question(core_type: &str, constraints: &[Constraint]) -> String {
    let labels: Vec<String> = constraints.iter().map(|c| c.label.clone()).collect();
    format!("Which {core_type} is associated with {}?", join_list(&labels))
}

/// Hides center `hidden` (0 or 1); its unique neighbors and all bridges
/// become the constraints.
pub fn make_qa(g: &Graph, star: &BridgeStar, hidden: usize, writer: Option<&dyn QuestionWriter>) -> Result<QaRecord> {
    if hidden > 1 {
        return Err(Error::Config(format!("hidden center must be 0 or 1, got {hidden}")));
    }
    let center_id = &star.centers[hidden];
    let center = g.ix(center_id).ok_or_else(|| Error::UnknownVertex(center_id.clone()))?;
    let mut constraints = Vec::new();
    for (ids, bridge) in [(&star.unique[hidden], false), (&star.bridges, true)] {
        for id in ids {
            let v = g.ix(id).ok_or_else(|| Error::UnknownVertex(id.clone()))?;
            let relation = g
                .edge_between(center, v)
                .map(|e| g.edge(e).description.trim().to_string())
                .unwrap_or_default();
            constraints.push(Constraint {
                id: id.clone(),
                label: g.label(v).to_string(),
                relation,
                bridge,
            });
        }
    }
    let desc = g.vertex(center).description.trim();
    let core_type = if desc.is_empty() { DEFAULT_TYPE } else { desc };
    let question = match writer {
        Some(w) => w.write(&question_generation_prompt(core_type, &constraints))?,
        None => template_question(core_type, &constraints),
    };
    Ok(QaRecord {
        question,
        constraint_count: constraints.len(),
        constraints,
        gold: g.label(center).to_string(),
        provenance: Provenance {
            centers: star.centers.clone(),
            bridges: star.bridges.clone(),
            hidden: center_id.clone(),
        },
    })
}

/// One record per center.
pub fn make_qa_pair(g: &Graph, star: &BridgeStar, writer: Option<&dyn QuestionWriter>) -> Result<[QaRecord; 2]> {
    Ok([make_qa(g, star, 0, writer)?, make_qa(g, star, 1, writer)?])
}

/// `n` records from distinct bridge stars, both centers hidden in turn.
pub fn generate_dataset(g: &Graph, n: usize, seed: u64, writer: Option<&dyn QuestionWriter>) -> Result<Vec<QaRecord>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let stars = sample_bridge_stars(g, n.div_ceil(2), seed, DEFAULT_MIN_CENTER_DEGREE)?;
    let mut out = Vec::with_capacity(n);
    for star in stars.iter().cycle().take(n.div_ceil(2)) {
        out.extend(make_qa_pair(g, star, writer)?);
    }
    out.truncate(n);
    Ok(out)
}

pub fn records_to_jsonl(records: &[QaRecord]) -> Result<String> {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    Ok(s)
}

pub fn records_from_jsonl(text: &str) -> Result<Vec<QaRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordResult {
    pub gold: String,
    pub answer: String,
    pub hit: bool,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RuntimeStats {
    pub total_ms: f64,
    pub mean_ms: f64,
    pub mean_nodes_visited: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub hit1: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub records: Vec<RecordResult>,
    pub runtime: RuntimeStats,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("gold,answer,hit,precision,recall,f1\n");
        let quote = |x: &str| format!("\"{}\"", x.replace('"', "\"\""));
        for r in &self.records {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                quote(&r.gold),
                quote(&r.answer),
                r.hit as u8,
                r.precision,
                r.recall,
                r.f1
            ));
        }
        s
    }
}

/// Case-folded, trimmed label used for gold comparison.
pub fn normalize_label(s: &str) -> String {
    s.trim().to_lowercase()
}

/// Per record, the prediction set is `{answer}` (empty for UNABLE) and the
/// gold set is `{gold}`; precision, recall and F1 are macro-averaged.
pub fn evaluate(records: &[QaRecord], answers: &[String]) -> Result<EvalReport> {
    if records.len() != answers.len() {
        return Err(Error::LengthMismatch {
            records: records.len(),
            answers: answers.len(),
        });
    }
    let results: Vec<RecordResult> = records
        .iter()
        .zip(answers)
        .map(|(r, a)| {
            let predicted = a != UNABLE && !a.trim().is_empty();
            let hit = predicted && normalize_label(a) == normalize_label(&r.gold);
            let (p, rec) = match (predicted, hit) {
                (true, true) => (1.0, 1.0),
                _ => (0.0, 0.0),
            };
            let f1 = if p + rec == 0.0 { 0.0 } else { 2.0 * p * rec / (p + rec) };
            RecordResult {
                gold: r.gold.clone(),
                answer: a.clone(),
                hit,
                precision: p,
                recall: rec,
                f1,
            }
        })
        .collect();
    let n = results.len();
    let mean = |f: &dyn Fn(&RecordResult) -> f64| {
        if n == 0 {
            0.0
        } else {
            results.iter().map(f).sum::<f64>() / n as f64
        }
    };
    Ok(EvalReport {
        n,
        hit1: mean(&|r| r.hit as u8 as f64),
        precision: mean(&|r| r.precision),
        recall: mean(&|r| r.recall),
        f1: mean(&|r| r.f1),
        records: results,
        runtime: RuntimeStats::default(),
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryTrace {
    pub answer: String,
    pub mode: Option<AnswerMode>,
    pub error: Option<String>,
    pub exact_matches: usize,
    pub nodes_visited: usize,
    pub per_level_counts: Vec<usize>,
    pub elapsed_ms: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub report: EvalReport,
    pub traces: Vec<QueryTrace>,
}

/// Answers one query; errors become a trace entry with an UNABLE answer.
fn answer_record(
    engine: &Engine,
    q: &QueryGraph,
    question: &str,
    provider: Option<&dyn EmbeddingProvider>,
    answerer: &dyn AnswerProvider,
    cfg: &PipelineConfig,
) -> QueryTrace {
    let start = Instant::now();
    let mut trace = match answer_query(engine, q, question, provider, answerer, cfg) {
        Ok(out) => QueryTrace {
            answer: out.answer,
            mode: Some(out.record.mode),
            error: None,
            exact_matches: out.bindings.len(),
            nodes_visited: out.result.stats.traversal.nodes_visited,
            per_level_counts: out.result.stats.traversal.per_level_counts,
            elapsed_ms: 0.0,
        },
        Err(e) => QueryTrace {
            answer: UNABLE.to_string(),
            error: Some(e.to_string()),
            ..QueryTrace::default()
        },
    };
    trace.elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
    trace
}

fn finish(records: &[QaRecord], traces: Vec<QueryTrace>) -> Result<RunReport> {
    let answers: Vec<String> = traces.iter().map(|t| t.answer.clone()).collect();
    let mut report = evaluate(records, &answers)?;
    let total: f64 = traces.iter().map(|t| t.elapsed_ms).sum();
    let n = traces.len().max(1) as f64;
    report.runtime = RuntimeStats {
        total_ms: total,
        mean_ms: total / n,
        mean_nodes_visited: traces.iter().map(|t| t.nodes_visited as f64).sum::<f64>() / n,
    };
    Ok(RunReport { report, traces })
}

/// Runs every record's constraint query through the engine.
pub fn evaluate_records(
    engine: &Engine,
    records: &[QaRecord],
    provider: Option<&dyn EmbeddingProvider>,
    answerer: &dyn AnswerProvider,
    cfg: &PipelineConfig,
) -> Result<RunReport> {
    evaluate_records_parallel(engine, records, provider, answerer, cfg, 1)
}

/// [`evaluate_records`] over at most `jobs` worker threads. Records are
/// split into contiguous chunks, so traces keep record order.
pub fn evaluate_records_parallel(
    engine: &Engine,
    records: &[QaRecord],
    provider: Option<&dyn EmbeddingProvider>,
    answerer: &dyn AnswerProvider,
    cfg: &PipelineConfig,
    jobs: usize,
) -> Result<RunReport> {
    let run = |chunk: &[QaRecord]| -> Vec<QueryTrace> {
        chunk
            .iter()
            .map(|r| answer_record(engine, &r.query_graph(), &r.question, provider, answerer, cfg))
            .collect()
    };
    let jobs = jobs.clamp(1, records.len().max(1));
    let traces = if jobs == 1 {
        run(records)
    } else {
        let size = records.len().div_ceil(jobs);
        std::thread::scope(|s| {
            let handles: Vec<_> = records.chunks(size).map(|c| s.spawn(move || run(c))).collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("evaluation worker panicked"))
                .collect()
        })
    };
    finish(records, traces)
}

/// Generates `n` records over the engine's graph and evaluates them.
pub fn run_end_to_end(
    engine: &Engine,
    n: usize,
    seed: u64,
    provider: Option<&dyn EmbeddingProvider>,
    answerer: &dyn AnswerProvider,
    cfg: &PipelineConfig,
) -> Result<(Vec<QaRecord>, RunReport)> {
    let records = generate_dataset(&engine.graph, n, seed, None)?;
    let run = evaluate_records(engine, &records, provider, answerer, cfg)?;
    Ok((records, run))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationConfig {
    /// Probability that an edit adds a spurious constraint instead of
    /// deleting an evidence edge.
    pub spurious_fraction: f64,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        PerturbationConfig { spurious_fraction: 0.0 }
    }
}

#[derive(Clone, Debug)]
pub struct Perturbed {
    pub graph: Graph,
    pub record: QaRecord,
    pub deleted_edges: Vec<String>,
    pub spurious: Vec<String>,
}

/// Applies `x` seeded edits at graph-edit distance one each: delete an edge
/// between the gold center and a constraint, or add a constraint the gold
/// center does not satisfy. Edits that have no target left are skipped.
pub fn perturb(g: &Graph, record: &QaRecord, x: usize, seed: u64, cfg: &PerturbationConfig) -> Result<Perturbed> {
    let gold = g
        .ix(&record.provenance.hidden)
        .ok_or_else(|| Error::UnknownVertex(record.provenance.hidden.clone()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut deletable: Vec<String> = record
        .constraints
        .iter()
        .filter_map(|c| g.ix(&c.id).and_then(|v| g.edge_between(gold, v)))
        .map(|e| g.edge(e).id.clone())
        .collect();
    deletable.shuffle(&mut rng);
    let used: BTreeSet<&str> = record.constraints.iter().map(|c| c.id.as_str()).collect();
    let mut spurious_pool: Vec<NodeIx> = g
        .node_indices()
        .filter(|v| *v != gold && !g.adjacent(gold, *v) && !used.contains(g.id(*v)))
        .collect();
    spurious_pool.shuffle(&mut rng);

    let mut out = record.clone();
    let mut deleted = Vec::new();
    let mut spurious = Vec::new();
    for _ in 0..x {
        let add = rng.gen_bool(cfg.spurious_fraction.clamp(0.0, 1.0));
        if add {
            if let Some(v) = spurious_pool.pop() {
                spurious.push(g.id(v).to_string());
                out.constraints.push(Constraint {
                    id: g.id(v).to_string(),
                    label: g.label(v).to_string(),
                    relation: String::new(),
                    bridge: false,
                });
            }
        } else if let Some(e) = deletable.pop() {
            deleted.push(e);
        }
    }
    out.constraint_count = out.constraints.len();
    let removed = g.edge_indices().filter(|e| deleted.contains(&g.edge(*e).id)).collect();
    Ok(Perturbed {
        graph: g.without_edges(&removed),
        record: out,
        deleted_edges: deleted,
        spurious,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessPoint {
    pub x: usize,
    pub hit1: f64,
    pub f1: f64,
    pub exact_fraction: f64,
}

/// hit1 under `x` edits for every `x` in `xs`. `build` prepares an engine for
/// each perturbed graph.
#[allow(clippy::too_many_arguments)]
pub fn robustness_curve(
    g: &Graph,
    records: &[QaRecord],
    xs: &[usize],
    seed: u64,
    perturbation: &PerturbationConfig,
    build: &dyn Fn(Graph) -> Result<Engine>,
    provider: Option<&dyn EmbeddingProvider>,
    answerer: &dyn AnswerProvider,
    cfg: &PipelineConfig,
) -> Result<Vec<RobustnessPoint>> {
    let mut curve = Vec::with_capacity(xs.len());
    for &x in xs {
        let mut traces = Vec::with_capacity(records.len());
        let mut perturbed_records = Vec::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            let p = perturb(g, r, x, seed.wrapping_add(i as u64), perturbation)?;
            let engine = build(p.graph)?;
            traces.push(answer_record(
                &engine,
                &p.record.query_graph(),
                &p.record.question,
                provider,
                answerer,
                cfg,
            ));
            perturbed_records.push(p.record);
        }
        let exact = traces.iter().filter(|t| t.mode == Some(AnswerMode::Exact)).count();
        let run = finish(&perturbed_records, traces)?;
        curve.push(RobustnessPoint {
            x,
            hit1: run.report.hit1,
            f1: run.report.f1,
            exact_fraction: if records.is_empty() {
                0.0
            } else {
                exact as f64 / records.len() as f64
            },
        });
    }
    Ok(curve)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub vertices: usize,
    pub hubs: usize,
    /// Inclusive range of degree-one leaves attached to each hub.
    pub private_leaves: (usize, usize),
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            vertices: 200,
            hubs: 40,
            private_leaves: (2, 4),
        }
    }
}

/// Hub-and-spoke graph with unique labels: every hub owns a few degree-one
/// leaves, and each remaining vertex bridges two distinct random hubs.
pub fn synthetic_graph(cfg: &SyntheticConfig, seed: u64) -> Result<Graph> {
    if cfg.hubs < 2 || cfg.vertices < cfg.hubs || cfg.private_leaves.0 > cfg.private_leaves.1 {
        return Err(Error::Config(format!("unusable synthetic graph settings: {cfg:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Graph::new();
    let hub_id = |i: usize| format!("h{i:03}");
    for i in 0..cfg.hubs {
        g.add_vertex(hub_id(i), format!("Hub {i:03}"), "hub").expect("fresh id");
    }
    let mut next = 0usize;
    let mut edge = 0usize;
    let mut remaining = cfg.vertices - cfg.hubs;
    for h in 0..cfg.hubs {
        let k = rng
            .gen_range(cfg.private_leaves.0..=cfg.private_leaves.1)
            .min(remaining);
        for _ in 0..k {
            let id = format!("s{next:03}");
            g.add_vertex(id.clone(), format!("Trait {next:03}"), "trait")
                .expect("fresh id");
            g.add_edge(format!("e{edge:04}"), &hub_id(h), &id, "has trait")
                .expect("fresh id");
            next += 1;
            edge += 1;
        }
        remaining -= k;
    }
    for _ in 0..remaining {
        let a = rng.gen_range(0..cfg.hubs);
        let mut b = rng.gen_range(0..cfg.hubs - 1);
        if b >= a {
            b += 1;
        }
        let id = format!("s{next:03}");
        g.add_vertex(id.clone(), format!("Trait {next:03}"), "trait")
            .expect("fresh id");
        for h in [a, b] {
            g.add_edge(format!("e{edge:04}"), &hub_id(h), &id, "shares trait")
                .expect("fresh id");
            edge += 1;
        }
        next += 1;
    }
    Ok(g)
}
