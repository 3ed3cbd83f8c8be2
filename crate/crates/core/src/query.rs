//! Query side: extraction, entity normalization, path decomposition,
//! wildcard label completion and completion enumeration.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};

use crate::embeddings::{EmbeddingProvider, LabelTable};
use crate::error::{Error, Result};
use crate::graph::{
    components, enumerate_paths, graph_diameter, parse_graph_document, EdgeIx, Graph, NodeIx, Path, QueryGraph,
};
use crate::http::{HttpSettings, JsonClient};
use crate::index::{Probe, RStarIndex, TraversalStats};

pub const DEFAULT_COMPLETION_CAP: usize = 10_000;

/// Turns a question into extraction-grammar text (`(id<|>label<|>desc)#...`).
pub trait QueryExtractor {
    fn extract(&self, question: &str) -> Result<String>;
}

/// Accepts the extraction grammar verbatim.
pub struct StructuredExtractor;

impl QueryExtractor for StructuredExtractor {
    fn extract(&self, question: &str) -> Result<String> {
        Ok(question.to_string())
    }
}

/// Canned extractions keyed by question text, loaded from JSON lines
/// `{"question": ..., "extraction": ...}`.
#[derive(Clone, Debug, Default)]
pub struct ReplayExtractor {
    canned: HashMap<String, String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CannedExtraction {
    pub question: String,
    pub extraction: String,
}

impl ReplayExtractor {
    pub fn new(items: impl IntoIterator<Item = CannedExtraction>) -> Self {
        ReplayExtractor {
            canned: items
                .into_iter()
                .map(|c| (c.question.trim().to_string(), c.extraction))
                .collect(),
        }
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let items = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str::<CannedExtraction>)
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Self::new(items))
    }

    pub fn load(path: &FsPath) -> Result<Self> {
        Self::from_jsonl(&fs::read_to_string(path)?)
    }
}

impl QueryExtractor for ReplayExtractor {
    fn extract(&self, question: &str) -> Result<String> {
        self.canned
            .get(question.trim())
            .cloned()
            .ok_or_else(|| Error::UnparseableOutput {
                message: "no canned extraction for this question".into(),
                raw: String::new(),
            })
    }
}

/// LLM extraction over HTTP: `{"prompt"}` in, `{"text"}` out.
pub struct RemoteExtractor {
    client: JsonClient,
}

impl RemoteExtractor {
    pub fn new(settings: HttpSettings) -> Self {
        RemoteExtractor {
            client: JsonClient::new(settings),
        }
    }
}

impl QueryExtractor for RemoteExtractor {
    fn extract(&self, question: &str) -> Result<String> {
        let prompt = query_extraction_prompt(question);
        self.client.complete(&prompt)
    }
}

/// Instruction text asking a model to turn a question into a query graph.
pub fn query_extraction_prompt(question: &str) -> String {
    format!(
        "Goal: Given a user question, identify all semantically independent entities and extract their implicit \
structural relations to construct a query graph. If the question contains a target entity (i.e., the answer is \
unknown), it should be extracted as a node with label \"UNK\".\n\
Step1: Nodes. Identify all entities. For each entity, extract:\n\
- id(q_i): Unique node identifier\n\
- l(q_i): Node label (entity name), use \"UNK\" if it is the target to be queried\n\
- xi(q_i): Node description (optional, can be empty if unknown)\n\
Format: (<id(q_i)><|><l(q_i)><|><xi(q_i)>)\n\
Step2: Edges. For each related entity pair, extract:\n\
- id(e_qiqj): Unique edge identifier\n\
- q_i, q_j: Start and end node IDs\n\
Format: (<id(e_qiqj)><|><q_i><|><q_j><|>)\n\
Step3: Output Format. List all nodes and edges in order, separated by #. End with <|COMPLETE|>.\n\
Text: {question}"
    )
}

/// Runs the extractor and parses its output into a query graph.
pub fn extract_query_graph(question: &str, extractor: &dyn QueryExtractor) -> Result<QueryGraph> {
    if question.trim().is_empty() {
        return Err(Error::Config("question text is empty".into()));
    }
    let raw = extractor.extract(question)?;
    let unparseable = |message: String| Error::UnparseableOutput {
        message,
        raw: raw.clone(),
    };
    if raw.trim().is_empty() {
        return Err(unparseable("empty extraction".into()));
    }
    let parsed = parse_graph_document(&raw).map_err(|e| unparseable(e.to_string()))?;
    if parsed.graph.is_empty() {
        return Err(unparseable("extraction produced no vertices".into()));
    }
    Ok(QueryGraph::new(parsed.graph))
}

/// How one query vertex was mapped onto the data graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizedVertex {
    pub query_id: String,
    pub original_label: String,
    pub matched_id: String,
    pub matched_label: String,
    pub similarity: f64,
    pub low_confidence: bool,
}

#[derive(Clone, Debug)]
pub struct Normalization {
    pub query: QueryGraph,
    pub provenance: Vec<NormalizedVertex>,
}

/// Replaces every known query label with the label of its nearest data
/// vertex by cosine similarity. Unknown vertices pass through untouched.
pub fn normalize_entities(
    q: &QueryGraph,
    g: &Graph,
    table: &LabelTable,
    provider: &dyn EmbeddingProvider,
    threshold: Option<f64>,
) -> Result<Normalization> {
    if g.is_empty() {
        return Err(Error::EmptyGraph);
    }
    let mut out = q.graph.clone();
    let mut provenance = Vec::new();
    let known = q.known_vertices();
    let labels: Vec<String> = known.iter().map(|v| q.graph.label(*v).to_string()).collect();
    let probes = provider.embed_batch(&labels)?;
    for ((v, label), probe) in known.iter().zip(labels).zip(probes) {
        let (hit, similarity) = table.nearest(&probe)?;
        out.vertex_mut(*v).label = g.label(hit).to_string();
        provenance.push(NormalizedVertex {
            query_id: q.graph.id(*v).to_string(),
            original_label: label,
            matched_id: g.id(hit).to_string(),
            matched_label: g.label(hit).to_string(),
            similarity,
            low_confidence: threshold.is_some_and(|t| similarity < t),
        });
    }
    Ok(Normalization {
        query: QueryGraph::new(out),
        provenance,
    })
}

/// Covering set of length-`l` query paths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryPlan {
    pub l: usize,
    pub paths: Vec<Path>,
    pub cost: i64,
}

impl QueryPlan {
    pub fn covered_edges(&self) -> BTreeSet<EdgeIx> {
        self.paths.iter().flat_map(|p| p.edges.iter().copied()).collect()
    }

    /// Paths as id sequences, for reports.
    pub fn signatures(&self, q: &Graph) -> Vec<Vec<String>> {
        self.paths.iter().map(|p| p.signature(q)).collect()
    }
}

/// For every edge, the length of the longest simple path through it.
fn longest_path_through_edges(q: &Graph) -> Vec<usize> {
    let n = q.vertex_count();
    let target = n.saturating_sub(1);
    let mut best = vec![0usize; q.edge_count()];
    let mut on_path = vec![false; n];
    let mut edges = Vec::new();
    fn walk(
        q: &Graph,
        v: NodeIx,
        on_path: &mut [bool],
        edges: &mut Vec<EdgeIx>,
        best: &mut [usize],
        target: usize,
    ) -> bool {
        let len = edges.len();
        for e in edges.iter() {
            best[e.index()] = best[e.index()].max(len);
        }
        if best.iter().all(|b| *b >= target) {
            return true;
        }
        for &next in q.neighbors(v) {
            if on_path[next.index()] {
                continue;
            }
            on_path[next.index()] = true;
            edges.push(q.edge_between(v, next).expect("neighbors are adjacent"));
            let done = walk(q, next, on_path, edges, best, target);
            edges.pop();
            on_path[next.index()] = false;
            if done {
                return true;
            }
        }
        false
    }
    for start in q.node_indices() {
        on_path[start.index()] = true;
        let done = walk(q, start, &mut on_path, &mut edges, &mut best, target);
        on_path[start.index()] = false;
        if done {
            break;
        }
    }
    best
}

/// Path lengths that can decompose `q`: at least half the diameter (rounded
/// up) and at most the largest `l` for which every edge lies on some simple
/// path of exactly `l` edges.
pub fn valid_path_lengths(q: &Graph) -> Result<std::ops::RangeInclusive<usize>> {
    if q.edge_count() == 0 {
        return Err(Error::NoEdges);
    }
    let d = graph_diameter(q)?;
    let low = d.div_ceil(2).max(1);
    let high = longest_path_through_edges(q).into_iter().min().unwrap_or(0);
    Ok(low..=high)
}

/// The diameter, clamped into the valid range.
pub fn default_path_length(q: &Graph) -> Result<usize> {
    let range = valid_path_lengths(q)?;
    Ok(graph_diameter(q)?.clamp(*range.start(), *range.end()))
}

fn path_weight(q: &Graph, p: &Path) -> i64 {
    -(p.vertices.iter().map(|v| q.degree(*v) as i64).sum::<i64>())
}

/// Cost-driven greedy decomposition into length-`l` paths.
///
/// Starts from the highest-degree vertex (ties: smallest id). For every
/// candidate initial path, repeatedly adds the path that touches the current
/// set and covers an uncovered edge, minimizing (edge overlap, weight,
/// signature). The cheapest cover wins; cost sums every path's weight.
pub fn decompose_into_paths(q: &Graph, l: usize) -> Result<QueryPlan> {
    if q.edge_count() == 0 {
        return Err(Error::NoEdges);
    }
    let comps = components(q);
    if comps.len() > 1 {
        return Err(Error::Disconnected { components: comps });
    }
    let range = valid_path_lengths(q)?;
    if !range.contains(&l) {
        return Err(Error::InvalidPathLength {
            l,
            min: *range.start(),
            max: *range.end(),
        });
    }
    let start = q
        .node_indices()
        .max_by(|a, b| q.degree(*a).cmp(&q.degree(*b)).then_with(|| q.id(*b).cmp(q.id(*a))))
        .expect("non-empty query");

    let all: Vec<(Path, Vec<String>, i64)> = enumerate_paths(q, l)
        .into_iter()
        .map(|p| {
            let sig = p.signature(q);
            let w = path_weight(q, &p);
            (p, sig, w)
        })
        .collect();
    let mut initial: Vec<(Path, Vec<String>)> = all
        .iter()
        .filter(|(p, _, _)| p.vertices[0] == start || *p.vertices.last().unwrap() == start)
        .map(|(p, _, _)| {
            let oriented = if p.vertices[0] == start {
                p.clone()
            } else {
                p.reversed()
            };
            let sig = oriented.signature(q);
            (oriented, sig)
        })
        .collect();
    if initial.is_empty() {
        initial = all
            .iter()
            .filter(|(p, _, _)| p.vertices.contains(&start))
            .map(|(p, s, _)| (p.clone(), s.clone()))
            .collect();
    }
    initial.sort_by(|a, b| a.1.cmp(&b.1));

    let total_edges = q.edge_count();
    let mut best: Option<QueryPlan> = None;
    for (first, _) in initial {
        let mut covered: BTreeSet<EdgeIx> = first.edges.iter().copied().collect();
        let mut touched: BTreeSet<NodeIx> = first.vertices.iter().copied().collect();
        let mut cost = path_weight(q, &first);
        let mut paths = vec![first];
        while covered.len() < total_edges {
            let pick = all
                .iter()
                .filter(|(p, _, _)| p.vertices.iter().any(|v| touched.contains(v)))
                .filter(|(p, _, _)| p.edges.iter().any(|e| !covered.contains(e)))
                .min_by(|a, b| {
                    let overlap = |p: &Path| p.edges.iter().filter(|e| covered.contains(e)).count();
                    overlap(&a.0)
                        .cmp(&overlap(&b.0))
                        .then(a.2.cmp(&b.2))
                        .then_with(|| a.1.cmp(&b.1))
                })
                .expect("a connected query always has a touching path over an uncovered edge");
            covered.extend(pick.0.edges.iter().copied());
            touched.extend(pick.0.vertices.iter().copied());
            cost += pick.2;
            paths.push(pick.0.clone());
        }
        if best.as_ref().is_none_or(|b| cost < b.cost) {
            best = Some(QueryPlan { l, paths, cost });
        }
    }
    best.ok_or(Error::InvalidPathLength {
        l,
        min: *range.start(),
        max: *range.end(),
    })
}

/// Candidate labels per unknown query vertex, keyed by query vertex id.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelCandidateMap {
    pub map: BTreeMap<String, Vec<String>>,
    /// Unknown vertices whose candidate set came back empty.
    pub empty: Vec<String>,
}

impl LabelCandidateMap {
    pub fn combination_count(&self) -> u128 {
        self.map.values().map(|v| v.len() as u128).product()
    }
}

/// Label embedding of a known label, zeros when the label is unknown to the
/// data graph (such a position then never matches at the leaves).
fn label_segment(table: &LabelTable, label: &str) -> Vec<f64> {
    table
        .for_label(label)
        .map(|e| e.0.clone())
        .unwrap_or_else(|| vec![0.0; table.dim()])
}

/// Wildcard probe for a query path: unknown positions get zero label segments.
pub fn wildcard_probe(q: &QueryGraph, p: &Path, table: &LabelTable) -> Probe {
    let mut labels = Vec::with_capacity(p.vertices.len());
    let mut o0 = Vec::with_capacity(p.vertices.len() * table.dim());
    for v in &p.vertices {
        if q.is_unknown(*v) {
            labels.push(None);
            o0.extend(std::iter::repeat_n(0.0, table.dim()));
        } else {
            let label = q.graph.label(*v);
            labels.push(Some(label.to_string()));
            o0.extend(label_segment(table, label));
        }
    }
    Probe {
        labels,
        o0,
        o: Vec::new(),
    }
}

/// Reads candidate labels for every unknown vertex off the index.
///
/// Picks plan paths greedily until every unknown is covered (preferring
/// paths with at least one known position), probes them, and unions the
/// labels found at each unknown position.
pub fn complete_unknown_labels(
    q: &QueryGraph,
    plan: &QueryPlan,
    idx: &RStarIndex,
    table: &LabelTable,
) -> Result<(LabelCandidateMap, TraversalStats)> {
    let unknown: BTreeSet<NodeIx> = q.unknown_vertices().into_iter().collect();
    if unknown.is_empty() {
        return Ok((LabelCandidateMap::default(), TraversalStats::default()));
    }
    let mut uncovered = unknown.clone();
    let mut chosen: Vec<&Path> = Vec::new();
    while let Some(&u) = uncovered.iter().next() {
        let with_u = |p: &&Path| p.vertices.iter().any(|v| uncovered.contains(v));
        let pick = plan
            .paths
            .iter()
            .filter(with_u)
            .find(|p| p.vertices.iter().any(|v| !q.is_unknown(*v)))
            .or_else(|| plan.paths.iter().find(with_u));
        let Some(p) = pick else {
            return Err(Error::UncoveredUnknown(q.graph.id(u).to_string()));
        };
        for v in &p.vertices {
            uncovered.remove(v);
        }
        chosen.push(p);
    }
    // an all-unknown path matches every indexed path, so its positions may
    // take any indexed label and there is nothing to traverse
    let (open, chosen): (Vec<&Path>, Vec<&Path>) = chosen
        .into_iter()
        .partition(|p| p.vertices.iter().all(|v| q.is_unknown(*v)));
    let probes: Vec<Probe> = chosen.iter().map(|p| wildcard_probe(q, p, table)).collect();
    let (hits, stats) = idx.retrieve_label_matches(&probes)?;

    let mut sets: BTreeMap<String, BTreeSet<String>> = unknown
        .iter()
        .map(|v| (q.graph.id(*v).to_string(), BTreeSet::new()))
        .collect();
    for (path, cands) in chosen.iter().zip(hits) {
        for c in cands {
            let entry = idx.entry(c.entry);
            for (pos, v) in path.vertices.iter().enumerate() {
                if !q.is_unknown(*v) {
                    continue;
                }
                let at = if c.reversed { entry.labels.len() - 1 - pos } else { pos };
                sets.get_mut(q.graph.id(*v))
                    .expect("unknown vertex has a slot")
                    .insert(idx.label(entry.labels[at]).to_string());
            }
        }
    }
    if !open.is_empty() {
        let vocabulary: BTreeSet<&str> = idx
            .entries()
            .iter()
            .flat_map(|e| e.labels.iter().map(|id| idx.label(*id)))
            .collect();
        for v in open.iter().flat_map(|p| p.vertices.iter()) {
            let slot = sets.get_mut(q.graph.id(*v)).expect("unknown vertex has a slot");
            slot.extend(vocabulary.iter().map(|l| l.to_string()));
        }
    }
    let empty = sets
        .iter()
        .filter(|(_, s)| s.is_empty())
        .map(|(k, _)| k.clone())
        .collect();
    let map = sets.into_iter().map(|(k, s)| (k, s.into_iter().collect())).collect();
    Ok((LabelCandidateMap { map, empty }, stats))
}

/// A fully labeled instantiation of the query.
#[derive(Clone, Debug)]
pub struct Completion {
    pub assignment: BTreeMap<String, String>,
    pub query: QueryGraph,
}

/// Cartesian product over candidate lists, keys in id order, first key
/// varying slowest. An empty list yields no completions.
pub fn enumerate_completions(q: &QueryGraph, candidates: &LabelCandidateMap, cap: usize) -> Result<Vec<Completion>> {
    if candidates.map.values().any(Vec::is_empty) {
        return Ok(Vec::new());
    }
    let count = candidates.combination_count();
    if count > cap as u128 {
        return Err(Error::CapExceeded {
            what: "label completions",
            count,
            cap: cap as u128,
        });
    }
    let keys: Vec<(&String, &Vec<String>)> = candidates.map.iter().collect();
    let mut out = Vec::with_capacity(count as usize);
    let mut odometer = vec![0usize; keys.len()];
    loop {
        let assignment: BTreeMap<String, String> = keys
            .iter()
            .zip(&odometer)
            .map(|((k, list), i)| ((*k).clone(), list[*i].clone()))
            .collect();
        let mut graph = q.graph.clone();
        for (id, label) in &assignment {
            let v = graph.ix(id).ok_or_else(|| Error::UnknownVertex(id.clone()))?;
            graph.vertex_mut(v).label = label.clone();
        }
        out.push(Completion {
            assignment,
            query: QueryGraph::new(graph),
        });
        let mut pos = keys.len();
        loop {
            if pos == 0 {
                return Ok(out);
            }
            pos -= 1;
            odometer[pos] += 1;
            if odometer[pos] < keys[pos].1.len() {
                break;
            }
            odometer[pos] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::MockEmbedder;
    use crate::graph::UNKNOWN_LABEL;

    fn graph(vertices: &[(&str, &str)], edges: &[(&str, &str)]) -> Graph {
        let mut g = Graph::new();
        for (id, label) in vertices {
            g.add_vertex(*id, *label, "").unwrap();
        }
        for (i, (a, b)) in edges.iter().enumerate() {
            g.add_edge(format!("e{i}"), a, b, "").unwrap();
        }
        g
    }

    fn star(leaves: usize) -> Graph {
        let mut vs = vec![("c", "Center")];
        let names: Vec<String> = (0..leaves).map(|i| format!("l{i}")).collect();
        for n in &names {
            vs.push((n.as_str(), n.as_str()));
        }
        let es: Vec<(&str, &str)> = names.iter().map(|n| ("c", n.as_str())).collect();
        graph(&vs, &es)
    }

    #[test]
    fn structured_bypass_round_trip() {
        let q = extract_query_graph(
            "(q1<|>UNK<|>)#(q2<|>massage<|>)#(e1<|>q1<|>q2<|>)#<|COMPLETE|>",
            &StructuredExtractor,
        )
        .unwrap();
        assert_eq!(q.graph.vertex_count(), 2);
        assert_eq!(q.unknown_vertices().len(), 1);
    }

    #[test]
    fn empty_extraction_is_an_error() {
        struct Silent;
        impl QueryExtractor for Silent {
            fn extract(&self, _: &str) -> Result<String> {
                Ok(String::new())
            }
        }
        assert!(matches!(
            extract_query_graph("who?", &Silent),
            Err(Error::UnparseableOutput { .. })
        ));
        assert!(matches!(
            extract_query_graph("(q1<|>UNK<|>)", &StructuredExtractor),
            Err(Error::UnparseableOutput { raw, .. }) if raw == "(q1<|>UNK<|>)"
        ));
    }

    #[test]
    fn replay_extractor_looks_up_questions() {
        let r = ReplayExtractor::from_jsonl("{\"question\":\"Which?\",\"extraction\":\"(a<|>UNK<|>)#<|COMPLETE|>\"}\n")
            .unwrap();
        assert_eq!(r.extract("  Which? ").unwrap(), "(a<|>UNK<|>)#<|COMPLETE|>");
        assert!(r.extract("Other").is_err());
    }

    #[test]
    fn normalization_maps_to_nearest() {
        let g = graph(&[("n1", "Magnesium"), ("n2", "Zinc")], &[("n1", "n2")]);
        let provider = MockEmbedder::new(16, 7);
        let table = LabelTable::build(&g, &provider).unwrap();
        let q = QueryGraph::new(graph(&[("q1", "Zinc"), ("q2", UNKNOWN_LABEL)], &[("q1", "q2")]));
        let n = normalize_entities(&q, &g, &table, &provider, Some(0.5)).unwrap();
        assert_eq!(n.provenance.len(), 1);
        assert_eq!(n.provenance[0].matched_id, "n2");
        assert!((n.provenance[0].similarity - 1.0).abs() < 1e-12);
        assert!(!n.provenance[0].low_confidence);
        assert!(n.query.is_unknown(n.query.graph.ix("q2").unwrap()));
        let twice = normalize_entities(&n.query, &g, &table, &provider, None).unwrap();
        assert_eq!(twice.query.graph.to_document(), n.query.graph.to_document());
    }

    #[test]
    fn star_decomposition_l1() {
        let q = star(4);
        let plan = decompose_into_paths(&q, 1).unwrap();
        assert_eq!(plan.paths.len(), 4);
        assert_eq!(plan.cost, -20);
    }

    #[test]
    fn star_decomposition_l2() {
        let q = star(4);
        let plan = decompose_into_paths(&q, 2).unwrap();
        assert_eq!(plan.paths.len(), 2);
        assert_eq!(plan.covered_edges().len(), 4);
    }

    #[test]
    fn triangle_needs_overlap() {
        let q = graph(
            &[("a", "A"), ("b", "B"), ("c", "C")],
            &[("a", "b"), ("b", "c"), ("c", "a")],
        );
        let plan = decompose_into_paths(&q, 2).unwrap();
        assert_eq!(plan.paths.len(), 2);
        let total: usize = plan.paths.iter().map(|p| p.len()).sum();
        assert_eq!(total - plan.covered_edges().len(), 1);
    }

    #[test]
    fn out_of_range_length_names_the_range() {
        let q = star(3);
        assert!(matches!(
            decompose_into_paths(&q, 3),
            Err(Error::InvalidPathLength { l: 3, min: 1, max: 2 })
        ));
        let lone = graph(&[("a", "A")], &[]);
        assert!(matches!(decompose_into_paths(&lone, 1), Err(Error::NoEdges)));
    }

    #[test]
    fn pendant_limits_the_upper_length() {
        // path x0..x6 plus y hanging off x3: diameter 6, but the edge x3-y
        // only lies on simple paths of length at most 4
        let vs: Vec<(String, String)> = (0..7)
            .map(|i| (format!("x{i}"), format!("X{i}")))
            .chain([("y".to_string(), "Y".to_string())])
            .collect();
        let vrefs: Vec<(&str, &str)> = vs.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        let names: Vec<String> = (0..7).map(|i| format!("x{i}")).collect();
        let mut es: Vec<(&str, &str)> = names.windows(2).map(|w| (w[0].as_str(), w[1].as_str())).collect();
        es.push(("x3", "y"));
        let q = graph(&vrefs, &es);
        assert_eq!(graph_diameter(&q).unwrap(), 6);
        assert_eq!(valid_path_lengths(&q).unwrap(), 3..=4);
        assert_eq!(default_path_length(&q).unwrap(), 4);
        assert!(decompose_into_paths(&q, 4).is_ok());
    }

    #[test]
    fn completions_follow_the_product() {
        let q = QueryGraph::new(graph(
            &[("q1", UNKNOWN_LABEL), ("q2", UNKNOWN_LABEL), ("q3", "K")],
            &[("q1", "q3"), ("q2", "q3")],
        ));
        let mut u = LabelCandidateMap::default();
        u.map.insert("q1".into(), vec!["l1".into(), "l2".into()]);
        u.map.insert("q2".into(), vec!["l3".into()]);
        let p = enumerate_completions(&q, &u, 10).unwrap();
        let combos: Vec<Vec<&str>> = p
            .iter()
            .map(|c| c.assignment.values().map(String::as_str).collect())
            .collect();
        assert_eq!(combos, vec![vec!["l1", "l3"], vec!["l2", "l3"]]);
        assert!(p.iter().all(|c| c.query.unknown_vertices().is_empty()));

        let none = enumerate_completions(&q, &LabelCandidateMap::default(), 10).unwrap();
        assert_eq!(none.len(), 1);

        let mut big = LabelCandidateMap::default();
        big.map.insert("q1".into(), (0..10).map(|i| format!("a{i}")).collect());
        big.map.insert("q2".into(), (0..10).map(|i| format!("b{i}")).collect());
        assert!(matches!(
            enumerate_completions(&q, &big, 50),
            Err(Error::CapExceeded {
                count: 100,
                cap: 50,
                ..
            })
        ));
    }

    #[test]
    fn all_unknown_edge_takes_every_indexed_label() {
        let g = graph(&[("a", "A"), ("b", "B"), ("c", "C")], &[("a", "b"), ("b", "c")]);
        let table = LabelTable::build(&g, &MockEmbedder::new(4, 0)).unwrap();
        let dom: Vec<_> = g
            .node_indices()
            .map(|v| crate::dominance::count_oracle_embedding(&g, v, 3))
            .collect();
        let idx = RStarIndex::build_from_graph(&g, 1, &table, &dom, None).unwrap();
        let q = QueryGraph::new(graph(&[("u", UNKNOWN_LABEL), ("w", UNKNOWN_LABEL)], &[("u", "w")]));
        let plan = decompose_into_paths(&q.graph, 1).unwrap();
        let (cands, _) = complete_unknown_labels(&q, &plan, &idx, &table).unwrap();
        assert_eq!(cands.map["u"], vec!["A", "B", "C"]);
        assert_eq!(cands.map["w"], vec!["A", "B", "C"]);
    }
}
