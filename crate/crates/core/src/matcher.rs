//! Exact subgraph assembly from path candidates, the 1-hop fallback and a
//! backtracking reference matcher.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::dominance::DominanceEncoder;
use crate::embeddings::LabelTable;
use crate::error::{Error, Result};
use crate::graph::{is_unknown, Graph, NodeIx, Path, QueryGraph};
use crate::index::{Probe, RStarIndex, TraversalStats};
use crate::query::{Completion, QueryPlan};

pub const DEFAULT_ASSEMBLY_CAP: usize = 100_000;
pub const DEFAULT_FALLBACK_CAP: usize = 50;
pub const BRUTE_FORCE_LIMIT: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub assembly_cap: usize,
    pub fallback_cap: usize,
    /// Descend pruned subtrees and count candidates the pruning missed.
    pub audit: bool,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            assembly_cap: DEFAULT_ASSEMBLY_CAP,
            fallback_cap: DEFAULT_FALLBACK_CAP,
            audit: false,
        }
    }
}

/// Injective label-preserving image of the query in the data graph.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MatchedSubgraph {
    /// query vertex id → data vertex id
    pub binding: BTreeMap<String, String>,
    /// data edge ids
    pub edges: BTreeSet<String>,
}

impl MatchedSubgraph {
    /// Data vertices bound to the query's unknown vertices.
    pub fn unknown_bindings(&self, q: &QueryGraph) -> Vec<String> {
        q.unknown_vertices()
            .into_iter()
            .filter_map(|v| self.binding.get(q.graph.id(v)).cloned())
            .collect()
    }
}

/// Candidate data vertices for one query path, aligned position by position.
pub type CandidateList = Vec<Vec<NodeIx>>;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchStats {
    pub completions: usize,
    pub candidates_per_path: Vec<usize>,
    pub combinations_tried: usize,
    pub pruned: usize,
    pub traversal: TraversalStats,
}

/// 1-hop neighborhood of the query's known entities.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FallbackSubgraph {
    pub vertices: Vec<String>,
    pub edges: Vec<String>,
    pub truncated: bool,
    /// No known query vertex resolved to a data vertex.
    pub unresolved: bool,
}

impl FallbackSubgraph {
    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub exact: Vec<MatchedSubgraph>,
    pub fallback: Option<FallbackSubgraph>,
    pub stats: MatchStats,
}

/// Probes for every plan path of a fully labeled query.
pub fn exact_probes(q: &Graph, plan: &QueryPlan, table: &LabelTable, encoder: &DominanceEncoder) -> Result<Vec<Probe>> {
    let dom = encoder.node_embeddings(q, |v| table.for_label(q.label(v)).map(|e| e.0.as_slice()))?;
    Ok(plan
        .paths
        .iter()
        .map(|p| {
            let mut o0 = Vec::with_capacity(p.vertices.len() * table.dim());
            let mut o = Vec::with_capacity(p.vertices.len() * encoder.dim());
            for v in &p.vertices {
                o0.extend_from_slice(&table.for_label(q.label(*v)).expect("labels checked").0);
                o.extend_from_slice(&dom[v.index()].0);
            }
            Probe {
                labels: p.vertices.iter().map(|v| Some(q.label(*v).to_string())).collect(),
                o0,
                o,
            }
        })
        .collect())
}

/// Per plan path, the data vertex sequences the index returns.
pub fn candidate_lists(
    q: &Graph,
    plan: &QueryPlan,
    idx: &RStarIndex,
    table: &LabelTable,
    encoder: &DominanceEncoder,
    audit: bool,
) -> Result<(Vec<CandidateList>, TraversalStats)> {
    if idx.params().l != plan.l {
        return Err(Error::PathLengthMismatch {
            index: idx.params().l,
            query: plan.l,
        });
    }
    // a label the data graph never uses cannot match anywhere
    if q.node_indices().any(|v| table.for_label(q.label(v)).is_none()) {
        return Ok((vec![Vec::new(); plan.paths.len()], TraversalStats::default()));
    }
    let probes = exact_probes(q, plan, table, encoder)?;
    let (hits, stats) = idx.retrieve_exact_candidates_with(&probes, audit)?;
    let lists = hits
        .into_iter()
        .map(|cands| {
            let mut list: CandidateList = cands
                .into_iter()
                .map(|c| {
                    let mut vs = idx.entry(c.entry).path.vertices.clone();
                    if c.reversed {
                        vs.reverse();
                    }
                    vs
                })
                .collect();
            list.sort();
            list.dedup();
            list
        })
        .collect();
    Ok((lists, stats))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AssemblyStats {
    pub combinations_tried: usize,
    pub conflicts: usize,
}

/// Joins path candidates path by path, rejecting conflicting or
/// non-injective bindings, and re-verifies every query edge on the result.
pub fn assemble_subgraphs(
    q: &Graph,
    plan: &QueryPlan,
    lists: &[CandidateList],
    g: &Graph,
    cap: usize,
) -> Result<(Vec<MatchedSubgraph>, AssemblyStats)> {
    let mut stats = AssemblyStats::default();
    if lists.len() != plan.paths.len() {
        return Err(Error::LengthMismatch {
            records: plan.paths.len(),
            answers: lists.len(),
        });
    }
    if lists.iter().any(Vec::is_empty) {
        return Ok((Vec::new(), stats));
    }
    // join the most selective path first, then keep each next path attached
    let order = join_order(&plan.paths, lists);
    let mut state = JoinState {
        q,
        g,
        paths: &plan.paths,
        lists,
        order: &order,
        bound: vec![None; q.vertex_count()],
        used: vec![0u32; g.vertex_count()],
        out: BTreeSet::new(),
        stats: &mut stats,
        cap,
    };
    state.join(0)?;
    let out = state.out.into_iter().collect();
    Ok((out, stats))
}

fn join_order(paths: &[Path], lists: &[CandidateList]) -> Vec<usize> {
    let mut order = Vec::with_capacity(paths.len());
    let mut touched = BTreeSet::new();
    let mut left: BTreeSet<usize> = (0..paths.len()).collect();
    while !left.is_empty() {
        let next = *left
            .iter()
            .min_by_key(|i| {
                let attached = order.is_empty() || paths[**i].vertices.iter().any(|v| touched.contains(v));
                (!attached, lists[**i].len(), **i)
            })
            .expect("non-empty");
        left.remove(&next);
        touched.extend(paths[next].vertices.iter().copied());
        order.push(next);
    }
    order
}

struct JoinState<'a> {
    q: &'a Graph,
    g: &'a Graph,
    paths: &'a [Path],
    lists: &'a [CandidateList],
    order: &'a [usize],
    bound: Vec<Option<NodeIx>>,
    /// how many query vertices hold each data vertex
    used: Vec<u32>,
    out: BTreeSet<MatchedSubgraph>,
    stats: &'a mut AssemblyStats,
    cap: usize,
}

impl JoinState<'_> {
    fn join(&mut self, depth: usize) -> Result<()> {
        if depth == self.order.len() {
            if let Some(m) = finish_binding(self.q, self.g, &self.bound) {
                self.out.insert(m);
            }
            return Ok(());
        }
        let pi = self.order[depth];
        let path = &self.paths[pi];
        for cand in &self.lists[pi] {
            self.stats.combinations_tried += 1;
            if self.stats.combinations_tried > self.cap {
                return Err(Error::CapExceeded {
                    what: "subgraph assembly",
                    count: self.stats.combinations_tried as u128,
                    cap: self.cap as u128,
                });
            }
            let mut newly = Vec::new();
            let mut ok = true;
            for (qv, dv) in path.vertices.iter().zip(cand) {
                match self.bound[qv.index()] {
                    Some(b) if b == *dv => {}
                    Some(_) => {
                        ok = false;
                        break;
                    }
                    None => {
                        if self.used[dv.index()] > 0 {
                            ok = false;
                            break;
                        }
                        self.bound[qv.index()] = Some(*dv);
                        self.used[dv.index()] += 1;
                        newly.push(*qv);
                    }
                }
            }
            if ok {
                self.join(depth + 1)?;
            } else {
                self.stats.conflicts += 1;
            }
            for qv in newly {
                let dv = self.bound[qv.index()].take().expect("bound above");
                self.used[dv.index()] -= 1;
            }
        }
        Ok(())
    }
}

/// Checks a complete binding and turns it into a subgraph.
fn finish_binding(q: &Graph, g: &Graph, bound: &[Option<NodeIx>]) -> Option<MatchedSubgraph> {
    let mut binding = BTreeMap::new();
    for v in q.node_indices() {
        let d = bound[v.index()]?;
        if !is_unknown(q.label(v)) && q.label(v) != g.label(d) {
            return None;
        }
        binding.insert(q.id(v).to_string(), g.id(d).to_string());
    }
    let mut edges = BTreeSet::new();
    for e in q.edge_indices() {
        let (a, b) = q.endpoints(e);
        let de = g.edge_between(bound[a.index()]?, bound[b.index()]?)?;
        edges.insert(g.edge(de).id.clone());
    }
    Some(MatchedSubgraph { binding, edges })
}

/// Independent check of the subgraph invariants: injective, label
/// consistent (unknown matches anything), every query edge adjacent.
pub fn verify_match(q: &Graph, g: &Graph, m: &MatchedSubgraph) -> bool {
    let mut seen = BTreeSet::new();
    for v in q.node_indices() {
        let Some(d) = m.binding.get(q.id(v)).and_then(|id| g.ix(id)) else {
            return false;
        };
        if !seen.insert(d) || (!is_unknown(q.label(v)) && q.label(v) != g.label(d)) {
            return false;
        }
    }
    q.edge_indices().all(|e| {
        let (a, b) = q.endpoints(e);
        let da = g.ix(&m.binding[q.id(a)]).unwrap();
        let db = g.ix(&m.binding[q.id(b)]).unwrap();
        g.edge_between(da, db)
            .is_some_and(|de| m.edges.contains(&g.edge(de).id))
    })
}

/// Runs every completion through the index and assembler; falls back to the
/// 1-hop neighborhood of `q`'s known entities when nothing matches.
#[allow(clippy::too_many_arguments)]
pub fn match_query(
    q: &QueryGraph,
    plan: &QueryPlan,
    completions: &[Completion],
    idx: &RStarIndex,
    g: &Graph,
    table: &LabelTable,
    encoder: &DominanceEncoder,
    cfg: &MatchConfig,
) -> Result<MatchResult> {
    let fp = g.fingerprint();
    if idx.fingerprint() != fp {
        return Err(Error::FingerprintMismatch {
            index: idx.fingerprint().to_string(),
            graph: fp,
        });
    }
    let mut stats = MatchStats {
        completions: completions.len(),
        candidates_per_path: vec![0; plan.paths.len()],
        ..MatchStats::default()
    };
    let mut found = BTreeSet::new();
    for c in completions {
        let (lists, trav) = candidate_lists(&c.query.graph, plan, idx, table, encoder, cfg.audit)?;
        stats.traversal.merge(&trav);
        for (n, l) in stats.candidates_per_path.iter_mut().zip(&lists) {
            *n += l.len();
        }
        let (subs, a) = assemble_subgraphs(&c.query.graph, plan, &lists, g, cfg.assembly_cap)?;
        stats.combinations_tried += a.combinations_tried;
        stats.pruned += a.conflicts;
        found.extend(subs);
    }
    let exact: Vec<MatchedSubgraph> = found.into_iter().collect();
    let fallback = exact.is_empty().then(|| fallback_subgraph(q, g, cfg.fallback_cap));
    Ok(MatchResult { exact, fallback, stats })
}

/// Matches an edgeless single-vertex query by label alone.
pub fn match_single_vertex(q: &QueryGraph, g: &Graph, cfg: &MatchConfig) -> MatchResult {
    let qv = NodeIx(0);
    let exact: Vec<MatchedSubgraph> = g
        .node_indices()
        .filter(|d| q.is_unknown(qv) || g.label(*d) == q.graph.label(qv))
        .map(|d| MatchedSubgraph {
            binding: BTreeMap::from([(q.graph.id(qv).to_string(), g.id(d).to_string())]),
            edges: BTreeSet::new(),
        })
        .collect();
    let fallback = exact.is_empty().then(|| fallback_subgraph(q, g, cfg.fallback_cap));
    MatchResult {
        exact,
        fallback,
        stats: MatchStats::default(),
    }
}

/// Union of the 1-hop stars of every data vertex carrying a known query
/// label, plus the data edges among the kept vertices. When more than `cap`
/// vertices qualify, the known vertices are kept first and the rest by
/// degree (descending), then id.
pub fn fallback_subgraph(q: &QueryGraph, g: &Graph, cap: usize) -> FallbackSubgraph {
    let wanted: BTreeSet<&str> = q.known_vertices().into_iter().map(|v| q.graph.label(v)).collect();
    let by_rank = |a: &NodeIx, b: &NodeIx| g.degree(*b).cmp(&g.degree(*a)).then_with(|| g.id(*a).cmp(g.id(*b)));
    let mut anchors: Vec<NodeIx> = g.node_indices().filter(|v| wanted.contains(g.label(*v))).collect();
    if anchors.is_empty() {
        return FallbackSubgraph {
            unresolved: true,
            ..FallbackSubgraph::default()
        };
    }
    anchors.sort_by(by_rank);
    let anchor_set: BTreeSet<NodeIx> = anchors.iter().copied().collect();
    let mut rest: Vec<NodeIx> = anchors
        .iter()
        .flat_map(|a| g.neighbors(*a).iter().copied())
        .filter(|v| !anchor_set.contains(v))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    rest.sort_by(by_rank);
    let mut keep: Vec<NodeIx> = anchors.into_iter().chain(rest).collect();
    let truncated = keep.len() > cap;
    keep.truncate(cap);
    let kept: BTreeSet<NodeIx> = keep.iter().copied().collect();
    let mut edges: Vec<String> = g
        .edge_indices()
        .filter(|e| {
            let (a, b) = g.endpoints(*e);
            kept.contains(&a) && kept.contains(&b)
        })
        .map(|e| g.edge(e).id.clone())
        .collect();
    edges.sort();
    FallbackSubgraph {
        vertices: keep.iter().map(|v| g.id(*v).to_string()).collect(),
        edges,
        truncated,
        unresolved: false,
    }
}

/// All injective, label-consistent embeddings of `q` into `g`, by
/// backtracking. Limited to graphs of at most 50 vertices.
pub fn brute_force_match(q: &Graph, g: &Graph) -> Result<Vec<MatchedSubgraph>> {
    brute_force_match_with_limit(q, g, BRUTE_FORCE_LIMIT)
}

pub fn brute_force_match_with_limit(q: &Graph, g: &Graph, limit: usize) -> Result<Vec<MatchedSubgraph>> {
    if g.vertex_count() > limit {
        return Err(Error::GuardExceeded {
            limit,
            actual: g.vertex_count(),
        });
    }
    if q.is_empty() {
        return Ok(Vec::new());
    }
    // BFS order so every vertex after the first has a bound neighbor
    let mut order = Vec::new();
    let mut seen = vec![false; q.vertex_count()];
    for root in q.node_indices() {
        if seen[root.index()] {
            continue;
        }
        seen[root.index()] = true;
        let mut queue = std::collections::VecDeque::from([root]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            for n in q.neighbors(v) {
                if !seen[n.index()] {
                    seen[n.index()] = true;
                    queue.push_back(*n);
                }
            }
        }
    }
    let mut bound = vec![None; q.vertex_count()];
    let mut used = vec![false; g.vertex_count()];
    let mut out = BTreeSet::new();
    backtrack(q, g, &order, 0, &mut bound, &mut used, &mut out);
    Ok(out.into_iter().collect())
}

fn backtrack(
    q: &Graph,
    g: &Graph,
    order: &[NodeIx],
    depth: usize,
    bound: &mut Vec<Option<NodeIx>>,
    used: &mut Vec<bool>,
    out: &mut BTreeSet<MatchedSubgraph>,
) {
    if depth == order.len() {
        out.extend(finish_binding(q, g, bound));
        return;
    }
    let v = order[depth];
    for d in g.node_indices() {
        if used[d.index()] || (!is_unknown(q.label(v)) && q.label(v) != g.label(d)) {
            continue;
        }
        let fits = q
            .neighbors(v)
            .iter()
            .all(|n| bound[n.index()].is_none_or(|b| g.adjacent(b, d)));
        if !fits {
            continue;
        }
        bound[v.index()] = Some(d);
        used[d.index()] = true;
        backtrack(q, g, order, depth + 1, bound, used, out);
        used[d.index()] = false;
        bound[v.index()] = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::MockEmbedder;
    use crate::graph::UNKNOWN_LABEL;
    use crate::query::{complete_unknown_labels, decompose_into_paths, enumerate_completions, DEFAULT_COMPLETION_CAP};

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

    fn run(q: &QueryGraph, g: &Graph, l: usize) -> MatchResult {
        let table = LabelTable::build(g, &MockEmbedder::new(8, 3)).unwrap();
        let encoder = DominanceEncoder::CountOracle { dim: 6 };
        let dom = encoder
            .node_embeddings(g, |v| Some(table.vertex(v).0.as_slice()))
            .unwrap();
        let idx = RStarIndex::build_from_graph(g, l, &table, &dom, None).unwrap();
        let plan = decompose_into_paths(&q.graph, l).unwrap();
        let (u, _) = complete_unknown_labels(q, &plan, &idx, &table).unwrap();
        let p = enumerate_completions(q, &u, DEFAULT_COMPLETION_CAP).unwrap();
        match_query(q, &plan, &p, &idx, g, &table, &encoder, &MatchConfig::default()).unwrap()
    }

    fn bindings(ms: &[MatchedSubgraph]) -> BTreeSet<BTreeMap<String, String>> {
        ms.iter().map(|m| m.binding.clone()).collect()
    }

    #[test]
    fn self_match_of_a_star() {
        let g = graph(
            &[("c", "C"), ("a", "A"), ("b", "B"), ("x", "X")],
            &[("c", "a"), ("c", "b"), ("x", "a")],
        );
        let q = QueryGraph::new(graph(
            &[("q0", "C"), ("q1", "A"), ("q2", "B")],
            &[("q0", "q1"), ("q0", "q2")],
        ));
        let r = run(&q, &g, 1);
        assert_eq!(r.exact.len(), 1);
        assert_eq!(r.exact[0].binding["q0"], "c");
        assert!(r.fallback.is_none());
        assert!(verify_match(&q.graph, &g, &r.exact[0]));
    }

    #[test]
    fn unsatisfiable_constraint_falls_back() {
        let g = graph(&[("c", "C"), ("a", "A"), ("b", "B")], &[("c", "a"), ("a", "b")]);
        let q = QueryGraph::new(graph(
            &[("u", UNKNOWN_LABEL), ("q1", "A"), ("q2", "B")],
            &[("u", "q1"), ("u", "q2")],
        ));
        assert!(brute_force_match(&q.graph, &g).unwrap().is_empty());
        let r = run(&q, &g, 1);
        assert!(r.exact.is_empty());
        let fb = r.fallback.unwrap();
        assert!(fb.vertices.contains(&"c".to_string()));
    }

    #[test]
    fn join_on_shared_vertex() {
        // two candidate lists agreeing on the join vertex
        let g = graph(
            &[("a", "A"), ("b", "B"), ("c", "C"), ("d", "D"), ("e", "E"), ("f", "F")],
            &[("a", "b"), ("b", "c"), ("c", "d"), ("d", "e"), ("e", "f")],
        );
        let q = graph(&[("x", "A"), ("y", "B"), ("z", "C")], &[("x", "y"), ("y", "z")]);
        let (x, y, z) = (NodeIx(0), NodeIx(1), NodeIx(2));
        let plan = QueryPlan {
            l: 1,
            paths: vec![
                Path {
                    vertices: vec![x, y],
                    edges: vec![crate::graph::EdgeIx(0)],
                },
                Path {
                    vertices: vec![y, z],
                    edges: vec![crate::graph::EdgeIx(1)],
                },
            ],
            cost: 0,
        };
        let (ga, gb, gc, gd) = (NodeIx(0), NodeIx(1), NodeIx(2), NodeIx(3));
        let agree = vec![vec![vec![ga, gb]], vec![vec![gb, gc]]];
        let (m, _) = assemble_subgraphs(&q, &plan, &agree, &g, 100).unwrap();
        assert_eq!(m.len(), 1);
        let disagree = vec![vec![vec![ga, gb]], vec![vec![gc, gd]]];
        assert!(assemble_subgraphs(&q, &plan, &disagree, &g, 100).unwrap().0.is_empty());
        let empty = vec![vec![vec![ga, gb]], vec![]];
        assert!(assemble_subgraphs(&q, &plan, &empty, &g, 100).unwrap().0.is_empty());
        assert!(matches!(
            assemble_subgraphs(&q, &plan, &agree, &g, 1),
            Err(Error::CapExceeded { .. })
        ));
    }

    #[test]
    fn injectivity_is_enforced() {
        let g = graph(&[("a", "A"), ("b", "B")], &[("a", "b")]);
        // query A-B-A needs two distinct A vertices
        let q = QueryGraph::new(graph(&[("x", "A"), ("y", "B"), ("z", "A")], &[("x", "y"), ("y", "z")]));
        assert!(brute_force_match(&q.graph, &g).unwrap().is_empty());
        assert!(run(&q, &g, 1).exact.is_empty());
    }

    #[test]
    fn brute_force_examples() {
        let g = graph(
            &[("c1", "C"), ("c2", "D"), ("a", "A"), ("b", "B"), ("z", "Z")],
            &[("c1", "a"), ("c1", "b"), ("c2", "a"), ("c2", "b"), ("z", "a")],
        );
        let edge = graph(&[("x", "Z"), ("y", "A")], &[("x", "y")]);
        assert_eq!(brute_force_match(&edge, &g).unwrap().len(), 1);
        let q = graph(
            &[("u", UNKNOWN_LABEL), ("p", "A"), ("r", "B")],
            &[("u", "p"), ("u", "r")],
        );
        let m = brute_force_match(&q, &g).unwrap();
        let centers: BTreeSet<&str> = m.iter().map(|m| m.binding["u"].as_str()).collect();
        assert_eq!(centers, BTreeSet::from(["c1", "c2"]));
        let absent = graph(&[("x", "Nope"), ("y", "A")], &[("x", "y")]);
        assert!(brute_force_match(&absent, &g).unwrap().is_empty());
        assert!(matches!(
            brute_force_match_with_limit(&q, &g, 4),
            Err(Error::GuardExceeded { limit: 4, actual: 5 })
        ));
    }

    #[test]
    fn matcher_agrees_with_brute_force_on_a_small_graph() {
        let g = graph(
            &[("c1", "C"), ("c2", "C"), ("a", "A"), ("b", "B"), ("z", "Z"), ("w", "A")],
            &[
                ("c1", "a"),
                ("c1", "b"),
                ("c2", "a"),
                ("c2", "b"),
                ("z", "a"),
                ("c2", "w"),
                ("w", "z"),
            ],
        );
        let q = QueryGraph::new(graph(
            &[("u", UNKNOWN_LABEL), ("p", "A"), ("r", "B"), ("s", UNKNOWN_LABEL)],
            &[("u", "p"), ("u", "r"), ("p", "s")],
        ));
        let want = bindings(&brute_force_match(&q.graph, &g).unwrap());
        assert!(!want.is_empty());
        for l in crate::query::valid_path_lengths(&q.graph).unwrap() {
            assert_eq!(bindings(&run(&q, &g, l).exact), want, "l = {l}");
        }
    }

    #[test]
    fn fallback_examples() {
        let g = graph(
            &[("k1", "K1"), ("k2", "K2"), ("n", "N"), ("m", "M")],
            &[("k1", "n"), ("k2", "n"), ("k2", "m")],
        );
        let one = QueryGraph::new(graph(&[("q", "K1"), ("u", UNKNOWN_LABEL)], &[("q", "u")]));
        let fb = fallback_subgraph(&one, &g, 50);
        assert_eq!(fb.vertices, vec!["k1", "n"]);
        let two = QueryGraph::new(graph(
            &[("q", "K1"), ("r", "K2"), ("u", UNKNOWN_LABEL)],
            &[("q", "u"), ("r", "u")],
        ));
        let fb = fallback_subgraph(&two, &g, 50);
        let expected: BTreeSet<&str> = ["k1", "k2", "n", "m"].into();
        assert_eq!(
            fb.vertices.iter().map(String::as_str).collect::<BTreeSet<_>>(),
            expected
        );
        assert_eq!(fb.vertices.len(), 4);
        assert_eq!(fb.edges.len(), 3);

        let mut hub = Graph::new();
        hub.add_vertex("h", "H", "").unwrap();
        for i in 0..20 {
            hub.add_vertex(format!("v{i:02}"), format!("V{i}"), "").unwrap();
            hub.add_edge(format!("e{i}"), "h", &format!("v{i:02}"), "").unwrap();
        }
        let q = QueryGraph::new(graph(&[("q", "H"), ("u", UNKNOWN_LABEL)], &[("q", "u")]));
        let a = fallback_subgraph(&q, &hub, 5);
        assert_eq!(a.vertices, vec!["h", "v00", "v01", "v02", "v03"]);
        assert!(a.truncated);
        assert_eq!(a, fallback_subgraph(&q, &hub, 5));

        let none = QueryGraph::new(graph(&[("q", "Absent"), ("u", UNKNOWN_LABEL)], &[("q", "u")]));
        assert!(fallback_subgraph(&none, &g, 50).unresolved);
    }

    #[test]
    fn fingerprint_mismatch_is_reported() {
        let g = graph(&[("a", "A"), ("b", "B")], &[("a", "b")]);
        let other = graph(&[("a", "A"), ("b", "B"), ("c", "C")], &[("a", "b"), ("b", "c")]);
        let table = LabelTable::build(&g, &MockEmbedder::new(4, 1)).unwrap();
        let encoder = DominanceEncoder::CountOracle { dim: 4 };
        let dom = encoder.node_embeddings(&g, |_| None).unwrap();
        let idx = RStarIndex::build_from_graph(&g, 1, &table, &dom, None).unwrap();
        let q = QueryGraph::new(graph(&[("x", "A"), ("y", "B")], &[("x", "y")]));
        let plan = decompose_into_paths(&q.graph, 1).unwrap();
        let err = match_query(&q, &plan, &[], &idx, &other, &table, &encoder, &MatchConfig::default());
        assert!(matches!(err, Err(Error::FingerprintMismatch { .. })));
    }
}
