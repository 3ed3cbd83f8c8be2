#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use exactrag::graph::{EdgeIx, Graph, NodeIx, Path, QueryGraph, UNKNOWN_LABEL};
use exactrag::index::{EntryInput, IndexParams, Probe};
use exactrag::matcher::MatchedSubgraph;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub type Binding = BTreeMap<String, String>;

pub fn bindings(ms: &[MatchedSubgraph]) -> BTreeSet<Binding> {
    ms.iter().map(|m| m.binding.clone()).collect()
}

/// Random connected graph: a random spanning tree plus `extra` random edges,
/// labels drawn from `alphabet` symbols.
pub fn random_connected_graph(rng: &mut ChaCha8Rng, n: usize, extra: usize, alphabet: usize) -> Graph {
    let mut g = Graph::new();
    for i in 0..n {
        let label = format!("L{}", rng.gen_range(0..alphabet));
        g.add_vertex(format!("v{i:02}"), label, "").unwrap();
    }
    let mut e = 0;
    for i in 1..n {
        let j = rng.gen_range(0..i);
        g.add_edge(format!("e{e}"), &format!("v{i:02}"), &format!("v{j:02}"), "")
            .unwrap();
        e += 1;
    }
    let mut tries = 0;
    let mut added = 0;
    while added < extra && tries < extra * 20 {
        tries += 1;
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        if a == b || g.adjacent(NodeIx(a as u32), NodeIx(b as u32)) {
            continue;
        }
        g.add_edge(format!("e{e}"), &format!("v{a:02}"), &format!("v{b:02}"), "")
            .unwrap();
        e += 1;
        added += 1;
    }
    g
}

/// Random connected query of `k` vertices.
///
/// Grows a connected vertex set inside `g`, keeps a spanning tree of the
/// induced edges plus a random share of the rest, then optionally hides
/// labels, relabels a vertex or adds a non-data edge so that some queries
/// have no match.
pub fn random_query(rng: &mut ChaCha8Rng, g: &Graph, k: usize, alphabet: usize) -> QueryGraph {
    let start = NodeIx(rng.gen_range(0..g.vertex_count()) as u32);
    let mut chosen = vec![start];
    let mut set: BTreeSet<NodeIx> = [start].into();
    while chosen.len() < k {
        let frontier: Vec<NodeIx> = chosen
            .iter()
            .flat_map(|v| g.neighbors(*v).iter().copied())
            .filter(|v| !set.contains(v))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let Some(next) = frontier.choose(rng) else { break };
        chosen.push(*next);
        set.insert(*next);
    }
    let mut q = Graph::new();
    for (i, v) in chosen.iter().enumerate() {
        q.add_vertex(format!("q{i}"), g.label(*v), "").unwrap();
    }
    let pos: BTreeMap<NodeIx, usize> = chosen.iter().enumerate().map(|(i, v)| (*v, i)).collect();
    // tree edges first: each vertex after the first to an earlier neighbor
    let mut e = 0;
    let mut extra = Vec::new();
    for (i, v) in chosen.iter().enumerate().skip(1) {
        let earlier: Vec<usize> = g
            .neighbors(*v)
            .iter()
            .filter_map(|n| pos.get(n).copied())
            .filter(|j| *j < i)
            .collect();
        let j = *earlier.choose(rng).unwrap();
        q.add_edge(format!("f{e}"), &format!("q{i}"), &format!("q{j}"), "")
            .unwrap();
        e += 1;
        for other in earlier.into_iter().filter(|x| *x != j) {
            extra.push((i, other));
        }
    }
    for (a, b) in extra {
        if rng.gen_bool(0.5) {
            q.add_edge(format!("f{e}"), &format!("q{a}"), &format!("q{b}"), "")
                .unwrap();
            e += 1;
        }
    }
    let n = q.vertex_count();
    if rng.gen_bool(0.15) && n >= 3 {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        if a != b && !q.adjacent(NodeIx(a as u32), NodeIx(b as u32)) {
            q.add_edge(format!("f{e}"), &format!("q{a}"), &format!("q{b}"), "")
                .unwrap();
        }
    }
    if rng.gen_bool(0.2) {
        let v = NodeIx(rng.gen_range(0..n) as u32);
        q.vertex_mut(v).label = format!("L{}", rng.gen_range(0..alphabet));
    }
    let hidden = match rng.gen_range(0..10) {
        0..=3 => 0,
        4..=7 => 1,
        _ => 2,
    };
    for _ in 0..hidden {
        let v = NodeIx(rng.gen_range(0..n) as u32);
        q.vertex_mut(v).label = UNKNOWN_LABEL.to_string();
    }
    QueryGraph::new(q)
}

/// Label-clustered index rows for path length 1: labels of one cluster sit
/// close together in label space, dominance vectors are uniform in [0, 1].
pub struct Clustered {
    pub inputs: Vec<EntryInput>,
    pub params: IndexParams,
}

pub const CLUSTER_LABEL_DIM: usize = 4;
pub const CLUSTER_DOM_DIM: usize = 4;

pub fn clustered_entries(rng: &mut ChaCha8Rng, n: usize, cluster_size: usize) -> Clustered {
    let clusters = (n / cluster_size).max(1);
    let labels_per_cluster = 10;
    let mut embed: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut cluster_labels = Vec::with_capacity(clusters);
    for c in 0..clusters {
        let center: Vec<f64> = (0..CLUSTER_LABEL_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut names = Vec::new();
        for j in 0..labels_per_cluster {
            let name = format!("c{c}l{j}");
            let v = center.iter().map(|x| x + rng.gen_range(-0.01..0.01)).collect();
            embed.insert(name.clone(), v);
            names.push(name);
        }
        cluster_labels.push(names);
    }
    let inputs = (0..n)
        .map(|i| {
            let c = rng.gen_range(0..clusters);
            let a = cluster_labels[c].choose(rng).unwrap().clone();
            let b = cluster_labels[c].choose(rng).unwrap().clone();
            let mut o0 = embed[&a].clone();
            o0.extend_from_slice(&embed[&b]);
            let o = (0..2 * CLUSTER_DOM_DIM).map(|_| rng.gen_range(0.0..1.0)).collect();
            EntryInput {
                path: Path {
                    vertices: vec![NodeIx(2 * i as u32), NodeIx(2 * i as u32 + 1)],
                    edges: vec![EdgeIx(i as u32)],
                },
                labels: vec![a, b],
                o0,
                o,
            }
        })
        .collect();
    Clustered {
        inputs,
        params: IndexParams::new(1, CLUSTER_LABEL_DIM, CLUSTER_DOM_DIM),
    }
}

/// A probe copied from an existing row with its dominance vector scaled
/// down, so at least that row answers it.
pub fn probe_from(input: &EntryInput, scale: f64) -> Probe {
    Probe {
        labels: input.labels.iter().cloned().map(Some).collect(),
        o0: input.o0.clone(),
        o: input.o.iter().map(|x| x * scale).collect(),
    }
}

/// Least-squares slope of `ys` on `xs`.
pub fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    cov / var
}

/// Exhaustive check that a plan's paths are simple, have length `l`, follow
/// query adjacency, and cover every query edge.
pub fn plan_covers_exactly(q: &Graph, paths: &[Path], l: usize) -> bool {
    let mut covered = BTreeSet::new();
    for p in paths {
        if p.edges.len() != l || p.vertices.len() != l + 1 {
            return false;
        }
        let distinct: BTreeSet<NodeIx> = p.vertices.iter().copied().collect();
        if distinct.len() != p.vertices.len() {
            return false;
        }
        for (w, e) in p.vertices.windows(2).zip(&p.edges) {
            let (a, b) = q.endpoints(*e);
            if !((a == w[0] && b == w[1]) || (a == w[1] && b == w[0])) {
                return false;
            }
            covered.insert(*e);
        }
    }
    covered.len() == q.edge_count()
}
