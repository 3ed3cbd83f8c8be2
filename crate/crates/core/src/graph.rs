//! Knowledge-graph and query-graph data model.
//!
//! Edges are stored directed, as extracted, but every structural operation
//! here (adjacency, paths, stars, diameter) works on the undirected view.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Reserved label for the unknown target vertex of a query.
pub const UNKNOWN_LABEL: &str = "UNK";

pub const FIELD_SEPARATOR: &str = "<|>";
pub const RECORD_SEPARATOR: char = '#';
pub const TERMINATOR: &str = "<|COMPLETE|>";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeIx(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EdgeIx(pub u32);

impl NodeIx {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl EdgeIx {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vertex {
    pub id: String,
    pub label: String,
    #[serde(default)]
    pub description: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub id: String,
    pub src: String,
    pub dst: String,
    #[serde(default)]
    pub description: String,
}

/// Why a record was not added to a graph.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Rejection {
    Malformed { record: String },
    EmptyLabel { id: String },
    DuplicateId { id: String },
    DanglingEndpoint { edge: String, endpoint: String },
    SelfLoop { edge: String },
    DuplicatePair { edge: String },
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rejection::Malformed { record } => write!(f, "malformed record `{record}`"),
            Rejection::EmptyLabel { id } => write!(f, "vertex `{id}` has an empty label"),
            Rejection::DuplicateId { id } => write!(f, "duplicate id `{id}`"),
            Rejection::DanglingEndpoint { edge, endpoint } => {
                write!(f, "edge `{edge}` references unknown vertex `{endpoint}`")
            }
            Rejection::SelfLoop { edge } => write!(f, "edge `{edge}` is a self-loop"),
            Rejection::DuplicatePair { edge } => {
                write!(f, "edge `{edge}` repeats an existing ordered pair")
            }
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Graph {
    vertices: Vec<Vertex>,
    edges: Vec<Edge>,
    endpoints: Vec<(NodeIx, NodeIx)>,
    by_id: HashMap<String, NodeIx>,
    edge_ids: HashSet<String>,
    adjacency: Vec<BTreeSet<NodeIx>>,
    directed_pairs: HashSet<(NodeIx, NodeIx)>,
    undirected: HashMap<(NodeIx, NodeIx), EdgeIx>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_vertex(
        &mut self,
        id: impl Into<String>,
        label: impl Into<String>,
        description: impl Into<String>,
    ) -> std::result::Result<NodeIx, Rejection> {
        let id = id.into();
        let label = label.into();
        if label.trim().is_empty() {
            return Err(Rejection::EmptyLabel { id });
        }
        if self.by_id.contains_key(&id) {
            return Err(Rejection::DuplicateId { id });
        }
        let ix = NodeIx(self.vertices.len() as u32);
        self.by_id.insert(id.clone(), ix);
        self.vertices.push(Vertex {
            id,
            label,
            description: description.into(),
        });
        self.adjacency.push(BTreeSet::new());
        Ok(ix)
    }

    pub fn add_edge(
        &mut self,
        id: impl Into<String>,
        src: &str,
        dst: &str,
        description: impl Into<String>,
    ) -> std::result::Result<EdgeIx, Rejection> {
        let id = id.into();
        if self.edge_ids.contains(&id) {
            return Err(Rejection::DuplicateId { id });
        }
        let a = self
            .by_id
            .get(src)
            .copied()
            .ok_or_else(|| Rejection::DanglingEndpoint {
                edge: id.clone(),
                endpoint: src.to_string(),
            })?;
        let b = self
            .by_id
            .get(dst)
            .copied()
            .ok_or_else(|| Rejection::DanglingEndpoint {
                edge: id.clone(),
                endpoint: dst.to_string(),
            })?;
        if a == b {
            return Err(Rejection::SelfLoop { edge: id });
        }
        if !self.directed_pairs.insert((a, b)) {
            return Err(Rejection::DuplicatePair { edge: id });
        }
        let ix = EdgeIx(self.edges.len() as u32);
        self.edge_ids.insert(id.clone());
        self.edges.push(Edge {
            id,
            src: src.to_string(),
            dst: dst.to_string(),
            description: description.into(),
        });
        self.endpoints.push((a, b));
        self.adjacency[a.index()].insert(b);
        self.adjacency[b.index()].insert(a);
        self.undirected.entry(undirected_key(a, b)).or_insert(ix);
        Ok(ix)
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn vertex(&self, v: NodeIx) -> &Vertex {
        &self.vertices[v.index()]
    }

    pub fn vertex_mut(&mut self, v: NodeIx) -> &mut Vertex {
        &mut self.vertices[v.index()]
    }

    pub fn edge(&self, e: EdgeIx) -> &Edge {
        &self.edges[e.index()]
    }

    pub fn label(&self, v: NodeIx) -> &str {
        &self.vertices[v.index()].label
    }

    pub fn id(&self, v: NodeIx) -> &str {
        &self.vertices[v.index()].id
    }

    pub fn ix(&self, id: &str) -> Option<NodeIx> {
        self.by_id.get(id).copied()
    }

    pub fn node_indices(&self) -> impl Iterator<Item = NodeIx> + '_ {
        (0..self.vertices.len() as u32).map(NodeIx)
    }

    pub fn edge_indices(&self) -> impl Iterator<Item = EdgeIx> + '_ {
        (0..self.edges.len() as u32).map(EdgeIx)
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Source and destination of an edge, as stored.
    pub fn endpoints(&self, e: EdgeIx) -> (NodeIx, NodeIx) {
        self.endpoints[e.index()]
    }

    pub fn neighbors(&self, v: NodeIx) -> &BTreeSet<NodeIx> {
        &self.adjacency[v.index()]
    }

    pub fn degree(&self, v: NodeIx) -> usize {
        self.adjacency[v.index()].len()
    }

    pub fn adjacent(&self, a: NodeIx, b: NodeIx) -> bool {
        self.undirected.contains_key(&undirected_key(a, b))
    }

    /// First stored edge joining `a` and `b` in either direction.
    pub fn edge_between(&self, a: NodeIx, b: NodeIx) -> Option<EdgeIx> {
        self.undirected.get(&undirected_key(a, b)).copied()
    }

    /// Vertices sorted by id, the order used for every deterministic tie-break.
    pub fn ids_sorted(&self) -> Vec<NodeIx> {
        let mut v: Vec<NodeIx> = self.node_indices().collect();
        v.sort_by(|a, b| self.id(*a).cmp(self.id(*b)));
        v
    }

    /// Copy of this graph without the listed edges.
    pub fn without_edges(&self, removed: &BTreeSet<EdgeIx>) -> Graph {
        let mut out = Graph::new();
        for v in &self.vertices {
            out.add_vertex(v.id.clone(), v.label.clone(), v.description.clone())
                .expect("source graph vertices are valid");
        }
        for e in self.edge_indices().filter(|e| !removed.contains(e)) {
            let edge = self.edge(e);
            out.add_edge(edge.id.clone(), &edge.src, &edge.dst, edge.description.clone())
                .expect("source graph edges are valid");
        }
        out
    }

    /// Serializes to the `<|>`/`#`/`<|COMPLETE|>` document format.
    pub fn to_document(&self) -> String {
        let mut records: Vec<String> = Vec::with_capacity(self.vertices.len() + self.edges.len() + 1);
        for v in &self.vertices {
            records.push(format!(
                "({}{FIELD_SEPARATOR}{}{FIELD_SEPARATOR}{})",
                v.id, v.label, v.description
            ));
        }
        for e in &self.edges {
            records.push(format!(
                "({}{FIELD_SEPARATOR}{}{FIELD_SEPARATOR}{}{FIELD_SEPARATOR}{})",
                e.id, e.src, e.dst, e.description
            ));
        }
        records.push(TERMINATOR.to_string());
        records.join("#")
    }

    pub fn to_json(&self) -> GraphJson {
        GraphJson {
            nodes: self.vertices.clone(),
            edges: self.edges.clone(),
        }
    }

    /// Stable content hash; an index records it so that it can refuse a
    /// different graph later.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_document().as_bytes());
        digest[..16].iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn undirected_key(a: NodeIx, b: NodeIx) -> (NodeIx, NodeIx) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// JSON mirror of the document format.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct GraphJson {
    pub nodes: Vec<Vertex>,
    pub edges: Vec<Edge>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Diagnostic {
    pub record: usize,
    #[serde(flatten)]
    pub rejection: Rejection,
}

#[derive(Clone, Debug)]
pub struct ParsedGraph {
    pub graph: Graph,
    pub diagnostics: Vec<Diagnostic>,
}

enum Record<'a> {
    Node([&'a str; 3]),
    Edge([&'a str; 4]),
}

/// Parses a delimiter-format graph document.
///
/// Vertex records are applied before edge records, so edges may appear
/// anywhere in the document. Records that cannot be added are skipped and
/// reported in `diagnostics`.
pub fn parse_graph_document(text: &str) -> Result<ParsedGraph> {
    let body = match text.find(TERMINATOR) {
        Some(end) => &text[..end],
        None => return Err(Error::MissingTerminator),
    };

    let mut diagnostics = Vec::new();
    let mut records = Vec::new();
    for (i, raw) in body.split(RECORD_SEPARATOR).enumerate() {
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        match split_record(raw) {
            Some(r) => records.push((i, r)),
            None => diagnostics.push(Diagnostic {
                record: i,
                rejection: Rejection::Malformed {
                    record: raw.to_string(),
                },
            }),
        }
    }

    let mut graph = Graph::new();
    for (i, record) in &records {
        if let Record::Node([id, label, desc]) = record {
            if let Err(rejection) = graph.add_vertex(*id, *label, *desc) {
                diagnostics.push(Diagnostic { record: *i, rejection });
            }
        }
    }
    for (i, record) in &records {
        if let Record::Edge([id, src, dst, desc]) = record {
            if let Err(rejection) = graph.add_edge(*id, src, dst, *desc) {
                diagnostics.push(Diagnostic { record: *i, rejection });
            }
        }
    }
    diagnostics.sort_by_key(|d| d.record);
    Ok(ParsedGraph { graph, diagnostics })
}

fn split_record(raw: &str) -> Option<Record<'_>> {
    let inner = raw.strip_prefix('(')?.strip_suffix(')')?;
    let fields: Vec<&str> = inner.split(FIELD_SEPARATOR).map(str::trim).collect();
    if fields.first().is_none_or(|id| id.is_empty()) {
        return None;
    }
    match fields.as_slice() {
        [id, label, desc] => Some(Record::Node([id, label, desc])),
        [id, src, dst, desc] => Some(Record::Edge([id, src, dst, desc])),
        _ => None,
    }
}

pub fn parse_graph_json(json: &GraphJson) -> ParsedGraph {
    let mut graph = Graph::new();
    let mut diagnostics = Vec::new();
    for (i, v) in json.nodes.iter().enumerate() {
        if let Err(rejection) = graph.add_vertex(v.id.clone(), v.label.clone(), v.description.clone()) {
            diagnostics.push(Diagnostic { record: i, rejection });
        }
    }
    for (i, e) in json.edges.iter().enumerate() {
        if let Err(rejection) = graph.add_edge(e.id.clone(), &e.src, &e.dst, e.description.clone()) {
            diagnostics.push(Diagnostic {
                record: json.nodes.len() + i,
                rejection,
            });
        }
    }
    ParsedGraph { graph, diagnostics }
}

/// A graph whose vertices may carry the [`UNKNOWN_LABEL`].
#[derive(Clone, Debug)]
pub struct QueryGraph {
    pub graph: Graph,
}

impl QueryGraph {
    pub fn new(mut graph: Graph) -> Self {
        let unknown: Vec<NodeIx> = graph.node_indices().filter(|v| is_unknown(graph.label(*v))).collect();
        for v in unknown {
            let vertex = graph.vertex_mut(v);
            vertex.label = UNKNOWN_LABEL.to_string();
            vertex.description.clear();
        }
        QueryGraph { graph }
    }

    pub fn is_unknown(&self, v: NodeIx) -> bool {
        is_unknown(self.graph.label(v))
    }

    pub fn unknown_vertices(&self) -> Vec<NodeIx> {
        self.graph.node_indices().filter(|v| self.is_unknown(*v)).collect()
    }

    pub fn known_vertices(&self) -> Vec<NodeIx> {
        self.graph.node_indices().filter(|v| !self.is_unknown(*v)).collect()
    }
}

pub fn is_unknown(label: &str) -> bool {
    label.trim().eq_ignore_ascii_case(UNKNOWN_LABEL)
}

/// A simple path; `vertices.len() == edges.len() + 1`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Path {
    pub vertices: Vec<NodeIx>,
    pub edges: Vec<EdgeIx>,
}

impl Path {
    /// Edge count.
    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn reversed(&self) -> Path {
        let mut vertices = self.vertices.clone();
        vertices.reverse();
        let mut edges = self.edges.clone();
        edges.reverse();
        Path { vertices, edges }
    }

    pub fn signature(&self, g: &Graph) -> Vec<String> {
        self.vertices.iter().map(|v| g.id(*v).to_string()).collect()
    }
}

/// Every simple path with exactly `l` edges, once per undirected path,
/// oriented so that the first endpoint id is the lexicographically smaller.
pub fn enumerate_paths(g: &Graph, l: usize) -> Vec<Path> {
    let mut out = Vec::new();
    if l == 0 {
        return out;
    }
    let mut on_path = vec![false; g.vertex_count()];
    let mut stack = Vec::with_capacity(l + 1);
    for start in g.node_indices() {
        stack.clear();
        stack.push(start);
        on_path[start.index()] = true;
        extend_paths(g, l, &mut stack, &mut on_path, &mut out);
        on_path[start.index()] = false;
    }
    out.sort_by_cached_key(|p| p.signature(g));
    out
}

fn extend_paths(g: &Graph, l: usize, stack: &mut Vec<NodeIx>, on_path: &mut [bool], out: &mut Vec<Path>) {
    let last = *stack.last().unwrap();
    if stack.len() == l + 1 {
        if g.id(stack[0]) < g.id(last) {
            let edges = stack
                .windows(2)
                .map(|w| {
                    g.edge_between(w[0], w[1])
                        .expect("consecutive path vertices are adjacent")
                })
                .collect();
            out.push(Path {
                vertices: stack.clone(),
                edges,
            });
        }
        return;
    }
    for &next in g.neighbors(last) {
        if on_path[next.index()] {
            continue;
        }
        on_path[next.index()] = true;
        stack.push(next);
        extend_paths(g, l, stack, on_path, out);
        stack.pop();
        on_path[next.index()] = false;
    }
}

/// A center vertex with a subset of its neighbors as leaves.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StarSubgraph {
    pub center: NodeIx,
    pub leaves: BTreeSet<NodeIx>,
    pub edges: Vec<EdgeIx>,
}

impl StarSubgraph {
    /// Vertices with the center first, then leaves in index order.
    pub fn members(&self) -> Vec<NodeIx> {
        std::iter::once(self.center)
            .chain(self.leaves.iter().copied())
            .collect()
    }

    /// True when `self` has the same center and a strict leaf subset of `other`.
    pub fn is_proper_substructure_of(&self, other: &StarSubgraph) -> bool {
        self.center == other.center && self.leaves.len() < other.leaves.len() && self.leaves.is_subset(&other.leaves)
    }
}

pub fn star_subgraph(g: &Graph, v: NodeIx) -> Result<StarSubgraph> {
    if v.index() >= g.vertex_count() {
        return Err(Error::UnknownVertex(format!("#{}", v.0)));
    }
    Ok(star_with_leaves(g, v, g.neighbors(v).clone()))
}

pub fn star_subgraph_by_id(g: &Graph, id: &str) -> Result<StarSubgraph> {
    let v = g.ix(id).ok_or_else(|| Error::UnknownVertex(id.to_string()))?;
    star_subgraph(g, v)
}

fn star_with_leaves(g: &Graph, center: NodeIx, leaves: BTreeSet<NodeIx>) -> StarSubgraph {
    let edges = leaves
        .iter()
        .map(|l| g.edge_between(center, *l).expect("leaves are neighbors of the center"))
        .collect();
    StarSubgraph { center, leaves, edges }
}

pub const DEFAULT_SUBSTRUCTURE_CAP: usize = 32;

/// Proper substructures of a star: same center, strict leaf subsets.
///
/// When there are more than `cap` of them, returns the center-only star,
/// every single-leaf-removed star, and seeded random subsets up to `cap`.
/// The two mandatory families are kept even if together they exceed `cap`.
pub fn enumerate_substructures(g: &Graph, star: &StarSubgraph, cap: usize, seed: u64) -> Vec<StarSubgraph> {
    let leaves: Vec<NodeIx> = star.leaves.iter().copied().collect();
    let k = leaves.len();
    if k == 0 {
        return Vec::new();
    }
    let make = |mask: &[bool]| -> StarSubgraph {
        let kept = leaves
            .iter()
            .zip(mask)
            .filter(|(_, keep)| **keep)
            .map(|(l, _)| *l)
            .collect();
        star_with_leaves(g, star.center, kept)
    };

    let total = if k >= 127 { u128::MAX } else { (1u128 << k) - 1 };
    if total <= cap as u128 {
        let full = (1u64 << k) - 1;
        return (0..full)
            .rev()
            .map(|bits| {
                let mask: Vec<bool> = (0..k).map(|i| bits >> i & 1 == 1).collect();
                make(&mask)
            })
            .collect();
    }

    let mut seen: HashSet<Vec<bool>> = HashSet::new();
    let mut out = Vec::with_capacity(cap.max(k + 1));
    for drop in 0..k {
        let mask: Vec<bool> = (0..k).map(|i| i != drop).collect();
        seen.insert(mask.clone());
        out.push(make(&mask));
    }
    let empty = vec![false; k];
    seen.insert(empty.clone());
    out.push(make(&empty));

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (u64::from(star.center.0)).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    while out.len() < cap {
        let mask: Vec<bool> = (0..k).map(|_| rng.gen_bool(0.5)).collect();
        if mask.iter().all(|b| *b) || !seen.insert(mask.clone()) {
            continue;
        }
        out.push(make(&mask));
    }
    out
}

/// Connected components as sorted id lists, ordered by their smallest id.
pub fn components(g: &Graph) -> Vec<Vec<String>> {
    let mut seen = vec![false; g.vertex_count()];
    let mut out = Vec::new();
    for start in g.ids_sorted() {
        if seen[start.index()] {
            continue;
        }
        let mut comp = Vec::new();
        let mut queue = VecDeque::from([start]);
        seen[start.index()] = true;
        while let Some(v) = queue.pop_front() {
            comp.push(g.id(v).to_string());
            for &n in g.neighbors(v) {
                if !seen[n.index()] {
                    seen[n.index()] = true;
                    queue.push_back(n);
                }
            }
        }
        comp.sort();
        out.push(comp);
    }
    out
}

/// Hop distances from `source` over the undirected view; `usize::MAX` when unreachable.
pub fn bfs_distances(g: &Graph, source: NodeIx) -> Vec<usize> {
    let mut dist = vec![usize::MAX; g.vertex_count()];
    dist[source.index()] = 0;
    let mut queue = VecDeque::from([source]);
    while let Some(v) = queue.pop_front() {
        for &n in g.neighbors(v) {
            if dist[n.index()] == usize::MAX {
                dist[n.index()] = dist[v.index()] + 1;
                queue.push_back(n);
            }
        }
    }
    dist
}

/// Longest shortest-path length over the undirected view.
pub fn graph_diameter(g: &Graph) -> Result<usize> {
    if g.is_empty() {
        return Err(Error::EmptyGraph);
    }
    let comps = components(g);
    if comps.len() > 1 {
        return Err(Error::Disconnected { components: comps });
    }
    Ok(g.node_indices()
        .map(|v| bfs_distances(g, v).into_iter().max().unwrap_or(0))
        .max()
        .unwrap_or(0))
}

/// Per-vertex degree keyed by id, handy for reports.
pub fn degree_table(g: &Graph) -> BTreeMap<String, usize> {
    g.node_indices().map(|v| (g.id(v).to_string(), g.degree(v))).collect()
}
