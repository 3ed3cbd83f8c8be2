//! R*-tree over path embeddings with dual bounding rectangles.
//!
//! Every entry carries a length-`l` path, its label-embedding concatenation
//! `o0` and its dominance-embedding concatenation `o`. Each node bounds both;
//! `mbr0` drives semantic pruning and `mbr` drives structural (dominance)
//! pruning. Leaf-level label equality is decided on interned label ids, never
//! on floats.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path as FsPath;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::dominance::DominanceEmbedding;
use crate::embeddings::LabelTable;
use crate::error::{Error, Result};
use crate::graph::{enumerate_paths, EdgeIx, Graph, NodeIx, Path};

pub const DEFAULT_MIN_FANOUT: usize = 4;
pub const DEFAULT_MAX_FANOUT: usize = 16;
pub const EPSILON: f64 = 1e-6;
const REINSERT_FRACTION: f64 = 0.3;
const MAGIC: &[u8; 8] = b"XRAGIDX1";
const FORMAT_VERSION: u32 = 1;
const BUNDLE_MAGIC: &[u8; 8] = b"XRAGBND1";

/// Axis-aligned box.
#[derive(Clone, Debug, PartialEq)]
pub struct Mbr {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl Mbr {
    pub fn point(p: &[f64]) -> Self {
        Mbr {
            low: p.to_vec(),
            high: p.to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    /// The product box of `self` and `other`.
    pub fn concat(&self, other: &Mbr) -> Mbr {
        Mbr {
            low: self.low.iter().chain(&other.low).copied().collect(),
            high: self.high.iter().chain(&other.high).copied().collect(),
        }
    }

    pub fn extend(&mut self, other: &Mbr) {
        for (l, o) in self.low.iter_mut().zip(&other.low) {
            *l = l.min(*o);
        }
        for (h, o) in self.high.iter_mut().zip(&other.high) {
            *h = h.max(*o);
        }
    }

    pub fn union(boxes: impl IntoIterator<Item = Mbr>) -> Option<Mbr> {
        let mut it = boxes.into_iter();
        let mut acc = it.next()?;
        for b in it {
            acc.extend(&b);
        }
        Some(acc)
    }

    pub fn area(&self) -> f64 {
        self.low.iter().zip(&self.high).map(|(l, h)| h - l).product()
    }

    pub fn margin(&self) -> f64 {
        self.low.iter().zip(&self.high).map(|(l, h)| h - l).sum()
    }

    pub fn overlap(&self, other: &Mbr) -> f64 {
        let mut v = 1.0;
        for i in 0..self.dim() {
            let lo = self.low[i].max(other.low[i]);
            let hi = self.high[i].min(other.high[i]);
            if hi <= lo {
                return 0.0;
            }
            v *= hi - lo;
        }
        v
    }

    pub fn center(&self) -> Vec<f64> {
        self.low.iter().zip(&self.high).map(|(l, h)| (l + h) / 2.0).collect()
    }

    fn enlarged(&self, other: &Mbr) -> Mbr {
        let mut m = self.clone();
        m.extend(other);
        m
    }

    /// `p` lies inside the box within `eps` on the coordinate range.
    pub fn contains_range(&self, p: &[f64], range: std::ops::Range<usize>, eps: f64) -> bool {
        range
            .into_iter()
            .all(|i| p[i] >= self.low[i] - eps && p[i] <= self.high[i] + eps)
    }

    /// Dominance region `{z : origin ⪯ z}` meets the box.
    pub fn meets_dominance_region(&self, origin: &[f64], eps: f64) -> bool {
        origin.iter().zip(&self.high).all(|(o, h)| *o <= *h + eps)
    }

    /// L1 norm of the upper corner; an upper bound on the L1 norm of every
    /// non-negative point inside.
    pub fn upper_l1(&self) -> f64 {
        self.high.iter().map(|h| h.max(0.0)).sum()
    }

    /// `Σ max(|low|, |high|)`; an upper bound on the L1 norm of every point inside.
    pub fn abs_l1_bound(&self) -> f64 {
        self.low.iter().zip(&self.high).map(|(l, h)| l.abs().max(h.abs())).sum()
    }
}

/// Input row for a build: label strings are interned by the index.
#[derive(Clone, Debug)]
pub struct EntryInput {
    pub path: Path,
    pub labels: Vec<String>,
    pub o0: Vec<f64>,
    pub o: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IndexEntry {
    pub path: Path,
    pub labels: Vec<u32>,
    pub o0: Vec<f64>,
    pub o: Vec<f64>,
}

#[derive(Clone, Debug)]
struct Node {
    /// 0 for leaves; children are entry ids at level 0, node ids above.
    level: usize,
    children: Vec<usize>,
    mbr0: Mbr,
    mbr: Mbr,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexParams {
    pub l: usize,
    pub label_dim: usize,
    pub dominance_dim: usize,
    pub min_fanout: usize,
    pub max_fanout: usize,
}

impl IndexParams {
    pub fn new(l: usize, label_dim: usize, dominance_dim: usize) -> Self {
        IndexParams {
            l,
            label_dim,
            dominance_dim,
            min_fanout: DEFAULT_MIN_FANOUT,
            max_fanout: DEFAULT_MAX_FANOUT,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.min_fanout < 2 || self.max_fanout < 2 * self.min_fanout {
            return Err(Error::Config(format!(
                "fan-out bounds need 2 <= m and 2m <= M, got m={} M={}",
                self.min_fanout, self.max_fanout
            )));
        }
        if self.l == 0 {
            return Err(Error::Config("path length must be at least 1".into()));
        }
        Ok(())
    }

    fn o0_len(&self) -> usize {
        (self.l + 1) * self.label_dim
    }

    fn o_len(&self) -> usize {
        (self.l + 1) * self.dominance_dim
    }
}

/// A query path ready for traversal. `labels[i] == None` marks an unknown
/// position (its `o0` segment is all zeros).
#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    pub labels: Vec<Option<String>>,
    pub o0: Vec<f64>,
    pub o: Vec<f64>,
}

impl Probe {
    pub fn reversed(&self, label_dim: usize, dominance_dim: usize) -> Probe {
        let rev = |v: &[f64], w: usize| -> Vec<f64> {
            if w == 0 {
                return v.to_vec();
            }
            v.chunks(w).rev().flatten().copied().collect()
        };
        let mut labels = self.labels.clone();
        labels.reverse();
        Probe {
            labels,
            o0: rev(&self.o0, label_dim),
            o: rev(&self.o, dominance_dim),
        }
    }
}

/// An indexed path matched by a probe; `reversed` means the probe matched
/// the entry's path read back to front.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Candidate {
    pub entry: usize,
    pub reversed: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TraversalStats {
    pub nodes_visited: usize,
    pub nodes_pruned_semantic: usize,
    pub nodes_pruned_structural: usize,
    /// Visits per depth, root = 0.
    pub per_level_counts: Vec<usize>,
    pub entries_checked: usize,
    pub early_exit: bool,
    /// Audit mode only: entries under pruned or abandoned subtrees that
    /// would have satisfied the leaf predicates.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub missed_candidates: Option<usize>,
}

impl TraversalStats {
    fn visit(&mut self, depth: usize) {
        self.nodes_visited += 1;
        if self.per_level_counts.len() <= depth {
            self.per_level_counts.resize(depth + 1, 0);
        }
        self.per_level_counts[depth] += 1;
    }

    pub fn merge(&mut self, other: &TraversalStats) {
        self.nodes_visited += other.nodes_visited;
        self.nodes_pruned_semantic += other.nodes_pruned_semantic;
        self.nodes_pruned_structural += other.nodes_pruned_structural;
        self.entries_checked += other.entries_checked;
        self.early_exit |= other.early_exit;
        if self.per_level_counts.len() < other.per_level_counts.len() {
            self.per_level_counts.resize(other.per_level_counts.len(), 0);
        }
        for (a, b) in self.per_level_counts.iter_mut().zip(&other.per_level_counts) {
            *a += b;
        }
        if let Some(m) = other.missed_candidates {
            *self.missed_candidates.get_or_insert(0) += m;
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IndexStats {
    pub entry_count: usize,
    pub node_count: usize,
    pub leaf_count: usize,
    pub height: usize,
    pub label_count: usize,
}

#[derive(Clone, Debug)]
pub struct RStarIndex {
    params: IndexParams,
    entries: Vec<IndexEntry>,
    nodes: Vec<Node>,
    root: usize,
    labels: Vec<String>,
    label_ids: HashMap<String, u32>,
    fingerprint: String,
}

#[derive(Clone, Copy)]
enum Mode {
    Exact,
    Labels,
}

struct HeapItem {
    key: f64,
    node: usize,
    depth: usize,
    probes: Vec<usize>,
}

impl PartialEq for HeapItem {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for HeapItem {}
impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key.total_cmp(&other.key).then_with(|| other.node.cmp(&self.node))
    }
}

/// Prepared probe: label ids resolved against the index table. A label the
/// index has never seen resolves to `Some(u32::MAX)` and matches nothing.
struct Resolved<'a> {
    probe: &'a Probe,
    ids: Vec<Option<u32>>,
}

impl RStarIndex {
    /// Empty index; fill it with [`RStarIndex::insert`].
    pub fn new(params: IndexParams) -> Result<Self> {
        params.validate()?;
        Ok(RStarIndex {
            params,
            entries: Vec::new(),
            nodes: vec![Node {
                level: 0,
                children: Vec::new(),
                mbr0: Mbr::point(&vec![0.0; params.o0_len()]),
                mbr: Mbr::point(&vec![0.0; params.o_len()]),
            }],
            root: 0,
            labels: Vec::new(),
            label_ids: HashMap::new(),
            fingerprint: String::new(),
        })
    }

    /// Sort-tile-recursive bulk load.
    pub fn build(inputs: Vec<EntryInput>, params: IndexParams) -> Result<Self> {
        let mut idx = RStarIndex::new(params)?;
        for input in inputs {
            let e = idx.intern(input)?;
            idx.entries.push(e);
        }
        idx.pack();
        Ok(idx)
    }

    /// Every length-`l` path of `g` with label and dominance concatenations.
    pub fn build_from_graph(
        g: &Graph,
        l: usize,
        labels: &LabelTable,
        dominance: &[DominanceEmbedding],
        max_fanout: Option<usize>,
    ) -> Result<Self> {
        if g.is_empty() {
            return Err(Error::EmptyGraph);
        }
        if dominance.len() != g.vertex_count() {
            return Err(Error::DimensionMismatch {
                expected: g.vertex_count(),
                actual: dominance.len(),
            });
        }
        let d = dominance.first().map_or(0, |e| e.0.len());
        let inputs = enumerate_paths(g, l)
            .into_iter()
            .map(|p| {
                let mut o0 = Vec::with_capacity((l + 1) * labels.dim());
                let mut o = Vec::with_capacity((l + 1) * d);
                for v in &p.vertices {
                    o0.extend_from_slice(&labels.vertex(*v).0);
                    o.extend_from_slice(&dominance[v.index()].0);
                }
                EntryInput {
                    labels: p.vertices.iter().map(|v| g.label(*v).to_string()).collect(),
                    path: p,
                    o0,
                    o,
                }
            })
            .collect();
        let mut params = IndexParams::new(l, labels.dim(), d);
        if let Some(m) = max_fanout {
            params.max_fanout = m;
            params.min_fanout = (m / 4).max(2);
        }
        let mut idx = Self::build(inputs, params)?;
        idx.fingerprint = g.fingerprint();
        Ok(idx)
    }

    fn intern(&mut self, input: EntryInput) -> Result<IndexEntry> {
        let p = &self.params;
        if input.path.len() != p.l || input.labels.len() != p.l + 1 {
            return Err(Error::PathLengthMismatch {
                index: p.l,
                query: input.path.len(),
            });
        }
        for (v, want) in [(&input.o0, p.o0_len()), (&input.o, p.o_len())] {
            if v.len() != want {
                return Err(Error::DimensionMismatch {
                    expected: want,
                    actual: v.len(),
                });
            }
        }
        let labels = input
            .labels
            .into_iter()
            .map(|s| match self.label_ids.get(&s) {
                Some(id) => *id,
                None => {
                    let id = self.labels.len() as u32;
                    self.label_ids.insert(s.clone(), id);
                    self.labels.push(s);
                    id
                }
            })
            .collect();
        Ok(IndexEntry {
            path: input.path,
            labels,
            o0: input.o0,
            o: input.o,
        })
    }

    pub fn params(&self) -> IndexParams {
        self.params
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn entry(&self, i: usize) -> &IndexEntry {
        &self.entries[i]
    }

    pub fn label(&self, id: u32) -> &str {
        &self.labels[id as usize]
    }

    pub fn label_id(&self, label: &str) -> Option<u32> {
        self.label_ids.get(label).copied()
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn set_fingerprint(&mut self, fp: impl Into<String>) {
        self.fingerprint = fp.into();
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn height(&self) -> usize {
        self.nodes[self.root].level + 1
    }

    pub fn stats(&self) -> IndexStats {
        IndexStats {
            entry_count: self.entries.len(),
            node_count: self.nodes.len(),
            leaf_count: self.nodes.iter().filter(|n| n.level == 0).count(),
            height: self.height(),
            label_count: self.labels.len(),
        }
    }

    /// Entry ids reachable from the root, in traversal order.
    pub fn enumerate(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.collect_entries(self.root, &mut out);
        out
    }

    fn collect_entries(&self, node: usize, out: &mut Vec<usize>) {
        let n = &self.nodes[node];
        if n.level == 0 {
            out.extend_from_slice(&n.children);
        } else {
            for &c in &n.children {
                self.collect_entries(c, out);
            }
        }
    }

    fn entry_mbrs(&self, e: usize) -> (Mbr, Mbr) {
        let entry = &self.entries[e];
        (Mbr::point(&entry.o0), Mbr::point(&entry.o))
    }

    fn child_mbrs(&self, level: usize, child: usize) -> (Mbr, Mbr) {
        if level == 0 {
            self.entry_mbrs(child)
        } else {
            let n = &self.nodes[child];
            (n.mbr0.clone(), n.mbr.clone())
        }
    }

    /// Box in the joint label-and-dominance space; every layout decision
    /// (packing, subtree choice, reinsertion, splits) is made in it.
    fn child_key(&self, level: usize, child: usize) -> Mbr {
        let (m0, m) = self.child_mbrs(level, child);
        m0.concat(&m)
    }

    fn node_key(&self, node: usize) -> Mbr {
        let n = &self.nodes[node];
        n.mbr0.concat(&n.mbr)
    }

    fn refresh(&mut self, node: usize) {
        let level = self.nodes[node].level;
        let children = self.nodes[node].children.clone();
        if children.is_empty() {
            return;
        }
        let (m0, m): (Vec<Mbr>, Vec<Mbr>) = children.iter().map(|c| self.child_mbrs(level, *c)).unzip();
        let n = &mut self.nodes[node];
        n.mbr0 = Mbr::union(m0).unwrap();
        n.mbr = Mbr::union(m).unwrap();
    }

    fn new_node(&mut self, level: usize, children: Vec<usize>) -> usize {
        let id = self.nodes.len();
        let dims = (self.params.o0_len(), self.params.o_len());
        self.nodes.push(Node {
            level,
            children,
            mbr0: Mbr::point(&vec![0.0; dims.0]),
            mbr: Mbr::point(&vec![0.0; dims.1]),
        });
        self.refresh(id);
        id
    }

    fn pack(&mut self) {
        self.nodes.clear();
        if self.entries.is_empty() {
            self.root = self.new_node(0, Vec::new());
            return;
        }
        let mut level = 0;
        let mut items: Vec<usize> = (0..self.entries.len()).collect();
        loop {
            let centers: Vec<Vec<f64>> = items.iter().map(|&i| self.child_key(level, i).center()).collect();
            let groups = str_groups(&centers, self.params.max_fanout);
            let mut parents = Vec::with_capacity(groups.len());
            for g in groups {
                let children = g.into_iter().map(|k| items[k]).collect();
                parents.push(self.new_node(level, children));
            }
            if parents.len() == 1 {
                self.root = parents[0];
                return;
            }
            items = parents;
            level += 1;
        }
    }

    /// R*-tree insertion with forced reinsertion once per level.
    pub fn insert(&mut self, input: EntryInput) -> Result<usize> {
        let e = self.intern(input)?;
        let id = self.entries.len();
        self.entries.push(e);
        let mut reinserted = BTreeSet::new();
        let mut pending = vec![(id, 0usize)];
        while let Some((item, level)) = pending.pop() {
            self.insert_item(item, level, &mut reinserted, &mut pending);
        }
        Ok(id)
    }

    fn insert_item(
        &mut self,
        item: usize,
        level: usize,
        reinserted: &mut BTreeSet<usize>,
        pending: &mut Vec<(usize, usize)>,
    ) {
        if let Some(sibling) = self.insert_rec(self.root, item, level, reinserted, pending) {
            let old = self.root;
            let top = self.nodes[old].level + 1;
            self.root = self.new_node(top, vec![old, sibling]);
        }
    }

    fn insert_rec(
        &mut self,
        node: usize,
        item: usize,
        target: usize,
        reinserted: &mut BTreeSet<usize>,
        pending: &mut Vec<(usize, usize)>,
    ) -> Option<usize> {
        let level = self.nodes[node].level;
        if level == target {
            self.nodes[node].children.push(item);
        } else {
            let item_mbr = self.child_key(target, item);
            let child = self.choose_subtree(node, &item_mbr);
            if let Some(sib) = self.insert_rec(child, item, target, reinserted, pending) {
                self.nodes[node].children.push(sib);
            }
        }
        self.refresh(node);
        if self.nodes[node].children.len() <= self.params.max_fanout {
            return None;
        }
        if node != self.root && reinserted.insert(level) {
            self.reinsert_farthest(node, pending);
            None
        } else {
            Some(self.split(node))
        }
    }

    fn choose_subtree(&self, node: usize, item: &Mbr) -> usize {
        let n = &self.nodes[node];
        let child_mbrs: Vec<Mbr> = n.children.iter().map(|c| self.node_key(*c)).collect();
        let leaf_children = n.level == 1;
        let mut best: Option<((f64, f64, f64, f64), usize)> = None;
        for (k, m) in child_mbrs.iter().enumerate() {
            let grown = m.enlarged(item);
            let overlap_growth = if leaf_children {
                child_mbrs
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != k)
                    .map(|(_, o)| grown.overlap(o) - m.overlap(o))
                    .sum()
            } else {
                0.0
            };
            let key = (
                overlap_growth,
                grown.area() - m.area(),
                grown.margin() - m.margin(),
                m.area(),
            );
            let better = match &best {
                None => true,
                Some((b, _)) => lex_less(&key, b),
            };
            if better {
                best = Some((key, n.children[k]));
            }
        }
        best.expect("internal node has children").1
    }

    fn reinsert_farthest(&mut self, node: usize, pending: &mut Vec<(usize, usize)>) {
        let level = self.nodes[node].level;
        let center = self.node_key(node).center();
        let mut children: Vec<(f64, usize)> = self.nodes[node]
            .children
            .iter()
            .map(|&c| (sq_dist(&self.child_key(level, c).center(), &center), c))
            .collect();
        children.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let p = ((self.params.max_fanout as f64) * REINSERT_FRACTION).round().max(1.0) as usize;
        let removed: Vec<usize> = children[..p].iter().map(|(_, c)| *c).collect();
        self.nodes[node].children = children[p..].iter().map(|(_, c)| *c).collect();
        self.refresh(node);
        // `pending` is a stack: push farthest first so the nearest goes back in first
        for c in removed {
            pending.push((c, level));
        }
    }

    fn split(&mut self, node: usize) -> usize {
        let level = self.nodes[node].level;
        let children = self.nodes[node].children.clone();
        let boxes: Vec<Mbr> = children.iter().map(|c| self.child_key(level, *c)).collect();
        let (left, right) = rstar_split(&boxes, self.params.min_fanout);
        self.nodes[node].children = left.iter().map(|k| children[*k]).collect();
        self.refresh(node);
        self.new_node(level, right.iter().map(|k| children[*k]).collect())
    }

    fn resolve<'a>(&self, probe: &'a Probe) -> Resolved<'a> {
        Resolved {
            probe,
            ids: probe
                .labels
                .iter()
                .map(|l| l.as_ref().map(|s| self.label_ids.get(s).copied().unwrap_or(u32::MAX)))
                .collect(),
        }
    }

    fn check_probe(&self, probe: &Probe, known_required: bool) -> Result<()> {
        let p = &self.params;
        if probe.labels.len() != p.l + 1 {
            return Err(Error::PathLengthMismatch {
                index: p.l,
                query: probe.labels.len().saturating_sub(1),
            });
        }
        if probe.o0.len() != p.o0_len() {
            return Err(Error::DimensionMismatch {
                expected: p.o0_len(),
                actual: probe.o0.len(),
            });
        }
        if known_required {
            if probe.o.len() != p.o_len() {
                return Err(Error::DimensionMismatch {
                    expected: p.o_len(),
                    actual: probe.o.len(),
                });
            }
            if let Some(i) = probe.labels.iter().position(Option::is_none) {
                return Err(Error::Config(format!(
                    "exact retrieval needs fully labeled paths (position {i} is unknown)"
                )));
            }
        } else if probe.labels.iter().all(Option::is_none) {
            return Err(Error::UnmatchableWildcard(format!(
                "{} unknown positions",
                probe.labels.len()
            )));
        }
        Ok(())
    }

    /// Node-level test; `Err(true)` is a semantic rejection, `Err(false)` structural.
    fn node_admits(&self, mode: Mode, node: &Node, r: &Resolved) -> std::result::Result<(), bool> {
        let f = self.params.label_dim;
        for (i, id) in r.ids.iter().enumerate() {
            if id.is_some() && !node.mbr0.contains_range(&r.probe.o0, i * f..(i + 1) * f, EPSILON) {
                return Err(true);
            }
        }
        if let Mode::Exact = mode {
            if !node.mbr.meets_dominance_region(&r.probe.o, EPSILON) {
                return Err(false);
            }
        }
        Ok(())
    }

    fn entry_admits(&self, mode: Mode, e: &IndexEntry, r: &Resolved) -> bool {
        let labels_ok = r.ids.iter().zip(&e.labels).all(|(q, z)| q.is_none_or(|q| q == *z));
        match mode {
            Mode::Labels => labels_ok,
            Mode::Exact => labels_ok && r.probe.o.iter().zip(&e.o).all(|(q, z)| *q <= *z + EPSILON),
        }
    }

    fn key(&self, mode: Mode, node: &Node) -> f64 {
        match mode {
            Mode::Exact => node.mbr.upper_l1(),
            Mode::Labels => node.mbr0.abs_l1_bound(),
        }
    }

    fn probe_norm(&self, mode: Mode, probe: &Probe) -> f64 {
        match mode {
            Mode::Exact => probe.o.iter().map(|x| x.abs()).sum(),
            Mode::Labels => probe.o0.iter().map(|x| x.abs()).sum(),
        }
    }

    /// Best-first traversal shared by exact and label retrieval. Every probe
    /// is tried in both orientations; results are per input probe, sorted.
    fn traverse(&self, mode: Mode, probes: &[Probe], audit: bool) -> (Vec<Vec<Candidate>>, TraversalStats) {
        let mut stats = TraversalStats::default();
        let mut results: Vec<BTreeSet<Candidate>> = vec![BTreeSet::new(); probes.len()];
        if audit {
            stats.missed_candidates = Some(0);
        }
        if self.entries.is_empty() || probes.is_empty() {
            return (vec![Vec::new(); probes.len()], stats);
        }
        let (f, d) = (self.params.label_dim, self.params.dominance_dim);
        let oriented: Vec<(usize, bool, Probe)> = probes
            .iter()
            .enumerate()
            .flat_map(|(i, p)| [(i, false, p.clone()), (i, true, p.reversed(f, d))])
            .collect();
        let resolved: Vec<Resolved> = oriented.iter().map(|(_, _, p)| self.resolve(p)).collect();
        let threshold = oriented
            .iter()
            .map(|(_, _, p)| self.probe_norm(mode, p))
            .fold(f64::INFINITY, f64::min)
            - EPSILON;

        let mut heap = BinaryHeap::new();
        let root = &self.nodes[self.root];
        let root_list: Vec<usize> = (0..oriented.len())
            .filter(|k| self.node_admits(mode, root, &resolved[*k]).is_ok())
            .collect();
        if root_list.is_empty() {
            stats.visit(0);
            self.record_prune(mode, root, &resolved, &mut stats);
            if audit {
                let all: Vec<usize> = (0..oriented.len()).collect();
                self.audit_subtree(mode, self.root, &all, &resolved, &mut stats);
            }
            return (vec![Vec::new(); probes.len()], stats);
        }
        heap.push(HeapItem {
            key: self.key(mode, root),
            node: self.root,
            depth: 0,
            probes: root_list,
        });
        while let Some(item) = heap.pop() {
            if item.key < threshold {
                stats.early_exit = true;
                if audit {
                    self.audit_subtree(mode, item.node, &item.probes, &resolved, &mut stats);
                    for rest in heap.drain() {
                        self.audit_subtree(mode, rest.node, &rest.probes, &resolved, &mut stats);
                    }
                }
                break;
            }
            stats.visit(item.depth);
            let node = &self.nodes[item.node];
            if node.level == 0 {
                for &e in &node.children {
                    let entry = &self.entries[e];
                    for &k in &item.probes {
                        stats.entries_checked += 1;
                        if self.entry_admits(mode, entry, &resolved[k]) {
                            let (orig, rev, _) = &oriented[k];
                            results[*orig].insert(Candidate {
                                entry: e,
                                reversed: *rev,
                            });
                        }
                    }
                }
                continue;
            }
            for &c in &node.children {
                let child = &self.nodes[c];
                let mut list = Vec::new();
                let mut semantic_only = true;
                let mut rejected = Vec::new();
                for &k in &item.probes {
                    match self.node_admits(mode, child, &resolved[k]) {
                        Ok(()) => list.push(k),
                        Err(sem) => {
                            semantic_only &= sem;
                            rejected.push(k);
                        }
                    }
                }
                if audit && !rejected.is_empty() {
                    self.audit_subtree(mode, c, &rejected, &resolved, &mut stats);
                }
                if list.is_empty() {
                    if semantic_only {
                        stats.nodes_pruned_semantic += 1;
                    } else {
                        stats.nodes_pruned_structural += 1;
                    }
                    continue;
                }
                heap.push(HeapItem {
                    key: self.key(mode, child),
                    node: c,
                    depth: item.depth + 1,
                    probes: list,
                });
            }
        }
        (results.into_iter().map(|s| s.into_iter().collect()).collect(), stats)
    }

    fn record_prune(&self, mode: Mode, node: &Node, resolved: &[Resolved], stats: &mut TraversalStats) {
        let semantic = resolved.iter().all(|r| self.node_admits(mode, node, r) == Err(true));
        if semantic {
            stats.nodes_pruned_semantic += 1;
        } else {
            stats.nodes_pruned_structural += 1;
        }
    }

    fn audit_subtree(
        &self,
        mode: Mode,
        node: usize,
        probes: &[usize],
        resolved: &[Resolved],
        stats: &mut TraversalStats,
    ) {
        let mut entries = Vec::new();
        self.collect_entries(node, &mut entries);
        let missed = entries
            .iter()
            .map(|e| {
                probes
                    .iter()
                    .filter(|k| self.entry_admits(mode, &self.entries[*e], &resolved[**k]))
                    .count()
            })
            .sum::<usize>();
        *stats.missed_candidates.get_or_insert(0) += missed;
    }

    /// Paths whose labels equal the probe's and whose dominance embedding
    /// dominates it, per probe.
    pub fn retrieve_exact_candidates(&self, probes: &[Probe]) -> Result<(Vec<Vec<Candidate>>, TraversalStats)> {
        self.retrieve_exact_candidates_with(probes, false)
    }

    /// As [`RStarIndex::retrieve_exact_candidates`]; `audit` additionally
    /// descends every pruned subtree and counts missed candidates.
    pub fn retrieve_exact_candidates_with(
        &self,
        probes: &[Probe],
        audit: bool,
    ) -> Result<(Vec<Vec<Candidate>>, TraversalStats)> {
        for p in probes {
            self.check_probe(p, true)?;
        }
        Ok(self.traverse(Mode::Exact, probes, audit))
    }

    /// Paths agreeing with the probe on every known position, per probe.
    pub fn retrieve_label_matches(&self, probes: &[Probe]) -> Result<(Vec<Vec<Candidate>>, TraversalStats)> {
        self.retrieve_label_matches_with(probes, false)
    }

    pub fn retrieve_label_matches_with(
        &self,
        probes: &[Probe],
        audit: bool,
    ) -> Result<(Vec<Vec<Candidate>>, TraversalStats)> {
        for p in probes {
            self.check_probe(p, false)?;
        }
        Ok(self.traverse(Mode::Labels, probes, audit))
    }

    /// Test oracle: the exact leaf predicates applied to every entry.
    pub fn linear_scan_reference(&self, probes: &[Probe]) -> Vec<Vec<Candidate>> {
        self.scan(Mode::Exact, probes)
    }

    pub fn linear_scan_labels(&self, probes: &[Probe]) -> Vec<Vec<Candidate>> {
        self.scan(Mode::Labels, probes)
    }

    fn scan(&self, mode: Mode, probes: &[Probe]) -> Vec<Vec<Candidate>> {
        let (f, d) = (self.params.label_dim, self.params.dominance_dim);
        probes
            .iter()
            .map(|p| {
                let fwd = self.resolve(p);
                let rev_probe = p.reversed(f, d);
                let rev = self.resolve(&rev_probe);
                let mut out = Vec::new();
                for (i, e) in self.entries.iter().enumerate() {
                    for (r, reversed) in [(&fwd, false), (&rev, true)] {
                        if self.entry_admits(mode, e, r) {
                            out.push(Candidate { entry: i, reversed });
                        }
                    }
                }
                out.sort();
                out
            })
            .collect()
    }

    /// Structural self-check: tight MBRs, uniform leaf depth, fan-out bounds
    /// (the root excepted), every entry reachable exactly once.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::IndexFormat(m));
        let mut seen = vec![false; self.entries.len()];
        let mut stack = vec![self.root];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            let count = node.children.len();
            if n != self.root && (count < self.params.min_fanout || count > self.params.max_fanout) {
                return bad(format!("node {n} has {count} children"));
            }
            if count > 0 {
                let (m0, m): (Vec<Mbr>, Vec<Mbr>) =
                    node.children.iter().map(|c| self.child_mbrs(node.level, *c)).unzip();
                if Mbr::union(m0).as_ref() != Some(&node.mbr0) || Mbr::union(m).as_ref() != Some(&node.mbr) {
                    return bad(format!("node {n} has loose bounding boxes"));
                }
            }
            for &c in &node.children {
                if node.level == 0 {
                    if std::mem::replace(&mut seen[c], true) {
                        return bad(format!("entry {c} reachable twice"));
                    }
                } else {
                    if self.nodes[c].level + 1 != node.level {
                        return bad(format!("node {c} breaks height balance"));
                    }
                    stack.push(c);
                }
            }
        }
        if let Some(e) = seen.iter().position(|s| !s) {
            return bad(format!("entry {e} unreachable"));
        }
        Ok(())
    }

    /// Writes `magic | u32 header length | JSON header | payload`.
    pub fn save(&self, path: &FsPath) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let header = IndexHeader {
            version: FORMAT_VERSION,
            l: self.params.l,
            label_dim: self.params.label_dim,
            dominance_dim: self.params.dominance_dim,
            m: self.params.min_fanout,
            max_fanout: self.params.max_fanout,
            entry_count: self.entries.len(),
            node_count: self.nodes.len(),
            label_count: self.labels.len(),
            root: self.root,
            graph_fingerprint: self.fingerprint.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(json.len() as u32)?;
        w.write_all(&json)?;
        for label in &self.labels {
            w.write_u32::<LittleEndian>(label.len() as u32)?;
            w.write_all(label.as_bytes())?;
        }
        for e in &self.entries {
            for v in &e.path.vertices {
                w.write_u32::<LittleEndian>(v.0)?;
            }
            for x in &e.path.edges {
                w.write_u32::<LittleEndian>(x.0)?;
            }
            for id in &e.labels {
                w.write_u32::<LittleEndian>(*id)?;
            }
            for x in e.o0.iter().chain(&e.o) {
                w.write_f64::<LittleEndian>(*x)?;
            }
        }
        for n in &self.nodes {
            w.write_u32::<LittleEndian>(n.level as u32)?;
            w.write_u32::<LittleEndian>(n.children.len() as u32)?;
            for c in &n.children {
                w.write_u32::<LittleEndian>(*c as u32)?;
            }
        }
        Ok(())
    }

    pub fn load(path: &FsPath) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let fmt = |e: std::io::Error| Error::IndexFormat(e.to_string());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(fmt)?;
        if &magic != MAGIC {
            return Err(Error::IndexFormat("bad magic bytes".into()));
        }
        let len = r.read_u32::<LittleEndian>().map_err(fmt)? as usize;
        let mut json = vec![0u8; len];
        r.read_exact(&mut json).map_err(fmt)?;
        let h: IndexHeader = serde_json::from_slice(&json)?;
        if h.version != FORMAT_VERSION {
            return Err(Error::IndexFormat(format!("unsupported version {}", h.version)));
        }
        let params = IndexParams {
            l: h.l,
            label_dim: h.label_dim,
            dominance_dim: h.dominance_dim,
            min_fanout: h.m,
            max_fanout: h.max_fanout,
        };
        params.validate()?;
        let mut idx = RStarIndex::new(params)?;
        idx.fingerprint = h.graph_fingerprint;
        for id in 0..h.label_count {
            let n = r.read_u32::<LittleEndian>().map_err(fmt)? as usize;
            let mut buf = vec![0u8; n];
            r.read_exact(&mut buf).map_err(fmt)?;
            let s = String::from_utf8(buf).map_err(|e| Error::IndexFormat(e.to_string()))?;
            idx.label_ids.insert(s.clone(), id as u32);
            idx.labels.push(s);
        }
        let read_u32s = |r: &mut R, n: usize| -> Result<Vec<u32>> {
            (0..n).map(|_| r.read_u32::<LittleEndian>().map_err(fmt)).collect()
        };
        let read_f64s = |r: &mut R, n: usize| -> Result<Vec<f64>> {
            (0..n).map(|_| r.read_f64::<LittleEndian>().map_err(fmt)).collect()
        };
        for _ in 0..h.entry_count {
            let vertices = read_u32s(r, h.l + 1)?.into_iter().map(NodeIx).collect();
            let edges = read_u32s(r, h.l)?.into_iter().map(EdgeIx).collect();
            let labels = read_u32s(r, h.l + 1)?;
            if labels.iter().any(|l| *l as usize >= h.label_count) {
                return Err(Error::IndexFormat("label id out of range".into()));
            }
            let o0 = read_f64s(r, params.o0_len())?;
            let o = read_f64s(r, params.o_len())?;
            idx.entries.push(IndexEntry {
                path: Path { vertices, edges },
                labels,
                o0,
                o,
            });
        }
        idx.nodes.clear();
        let mut raw = Vec::with_capacity(h.node_count);
        for _ in 0..h.node_count {
            let level = r.read_u32::<LittleEndian>().map_err(fmt)? as usize;
            let n = r.read_u32::<LittleEndian>().map_err(fmt)? as usize;
            let children: Vec<usize> = read_u32s(r, n)?.into_iter().map(|c| c as usize).collect();
            let limit = if level == 0 { h.entry_count } else { h.node_count };
            if children.iter().any(|c| *c >= limit) {
                return Err(Error::IndexFormat("child reference out of range".into()));
            }
            raw.push((level, children));
        }
        if h.root >= h.node_count {
            return Err(Error::IndexFormat("root out of range".into()));
        }
        let dims = (params.o0_len(), params.o_len());
        for (level, children) in &raw {
            idx.nodes.push(Node {
                level: *level,
                children: children.clone(),
                mbr0: Mbr::point(&vec![0.0; dims.0]),
                mbr: Mbr::point(&vec![0.0; dims.1]),
            });
        }
        idx.root = h.root;
        // children before parents: refresh by ascending level
        let mut order: Vec<usize> = (0..idx.nodes.len()).collect();
        order.sort_by_key(|n| idx.nodes[*n].level);
        for n in order {
            idx.refresh(n);
        }
        idx.validate()?;
        Ok(idx)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct IndexHeader {
    version: u32,
    l: usize,
    #[serde(rename = "F")]
    label_dim: usize,
    #[serde(rename = "d")]
    dominance_dim: usize,
    m: usize,
    #[serde(rename = "M")]
    max_fanout: usize,
    entry_count: usize,
    node_count: usize,
    label_count: usize,
    root: usize,
    graph_fingerprint: String,
}

fn lex_less(a: &(f64, f64, f64, f64), b: &(f64, f64, f64, f64)) -> bool {
    a.0.total_cmp(&b.0)
        .then(a.1.total_cmp(&b.1))
        .then(a.2.total_cmp(&b.2))
        .then(a.3.total_cmp(&b.3))
        == Ordering::Less
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Balanced sizes for splitting `n` items into `parts` runs.
fn balanced_sizes(n: usize, parts: usize) -> Vec<usize> {
    let base = n / parts;
    let extra = n % parts;
    (0..parts).map(|i| base + usize::from(i < extra)).collect()
}

fn widest_dim(centers: &[Vec<f64>], items: &[usize]) -> usize {
    let dims = centers.first().map_or(0, Vec::len);
    let mut best = (f64::NEG_INFINITY, 0);
    for k in 0..dims {
        let (lo, hi) = items.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
            (lo.min(centers[i][k]), hi.max(centers[i][k]))
        });
        if hi - lo > best.0 {
            best = (hi - lo, k);
        }
    }
    best.1
}

fn sort_along(centers: &[Vec<f64>], items: &mut [usize], dim: usize) {
    items.sort_by(|a, b| centers[*a][dim].total_cmp(&centers[*b][dim]).then(a.cmp(b)));
}

/// Sort-tile-recursive grouping of points into runs of at most `cap`.
///
/// Group sizes differ by at most one, so any level with more than `cap`
/// items yields groups of at least `cap / 2`. Tiling uses two passes per
/// level, each along the currently widest coordinate.
fn str_groups(centers: &[Vec<f64>], cap: usize) -> Vec<Vec<usize>> {
    let n = centers.len();
    let parts = n.div_ceil(cap);
    let sizes = balanced_sizes(n, parts);
    let mut items: Vec<usize> = (0..n).collect();
    if parts == 1 {
        return vec![items];
    }
    let slabs = (parts as f64).sqrt().ceil() as usize;
    let per_slab = balanced_sizes(parts, slabs);
    let dim = widest_dim(centers, &items);
    sort_along(centers, &mut items, dim);
    let mut out = Vec::with_capacity(parts);
    let mut cursor = 0;
    let mut group = 0;
    for groups_here in per_slab {
        let slab_sizes = &sizes[group..group + groups_here];
        let total: usize = slab_sizes.iter().sum();
        let slab = &mut items[cursor..cursor + total];
        let dim = widest_dim(centers, slab);
        sort_along(centers, slab, dim);
        let mut start = 0;
        for s in slab_sizes {
            out.push(slab[start..start + s].to_vec());
            start += s;
        }
        cursor += total;
        group += groups_here;
    }
    out
}

/// R* split over `boxes`: axis with least summed margin, then the
/// distribution with least overlap (ties: area, then first found).
fn rstar_split(boxes: &[Mbr], m: usize) -> (Vec<usize>, Vec<usize>) {
    let n = boxes.len();
    let dims = boxes[0].dim();
    let m = m.min(n / 2).max(1);
    let sorted_by = |dim: usize, by_high: bool| -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|a, b| {
            let (x, y) = if by_high {
                (boxes[*a].high[dim], boxes[*b].high[dim])
            } else {
                (boxes[*a].low[dim], boxes[*b].low[dim])
            };
            x.total_cmp(&y).then(a.cmp(b))
        });
        idx
    };
    let group_mbr = |idx: &[usize]| Mbr::union(idx.iter().map(|i| boxes[*i].clone())).unwrap();

    let mut best_axis = (f64::INFINITY, 0);
    for dim in 0..dims {
        let mut margin = 0.0;
        for by_high in [false, true] {
            let order = sorted_by(dim, by_high);
            for k in m..=n - m {
                margin += group_mbr(&order[..k]).margin() + group_mbr(&order[k..]).margin();
            }
        }
        if margin < best_axis.0 {
            best_axis = (margin, dim);
        }
    }
    let mut best: Option<((f64, f64), Vec<usize>, usize)> = None;
    for by_high in [false, true] {
        let order = sorted_by(best_axis.1, by_high);
        for k in m..=n - m {
            let (a, b) = (group_mbr(&order[..k]), group_mbr(&order[k..]));
            let key = (a.overlap(&b), a.area() + b.area());
            let better = match &best {
                None => true,
                Some((bk, _, _)) => key.0 < bk.0 || (key.0 == bk.0 && key.1 < bk.1),
            };
            if better {
                best = Some((key, order.clone(), k));
            }
        }
    }
    let (_, order, k) = best.unwrap();
    (order[..k].to_vec(), order[k..].to_vec())
}

/// One index per path length, all over the same graph.
#[derive(Clone, Debug, Default)]
pub struct IndexBundle {
    indexes: BTreeMap<usize, RStarIndex>,
}

impl IndexBundle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, idx: RStarIndex) -> Result<()> {
        if let Some(other) = self.indexes.values().next() {
            if other.fingerprint() != idx.fingerprint() {
                return Err(Error::FingerprintMismatch {
                    index: idx.fingerprint().to_string(),
                    graph: other.fingerprint().to_string(),
                });
            }
        }
        self.indexes.insert(idx.params().l, idx);
        Ok(())
    }

    pub fn get(&self, l: usize) -> Option<&RStarIndex> {
        self.indexes.get(&l)
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.indexes.keys().copied().collect()
    }

    pub fn is_empty(&self) -> bool {
        self.indexes.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &RStarIndex> {
        self.indexes.values()
    }

    pub fn fingerprint(&self) -> Option<&str> {
        self.indexes.values().next().map(|i| i.fingerprint())
    }

    /// Picks the path length for a query with valid range `valid`: `preferred`
    /// when available, else the largest available length inside the range.
    pub fn choose_length(&self, valid: &std::ops::RangeInclusive<usize>, preferred: Option<usize>) -> Result<usize> {
        if let Some(l) = preferred.filter(|l| valid.contains(l) && self.indexes.contains_key(l)) {
            return Ok(l);
        }
        self.indexes
            .keys()
            .rev()
            .copied()
            .find(|l| valid.contains(l))
            .ok_or(Error::InvalidPathLength {
                l: preferred.unwrap_or(0),
                min: *valid.start(),
                max: *valid.end(),
            })
    }

    /// `magic | u32 count | (u64 length | index bytes)*`.
    pub fn save(&self, path: &FsPath) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(BUNDLE_MAGIC)?;
        w.write_u32::<LittleEndian>(self.indexes.len() as u32)?;
        for idx in self.indexes.values() {
            let mut buf = Vec::new();
            idx.write_to(&mut buf)?;
            w.write_u64::<LittleEndian>(buf.len() as u64)?;
            w.write_all(&buf)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a bundle, or a bare single index file.
    pub fn load(path: &FsPath) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let mut out = IndexBundle::new();
        if bytes.starts_with(MAGIC) {
            out.insert(RStarIndex::read_from(&mut bytes.as_slice())?)?;
            return Ok(out);
        }
        if !bytes.starts_with(BUNDLE_MAGIC) {
            return Err(Error::IndexFormat("bad magic bytes".into()));
        }
        let fmt = |e: std::io::Error| Error::IndexFormat(e.to_string());
        let mut r = &bytes[BUNDLE_MAGIC.len()..];
        let count = r.read_u32::<LittleEndian>().map_err(fmt)?;
        for _ in 0..count {
            let len = r.read_u64::<LittleEndian>().map_err(fmt)? as usize;
            if len > r.len() {
                return Err(Error::IndexFormat("truncated bundle".into()));
            }
            let (chunk, rest) = r.split_at(len);
            out.insert(RStarIndex::read_from(&mut &chunk[..])?)?;
            r = rest;
        }
        if !r.is_empty() {
            return Err(Error::IndexFormat("trailing bytes after bundle".into()));
        }
        Ok(out)
    }
}
