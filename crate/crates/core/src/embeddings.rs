//! Label embeddings: providers, the on-disk cache, path-level concatenation
//! and exact nearest-label search.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path as FsPath, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeIx, Path};
use crate::http::{HttpSettings, JsonClient};

pub const DEFAULT_LABEL_DIM: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelEmbedding(pub Vec<f64>);

impl LabelEmbedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Position-ordered concatenation of per-vertex label embeddings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathLabelEmbedding(pub Vec<f64>);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    Mock,
    CountOracle,
    Remote,
}

impl ProviderKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProviderKind::Mock => "mock",
            ProviderKind::CountOracle => "count-oracle",
            ProviderKind::Remote => "remote",
        }
    }
}

impl std::str::FromStr for ProviderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mock" => Ok(ProviderKind::Mock),
            "count-oracle" => Ok(ProviderKind::CountOracle),
            "remote" => Ok(ProviderKind::Remote),
            other => Err(Error::Config(format!("unknown provider kind `{other}`"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub dim: usize,
    pub seed: u64,
    pub remote: Option<HttpSettings>,
    /// Directory for the JSON-lines cache of remote embeddings.
    pub cache_dir: Option<PathBuf>,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            kind: ProviderKind::CountOracle,
            dim: DEFAULT_LABEL_DIM,
            seed: 0,
            remote: None,
            cache_dir: None,
        }
    }
}

impl ProviderConfig {
    pub fn mock(dim: usize, seed: u64) -> Self {
        ProviderConfig {
            kind: ProviderKind::Mock,
            dim,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        if self.kind == ProviderKind::Remote && self.remote.as_ref().is_none_or(|r| r.endpoint.is_empty()) {
            return Err(Error::Config("remote embedding provider requires an endpoint".into()));
        }
        Ok(())
    }
}

pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;

    fn embed_batch(&self, labels: &[String]) -> Result<Vec<LabelEmbedding>>;

    fn embed(&self, label: &str) -> Result<LabelEmbedding> {
        let mut out = self.embed_batch(&[label.to_string()])?;
        Ok(out.pop().expect("one label in, one embedding out"))
    }
}

/// Hash-seeded unit vectors; a pure function of `(seed, dim, label)`. Labels
/// are case-folded and whitespace-collapsed first, so surface variants of one
/// name share a vector.
#[derive(Clone, Debug)]
pub struct MockEmbedder {
    dim: usize,
    seed: u64,
}

impl MockEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        MockEmbedder { dim, seed }
    }

    pub fn vector(&self, label: &str) -> LabelEmbedding {
        let key = label.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
        let mut rng = ChaCha8Rng::seed_from_u64(label_hash(self.seed, &key));
        let mut v: Vec<f64> = (0..self.dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        } else {
            v[0] = 1.0;
        }
        LabelEmbedding(v)
    }
}

impl EmbeddingProvider for MockEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, labels: &[String]) -> Result<Vec<LabelEmbedding>> {
        Ok(labels.iter().map(|l| self.vector(l)).collect())
    }
}

/// 64-bit seeded label hash, stable across platforms and releases.
pub fn label_hash(seed: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    label: String,
    vector: Vec<f64>,
}

/// Label → vector cache persisted as JSON lines, append-only.
#[derive(Debug, Default)]
pub struct EmbeddingCache {
    path: Option<PathBuf>,
    entries: HashMap<String, Vec<f64>>,
}

impl EmbeddingCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let mut entries = HashMap::new();
        if path.exists() {
            for line in BufReader::new(File::open(&path)?).lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: CacheLine = serde_json::from_str(&line)?;
                entries.insert(rec.label, rec.vector);
            }
        }
        Ok(EmbeddingCache {
            path: Some(path),
            entries,
        })
    }

    /// Cache file name for a provider kind and dimension.
    pub fn file_name(kind: ProviderKind, dim: usize) -> String {
        format!("embeddings-{}-{dim}.jsonl", kind.as_str())
    }

    pub fn get(&self, label: &str) -> Option<&Vec<f64>> {
        self.entries.get(label)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert_all(&mut self, items: Vec<(String, Vec<f64>)>) -> Result<()> {
        if let Some(path) = &self.path {
            let mut file = OpenOptions::new().create(true).append(true).open(path)?;
            for (label, vector) in &items {
                let line = serde_json::to_string(&CacheLine {
                    label: label.clone(),
                    vector: vector.clone(),
                })?;
                writeln!(file, "{line}")?;
            }
        }
        self.entries.extend(items);
        Ok(())
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    input: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    data: Vec<EmbedDatum>,
}

#[derive(Deserialize)]
struct EmbedDatum {
    embedding: Vec<f64>,
}

/// Embedding service client: `{"input": [labels]}` → `{"data": [{"embedding": [..]}]}`.
pub struct RemoteEmbedder {
    dim: usize,
    client: JsonClient,
    cache: Mutex<EmbeddingCache>,
    requests: AtomicUsize,
}

impl RemoteEmbedder {
    pub fn new(dim: usize, settings: HttpSettings, cache: EmbeddingCache) -> Self {
        RemoteEmbedder {
            dim,
            client: JsonClient::new(settings),
            cache: Mutex::new(cache),
            requests: AtomicUsize::new(0),
        }
    }

    /// Successful or failed service calls made so far (cache hits excluded).
    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, labels: &[String]) -> Result<Vec<LabelEmbedding>> {
        let missing: Vec<String> = {
            let cache = self.cache.lock().unwrap();
            let mut seen = std::collections::HashSet::new();
            labels
                .iter()
                .filter(|l| cache.get(l).is_none() && seen.insert(l.as_str()))
                .cloned()
                .collect()
        };
        if !missing.is_empty() {
            self.requests.fetch_add(1, Ordering::SeqCst);
            let response: EmbedResponse = self.client.post(&EmbedRequest { input: &missing })?;
            if response.data.len() != missing.len() {
                return Err(Error::UnparseableOutput {
                    message: format!("expected {} embeddings, got {}", missing.len(), response.data.len()),
                    raw: String::new(),
                });
            }
            let mut fresh = Vec::with_capacity(missing.len());
            for (label, datum) in missing.into_iter().zip(response.data) {
                if datum.embedding.len() != self.dim {
                    return Err(Error::DimensionMismatch {
                        expected: self.dim,
                        actual: datum.embedding.len(),
                    });
                }
                fresh.push((label, datum.embedding));
            }
            self.cache.lock().unwrap().insert_all(fresh)?;
        }
        let cache = self.cache.lock().unwrap();
        Ok(labels
            .iter()
            .map(|l| LabelEmbedding(cache.get(l).expect("filled above").clone()))
            .collect())
    }
}

pub fn build_provider(cfg: &ProviderConfig) -> Result<Box<dyn EmbeddingProvider>> {
    cfg.validate()?;
    match cfg.kind {
        ProviderKind::Mock | ProviderKind::CountOracle => Ok(Box::new(MockEmbedder::new(cfg.dim, cfg.seed))),
        ProviderKind::Remote => {
            let settings = cfg.remote.clone().expect("validated");
            let cache = match &cfg.cache_dir {
                Some(dir) => EmbeddingCache::open(dir.join(EmbeddingCache::file_name(cfg.kind, cfg.dim)))?,
                None => EmbeddingCache::in_memory(),
            };
            Ok(Box::new(RemoteEmbedder::new(cfg.dim, settings, cache)))
        }
    }
}

pub fn embed_label(label: &str, cfg: &ProviderConfig) -> Result<LabelEmbedding> {
    build_provider(cfg)?.embed(label)
}

/// Label embeddings for every vertex of a data graph, plus a label lookup.
#[derive(Clone, Debug)]
pub struct LabelTable {
    dim: usize,
    per_vertex: Vec<LabelEmbedding>,
    by_label: HashMap<String, usize>,
    /// Vertex order for the nearest-label scan: ascending id.
    scan_order: Vec<NodeIx>,
}

impl LabelTable {
    pub fn build(g: &Graph, provider: &dyn EmbeddingProvider) -> Result<Self> {
        let labels: Vec<String> = g.vertices().iter().map(|v| v.label.clone()).collect();
        let per_vertex = provider.embed_batch(&labels)?;
        Self::from_vectors(g, per_vertex)
    }

    pub fn from_vectors(g: &Graph, per_vertex: Vec<LabelEmbedding>) -> Result<Self> {
        if per_vertex.len() != g.vertex_count() {
            return Err(Error::DimensionMismatch {
                expected: g.vertex_count(),
                actual: per_vertex.len(),
            });
        }
        let dim = per_vertex.first().map_or(0, |e| e.dim());
        let mut by_label = HashMap::new();
        for (i, e) in per_vertex.iter().enumerate() {
            if e.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: e.dim(),
                });
            }
            if e.0.iter().any(|x| !x.is_finite()) {
                return Err(Error::Config(format!(
                    "non-finite embedding for `{}`",
                    g.id(NodeIx(i as u32))
                )));
            }
            by_label.entry(g.vertices()[i].label.clone()).or_insert(i);
        }
        Ok(LabelTable {
            dim,
            per_vertex,
            by_label,
            scan_order: g.ids_sorted(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vertex(&self, v: NodeIx) -> &LabelEmbedding {
        &self.per_vertex[v.index()]
    }

    pub fn for_label(&self, label: &str) -> Option<&LabelEmbedding> {
        self.by_label.get(label).map(|i| &self.per_vertex[*i])
    }

    pub fn vectors(&self) -> &[LabelEmbedding] {
        &self.per_vertex
    }

    /// Exact cosine arg-max over the graph's vertices; ties go to the smaller id.
    pub fn nearest(&self, probe: &LabelEmbedding) -> Result<(NodeIx, f64)> {
        let probe_norm = probe.norm();
        if probe_norm == 0.0 {
            return Err(Error::ZeroNorm);
        }
        if probe.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: probe.dim(),
            });
        }
        let mut best: Option<(NodeIx, f64)> = None;
        for &v in &self.scan_order {
            let e = &self.per_vertex[v.index()];
            let norm = e.norm();
            let cos = if norm == 0.0 {
                0.0
            } else {
                dot(&probe.0, &e.0) / (probe_norm * norm)
            };
            if best.is_none_or(|(_, b)| cos > b) {
                best = Some((v, cos));
            }
        }
        best.ok_or(Error::EmptyGraph)
    }
}

pub fn nearest_label(probe: &LabelEmbedding, g: &Graph, table: &LabelTable) -> Result<(String, f64)> {
    if g.is_empty() {
        return Err(Error::EmptyGraph);
    }
    let (v, cos) = table.nearest(probe)?;
    Ok((g.id(v).to_string(), cos))
}

pub fn path_label_embedding<'a, F>(path: &Path, lookup: F) -> Result<PathLabelEmbedding>
where
    F: Fn(NodeIx) -> Option<&'a LabelEmbedding>,
{
    let mut out = Vec::new();
    for &v in &path.vertices {
        let e = lookup(v).ok_or_else(|| Error::MissingEmbedding(format!("#{}", v.0)))?;
        out.extend_from_slice(&e.0);
    }
    Ok(PathLabelEmbedding(out))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

/// Writes the vectors of a label table as a JSON-lines cache beside an index.
pub fn write_cache_file(path: &FsPath, g: &Graph, table: &LabelTable) -> Result<()> {
    let mut file = File::create(path)?;
    let mut seen = std::collections::HashSet::new();
    for v in g.node_indices() {
        let label = g.label(v);
        if !seen.insert(label) {
            continue;
        }
        let line = serde_json::to_string(&CacheLine {
            label: label.to_string(),
            vector: table.vertex(v).0.clone(),
        })?;
        writeln!(file, "{line}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use std::io::Read;
    use std::net::TcpListener;
    use std::thread;

    #[test]
    fn mock_is_deterministic() {
        let cfg = ProviderConfig::mock(16, 7);
        let a1 = embed_label("A", &cfg).unwrap();
        let a2 = embed_label("A", &cfg).unwrap();
        assert_eq!(a1, a2);
        assert!((a1.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mock_separates_distinct_labels() {
        let m = MockEmbedder::new(16, 7);
        let vocab: Vec<String> = (0..200)
            .map(|i| format!("label-{i}"))
            .chain(["A".into(), "B".into()])
            .collect();
        let vecs: Vec<_> = vocab.iter().map(|l| m.vector(l)).collect();
        for i in 0..vecs.len() {
            for j in i + 1..vecs.len() {
                assert!(
                    cosine(&vecs[i].0, &vecs[j].0) < 1.0 - 1e-9,
                    "{} vs {}",
                    vocab[i],
                    vocab[j]
                );
            }
        }
    }

    #[test]
    fn remote_requires_endpoint() {
        let cfg = ProviderConfig {
            kind: ProviderKind::Remote,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    /// Serves `responses` one connection at a time and returns the request count.
    fn stub_server(responses: Vec<(u16, String)>) -> (String, thread::JoinHandle<usize>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = thread::spawn(move || {
            let mut served = 0;
            for (status, body) in responses {
                let (mut stream, _) = listener.accept().unwrap();
                let mut buf = Vec::new();
                let mut chunk = [0u8; 4096];
                loop {
                    let n = stream.read(&mut chunk).unwrap();
                    buf.extend_from_slice(&chunk[..n]);
                    let text = String::from_utf8_lossy(&buf);
                    if let Some(head_end) = text.find("\r\n\r\n") {
                        let len = text[..head_end]
                            .lines()
                            .find_map(|l| {
                                let l = l.to_ascii_lowercase();
                                l.strip_prefix("content-length:")
                                    .map(|v| v.trim().parse::<usize>().unwrap())
                            })
                            .unwrap_or(0);
                        if buf.len() >= head_end + 4 + len {
                            break;
                        }
                    }
                    if n == 0 {
                        break;
                    }
                }
                let reply = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(reply.as_bytes()).unwrap();
                served += 1;
            }
            served
        });
        (format!("http://{addr}/embed"), handle)
    }

    #[test]
    fn remote_results_are_cached() {
        let (url, server) = stub_server(vec![(200, r#"{"data":[{"embedding":[1.0,0.0,0.0,0.0]}]}"#.into())]);
        let dir = tempfile::tempdir().unwrap();
        let cfg = ProviderConfig {
            kind: ProviderKind::Remote,
            dim: 4,
            seed: 0,
            remote: Some(HttpSettings::new(url)),
            cache_dir: Some(dir.path().to_path_buf()),
        };
        let provider = build_provider(&cfg).unwrap();
        let first = provider.embed("Magnesium").unwrap();
        let second = provider.embed("Magnesium").unwrap();
        assert_eq!(first.0, vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(first, second);
        assert_eq!(server.join().unwrap(), 1);

        // a fresh provider reads the persisted cache and never calls out
        let cached = EmbeddingCache::open(dir.path().join(EmbeddingCache::file_name(ProviderKind::Remote, 4))).unwrap();
        assert_eq!(cached.get("Magnesium"), Some(&vec![1.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn remote_retries_then_fails() {
        let (url, server) = stub_server(vec![(500, "{}".into()), (500, "{}".into())]);
        let mut settings = HttpSettings::new(url);
        settings.retries = 1;
        settings.backoff = std::time::Duration::from_millis(1);
        let embedder = RemoteEmbedder::new(4, settings, EmbeddingCache::in_memory());
        match embedder.embed("x") {
            Err(Error::Provider { attempts, .. }) => assert_eq!(attempts, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(server.join().unwrap(), 2);
    }

    #[test]
    fn remote_dimension_mismatch_is_fatal() {
        let (url, server) = stub_server(vec![(200, r#"{"data":[{"embedding":[1.0,0.0]}]}"#.into())]);
        let embedder = RemoteEmbedder::new(4, HttpSettings::new(url), EmbeddingCache::in_memory());
        assert!(matches!(
            embedder.embed("x"),
            Err(Error::DimensionMismatch { expected: 4, actual: 2 })
        ));
        server.join().unwrap();
    }

    fn fixed_table(vectors: &[(&str, Vec<f64>)]) -> (Graph, LabelTable) {
        let mut g = Graph::new();
        for (id, _) in vectors {
            g.add_vertex(*id, format!("label {id}"), "").unwrap();
        }
        let table =
            LabelTable::from_vectors(&g, vectors.iter().map(|(_, v)| LabelEmbedding(v.clone())).collect()).unwrap();
        (g, table)
    }

    #[test]
    fn path_concatenation() {
        let (mut g, table) = fixed_table(&[("v1", vec![1.0, 0.0]), ("v2", vec![0.0, 1.0]), ("v3", vec![0.5, 0.5])]);
        g.add_edge("e1", "v1", "v2", "").unwrap();
        g.add_edge("e2", "v2", "v3", "").unwrap();
        let fwd = Path {
            vertices: vec![NodeIx(0), NodeIx(1)],
            edges: vec![crate::graph::EdgeIx(0)],
        };
        let emb = path_label_embedding(&fwd, |v| Some(table.vertex(v))).unwrap();
        assert_eq!(emb.0, vec![1.0, 0.0, 0.0, 1.0]);
        let rev = path_label_embedding(&fwd.reversed(), |v| Some(table.vertex(v))).unwrap();
        assert_eq!(rev.0, vec![0.0, 1.0, 1.0, 0.0]);
        let three = Path {
            vertices: vec![NodeIx(0), NodeIx(1), NodeIx(2)],
            edges: vec![crate::graph::EdgeIx(0), crate::graph::EdgeIx(1)],
        };
        assert_eq!(
            path_label_embedding(&three, |v| Some(table.vertex(v))).unwrap().0.len(),
            6
        );
        assert!(path_label_embedding(&three, |_| None).is_err());
    }

    #[test]
    fn nearest_label_cases() {
        let (g, table) = fixed_table(&[
            ("n1", vec![1.0, 0.0, 0.0]),
            ("n2", vec![0.0, 1.0, 0.0]),
            ("n3", vec![0.0, 0.0, 1.0]),
        ]);
        let (id, sim) = nearest_label(&LabelEmbedding(vec![0.0, 0.0, 1.0]), &g, &table).unwrap();
        assert_eq!((id.as_str(), sim), ("n3", 1.0));
        // orthogonal to n1 and n3, positive only on n2
        let (id, _) = nearest_label(&LabelEmbedding(vec![0.0, 0.3, 0.0]), &g, &table).unwrap();
        assert_eq!(id, "n2");
        assert!(matches!(
            nearest_label(&LabelEmbedding(vec![0.0; 3]), &g, &table),
            Err(Error::ZeroNorm)
        ));

        let (g2, t2) = fixed_table(&[("zeta", vec![1.0, 0.0]), ("alpha", vec![1.0, 0.0])]);
        let (id, _) = nearest_label(&LabelEmbedding(vec![1.0, 0.0]), &g2, &t2).unwrap();
        assert_eq!(id, "alpha");
    }
}
