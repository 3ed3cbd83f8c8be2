use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("graph document is missing the `<|COMPLETE|>` terminator")]
    MissingTerminator,

    #[error("unknown vertex `{0}`")]
    UnknownVertex(String),

    #[error("query graph is disconnected; components: {components:?}")]
    Disconnected { components: Vec<Vec<String>> },

    #[error("query graph has no edges")]
    NoEdges,

    #[error("path length {l} is outside the valid range [{min}, {max}]")]
    InvalidPathLength { l: usize, min: usize, max: usize },

    #[error("edge `{edge}` lies on no simple path of length {l}")]
    UncoverableEdge { edge: String, l: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("missing embedding for `{0}`")]
    MissingEmbedding(String),

    #[error("probe embedding has zero norm")]
    ZeroNorm,

    #[error("graph is empty")]
    EmptyGraph,

    #[error("substructure does not belong to its star: {0}")]
    NotASubstructure(String),

    #[error("training diverged at epoch {epoch} (loss is not finite)")]
    Diverged { epoch: usize },

    #[error("index path length {index} differs from query path length {query}")]
    PathLengthMismatch { index: usize, query: usize },

    #[error("query path has no known position: {0}")]
    UnmatchableWildcard(String),

    #[error("unknown vertex `{0}` lies on no plan path")]
    UncoveredUnknown(String),

    #[error("{what}: {count} combinations exceed the cap of {cap}; raise the cap or refine the query")]
    CapExceeded { what: &'static str, count: u128, cap: u128 },

    #[error("index was built for a different graph (index {index}, graph {graph})")]
    FingerprintMismatch { index: String, graph: String },

    #[error("brute-force matcher is limited to {limit} data vertices, graph has {actual}")]
    GuardExceeded { limit: usize, actual: usize },

    #[error("nothing to render: empty subgraph and empty fallback")]
    EmptyPrompt,

    #[error("at least one candidate answer is required")]
    NoCandidates,

    #[error("no qualifying bridge-star pair in graph")]
    NoBridgeStar,

    #[error("{records} records but {answers} answers")]
    LengthMismatch { records: usize, answers: usize },

    #[error("could not parse provider output: {message}; raw response: {raw:?}")]
    UnparseableOutput { message: String, raw: String },

    #[error("provider request failed after {attempts} attempts: {message}")]
    Provider { attempts: usize, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed index file: {0}")]
    IndexFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
