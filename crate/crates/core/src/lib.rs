//! Structure-guided exact retrieval over knowledge graphs.
//!
//! Retrieval is modeled as subgraph matching: data-graph paths are indexed
//! by label embeddings and dominance embeddings in an R*-tree, query paths
//! are matched under label equality plus element-wise dominance, and the
//! surviving path candidates are joined into exact subgraphs that feed a
//! prompt for a pluggable answer generator.

pub mod benchkit;
pub mod dominance;
pub mod embeddings;
pub mod error;
pub mod generation;
pub mod graph;
mod http;
pub mod index;
pub mod matcher;
pub mod pipeline;
pub mod query;

pub use error::{Error, Result};
pub use http::HttpSettings;
