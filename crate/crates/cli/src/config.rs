use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use exactrag::dominance::{TrainConfig, DEFAULT_DOMINANCE_DIM, DEFAULT_HIDDEN_DIM};
use exactrag::embeddings::{ProviderConfig, ProviderKind, DEFAULT_LABEL_DIM};
use exactrag::generation::DEFAULT_TOKEN_BUDGET;
use exactrag::graph::DEFAULT_SUBSTRUCTURE_CAP;
use exactrag::matcher::{MatchConfig, DEFAULT_ASSEMBLY_CAP, DEFAULT_FALLBACK_CAP};
use exactrag::pipeline::{PipelineConfig, DEFAULT_INDEX_LENGTHS};
use exactrag::query::DEFAULT_COMPLETION_CAP;
use exactrag::HttpSettings;
use serde::Deserialize;

use crate::CliError;

pub const DEFAULT_TOKEN_ENV: &str = "EXACTRAG_API_TOKEN";

/// Everything a command may need. Loaded from an optional TOML file, then
/// overridden by flags.
#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub graph: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub model: Option<PathBuf>,
    /// Report or data output; stdout when unset.
    pub out: Option<PathBuf>,
    pub provider: ProviderKind,
    pub dim: usize,
    pub dominance_dim: usize,
    pub seed: u64,
    /// Path lengths indexed by `build-index`.
    pub lengths: Vec<usize>,
    /// Preferred query path length.
    pub l: Option<usize>,
    pub jobs: usize,
    pub token_budget: usize,
    pub max_fanout: Option<usize>,
    pub caps: Caps,
    pub train: TrainSection,
    pub remote: RemoteSection,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Caps {
    pub completions: usize,
    pub assembly: usize,
    pub fallback: usize,
    pub substructures: usize,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub tolerance: f64,
    pub hidden_dim: usize,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteSection {
    pub embed_endpoint: Option<String>,
    pub extract_endpoint: Option<String>,
    pub answer_endpoint: Option<String>,
    pub question_endpoint: Option<String>,
    /// Environment variable holding the bearer token.
    pub token_env: Option<String>,
    pub timeout_secs: Option<u64>,
    pub retries: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            graph: None,
            index: None,
            model: None,
            out: None,
            provider: ProviderKind::CountOracle,
            dim: DEFAULT_LABEL_DIM,
            dominance_dim: DEFAULT_DOMINANCE_DIM,
            seed: 0,
            lengths: DEFAULT_INDEX_LENGTHS.to_vec(),
            l: None,
            jobs: 1,
            token_budget: DEFAULT_TOKEN_BUDGET,
            max_fanout: None,
            caps: Caps::default(),
            train: TrainSection::default(),
            remote: RemoteSection::default(),
        }
    }
}

impl Default for Caps {
    fn default() -> Self {
        Caps {
            completions: DEFAULT_COMPLETION_CAP,
            assembly: DEFAULT_ASSEMBLY_CAP,
            fallback: DEFAULT_FALLBACK_CAP,
            substructures: DEFAULT_SUBSTRUCTURE_CAP,
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            learning_rate: t.learning_rate,
            max_epochs: t.max_epochs,
            batch_size: t.batch_size,
            tolerance: t.tolerance,
            hidden_dim: DEFAULT_HIDDEN_DIM,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read config file `{}`: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Input(format!("invalid config file `{}`: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let caps = [
            ("caps.completions", self.caps.completions),
            ("caps.assembly", self.caps.assembly),
            ("caps.fallback", self.caps.fallback),
            ("caps.substructures", self.caps.substructures),
            ("dim", self.dim),
            ("dominance_dim", self.dominance_dim),
            ("jobs", self.jobs),
        ];
        if let Some((name, _)) = caps.iter().find(|(_, v)| *v == 0) {
            return Err(CliError::Input(format!("`{name}` must be positive")));
        }
        if self.dominance_dim < 2 {
            return Err(CliError::Input("`dominance_dim` must be at least 2".into()));
        }
        if self.lengths.is_empty() || self.lengths.contains(&0) {
            return Err(CliError::Input("`lengths` must list positive path lengths".into()));
        }
        Ok(())
    }

    pub fn require_graph(&self) -> Result<&Path, CliError> {
        self.graph
            .as_deref()
            .ok_or_else(|| CliError::Input("no graph file given (use --graph or `graph` in the config)".into()))
    }

    pub fn require_index(&self) -> Result<&Path, CliError> {
        self.index
            .as_deref()
            .ok_or_else(|| CliError::Input("no index file given (use --index or `index` in the config)".into()))
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            l: self.l,
            completion_cap: self.caps.completions,
            matching: MatchConfig {
                assembly_cap: self.caps.assembly,
                fallback_cap: self.caps.fallback,
                audit: false,
            },
            token_budget: self.token_budget,
            normalize: true,
            similarity_threshold: None,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.train.learning_rate,
            max_epochs: self.train.max_epochs,
            batch_size: self.train.batch_size,
            tolerance: self.train.tolerance,
            seed: self.seed,
            hidden_dim: self.train.hidden_dim,
            dominance_dim: self.dominance_dim,
            substructure_cap: self.caps.substructures,
            ..TrainConfig::default()
        }
    }

    /// HTTP settings for one remote endpoint; the token comes only from the
    /// environment.
    pub fn http(&self, endpoint: &str) -> HttpSettings {
        let mut s = HttpSettings::new(endpoint);
        let var = self.remote.token_env.as_deref().unwrap_or(DEFAULT_TOKEN_ENV);
        s.token = std::env::var(var).ok().filter(|t| !t.is_empty());
        if let Some(t) = self.remote.timeout_secs {
            s.timeout = Duration::from_secs(t);
        }
        if let Some(r) = self.remote.retries {
            s.retries = r;
        }
        s
    }

    pub fn provider_config(&self, cache_dir: Option<PathBuf>) -> ProviderConfig {
        ProviderConfig {
            kind: self.provider,
            dim: self.dim,
            seed: self.seed,
            remote: self.remote.embed_endpoint.as_deref().map(|e| self.http(e)),
            cache_dir,
        }
    }
}
