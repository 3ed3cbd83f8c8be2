use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use exactrag::benchkit::{
    evaluate_records_parallel, generate_dataset, records_from_jsonl, records_to_jsonl, robustness_curve,
    synthetic_graph, PerturbationConfig, QuestionWriter, RemoteQuestionWriter, RobustnessPoint, RunReport,
    SyntheticConfig,
};
use exactrag::dominance::{train, DominanceEncoder, ModelFile, ModelMeta};
use exactrag::embeddings::{build_provider, write_cache_file, EmbeddingProvider, LabelTable, ProviderKind};
use exactrag::generation::{AnswerProvider, MockAnswerer, RemoteAnswerer};
use exactrag::graph::{parse_graph_document, parse_graph_json, Graph, GraphJson, TERMINATOR};
use exactrag::index::{IndexBundle, RStarIndex};
use exactrag::pipeline::{answer_query, dominance_embeddings, Engine};
use exactrag::query::{extract_query_graph, QueryExtractor, RemoteExtractor, ReplayExtractor, StructuredExtractor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::CliError;

pub fn load_graph(path: &Path) -> Result<Graph, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read graph file `{}`: {e}", path.display())))?;
    let parsed = if path.extension().is_some_and(|x| x == "json") {
        let json: GraphJson = serde_json::from_str(&text)
            .map_err(|e| CliError::Input(format!("invalid graph JSON `{}`: {e}", path.display())))?;
        parse_graph_json(&json)
    } else {
        parse_graph_document(&text).map_err(|e| CliError::Input(format!("graph file `{}`: {e}", path.display())))?
    };
    for d in &parsed.diagnostics {
        eprintln!(
            "warning: {}: record {} skipped: {:?}",
            path.display(),
            d.record,
            d.rejection
        );
    }
    if parsed.graph.is_empty() {
        return Err(CliError::Input(format!(
            "graph file `{}` has no vertices",
            path.display()
        )));
    }
    Ok(parsed.graph)
}

fn sibling(index: &Path, suffix: &str) -> PathBuf {
    let mut name = index.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    index.with_file_name(name)
}

fn cache_dir(index: &Path) -> Option<PathBuf> {
    index.parent().map(|p| {
        if p.as_os_str().is_empty() {
            PathBuf::from(".")
        } else {
            p.to_path_buf()
        }
    })
}

fn write_output(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| CliError::Input(format!("cannot write `{}`: {e}", p.display()))),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    Ok(serde_json::to_string_pretty(value).map_err(exactrag::Error::from)? + "\n")
}

/// Settings the index was built under; a query must agree with all of them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexMeta {
    pub fingerprint: String,
    pub provider: ProviderKind,
    pub dim: usize,
    pub seed: u64,
    pub encoder: String,
    pub dominance_dim: usize,
    pub model_sha256: Option<String>,
    pub lengths: Vec<usize>,
}

struct Encoder {
    encoder: DominanceEncoder,
    model_sha256: Option<String>,
}

/// The count-oracle provider, and any provider without a model, uses the
/// training-free encoder.
fn encoder(cfg: &RunConfig) -> Result<Encoder, CliError> {
    match (&cfg.model, cfg.provider) {
        (Some(path), kind) if kind != ProviderKind::CountOracle => {
            let bytes = fs::read(path)
                .map_err(|e| CliError::Input(format!("cannot read model file `{}`: {e}", path.display())))?;
            let file: ModelFile = serde_json::from_slice(&bytes)
                .map_err(|e| CliError::Input(format!("invalid model file `{}`: {e}", path.display())))?;
            Ok(Encoder {
                encoder: DominanceEncoder::Trained(file.to_params()?),
                model_sha256: Some(format!("{:x}", Sha256::digest(&bytes))),
            })
        }
        _ => Ok(Encoder {
            encoder: DominanceEncoder::CountOracle { dim: cfg.dominance_dim },
            model_sha256: None,
        }),
    }
}

#[derive(Serialize)]
struct LengthReport {
    l: usize,
    entries: usize,
    nodes: usize,
    height: usize,
    build_ms: f64,
}

#[derive(Serialize)]
struct BuildReport {
    vertices: usize,
    edges: usize,
    fingerprint: String,
    provider: ProviderKind,
    encoder: String,
    label_ms: f64,
    dominance_ms: f64,
    indexes: Vec<LengthReport>,
    total_ms: f64,
    files: Vec<PathBuf>,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

pub fn build_index(cfg: &RunConfig) -> Result<(), CliError> {
    let start = Instant::now();
    let graph = load_graph(cfg.require_graph()?)?;
    let index_path = cfg.require_index()?.to_path_buf();
    let enc = encoder(cfg)?;

    let t = Instant::now();
    let provider = build_provider(&cfg.provider_config(cache_dir(&index_path)))?;
    let table = LabelTable::build(&graph, provider.as_ref())?;
    let label_ms = ms(t);

    let t = Instant::now();
    let dom = dominance_embeddings(&graph, &table, &enc.encoder)?;
    let dominance_ms = ms(t);

    let mut bundle = IndexBundle::new();
    let mut indexes = Vec::new();
    for &l in &cfg.lengths {
        let t = Instant::now();
        let idx = RStarIndex::build_from_graph(&graph, l, &table, &dom, cfg.max_fanout)?;
        let stats = idx.stats();
        indexes.push(LengthReport {
            l,
            entries: stats.entry_count,
            nodes: idx.node_count(),
            height: idx.height(),
            build_ms: ms(t),
        });
        bundle.insert(idx)?;
    }
    bundle.save(&index_path)?;

    let meta = IndexMeta {
        fingerprint: graph.fingerprint(),
        provider: cfg.provider,
        dim: cfg.dim,
        seed: cfg.seed,
        encoder: enc.encoder.kind().to_string(),
        dominance_dim: enc.encoder.dim(),
        model_sha256: enc.model_sha256,
        lengths: bundle.lengths(),
    };
    let meta_path = sibling(&index_path, ".meta.json");
    fs::write(&meta_path, to_json(&meta)?)?;
    let labels_path = sibling(&index_path, ".labels.jsonl");
    write_cache_file(&labels_path, &graph, &table)?;
    let dom_path = sibling(&index_path, ".dominance.json");
    let dom_map: BTreeMap<&str, &[f64]> = graph
        .node_indices()
        .map(|v| (graph.id(v), dom[v.index()].0.as_slice()))
        .collect();
    fs::write(&dom_path, to_json(&dom_map)?)?;

    let report = BuildReport {
        vertices: graph.vertex_count(),
        edges: graph.edge_count(),
        fingerprint: meta.fingerprint,
        provider: cfg.provider,
        encoder: meta.encoder,
        label_ms,
        dominance_ms,
        indexes,
        total_ms: ms(start),
        files: vec![index_path, meta_path, labels_path, dom_path],
    };
    write_output(cfg_out(cfg), &to_json(&report)?)
}

fn cfg_out(cfg: &RunConfig) -> Option<&Path> {
    cfg.out.as_deref()
}

/// Loads graph, index and settings, refusing any mismatch between them.
fn open_engine(cfg: &RunConfig) -> Result<(Engine, Box<dyn EmbeddingProvider>), CliError> {
    let graph = load_graph(cfg.require_graph()?)?;
    let index_path = cfg.require_index()?;
    if !index_path.exists() {
        return Err(CliError::Input(format!(
            "index file `{}` does not exist; run build-index first",
            index_path.display()
        )));
    }
    let meta_path = sibling(index_path, ".meta.json");
    let meta: IndexMeta = serde_json::from_str(
        &fs::read_to_string(&meta_path)
            .map_err(|e| CliError::Input(format!("cannot read index metadata `{}`: {e}", meta_path.display())))?,
    )
    .map_err(|e| CliError::Input(format!("invalid index metadata `{}`: {e}", meta_path.display())))?;
    let enc = encoder(cfg)?;
    let mismatches: Vec<String> = [
        (
            "provider",
            meta.provider.as_str().to_string(),
            cfg.provider.as_str().to_string(),
        ),
        ("dim", meta.dim.to_string(), cfg.dim.to_string()),
        ("seed", meta.seed.to_string(), cfg.seed.to_string()),
        ("encoder", meta.encoder.clone(), enc.encoder.kind().to_string()),
        (
            "dominance_dim",
            meta.dominance_dim.to_string(),
            enc.encoder.dim().to_string(),
        ),
        (
            "model",
            meta.model_sha256.clone().unwrap_or_default(),
            enc.model_sha256.clone().unwrap_or_default(),
        ),
    ]
    .into_iter()
    .filter(|(_, built, now)| built != now)
    .map(|(name, built, now)| format!("{name}: index built with `{built}`, run uses `{now}`"))
    .collect();
    if !mismatches.is_empty() {
        return Err(CliError::State(mismatches.join("; ")));
    }
    if meta.fingerprint != graph.fingerprint() {
        return Err(exactrag::Error::FingerprintMismatch {
            index: meta.fingerprint,
            graph: graph.fingerprint(),
        }
        .into());
    }
    let bundle = IndexBundle::load(index_path)?;
    let provider = build_provider(&cfg.provider_config(cache_dir(index_path)))?;
    let table = LabelTable::build(&graph, provider.as_ref())?;
    let engine = Engine::from_parts(graph, table, enc.encoder, bundle)?;
    Ok((engine, provider))
}

fn answerer(cfg: &RunConfig) -> Box<dyn AnswerProvider> {
    match &cfg.remote.answer_endpoint {
        Some(e) if cfg.provider == ProviderKind::Remote => Box::new(RemoteAnswerer::new(cfg.http(e))),
        _ => Box::new(MockAnswerer),
    }
}

/// Grammar text is parsed directly; anything else goes through canned
/// extractions or the remote extractor.
fn extractor_for(
    question: &str,
    replay: Option<&ReplayExtractor>,
    cfg: &RunConfig,
) -> Result<Box<dyn QueryExtractor>, CliError> {
    if question.contains(TERMINATOR) {
        return Ok(Box::new(StructuredExtractor));
    }
    if let Some(r) = replay {
        return Ok(Box::new(r.clone()));
    }
    match &cfg.remote.extract_endpoint {
        Some(e) => Ok(Box::new(RemoteExtractor::new(cfg.http(e)))),
        None => Err(CliError::Input(
            "natural-language questions need --replay or a remote extract endpoint; pass the extraction grammar to bypass".into(),
        )),
    }
}

pub fn query(cfg: &RunConfig, question: Option<&str>, replay: Option<&Path>) -> Result<(), CliError> {
    let questions: Vec<String> = match question {
        Some(q) => vec![q.to_string()],
        None => io::stdin()
            .lock()
            .lines()
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .filter(|l| !l.trim().is_empty())
            .collect(),
    };
    if questions.is_empty() {
        return Err(CliError::Input("no question given (use --question or stdin)".into()));
    }
    let replay = replay
        .map(|p| ReplayExtractor::load(p).map_err(|e| CliError::Input(format!("replay file `{}`: {e}", p.display()))))
        .transpose()?;
    let (engine, provider) = open_engine(cfg)?;
    let answerer = answerer(cfg);
    let pipeline = cfg.pipeline();
    let mut lines = String::new();
    for q in &questions {
        let extractor = extractor_for(q, replay.as_ref(), cfg)?;
        let graph = extract_query_graph(q, extractor.as_ref())?;
        let outcome = answer_query(
            &engine,
            &graph,
            q,
            Some(provider.as_ref()),
            answerer.as_ref(),
            &pipeline,
        )?;
        lines.push_str(&serde_json::to_string(&outcome).map_err(exactrag::Error::from)?);
        lines.push('\n');
    }
    write_output(cfg_out(cfg), &lines)
}

#[derive(Serialize)]
struct TrainReport {
    vertices: usize,
    pairs: usize,
    epochs: usize,
    final_loss: f64,
    max_violation: f64,
    converged: bool,
    model: PathBuf,
    elapsed_ms: f64,
}

pub fn train_model(cfg: &RunConfig) -> Result<(), CliError> {
    let start = Instant::now();
    let graph = load_graph(cfg.require_graph()?)?;
    let model_path = cfg
        .model
        .clone()
        .ok_or_else(|| CliError::Input("no model output path given (use --model)".into()))?;
    let provider = build_provider(&cfg.provider_config(None))?;
    let table = LabelTable::build(&graph, provider.as_ref())?;
    let tc = cfg.train_config();
    let out = train(&graph, &table, &tc)?;
    let file = ModelFile::from_params(
        &out.params,
        ModelMeta {
            seed: tc.seed,
            epochs: out.epochs,
            final_loss: out.final_loss,
            converged: out.converged,
        },
    );
    fs::write(&model_path, to_json(&file)?)
        .map_err(|e| CliError::Input(format!("cannot write model `{}`: {e}", model_path.display())))?;
    if !out.converged {
        eprintln!(
            "warning: training stopped after {} epochs at loss {:.3e}; the model keeps the best parameters",
            out.epochs, out.final_loss
        );
    }
    let report = TrainReport {
        vertices: graph.vertex_count(),
        pairs: out.pair_count,
        epochs: out.epochs,
        final_loss: out.final_loss,
        max_violation: out.max_violation,
        converged: out.converged,
        model: model_path,
        elapsed_ms: ms(start),
    };
    let text = to_json(&report)?;
    io::stdout().lock().write_all(text.as_bytes())?;
    Ok(())
}

pub fn gen_dataset(cfg: &RunConfig, n: usize) -> Result<(), CliError> {
    let graph = load_graph(cfg.require_graph()?)?;
    let writer: Option<Box<dyn QuestionWriter>> = match &cfg.remote.question_endpoint {
        Some(e) if cfg.provider == ProviderKind::Remote => Some(Box::new(RemoteQuestionWriter::new(cfg.http(e)))),
        _ => None,
    };
    let records = generate_dataset(&graph, n, cfg.seed, writer.as_deref())?;
    write_output(cfg_out(cfg), &records_to_jsonl(&records)?)
}

pub fn synth_graph(cfg: &RunConfig, vertices: usize, hubs: usize) -> Result<(), CliError> {
    let sc = SyntheticConfig {
        vertices,
        hubs,
        ..SyntheticConfig::default()
    };
    let g = synthetic_graph(&sc, cfg.seed)?;
    write_output(cfg_out(cfg), &(g.to_document() + "\n"))
}

#[derive(Serialize)]
struct EvalOutput {
    #[serde(flatten)]
    run: RunReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    robustness: Option<Vec<RobustnessPoint>>,
}

pub fn eval(cfg: &RunConfig, dataset: &Path, csv: Option<&Path>, perturb: &[usize]) -> Result<(), CliError> {
    let text = fs::read_to_string(dataset)
        .map_err(|e| CliError::Input(format!("cannot read dataset `{}`: {e}", dataset.display())))?;
    let records = records_from_jsonl(&text)?;
    let (engine, provider) = open_engine(cfg)?;
    let answerer = answerer(cfg);
    let pipeline = cfg.pipeline();
    let run = evaluate_records_parallel(
        &engine,
        &records,
        Some(provider.as_ref()),
        answerer.as_ref(),
        &pipeline,
        cfg.jobs,
    )?;
    if let Some(path) = csv {
        fs::write(path, run.report.to_csv())
            .map_err(|e| CliError::Input(format!("cannot write `{}`: {e}", path.display())))?;
    }
    let robustness = if perturb.is_empty() {
        None
    } else {
        let encoder = engine.encoder.clone();
        let build = |g: Graph| Engine::build(g, provider.as_ref(), encoder.clone(), &cfg.lengths, cfg.max_fanout);
        Some(robustness_curve(
            &engine.graph,
            &records,
            perturb,
            cfg.seed,
            &PerturbationConfig::default(),
            &build,
            Some(provider.as_ref()),
            answerer.as_ref(),
            &pipeline,
        )?)
    };
    write_output(cfg_out(cfg), &to_json(&EvalOutput { run, robustness })?)
}
