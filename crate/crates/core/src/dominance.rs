//! Dominance embeddings.
//!
//! A single-head graph-attention layer encodes a star subgraph into a
//! non-negative vector `o(g)`; training drives `o(s) ⪯ o(g)` element-wise for
//! every sampled substructure `s` of every star `g`. A training-free
//! count-based encoder with exact dominance is provided alongside.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embeddings::{label_hash, LabelTable};
use crate::error::{Error, Result};
use crate::graph::{enumerate_substructures, star_subgraph, Graph, NodeIx, Path, StarSubgraph};

pub const DEFAULT_HIDDEN_DIM: usize = 32;
pub const DEFAULT_DOMINANCE_DIM: usize = 8;
const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DominanceEmbedding(pub Vec<f64>);

impl DominanceEmbedding {
    /// `self ⪯ other` within `eps` in every coordinate.
    pub fn dominated_by(&self, other: &DominanceEmbedding, eps: f64) -> bool {
        dominated(&self.0, &other.0, eps)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathDominanceEmbedding(pub Vec<f64>);

pub fn dominated(lower: &[f64], upper: &[f64], eps: f64) -> bool {
    lower.len() == upper.len() && lower.iter().zip(upper).all(|(a, b)| *a <= *b + eps)
}

/// Position-ordered concatenation of node dominance embeddings.
pub fn path_dominance_embedding<'a, F>(path: &Path, lookup: F) -> Result<PathDominanceEmbedding>
where
    F: Fn(NodeIx) -> Option<&'a DominanceEmbedding>,
{
    let mut out = Vec::new();
    for &v in &path.vertices {
        let e = lookup(v).ok_or_else(|| Error::MissingEmbedding(format!("dominance embedding of #{}", v.0)))?;
        out.extend_from_slice(&e.0);
    }
    Ok(PathDominanceEmbedding(out))
}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
struct Mat<'a> {
    rows: usize,
    cols: usize,
    data: &'a [f64],
}

impl Mat<'_> {
    fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|r| {
                let row = &self.data[r * self.cols..(r + 1) * self.cols];
                row.iter().zip(x).map(|(a, b)| a * b).sum()
            })
            .collect()
    }

    fn t_mul_vec(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (r, yr) in y.iter().enumerate().take(self.rows) {
            if *yr == 0.0 {
                continue;
            }
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * yr;
            }
        }
        out
    }
}

fn add_outer(target: &mut [f64], cols: usize, left: &[f64], right: &[f64]) {
    for (r, l) in left.iter().enumerate() {
        if *l == 0.0 {
            continue;
        }
        let row = &mut target[r * cols..(r + 1) * cols];
        for (t, x) in row.iter_mut().zip(right) {
            *t += l * x;
        }
    }
}

fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

fn leaky_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// GAT parameters: input projection `w_in` (hidden × input), attention vector
/// `attn` (2 × hidden) and readout `w_out` (dominance × hidden).
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub dominance_dim: usize,
    pub w_in: Vec<f64>,
    pub attn: Vec<f64>,
    pub w_out: Vec<f64>,
}

impl ModelParams {
    /// Glorot-uniform initialization.
    pub fn init(input_dim: usize, hidden_dim: usize, dominance_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut glorot = |fan_in: usize, fan_out: usize, n: usize| -> Vec<f64> {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..n).map(|_| rng.gen_range(-limit..limit)).collect()
        };
        ModelParams {
            input_dim,
            hidden_dim,
            dominance_dim,
            w_in: glorot(input_dim, hidden_dim, hidden_dim * input_dim),
            attn: glorot(2 * hidden_dim, 1, 2 * hidden_dim),
            w_out: glorot(hidden_dim, dominance_dim, dominance_dim * hidden_dim),
        }
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams {
            w_in: vec![0.0; self.w_in.len()],
            attn: vec![0.0; self.attn.len()],
            w_out: vec![0.0; self.w_out.len()],
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let expect = |name: &str, len: usize, want: usize| {
            if len == want {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} has {len} entries, expected {want}")))
            }
        };
        expect("W_in", self.w_in.len(), self.hidden_dim * self.input_dim)?;
        expect("a", self.attn.len(), 2 * self.hidden_dim)?;
        expect("W_out", self.w_out.len(), self.dominance_dim * self.hidden_dim)?;
        if self.all().any(|x| !x.is_finite()) {
            return Err(Error::Config("model parameters must be finite".into()));
        }
        Ok(())
    }

    fn all(&self) -> impl Iterator<Item = &f64> {
        self.w_in.iter().chain(&self.attn).chain(&self.w_out)
    }

    pub fn param_count(&self) -> usize {
        self.w_in.len() + self.attn.len() + self.w_out.len()
    }

    /// Flat view in `w_in, attn, w_out` order.
    pub fn get(&self, i: usize) -> f64 {
        let (a, b) = (self.w_in.len(), self.w_in.len() + self.attn.len());
        match i {
            i if i < a => self.w_in[i],
            i if i < b => self.attn[i - a],
            i => self.w_out[i - b],
        }
    }

    pub fn set(&mut self, i: usize, value: f64) {
        let (a, b) = (self.w_in.len(), self.w_in.len() + self.attn.len());
        match i {
            i if i < a => self.w_in[i] = value,
            i if i < b => self.attn[i - a] = value,
            i => self.w_out[i - b] = value,
        }
    }

    fn axpy(&mut self, alpha: f64, g: &ModelParams) {
        for (p, d) in self.w_in.iter_mut().zip(&g.w_in) {
            *p += alpha * d;
        }
        for (p, d) in self.attn.iter_mut().zip(&g.attn) {
            *p += alpha * d;
        }
        for (p, d) in self.w_out.iter_mut().zip(&g.w_out) {
            *p += alpha * d;
        }
    }

    fn w_in_mat(&self) -> Mat<'_> {
        Mat {
            rows: self.hidden_dim,
            cols: self.input_dim,
            data: &self.w_in,
        }
    }

    fn w_out_mat(&self) -> Mat<'_> {
        Mat {
            rows: self.dominance_dim,
            cols: self.hidden_dim,
            data: &self.w_out,
        }
    }
}

/// Intermediates of one attention layer over a star.
///
/// Member 0 is the center. Every member attends over itself plus its star
/// neighbors: the center over all members, a leaf over itself and the center.
#[derive(Clone, Debug)]
pub struct NodeUpdate {
    pub neighborhoods: Vec<Vec<usize>>,
    pub projected: Vec<Vec<f64>>,
    /// Raw scores `aᵀ[Wx_i ‖ Wx_j]` before the leaky activation.
    pub scores: Vec<Vec<f64>>,
    pub attention: Vec<Vec<f64>>,
    pub aggregated: Vec<Vec<f64>>,
    pub updated: Vec<Vec<f64>>,
}

fn star_neighborhoods(members: usize) -> Vec<Vec<usize>> {
    (0..members)
        .map(|i| if i == 0 { (0..members).collect() } else { vec![i, 0] })
        .collect()
}

/// Attention-weighted update of every star member; `inputs[0]` is the center.
pub fn gat_node_update(inputs: &[&[f64]], params: &ModelParams) -> Result<NodeUpdate> {
    for x in inputs {
        if x.len() != params.input_dim {
            return Err(Error::DimensionMismatch {
                expected: params.input_dim,
                actual: x.len(),
            });
        }
    }
    let w = params.w_in_mat();
    let projected: Vec<Vec<f64>> = inputs.iter().map(|x| w.mul_vec(x)).collect();
    let (a_self, a_other) = params.attn.split_at(params.hidden_dim);
    let self_part: Vec<f64> = projected.iter().map(|h| dot(a_self, h)).collect();
    let other_part: Vec<f64> = projected.iter().map(|h| dot(a_other, h)).collect();

    let neighborhoods = star_neighborhoods(inputs.len());
    let mut scores = Vec::with_capacity(inputs.len());
    let mut attention = Vec::with_capacity(inputs.len());
    let mut aggregated = Vec::with_capacity(inputs.len());
    let mut updated = Vec::with_capacity(inputs.len());
    for (i, hood) in neighborhoods.iter().enumerate() {
        let s: Vec<f64> = hood.iter().map(|&j| self_part[i] + other_part[j]).collect();
        let e: Vec<f64> = s.iter().map(|x| leaky(*x)).collect();
        let max = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = e.iter().map(|x| (x - max).exp()).collect();
        let total: f64 = exp.iter().sum();
        let alpha: Vec<f64> = exp.iter().map(|x| x / total).collect();
        let mut z = vec![0.0; params.hidden_dim];
        for (&j, a) in hood.iter().zip(&alpha) {
            for (zk, hk) in z.iter_mut().zip(&projected[j]) {
                *zk += a * hk;
            }
        }
        updated.push(z.iter().map(|x| relu(*x)).collect());
        aggregated.push(z);
        scores.push(s);
        attention.push(alpha);
    }
    Ok(NodeUpdate {
        neighborhoods,
        projected,
        scores,
        attention,
        aggregated,
        updated,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Clone, Debug)]
struct StarForward {
    update: NodeUpdate,
    pooled: Vec<f64>,
    readout: Vec<f64>,
    output: Vec<f64>,
}

fn star_forward(inputs: &[&[f64]], params: &ModelParams) -> Result<StarForward> {
    let update = gat_node_update(inputs, params)?;
    let mut pooled = vec![0.0; params.hidden_dim];
    for x in &update.updated {
        for (p, v) in pooled.iter_mut().zip(x) {
            *p += v;
        }
    }
    let readout = params.w_out_mat().mul_vec(&pooled);
    let output = readout.iter().map(|x| relu(*x)).collect();
    Ok(StarForward {
        update,
        pooled,
        readout,
        output,
    })
}

/// Accumulates `∂L/∂params` given `∂L/∂o` for one star forward pass.
fn star_backward(
    fwd: &StarForward,
    inputs: &[&[f64]],
    params: &ModelParams,
    d_output: &[f64],
    grads: &mut ModelParams,
) {
    let hidden = params.hidden_dim;
    let d_readout: Vec<f64> = d_output
        .iter()
        .zip(&fwd.readout)
        .map(|(g, r)| if *r > 0.0 { *g } else { 0.0 })
        .collect();
    if d_readout.iter().all(|g| *g == 0.0) {
        return;
    }
    add_outer(&mut grads.w_out, hidden, &d_readout, &fwd.pooled);
    let d_pooled = params.w_out_mat().t_mul_vec(&d_readout);

    let upd = &fwd.update;
    let members = inputs.len();
    let (a_self, a_other) = params.attn.split_at(hidden);
    let mut d_projected = vec![vec![0.0; hidden]; members];
    let mut d_self_part = vec![0.0; members];
    let mut d_other_part = vec![0.0; members];
    for i in 0..members {
        let d_z: Vec<f64> = d_pooled
            .iter()
            .zip(&upd.aggregated[i])
            .map(|(g, z)| if *z > 0.0 { *g } else { 0.0 })
            .collect();
        let hood = &upd.neighborhoods[i];
        let alpha = &upd.attention[i];
        let mut d_alpha = Vec::with_capacity(hood.len());
        for (&j, a) in hood.iter().zip(alpha) {
            for (dh, dz) in d_projected[j].iter_mut().zip(&d_z) {
                *dh += a * dz;
            }
            d_alpha.push(dot(&d_z, &upd.projected[j]));
        }
        let weighted: f64 = alpha.iter().zip(&d_alpha).map(|(a, d)| a * d).sum();
        for (k, &j) in hood.iter().enumerate() {
            let d_e = alpha[k] * (d_alpha[k] - weighted);
            let d_s = d_e * leaky_grad(upd.scores[i][k]);
            d_self_part[i] += d_s;
            d_other_part[j] += d_s;
        }
    }
    for j in 0..members {
        let h = &upd.projected[j];
        for k in 0..hidden {
            grads.attn[k] += d_self_part[j] * h[k];
            grads.attn[hidden + k] += d_other_part[j] * h[k];
            d_projected[j][k] += d_self_part[j] * a_self[k] + d_other_part[j] * a_other[k];
        }
        add_outer(&mut grads.w_in, params.input_dim, &d_projected[j], inputs[j]);
    }
}

fn star_inputs<'a>(star: &StarSubgraph, table: &'a LabelTable) -> Vec<&'a [f64]> {
    star.members()
        .into_iter()
        .map(|v| table.vertex(v).0.as_slice())
        .collect()
}

/// `o(g) = relu(W_out · Σ_j x'_j)` over the members of `star`.
pub fn star_embedding(star: &StarSubgraph, table: &LabelTable, params: &ModelParams) -> Result<DominanceEmbedding> {
    let inputs = star_inputs(star, table);
    Ok(DominanceEmbedding(star_forward(&inputs, params)?.output))
}

/// Star embedding from explicit member inputs (center first).
pub fn star_embedding_from_inputs(inputs: &[&[f64]], params: &ModelParams) -> Result<DominanceEmbedding> {
    Ok(DominanceEmbedding(star_forward(inputs, params)?.output))
}

/// `Σ ‖max(0, o(s) − o(g))‖²` over `(o(s), o(g))` pairs.
pub fn hinge_loss(pairs: &[(DominanceEmbedding, DominanceEmbedding)]) -> f64 {
    pairs
        .iter()
        .map(|(s, g)| s.0.iter().zip(&g.0).map(|(a, b)| (a - b).max(0.0).powi(2)).sum::<f64>())
        .sum()
}

/// One training sample: a full star and one of its proper substructures.
#[derive(Clone, Debug)]
pub struct TrainingPair {
    pub star: StarSubgraph,
    pub substructure: StarSubgraph,
}

pub fn dominance_loss(pairs: &[TrainingPair], table: &LabelTable, params: &ModelParams) -> Result<f64> {
    Ok(evaluate_pairs(pairs, table, params)?.loss)
}

/// Epoch loss plus the largest single-coordinate violation `o(s)[i] − o(g)[i]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairStats {
    pub loss: f64,
    pub max_violation: f64,
    pub violating_pairs: usize,
}

pub fn evaluate_pairs(pairs: &[TrainingPair], table: &LabelTable, params: &ModelParams) -> Result<PairStats> {
    let mut full: std::collections::HashMap<NodeIx, DominanceEmbedding> = std::collections::HashMap::new();
    let mut embedded = Vec::with_capacity(pairs.len());
    for p in pairs {
        if !p.substructure.is_proper_substructure_of(&p.star) {
            return Err(Error::NotASubstructure(format!(
                "center #{} with {} leaves vs star center #{} with {} leaves",
                p.substructure.center.0,
                p.substructure.leaves.len(),
                p.star.center.0,
                p.star.leaves.len()
            )));
        }
        let g = match full.get(&p.star.center) {
            Some(e) => e.clone(),
            None => {
                let e = star_embedding(&p.star, table, params)?;
                full.insert(p.star.center, e.clone());
                e
            }
        };
        embedded.push((star_embedding(&p.substructure, table, params)?, g));
    }
    let mut max_violation: f64 = 0.0;
    let mut violating_pairs = 0;
    for (s, g) in &embedded {
        let v =
            s.0.iter()
                .zip(&g.0)
                .map(|(a, b)| a - b)
                .fold(f64::NEG_INFINITY, f64::max);
        if v > 0.0 {
            violating_pairs += 1;
        }
        max_violation = max_violation.max(v);
    }
    Ok(PairStats {
        loss: hinge_loss(&embedded),
        max_violation,
        violating_pairs,
    })
}

/// Loss and its gradient over a batch.
pub fn loss_and_gradient(
    pairs: &[TrainingPair],
    table: &LabelTable,
    params: &ModelParams,
) -> Result<(f64, ModelParams)> {
    let mut grads = params.zeros_like();
    let mut loss = 0.0;
    for p in pairs {
        let s_in = star_inputs(&p.substructure, table);
        let g_in = star_inputs(&p.star, table);
        let s_fwd = star_forward(&s_in, params)?;
        let g_fwd = star_forward(&g_in, params)?;
        let excess: Vec<f64> = s_fwd
            .output
            .iter()
            .zip(&g_fwd.output)
            .map(|(s, g)| (s - g).max(0.0))
            .collect();
        let pair_loss: f64 = excess.iter().map(|x| x * x).sum();
        if pair_loss == 0.0 {
            continue;
        }
        loss += pair_loss;
        let d_s: Vec<f64> = excess.iter().map(|x| 2.0 * x).collect();
        let d_g: Vec<f64> = d_s.iter().map(|x| -x).collect();
        star_backward(&s_fwd, &s_in, params, &d_s, &mut grads);
        star_backward(&g_fwd, &g_in, params, &d_g, &mut grads);
    }
    Ok((loss, grads))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub tolerance: f64,
    pub seed: u64,
    pub hidden_dim: usize,
    pub dominance_dim: usize,
    pub substructure_cap: usize,
    /// Largest per-coordinate violation tolerated at convergence.
    pub violation_tolerance: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.2,
            max_epochs: 5000,
            batch_size: 16,
            tolerance: 1e-6,
            seed: 0,
            hidden_dim: DEFAULT_HIDDEN_DIM,
            dominance_dim: DEFAULT_DOMINANCE_DIM,
            substructure_cap: crate::graph::DEFAULT_SUBSTRUCTURE_CAP,
            violation_tolerance: 1e-6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(self.tolerance >= 0.0) || !(self.violation_tolerance >= 0.0) {
            return Err(Error::Config("loss tolerance must be non-negative".into()));
        }
        if self.batch_size == 0 || self.hidden_dim == 0 || self.dominance_dim == 0 {
            return Err(Error::Config("batch size and model dimensions must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub epochs: usize,
    pub final_loss: f64,
    pub max_violation: f64,
    pub converged: bool,
    pub pair_count: usize,
}

/// Every (star, substructure) pair of the graph, stars with no leaves skipped.
pub fn training_pairs(g: &Graph, cap: usize, seed: u64) -> Vec<TrainingPair> {
    let mut pairs = Vec::new();
    for v in g.node_indices() {
        let star = star_subgraph(g, v).expect("vertex exists");
        if star.leaves.is_empty() {
            continue;
        }
        for sub in enumerate_substructures(g, &star, cap, seed) {
            pairs.push(TrainingPair {
                star: star.clone(),
                substructure: sub,
            });
        }
    }
    pairs
}

/// Mini-batch gradient descent until the epoch loss drops to the tolerance
/// and no pair violates dominance by more than `violation_tolerance`.
///
/// Returns the lowest-loss parameters with `converged = false` when
/// `max_epochs` runs out first.
pub fn train(g: &Graph, table: &LabelTable, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if g.is_empty() {
        return Err(Error::EmptyGraph);
    }
    let mut pairs = training_pairs(g, cfg.substructure_cap, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    pairs.shuffle(&mut rng);
    let mut params = ModelParams::init(table.dim(), cfg.hidden_dim, cfg.dominance_dim, cfg.seed);
    let done = |st: &PairStats| st.loss <= cfg.tolerance && st.max_violation <= cfg.violation_tolerance;
    let outcome = |params: ModelParams, epochs: usize, st: PairStats, converged: bool| TrainOutcome {
        params,
        epochs,
        final_loss: st.loss,
        max_violation: st.max_violation,
        converged,
        pair_count: pairs.len(),
    };

    let initial = evaluate_pairs(&pairs, table, &params)?;
    if done(&initial) {
        return Ok(outcome(params, 0, initial, true));
    }
    let mut best = (initial, params.clone());
    for epoch in 1..=cfg.max_epochs {
        for batch in pairs.chunks(cfg.batch_size) {
            let (_, grads) = loss_and_gradient(batch, table, &params)?;
            params.axpy(-cfg.learning_rate, &grads);
        }
        let stats = evaluate_pairs(&pairs, table, &params)?;
        if !stats.loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        if done(&stats) {
            return Ok(outcome(params, epoch, stats, true));
        }
        if stats.loss < best.0.loss {
            best = (stats, params.clone());
        }
    }
    Ok(outcome(best.1, cfg.max_epochs, best.0, false))
}

/// Training-free surrogate: coordinate 0 marks the center, coordinate
/// `1 + hash(label) mod (d − 1)` counts the leaves carrying that label bucket.
/// Dropping a leaf lowers exactly one coordinate by one, so every
/// substructure is dominated by its star.
pub fn count_oracle_star<'a>(
    center_present: bool,
    leaf_labels: impl IntoIterator<Item = &'a str>,
    d: usize,
) -> DominanceEmbedding {
    assert!(d >= 2, "count-oracle embeddings need at least two dimensions");
    let mut v = vec![0.0; d];
    if center_present {
        v[0] = 1.0;
    }
    for label in leaf_labels {
        v[count_bucket(label, d)] += 1.0;
    }
    DominanceEmbedding(v)
}

pub fn count_bucket(label: &str, d: usize) -> usize {
    1 + (label_hash(0x636f_756e_74, label) % (d as u64 - 1)) as usize
}

pub fn count_oracle_embedding(g: &Graph, v: NodeIx, d: usize) -> DominanceEmbedding {
    count_oracle_star(true, g.neighbors(v).iter().map(|n| g.label(*n)), d)
}

pub fn count_oracle_substructure(g: &Graph, star: &StarSubgraph, d: usize) -> DominanceEmbedding {
    count_oracle_star(true, star.leaves.iter().map(|n| g.label(*n)), d)
}

/// Source of node dominance embeddings for index entries and query paths.
#[derive(Clone, Debug)]
pub enum DominanceEncoder {
    CountOracle { dim: usize },
    Trained(ModelParams),
}

impl DominanceEncoder {
    pub fn dim(&self) -> usize {
        match self {
            DominanceEncoder::CountOracle { dim } => *dim,
            DominanceEncoder::Trained(p) => p.dominance_dim,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            DominanceEncoder::CountOracle { .. } => "count-oracle",
            DominanceEncoder::Trained(_) => "trained",
        }
    }

    /// `o(v)` for every vertex of `g`, from each vertex's full star.
    ///
    /// `input` supplies the label embedding of a vertex; it is only consulted
    /// by the trained encoder.
    pub fn node_embeddings<'a, F>(&self, g: &Graph, input: F) -> Result<Vec<DominanceEmbedding>>
    where
        F: Fn(NodeIx) -> Option<&'a [f64]>,
    {
        match self {
            DominanceEncoder::CountOracle { dim } => {
                Ok(g.node_indices().map(|v| count_oracle_embedding(g, v, *dim)).collect())
            }
            DominanceEncoder::Trained(params) => g
                .node_indices()
                .map(|v| {
                    let members: Vec<NodeIx> = std::iter::once(v).chain(g.neighbors(v).iter().copied()).collect();
                    let inputs = members
                        .iter()
                        .map(|m| input(*m).ok_or_else(|| Error::MissingEmbedding(g.id(*m).to_string())))
                        .collect::<Result<Vec<_>>>()?;
                    star_embedding_from_inputs(&inputs, params)
                })
                .collect(),
        }
    }
}

/// Model file layout.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelFile {
    #[serde(rename = "F")]
    pub input_dim: usize,
    #[serde(rename = "F_hidden")]
    pub hidden_dim: usize,
    pub d: usize,
    #[serde(rename = "W_in")]
    pub w_in: Vec<Vec<f64>>,
    pub a: Vec<f64>,
    #[serde(rename = "W_out")]
    pub w_out: Vec<Vec<f64>>,
    pub meta: ModelMeta,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelMeta {
    pub seed: u64,
    pub epochs: usize,
    pub final_loss: f64,
    #[serde(default)]
    pub converged: bool,
}

impl ModelFile {
    pub fn from_params(params: &ModelParams, meta: ModelMeta) -> Self {
        let rows = |data: &[f64], cols: usize| data.chunks(cols).map(<[f64]>::to_vec).collect();
        ModelFile {
            input_dim: params.input_dim,
            hidden_dim: params.hidden_dim,
            d: params.dominance_dim,
            w_in: rows(&params.w_in, params.input_dim),
            a: params.attn.clone(),
            w_out: rows(&params.w_out, params.hidden_dim),
            meta,
        }
    }

    pub fn to_params(&self) -> Result<ModelParams> {
        let flat = |rows: &[Vec<f64>], cols: usize, name: &str| -> Result<Vec<f64>> {
            if rows.iter().any(|r| r.len() != cols) {
                return Err(Error::Config(format!("{name} rows must have {cols} columns")));
            }
            Ok(rows.concat())
        };
        let params = ModelParams {
            input_dim: self.input_dim,
            hidden_dim: self.hidden_dim,
            dominance_dim: self.d,
            w_in: flat(&self.w_in, self.input_dim, "W_in")?,
            attn: self.a.clone(),
            w_out: flat(&self.w_out, self.hidden_dim, "W_out")?,
        };
        params.validate()?;
        Ok(params)
    }
}

/// Leaves of `star` that the substructure dropped; useful in diagnostics.
pub fn dropped_leaves(star: &StarSubgraph, sub: &StarSubgraph) -> BTreeSet<NodeIx> {
    star.leaves.difference(&sub.leaves).copied().collect()
}
