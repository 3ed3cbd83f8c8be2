//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p exactrag --test acceptance`; pass criterion
//! numbers after `--` to run a subset, e.g. `-- 1 4`.

mod common;

use std::collections::BTreeSet;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use exactrag::benchkit::{
    robustness_curve, run_end_to_end, synthetic_graph, PerturbationConfig, QaRecord, SyntheticConfig,
};
use exactrag::dominance::{
    dominance_loss, evaluate_pairs, loss_and_gradient, train, training_pairs, DominanceEncoder, ModelParams,
    TrainConfig, DEFAULT_DOMINANCE_DIM,
};
use exactrag::embeddings::{LabelTable, MockEmbedder, DEFAULT_LABEL_DIM};
use exactrag::generation::{AnswerMode, MockAnswerer};
use exactrag::graph::{graph_diameter, parse_graph_document, Graph};
use exactrag::index::{Candidate, RStarIndex, TraversalStats};
use exactrag::matcher::{brute_force_match, brute_force_match_with_limit, exact_probes};
use exactrag::pipeline::{answer_query, retrieve, Engine, PipelineConfig, DEFAULT_INDEX_LENGTHS};
use exactrag::query::{
    complete_unknown_labels, decompose_into_paths, enumerate_completions, extract_query_graph, valid_path_lengths,
    wildcard_probe, ReplayExtractor, DEFAULT_COMPLETION_CAP,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

// pinned tolerances and budgets
const ORACLE_TRIALS: usize = 200;
const ORACLE_MAX_GRAPH: usize = 50;
const ORACLE_MAX_QUERY: usize = 6;
const ORACLE_BUDGET: Duration = Duration::from_secs(60);
const CLUSTERED_FIXTURES: usize = 10;
const CLUSTERED_PASS_SHARE: f64 = 0.8;
const TRAIN_GRAPHS: usize = 10;
const TRAIN_MIN_CONVERGED: usize = 8;
const TRAIN_LOSS_TOL: f64 = 1e-6;
const TRAIN_VIOLATION_TOL: f64 = 1e-6;
const TRAIN_MAX_EPOCHS: usize = 5000;
const TRAIN_CAP: usize = 32;
const GRAD_STEP: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;
const TRAIN_BUDGET: Duration = Duration::from_secs(600);
const CASE_BUDGET: Duration = Duration::from_secs(5);
const BENCH_RECORDS: usize = 100;
const BENCH_BUDGET: Duration = Duration::from_secs(120);
const SCALING_SIZES: [usize; 3] = [1_000, 10_000, 100_000];
const SCALING_SLOPE_MAX: f64 = 1.0;
const COVERAGE_TRIALS: usize = 500;
const COVERAGE_MAX_QUERY: usize = 10;
const ALPHABET: usize = 5;
const ORACLE_LENGTHS: [usize; 5] = [1, 2, 3, 4, 5];

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(n: usize, name: &str, o: &Outcome) {
    let verdict = if o.pass { "PASS" } else { "FAIL" };
    println!("criterion {n} [{name}]: {verdict} ({})", o.detail);
}

fn sorted(mut v: Vec<Vec<Candidate>>) -> Vec<Vec<Candidate>> {
    for c in &mut v {
        c.sort();
    }
    v
}

/// Tallies for criteria 1, 2 and 5, which share the random trials.
#[derive(Default)]
struct TrialTally {
    agree: usize,
    disagreements: Vec<String>,
    index_checks: usize,
    index_mismatches: usize,
    missed: usize,
    l_trials: usize,
    l_violations: Vec<String>,
}

fn run_trials() -> (TrialTally, Duration) {
    let start = Instant::now();
    let mut t = TrialTally::default();
    let cfg = PipelineConfig::default();
    for trial in 0..ORACLE_TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial as u64);
        let n = rng.gen_range(8..=ORACLE_MAX_GRAPH);
        let g = random_connected_graph(&mut rng, n, n / 2, ALPHABET);
        let k = rng.gen_range(2..=ORACLE_MAX_QUERY);
        let q = random_query(&mut rng, &g, k, ALPHABET);
        let provider = MockEmbedder::new(8, trial as u64);
        let engine = Engine::build(
            g.clone(),
            &provider,
            DominanceEncoder::CountOracle { dim: 6 },
            &ORACLE_LENGTHS,
            None,
        )
        .expect("engine builds");

        // 1: pipeline bindings against exhaustive search
        let oracle = bindings(&brute_force_match(&q.graph, &g).expect("small graph"));
        match retrieve(&engine, &q, None, &cfg) {
            Ok(r) if bindings(&r.result.exact) == oracle => t.agree += 1,
            Ok(r) => t.disagreements.push(format!(
                "trial {trial}: {} vs {} bindings",
                r.result.exact.len(),
                oracle.len()
            )),
            Err(e) => t.disagreements.push(format!("trial {trial}: {e}")),
        }

        // 2: index traversal against linear scans, every valid length
        let range = valid_path_lengths(&q.graph).expect("query has edges");
        for l in range.clone() {
            let idx = engine.bundle.get(l).expect("bundle covers every valid length");
            let plan = decompose_into_paths(&q.graph, l).expect("valid length");
            let wild: Vec<_> = plan
                .paths
                .iter()
                .map(|p| wildcard_probe(&q, p, &engine.table))
                .filter(|p| p.labels.iter().any(Option::is_some))
                .collect();
            let (hits, stats) = idx.retrieve_label_matches_with(&wild, true).unwrap();
            t.index_checks += 1;
            t.index_mismatches += usize::from(sorted(hits) != sorted(idx.linear_scan_labels(&wild)));
            t.missed += stats.missed_candidates.unwrap_or(0);
            let (cands, _) = complete_unknown_labels(&q, &plan, idx, &engine.table).unwrap();
            let completions = enumerate_completions(&q, &cands, DEFAULT_COMPLETION_CAP).unwrap();
            for c in completions {
                let labeled = &c.query.graph;
                if labeled
                    .node_indices()
                    .any(|v| engine.table.for_label(labeled.label(v)).is_none())
                {
                    continue;
                }
                let probes = exact_probes(labeled, &plan, &engine.table, &engine.encoder).unwrap();
                let (hits, stats) = idx.retrieve_exact_candidates_with(&probes, true).unwrap();
                t.index_checks += 1;
                t.index_mismatches += usize::from(sorted(hits) != sorted(idx.linear_scan_reference(&probes)));
                t.missed += stats.missed_candidates.unwrap_or(0);
            }
        }

        // 5: every valid length gives the same bindings
        if graph_diameter(&q.graph).expect("connected") <= 3 {
            t.l_trials += 1;
            let mut seen: BTreeSet<Vec<Binding>> = BTreeSet::new();
            for l in range {
                let cfg = PipelineConfig { l: Some(l), ..cfg };
                match retrieve(&engine, &q, None, &cfg) {
                    Ok(r) if r.l == Some(l) => {
                        seen.insert(bindings(&r.result.exact).into_iter().collect());
                    }
                    Ok(r) => t
                        .l_violations
                        .push(format!("trial {trial}: asked l={l}, ran {:?}", r.l)),
                    Err(e) => t.l_violations.push(format!("trial {trial} l={l}: {e}")),
                }
            }
            if seen.len() > 1 {
                t.l_violations
                    .push(format!("trial {trial}: {} distinct binding sets", seen.len()));
            }
        }
    }
    (t, start.elapsed())
}

fn criterion_1(t: &TrialTally, elapsed: Duration) -> Outcome {
    let pass = t.agree == ORACLE_TRIALS && elapsed < ORACLE_BUDGET;
    let mut detail = format!(
        "{}/{} trials agree with brute force; {:.1} s, budget {} s",
        t.agree,
        ORACLE_TRIALS,
        elapsed.as_secs_f64(),
        ORACLE_BUDGET.as_secs()
    );
    if let Some(d) = t.disagreements.first() {
        detail.push_str(&format!("; first mismatch {d}"));
    }
    Outcome { pass, detail }
}

/// Clustered fixtures: does the traversal visit fewer nodes than a full scan?
fn clustered_fixture(seed: u64) -> (bool, bool, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = clustered_entries(&mut rng, 5_000, 100);
    let probes: Vec<_> = (0..20)
        .map(|_| probe_from(&c.inputs[rng.gen_range(0..c.inputs.len())], 0.8))
        .collect();
    let idx = RStarIndex::build(c.inputs, c.params).unwrap();
    let (hits, stats) = idx.retrieve_exact_candidates_with(&probes, true).unwrap();
    let exact = sorted(hits) == sorted(idx.linear_scan_reference(&probes));
    let full_scan = idx.node_count() * probes.len();
    (
        exact,
        stats.nodes_visited < full_scan,
        stats.missed_candidates.unwrap_or(0),
    )
}

fn criterion_2(t: &TrialTally) -> Outcome {
    let mut below = 0;
    let mut exact = 0;
    let mut missed = t.missed;
    for f in 0..CLUSTERED_FIXTURES {
        let (ok, fewer, m) = clustered_fixture(50 + f as u64);
        exact += usize::from(ok);
        below += usize::from(fewer);
        missed += m;
    }
    let share = below as f64 / CLUSTERED_FIXTURES as f64;
    let pass = t.index_mismatches == 0 && missed == 0 && exact == CLUSTERED_FIXTURES && share >= CLUSTERED_PASS_SHARE;
    Outcome {
        pass,
        detail: format!(
            "{} traversal/scan comparisons on random trials, {} mismatches; {exact}/{CLUSTERED_FIXTURES} clustered fixtures equal their scan; {missed} missed candidates in audit mode; visits below full scan on {:.0}% of clustered fixtures (need {:.0}%)",
            t.index_checks,
            t.index_mismatches,
            share * 100.0,
            CLUSTERED_PASS_SHARE * 100.0
        ),
    }
}

/// Central finite differences with step `GRAD_STEP`; returns the worst
/// relative error `|a − n| / max(|a|, |n|, 1e-6)`.
fn gradient_check() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let g = random_connected_graph(&mut rng, 10, 4, 6);
    let table = LabelTable::build(&g, &MockEmbedder::new(6, 3)).unwrap();
    let pairs = training_pairs(&g, TRAIN_CAP, 0);
    let params = ModelParams::init(table.dim(), 8, 4, 5);
    let (_, analytic) = loss_and_gradient(&pairs, &table, &params).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..params.param_count() {
        let mut plus = params.clone();
        plus.set(i, params.get(i) + GRAD_STEP);
        let mut minus = params.clone();
        minus.set(i, params.get(i) - GRAD_STEP);
        let lp = dominance_loss(&pairs, &table, &plus).unwrap();
        let lm = dominance_loss(&pairs, &table, &minus).unwrap();
        let numeric = (lp - lm) / (2.0 * GRAD_STEP);
        let a = analytic.get(i);
        worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
    }
    worst
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut converged = 0;
    let mut all_dominated = true;
    let mut epochs = Vec::new();
    for i in 0..TRAIN_GRAPHS {
        let n = 20 + 20 * i;
        let mut rng = ChaCha8Rng::seed_from_u64(300 + i as u64);
        let g = random_connected_graph(&mut rng, n, n / 2, 30);
        let table = LabelTable::build(&g, &MockEmbedder::new(DEFAULT_LABEL_DIM, i as u64)).unwrap();
        let cfg = TrainConfig {
            seed: i as u64,
            max_epochs: TRAIN_MAX_EPOCHS,
            tolerance: TRAIN_LOSS_TOL,
            violation_tolerance: TRAIN_VIOLATION_TOL,
            substructure_cap: TRAIN_CAP,
            ..TrainConfig::default()
        };
        let out = train(&g, &table, &cfg).unwrap();
        // re-check every pair from scratch rather than trusting the trainer
        let pairs = training_pairs(&g, TRAIN_CAP, cfg.seed);
        let stats = evaluate_pairs(&pairs, &table, &out.params).unwrap();
        if out.converged && stats.loss <= TRAIN_LOSS_TOL {
            converged += 1;
            all_dominated &= stats.max_violation <= TRAIN_VIOLATION_TOL;
        }
        epochs.push(if out.converged {
            out.epochs.to_string()
        } else {
            "-".into()
        });
    }
    let grad = gradient_check();
    let elapsed = start.elapsed();
    let pass = converged >= TRAIN_MIN_CONVERGED && all_dominated && grad < GRAD_TOL && elapsed < TRAIN_BUDGET;
    Outcome {
        pass,
        detail: format!(
            "{converged}/{TRAIN_GRAPHS} graphs converged (epochs {}); converged models dominate all pairs within {TRAIN_VIOLATION_TOL:e}: {all_dominated}; gradient max relative error {grad:.2e} (tol {GRAD_TOL:e}); {:.1} s, budget {} s",
            epochs.join(","),
            elapsed.as_secs_f64(),
            TRAIN_BUDGET.as_secs()
        ),
    }
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn run_case(graph: &str, questions: &str, question: &str) -> Result<(String, AnswerMode), String> {
    let text = fs::read_to_string(fixture(graph)).map_err(|e| e.to_string())?;
    let g = parse_graph_document(&text).map_err(|e| e.to_string())?.graph;
    let replay = ReplayExtractor::load(&fixture(questions)).map_err(|e| e.to_string())?;
    let provider = MockEmbedder::new(DEFAULT_LABEL_DIM, 0);
    let engine = Engine::build(
        g,
        &provider,
        DominanceEncoder::CountOracle {
            dim: DEFAULT_DOMINANCE_DIM,
        },
        &DEFAULT_INDEX_LENGTHS,
        None,
    )
    .map_err(|e| e.to_string())?;
    let q = extract_query_graph(question, &replay).map_err(|e| e.to_string())?;
    let out = answer_query(
        &engine,
        &q,
        question,
        Some(&provider),
        &MockAnswerer,
        &PipelineConfig::default(),
    )
    .map_err(|e| e.to_string())?;
    Ok((out.answer, out.record.mode))
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let cases = [
        (
            "diabetes.graph",
            "diabetes_questions.jsonl",
            "Which disease commonly uses massage as adjuvant therapy, is prone to cause hypertension and adrenal incidentaloma, and requires differential diagnosis from subclinical Cushing's syndrome?",
            "Type 2 diabetes",
        ),
        (
            "complications.graph",
            "complications_questions.jsonl",
            "Which disease is likely to simultaneously cause deep vein thrombosis, acute closed Achilles tendon rupture, infection, and fracture as complications?",
            "Neurovascular injury",
        ),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (graph, questions, question, expected) in cases {
        match run_case(graph, questions, question) {
            Ok((answer, mode)) => {
                pass &= answer == expected && mode == AnswerMode::Exact;
                parts.push(format!("{graph}: {answer:?} ({mode:?})"));
            }
            Err(e) => {
                pass = false;
                parts.push(format!("{graph}: error {e}"));
            }
        }
    }
    let elapsed = start.elapsed();
    pass &= elapsed < CASE_BUDGET;
    Outcome {
        pass,
        detail: format!(
            "{}; {:.2} s, budget {} s",
            parts.join("; "),
            elapsed.as_secs_f64(),
            CASE_BUDGET.as_secs()
        ),
    }
}

fn criterion_5(t: &TrialTally) -> Outcome {
    let mut detail = format!(
        "{} trials with query diameter <= 3, {} violations",
        t.l_trials,
        t.l_violations.len()
    );
    if let Some(v) = t.l_violations.first() {
        detail.push_str(&format!("; first {v}"));
    }
    Outcome {
        pass: t.l_trials > 0 && t.l_violations.is_empty(),
        detail,
    }
}

fn count_oracle_engine(g: Graph, provider: &MockEmbedder) -> exactrag::Result<Engine> {
    Engine::build(
        g,
        provider,
        DominanceEncoder::CountOracle {
            dim: DEFAULT_DOMINANCE_DIM,
        },
        &DEFAULT_INDEX_LENGTHS,
        None,
    )
}

fn synthetic_setup() -> (Graph, MockEmbedder) {
    let g = synthetic_graph(&SyntheticConfig::default(), 7).expect("synthetic graph");
    (g, MockEmbedder::new(DEFAULT_LABEL_DIM, 7))
}

fn criterion_6() -> (Outcome, Vec<QaRecord>) {
    let start = Instant::now();
    let (g, provider) = synthetic_setup();
    let engine = count_oracle_engine(g.clone(), &provider).unwrap();
    let (records, run) = run_end_to_end(
        &engine,
        BENCH_RECORDS,
        11,
        None,
        &MockAnswerer,
        &PipelineConfig::default(),
    )
    .expect("benchmark run");
    let mut sound = 0;
    for r in &records {
        let matches = brute_force_match_with_limit(&r.query_graph().graph, &g, g.vertex_count()).unwrap();
        let hit = matches
            .iter()
            .any(|m| m.binding.get("q0").map(String::as_str) == Some(r.provenance.hidden.as_str()));
        sound += usize::from(hit);
    }
    let elapsed = start.elapsed();
    let pass =
        records.len() == BENCH_RECORDS && sound == records.len() && run.report.hit1 == 1.0 && elapsed < BENCH_BUDGET;
    (
        Outcome {
            pass,
            detail: format!(
                "{sound}/{} records have an exact match binding the gold vertex; hit1 {:.3}; {:.1} s, budget {} s",
                records.len(),
                run.report.hit1,
                elapsed.as_secs_f64(),
                BENCH_BUDGET.as_secs()
            ),
        },
        records,
    )
}

fn criterion_7(records: &[QaRecord]) -> Outcome {
    let (g, provider) = synthetic_setup();
    let build = |g: Graph| count_oracle_engine(g, &provider);
    let curve = robustness_curve(
        &g,
        records,
        &[1, 2, 3],
        23,
        &PerturbationConfig::default(),
        &build,
        None,
        &MockAnswerer,
        &PipelineConfig::default(),
    )
    .expect("robustness run");
    let h: Vec<f64> = curve.iter().map(|p| p.hit1).collect();
    let pass = h[0] >= h[1] && h[1] >= h[2] && (h[1] - h[2]) > (h[0] - h[1]);
    Outcome {
        pass,
        detail: format!("hit1 at x=1,2,3: {:.3}, {:.3}, {:.3}", h[0], h[1], h[2]),
    }
}

fn criterion_8() -> Outcome {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut parts = Vec::new();
    for (i, &n) in SCALING_SIZES.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + i as u64);
        let c = clustered_entries(&mut rng, n, 100);
        let probes: Vec<_> = (0..50)
            .map(|_| probe_from(&c.inputs[rng.gen_range(0..c.inputs.len())], 0.8))
            .collect();
        let idx = RStarIndex::build(c.inputs, c.params).unwrap();
        let mut total = TraversalStats::default();
        for p in &probes {
            let (_, s) = idx.retrieve_exact_candidates(std::slice::from_ref(p)).unwrap();
            total.merge(&s);
        }
        let mean = total.nodes_visited as f64 / probes.len() as f64;
        xs.push((n as f64).ln());
        ys.push(mean.ln());
        parts.push(format!(
            "n={n}: {mean:.1} visits/probe, per level {:?}",
            total.per_level_counts
        ));
    }
    let s = slope(&xs, &ys);
    Outcome {
        pass: s < SCALING_SLOPE_MAX,
        detail: format!("{}; log-log slope {s:.3} (max {SCALING_SLOPE_MAX})", parts.join("; ")),
    }
}

fn criterion_9() -> Outcome {
    let mut checked = 0;
    let mut failures = Vec::new();
    for trial in 0..COVERAGE_TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(5000 + trial as u64);
        let g = random_connected_graph(&mut rng, 40, 30, 3);
        let k = rng.gen_range(2..=COVERAGE_MAX_QUERY);
        let q = random_query(&mut rng, &g, k, 3);
        let range = valid_path_lengths(&q.graph).unwrap();
        for l in range {
            checked += 1;
            match decompose_into_paths(&q.graph, l) {
                Ok(plan) if plan.l == l && plan_covers_exactly(&q.graph, &plan.paths, l) => {}
                Ok(_) => failures.push(format!("trial {trial} l={l}: plan does not cover exactly")),
                Err(e) => failures.push(format!("trial {trial} l={l}: {e}")),
            }
        }
    }
    let mut detail = format!(
        "{COVERAGE_TRIALS} queries, {checked} (query, l) plans, {} failures",
        failures.len()
    );
    if let Some(f) = failures.first() {
        detail.push_str(&format!("; first {f}"));
    }
    Outcome {
        pass: failures.is_empty(),
        detail,
    }
}

fn main() -> ExitCode {
    let selected: BTreeSet<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |n: usize| selected.is_empty() || selected.contains(&n);
    let mut failed = 0;
    let mut record = |n: usize, name: &str, o: Outcome| {
        report(n, name, &o);
        failed += usize::from(!o.pass);
    };

    if want(1) || want(2) || want(5) {
        let (tally, elapsed) = run_trials();
        if want(1) {
            record(1, "oracle equivalence", criterion_1(&tally, elapsed));
        }
        if want(2) {
            record(2, "index completeness", criterion_2(&tally));
        }
        if want(5) {
            record(5, "path-length invariance", criterion_5(&tally));
        }
    }
    if want(3) {
        record(3, "dominance training", criterion_3());
    }
    if want(4) {
        record(4, "case studies", criterion_4());
    }
    if want(6) || want(7) {
        let (o, records) = criterion_6();
        if want(6) {
            record(6, "benchmark soundness", o);
        }
        if want(7) {
            record(7, "robustness shape", criterion_7(&records));
        }
    }
    if want(8) {
        record(8, "traversal scaling", criterion_8());
    }
    if want(9) {
        record(9, "decomposition coverage", criterion_9());
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
