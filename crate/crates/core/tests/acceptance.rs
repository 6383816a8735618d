//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Every tolerance and bound is pinned below.

mod common;

use std::collections::BTreeSet;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use locomem_core::config::EngineConfig;
use locomem_core::dataset::{EpisodeRecord, DATASET_SCHEMA_VERSION};
use locomem_core::eval::{brier_score, ece, weighted_prf, AblationRun, EvalRecord};
use locomem_core::gate::{refine, ClarityWeights, LtmInsight};
use locomem_core::ltm::{blended_similarity, LtmStore, LtmWeights};
use locomem_core::model::{mode_is_safety_critical, CommandType, LocomotionMode, PerceptionEvent, ScoreSet};
use locomem_core::perception::{
    perceive, BackendError, BackendKind, BackendRequest, FrameRef, HashEmbedder, HttpBackend, HttpBackendConfig,
    PerceptionBackend, PerceptionInput, ScriptedBackend, Stage,
};
use locomem_core::pipeline::{AblationCondition, Agent, DecisionLog};
use locomem_core::{synth_generate, SynthOracleParams};

const FORMULA_TOL: f64 = 1e-9;
const METRIC_TOL: f64 = 1e-12;
const SCORE_TOL: f64 = 1e-12;
const DECAY_TOL: f64 = 1e-9;

const FORMULA_BUDGET: Duration = Duration::from_secs(1);
const RETRIEVAL_BUDGET: Duration = Duration::from_secs(10);
const METRICS_BUDGET: Duration = Duration::from_secs(10);
const ABLATION_BUDGET: Duration = Duration::from_secs(120);

const RETRIEVAL_STORES: usize = 100;
const MAX_STORE: usize = 100;
const MAINTENANCE_SEQUENCES: usize = 1000;
const METRIC_SETS: usize = 1000;

const ABLATION_SEEDS: std::ops::Range<u64> = 0..10;
const ABLATION_EVENTS: usize = 500;
/// Smallest weighted-F1 step required between consecutive conditions on
/// every seed. Calibration runs of the default generator over seeds 0..10
/// gave per-seed steps of at least 0.06.
const MIN_F1_STEP: f64 = 0.03;

const DETERMINISM_SEED: u64 = 42;
const DETERMINISM_EVENTS: usize = 200;
const EMIT_FLAG: &str = "--emit-determinism-log";

struct Gate {
    failed: usize,
}

impl Gate {
    fn report(&mut self, id: u32, name: &str, ok: bool, detail: String) {
        if !ok {
            self.failed += 1;
        }
        println!("[{}] {id:>2}. {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn event(id: &str, mode: LocomotionMode, v: f64, d: f64, imp: f64, c: f64, text: Vec<f64>, image: Vec<f64>) -> PerceptionEvent {
    PerceptionEvent {
        event_id: id.into(),
        timestamp: 0.0,
        mode,
        scores: ScoreSet::new(v, d, imp, c).unwrap(),
        environment: "site".into(),
        primary_object: "object".into(),
        obstacles: vec![],
        summary: String::new(),
        reasoning_trace: String::new(),
        text_embedding: text,
        image_embedding: image,
        refined_from: None,
        low_clarity: false,
    }
}

fn rotated(cos: f64) -> Vec<f64> {
    vec![cos, (1.0 - cos * cos).sqrt()]
}

fn formula_fidelity() -> (bool, String) {
    let cw = ClarityWeights::default();
    let lw = LtmWeights::default();
    let mut checks: Vec<(&str, f64, f64)> = vec![
        ("clarity(0,0,1)", cw.clarity_score(0.0, 0.0, 1.0), 1.0),
        ("clarity(1,1,0)", cw.clarity_score(1.0, 1.0, 0.0), 0.0),
        ("clarity(0.142,0.095,0.940)", cw.clarity_score(0.142, 0.095, 0.940), 0.3 * 0.858 + 0.5 * 0.905 + 0.2 * 0.940),
        ("threshold(0)", cw.clarity_threshold(0), 0.35),
        ("threshold(40)", cw.clarity_threshold(40), 0.75),
        ("threshold(1000)", cw.clarity_threshold(1000), 0.75),
        ("composite routine", lw.composite_score(0.8, 0.5, 0.9, 0.1, 0.2, false), 0.675),
        ("composite safety", lw.composite_score(0.8, 0.5, 0.9, 0.1, 0.2, true), 0.699),
        ("composite zero", lw.composite_score(0.0, 0.0, 0.0, 0.0, 0.0, false), 0.0),
    ];
    let (e1, e2) = (vec![1.0, 0.0], vec![1.0, 0.0]);
    let (qt, qi) = (rotated(0.9), rotated(0.7));
    checks.push(("blend d=0.5", blended_similarity(&qt, &qi, &e1, &e2, 0.5).unwrap(), 0.8));
    checks.push(("blend d=0", blended_similarity(&qt, &qi, &e1, &e2, 0.0).unwrap(), 0.9));
    checks.push(("blend d=1", blended_similarity(&qt, &qi, &e1, &e2, 1.0).unwrap(), 0.7));

    let mut store = LtmStore::default();
    store.store(event("routine", LocomotionMode::LevelGround, 0.1, 0.1, 0.5, 0.9, e1.clone(), e2.clone()), 0).unwrap();
    store.store(event("safety", LocomotionMode::ConstructionLadderDown, 0.1, 0.1, 0.5, 0.9, e1, e2), 0).unwrap();
    store.decay(0);
    checks.push(("decay Δ=0", store.get("routine").unwrap().importance_current, 0.5));
    store.decay(1);
    checks.push(("decay routine Δ=1", store.get("routine").unwrap().importance_current, 0.5 * (-0.03f64).exp()));
    checks.push(("decay safety Δ=1", store.get("safety").unwrap().importance_current, 0.5 * (-0.005f64).exp()));
    checks.push(("decay routine ≈ 0.48522", store.get("routine").unwrap().importance_current, 0.48522));

    let mut worst = 0.0f64;
    let mut bad = Vec::new();
    for (name, got, want) in &checks {
        let tol = if name.contains('≈') { 5e-6 } else { FORMULA_TOL };
        let err = (got - want).abs();
        if !name.contains('≈') {
            worst = worst.max(err);
        }
        if err > tol {
            bad.push(format!("{name} = {got} (want {want})"));
        }
    }
    let ok = bad.is_empty();
    let detail = if ok {
        format!("{} worked examples, max error {worst:.1e} (tolerance {FORMULA_TOL:.0e})", checks.len())
    } else {
        bad.join("; ")
    };
    (ok, detail)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn reference_composite(query: &PerceptionEvent, entry: &PerceptionEvent, importance: f64) -> f64 {
    let d = query.scores.discrepancy;
    let cos = |a: &[f64], b: &[f64]| dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt());
    let sim = (1.0 - d) * cos(&query.text_embedding, &entry.text_embedding)
        + d * cos(&query.image_embedding, &entry.image_embedding);
    let mut penalty = 0.3 * entry.scores.discrepancy + 0.2 * entry.scores.vagueness;
    if mode_is_safety_critical(entry.mode) {
        penalty *= 0.7;
    }
    0.65 * sim + 0.2 * importance + 0.15 * entry.scores.confidence - penalty
}

fn retrieval_oracle() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = 0;
    let mut compared = 0;
    for s in 0..RETRIEVAL_STORES {
        let mut store = LtmStore::default();
        let n = rng.random_range(0..=MAX_STORE);
        for i in 0..n {
            let mut ev = common::random_event(&mut rng, &format!("s{s}e{i}"), 16);
            // Some exact importance ties exercise the tie-break.
            if i % 7 == 3 {
                ev.scores.importance = 0.5;
            }
            store.store(ev, i as u64).unwrap();
        }
        let query = common::random_event(&mut rng, "query", 16);
        let mut all: Vec<(String, f64, f64, u64)> = store
            .entries()
            .iter()
            .map(|e| (e.id().to_string(), reference_composite(&query, &e.event, e.importance_current), e.importance_current, e.stored_at_cycle))
            .collect();
        let mut expected = Vec::new();
        while expected.len() < 5 && !all.is_empty() {
            let mut best = 0;
            for i in 1..all.len() {
                let (a, b) = (&all[i], &all[best]);
                if a.1 > b.1 || (a.1 == b.1 && (a.2 > b.2 || (a.2 == b.2 && a.3 > b.3))) {
                    best = i;
                }
            }
            expected.push(all.remove(best));
        }
        let hits = store.retrieve(&query, 5).unwrap();
        compared += 1;
        let same = hits.len() == expected.len()
            && hits.iter().zip(&expected).all(|(h, e)| h.entry_id == e.0 && close(h.score, e.1, SCORE_TOL));
        if !same {
            mismatches += 1;
        }
    }
    (mismatches == 0, format!("{compared} stores of ≤ {MAX_STORE} entries, {mismatches} top-5 mismatches"))
}

fn maintenance_invariants() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut violations = Vec::new();
    let mut ops_run = 0usize;
    for seq in 0..MAINTENANCE_SEQUENCES {
        let mut store = LtmStore::default();
        let mut safety_ids = BTreeSet::new();
        let len = rng.random_range(1..40);
        for step in 0..len {
            ops_run += 1;
            match rng.random_range(0..4) {
                0 => {
                    let ev = common::random_event(&mut rng, &format!("e{step}"), 8);
                    if mode_is_safety_critical(ev.mode) {
                        safety_ids.insert(ev.event_id.clone());
                    }
                    store.store(ev, step).unwrap();
                }
                1 => {
                    let q = common::random_event(&mut rng, "q", 8);
                    let k = rng.random_range(1..8);
                    store.retrieve(&q, k).unwrap();
                }
                2 => {
                    let (a, b) = (rng.random_range(0..60u64), rng.random_range(0..60u64));
                    let mut split = store.clone();
                    split.decay(a);
                    split.decay(b);
                    store.decay(a + b);
                    for (x, y) in store.entries().iter().zip(split.entries()) {
                        if !close(x.importance_current, y.importance_current, DECAY_TOL) {
                            violations.push(format!("seq {seq}: decay({a}+{b}) not composable"));
                        }
                    }
                }
                _ => {
                    store.prune();
                    if store.entries().iter().any(|e| !e.safety_critical && e.importance_current < 0.1) {
                        violations.push(format!("seq {seq}: routine entry below 0.1 survived prune"));
                    }
                }
            }
            if store.entries().iter().any(|e| !(0.0..=1.0).contains(&e.importance_current)) {
                violations.push(format!("seq {seq}: importance left [0, 1]"));
            }
            let present: BTreeSet<String> = store.entries().iter().map(|e| e.id().to_string()).collect();
            if !safety_ids.is_subset(&present) {
                violations.push(format!("seq {seq}: safety entry lost"));
            }
        }
    }
    let detail = match violations.first() {
        None => format!("{MAINTENANCE_SEQUENCES} random sequences ({ops_run} operations), no violations"),
        Some(v) => format!("{} violations, first: {v}", violations.len()),
    };
    (violations.is_empty(), detail)
}

/// Records every stage it is asked for and answers from a fixed script.
struct StageSpy {
    replies: Vec<String>,
    next: usize,
    stages: Arc<Mutex<Vec<Stage>>>,
}

impl PerceptionBackend for StageSpy {
    fn kind(&self) -> BackendKind {
        BackendKind::Mock
    }

    fn complete(&mut self, request: &BackendRequest<'_>) -> Result<String, BackendError> {
        self.stages.lock().unwrap().push(request.stage);
        let r = self.replies[self.next % self.replies.len()].clone();
        self.next += 1;
        Ok(r)
    }
}

fn gate_records(n: usize) -> Vec<EpisodeRecord> {
    (0..n)
        .map(|i| EpisodeRecord {
            schema_version: DATASET_SCHEMA_VERSION,
            event_id: format!("g{i:03}"),
            episode_id: "gate".into(),
            timestamp: i as f64,
            command: "going up".into(),
            command_type: CommandType::Vague,
            ground_truth_mode: LocomotionMode::LevelGround,
            frame_ref: Some(format!("frame {}", i % 4)),
            image_embedding: None,
            scripted_responses: Default::default(),
        })
        .collect()
}

fn gate_semantics() -> (bool, String) {
    let cw = ClarityWeights::default();
    let mut problems = Vec::new();
    for (cycle, want) in [(0u64, 0.35), (40, 0.75), (1000, 0.75)] {
        if cw.clarity_threshold(cycle) != want {
            problems.push(format!("threshold({cycle}) = {}", cw.clarity_threshold(cycle)));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let replies: Vec<String> = (0..400)
        .map(|_| {
            let mode = LocomotionMode::ALL[rng.random_range(0..12)];
            format!(
                r#"{{"reasoning":"r","locomotion_mode":"{}","vagueness":{},"discrepancy":{},"importance":0.5,"confidence":{},"summary":"s"}}"#,
                mode.code(),
                rng.random::<f64>(),
                rng.random::<f64>(),
                rng.random::<f64>()
            )
        })
        .collect();
    let records = gate_records(120);
    let mut refinements = 0;
    for condition in AblationCondition::ALL {
        let stages = Arc::new(Mutex::new(Vec::new()));
        let spy = StageSpy { replies: replies.clone(), next: 0, stages: Arc::clone(&stages) };
        let config = EngineConfig { embedding_dim: 16, ..EngineConfig::default() };
        let mut agent = Agent::with_hash_embedder(config, condition, Box::new(spy));
        let decisions = agent.run_dataset(&records);
        for d in &decisions {
            let Some(clarity) = d.clarity else {
                problems.push(format!("{condition} {}: no clarity", d.event_id));
                continue;
            };
            let expected_threshold = cw.clarity_threshold(d.cycle);
            if d.threshold != expected_threshold {
                problems.push(format!("{condition} {}: threshold {}", d.event_id, d.threshold));
            }
            let should = condition.uses_ltm() && clarity < expected_threshold;
            if d.refined != should {
                problems.push(format!("{condition} {}: refined={} clarity={clarity:.4}", d.event_id, d.refined));
            }
        }
        let asked = stages.lock().unwrap().iter().filter(|s| **s == Stage::Refinement).count();
        if condition.uses_ltm() {
            refinements += asked;
        } else if asked > 0 {
            problems.push(format!("{condition}: {asked} refinement requests reached the backend"));
        }
    }
    let ok = problems.is_empty() && refinements > 0;
    let detail = if ok {
        format!(
            "thresholds 0.35/0.75/0.75 exact; {} gated decisions, {refinements} refinements, none without LTM",
            records.len() * 3
        )
    } else {
        format!("{} problems, first: {}", problems.len(), problems.first().map_or("no refinement fired", String::as_str))
    };
    (ok, detail)
}

fn metric_record(truth: usize, pred: usize, conf: f64) -> EvalRecord {
    EvalRecord {
        ground_truth: LocomotionMode::ALL[truth],
        predicted: LocomotionMode::ALL[pred],
        confidence: conf,
        command_type: CommandType::Clear,
        refined: false,
        condition: AblationCondition::NoMem,
        scores: ScoreSet::new(0.0, 0.0, 0.0, conf).unwrap(),
    }
}

fn naive_prf(rs: &[EvalRecord]) -> [f64; 3] {
    let n = rs.len() as f64;
    let mut out = [0.0; 3];
    for m in LocomotionMode::ALL {
        let tp = rs.iter().filter(|r| r.ground_truth == m && r.predicted == m).count() as f64;
        let fp = rs.iter().filter(|r| r.ground_truth != m && r.predicted == m).count() as f64;
        let fneg = rs.iter().filter(|r| r.ground_truth == m && r.predicted != m).count() as f64;
        let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let r = if tp + fneg > 0.0 { tp / (tp + fneg) } else { 0.0 };
        let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        let w = (tp + fneg) / n;
        out[0] += w * p;
        out[1] += w * r;
        out[2] += w * f;
    }
    out
}

fn naive_brier(rs: &[EvalRecord]) -> f64 {
    let mut s = 0.0;
    for r in rs {
        let hit = if r.ground_truth == r.predicted { 1.0 } else { 0.0 };
        s += (r.confidence - hit) * (r.confidence - hit);
    }
    s / rs.len() as f64
}

fn naive_ece(rs: &[EvalRecord], bins: usize) -> f64 {
    let mut total = 0.0;
    for b in 0..bins {
        let lo = b as f64 / bins as f64;
        let hi = (b + 1) as f64 / bins as f64;
        let members: Vec<&EvalRecord> =
            rs.iter().filter(|r| (r.confidence > lo || (b == 0 && r.confidence == 0.0)) && r.confidence <= hi).collect();
        if members.is_empty() {
            continue;
        }
        let k = members.len() as f64;
        let acc = members.iter().filter(|r| r.ground_truth == r.predicted).count() as f64 / k;
        let conf = members.iter().map(|r| r.confidence).sum::<f64>() / k;
        total += k / rs.len() as f64 * (acc - conf).abs();
    }
    total
}

fn metrics_oracle() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..METRIC_SETS {
        let n = rng.random_range(1..200);
        let rs: Vec<EvalRecord> = (0..n)
            .map(|_| {
                let t = rng.random_range(0..12);
                let p = if rng.random_bool(0.6) { t } else { rng.random_range(0..12) };
                // A share of confidences sit exactly on bin edges.
                let conf = if rng.random_bool(0.2) { f64::from(rng.random_range(0..=10u32)) / 10.0 } else { rng.random() };
                metric_record(t, p, conf)
            })
            .collect();
        let prf = weighted_prf(&rs).unwrap();
        let naive = naive_prf(&rs);
        for (a, b) in [prf.precision, prf.recall, prf.f1].iter().zip(naive) {
            worst = worst.max((a - b).abs());
        }
        worst = worst.max((brier_score(&rs).unwrap() - naive_brier(&rs)).abs());
        worst = worst.max((ece(&rs, 10).unwrap() - naive_ece(&rs, 10)).abs());
    }
    (worst <= METRIC_TOL, format!("{METRIC_SETS} random record sets, max deviation {worst:.1e} (tolerance {METRIC_TOL:.0e})"))
}

struct Summary {
    f1: [f64; 3],
    brier: [f64; 3],
    ece: [f64; 3],
    type_f1: [[f64; 3]; 3],
    subset_incorrect: [usize; 3],
    refined_events: usize,
}

fn summarize(run: &AblationRun) -> Summary {
    let r = &run.report;
    let get = |c: AblationCondition| r.report(c).expect("condition present");
    let mut s = Summary {
        f1: [0.0; 3],
        brier: [0.0; 3],
        ece: [0.0; 3],
        type_f1: [[0.0; 3]; 3],
        subset_incorrect: [0; 3],
        refined_events: 0,
    };
    let subset = r.refinement_subset.as_ref().expect("STM+LTM run present");
    s.refined_events = subset.events;
    for (i, c) in AblationCondition::ALL.into_iter().enumerate() {
        let rep = get(c);
        s.f1[i] = rep.prf.f1;
        s.brier[i] = rep.brier;
        s.ece[i] = rep.ece;
        for (j, t) in CommandType::ALL.into_iter().enumerate() {
            s.type_f1[i][j] = rep.type_f1(t).unwrap_or(f64::NAN);
        }
        s.subset_incorrect[i] = subset.outcome(c).expect("outcome per condition").incorrect;
    }
    s
}

fn argmax(v: [f64; 3]) -> usize {
    (0..3).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap()
}

fn ablation_criteria(gate: &mut Gate) {
    let start = Instant::now();
    let summaries: Vec<Summary> = ABLATION_SEEDS.map(|seed| summarize(&common::default_ablation(seed, ABLATION_EVENTS))).collect();
    let elapsed = start.elapsed();
    let n = summaries.len() as f64;
    let mean = |f: &dyn Fn(&Summary) -> [f64; 3]| {
        let mut m = [0.0; 3];
        for s in &summaries {
            for (k, v) in f(s).iter().enumerate() {
                m[k] += v / n;
            }
        }
        m
    };

    let mut min_step = f64::INFINITY;
    let mut ordered = true;
    for s in &summaries {
        let steps = [s.f1[1] - s.f1[0], s.f1[2] - s.f1[1]];
        ordered &= steps.iter().all(|d| *d >= MIN_F1_STEP);
        min_step = min_step.min(steps[0]).min(steps[1]);
    }
    let f1 = mean(&|s| s.f1);
    let stm_gain = mean(&|s| std::array::from_fn(|t| s.type_f1[1][t] - s.type_f1[0][t]));
    let ltm_gain = mean(&|s| std::array::from_fn(|t| s.type_f1[2][t] - s.type_f1[1][t]));
    let vague = 1;
    let safety = 2;
    let pattern = argmax(stm_gain) == vague && argmax(ltm_gain) == safety;
    let in_budget = elapsed <= ABLATION_BUDGET;
    gate.report(
        6,
        "ablation ordering",
        ordered && pattern && in_budget,
        format!(
            "{} seeds x {ABLATION_EVENTS} events: mean F1 {:.3} < {:.3} < {:.3}, min per-seed step {min_step:.3} (required {MIN_F1_STEP}); \
             STM gain C/V/S {:.3}/{:.3}/{:.3}, LTM gain C/V/S {:.3}/{:.3}/{:.3}; {:.1?} (budget {ABLATION_BUDGET:?})",
            summaries.len(),
            f1[0],
            f1[1],
            f1[2],
            stm_gain[0],
            stm_gain[1],
            stm_gain[2],
            ltm_gain[0],
            ltm_gain[1],
            ltm_gain[2],
            elapsed
        ),
    );

    let brier = mean(&|s| s.brier);
    let ece = mean(&|s| s.ece);
    let decreasing = |v: [f64; 3]| v[0] > v[1] && v[1] > v[2];
    gate.report(
        7,
        "calibration ordering",
        decreasing(brier) && decreasing(ece),
        format!(
            "mean Brier {:.4} > {:.4} > {:.4}; mean ECE {:.4} > {:.4} > {:.4}",
            brier[0], brier[1], brier[2], ece[0], ece[1], ece[2]
        ),
    );

    let every_seed = summaries.iter().all(|s| s.subset_incorrect[2] < s.subset_incorrect[0]);
    let worst = summaries.iter().map(|s| s.subset_incorrect[0] as i64 - s.subset_incorrect[2] as i64).min().unwrap_or(0);
    let total: [usize; 3] = std::array::from_fn(|i| summaries.iter().map(|s| s.subset_incorrect[i]).sum());
    let events: usize = summaries.iter().map(|s| s.refined_events).sum();
    gate.report(
        8,
        "refinement-subset improvement",
        every_seed,
        format!(
            "{events} refined events over all seeds; incorrect NoMem {} / STMOnly {} / STM+LTM {}; smallest per-seed reduction {worst}",
            total[0], total[1], total[2]
        ),
    );
}

fn determinism_log() -> String {
    let corpus = synth_generate(DETERMINISM_SEED, DETERMINISM_EVENTS, &SynthOracleParams::default()).unwrap();
    let config = EngineConfig { seed: DETERMINISM_SEED, ..EngineConfig::default() };
    let mut out = String::new();
    for condition in AblationCondition::ALL {
        let mut agent = Agent::with_hash_embedder(config.clone(), condition, Box::new(corpus.oracle.clone()));
        let mut log = DecisionLog::new(&config, condition, BackendKind::Mock);
        log.decisions = agent.run_dataset(&corpus.records);
        out.push_str(&log.to_jsonl());
    }
    out
}

fn child_log(dir: &Path, name: &str) -> Result<String, String> {
    let path = dir.join(name);
    let exe = std::env::current_exe().map_err(|e| e.to_string())?;
    let status = Command::new(exe).arg(EMIT_FLAG).arg(&path).status().map_err(|e| e.to_string())?;
    if !status.success() {
        return Err(format!("child exited with {status}"));
    }
    std::fs::read_to_string(&path).map_err(|e| e.to_string())
}

fn determinism() -> (bool, String) {
    let first = determinism_log();
    let second = determinism_log();
    let dir = tempfile::tempdir().unwrap();
    let children = child_log(dir.path(), "a.jsonl").and_then(|a| child_log(dir.path(), "b.jsonl").map(|b| (a, b)));
    match children {
        Ok((a, b)) => {
            let ok = first == second && a == b && a == first;
            (
                ok,
                format!(
                    "{} bytes per run over 3 conditions; in-process repeat {}, two fresh processes {}",
                    first.len(),
                    if first == second { "identical" } else { "DIFFERENT" },
                    if a == b && a == first { "identical" } else { "DIFFERENT" }
                ),
            )
        }
        Err(e) => (false, format!("could not run child process: {e}")),
    }
}

const CANNED_PERCEPTION: &str = r#"{"reasoning":"a ladder fills the lower frames","locomotion_mode":"VUp","vagueness":0.8,"discrepancy":0.7,"importance":0.8,"confidence":0.5,"environment":"industrial","primary_object":"vertical ladder","obstacles":["rail"],"summary":"approaching a fixed ladder"}"#;
const CANNED_REFINEMENT: &str = r#"{"reasoning":"the A-frame is visible","locomotion_mode":"CUp","vagueness":0.1,"discrepancy":0.1,"importance":0.9,"confidence":0.93,"environment":"industrial","primary_object":"A-frame ladder","obstacles":[],"summary":"climbing the A-frame"}"#;

fn live_backend_contract() -> (bool, String) {
    let config = EngineConfig::default();
    let (url, bodies) = common::stub_server(vec![CANNED_PERCEPTION.into(), CANNED_REFINEMENT.into()]);
    let mut live = HttpBackend::new(HttpBackendConfig { url, timeout: Duration::from_secs(10), ..config.http_backend_config() });
    let embedder = HashEmbedder::new(config.embedding_dim, config.embedding_seed);
    let input = PerceptionInput {
        event_id: "live-1".into(),
        command: "I'm going up".into(),
        frame: FrameRef::reference("grid-live-1"),
        timestamp: 2.0,
        command_type: Some(CommandType::Vague),
    };
    let hits = [LtmInsight { mode: LocomotionMode::ConstructionLadderUp, summary: "A-frame climb".into() }];

    let run = |backend: &mut dyn PerceptionBackend| -> Result<(PerceptionEvent, PerceptionEvent), String> {
        let ev = perceive(backend, &embedder, &input, &[], config.perception_params()).map_err(|e| e.to_string())?;
        let refined =
            refine(backend, &embedder, &input, &ev, &[], &hits, config.refinement_params()).map_err(|e| e.to_string())?;
        Ok((ev, refined))
    };
    let live_events = match run(&mut live) {
        Ok(x) => x,
        Err(e) => return (false, format!("live call failed: {e}")),
    };
    let mut direct = ScriptedBackend::new([CANNED_PERCEPTION, CANNED_REFINEMENT]);
    let direct_events = run(&mut direct).expect("direct parse");

    let captured: Vec<Value> = bodies.try_iter().map(|b| serde_json::from_str(&b).unwrap()).collect();
    if captured.len() != 2 {
        return (false, format!("captured {} requests, expected 2", captured.len()));
    }
    let temps = (captured[0]["temperature"].as_f64(), captured[1]["temperature"].as_f64());
    let tokens = (captured[0]["max_tokens"].as_u64(), captured[1]["max_tokens"].as_u64());
    let ok = live_events == direct_events && temps == (Some(0.7), Some(0.5)) && tokens == (Some(600), Some(600));
    (
        ok,
        format!(
            "events {} direct parse; temperatures {:?}/{:?}, max_tokens {:?}/{:?}",
            if live_events == direct_events { "identical to" } else { "DIFFER from" },
            temps.0,
            temps.1,
            tokens.0,
            tokens.1
        ),
    )
}

fn timed(budget: Option<Duration>, f: impl FnOnce() -> (bool, String)) -> (bool, String) {
    let start = Instant::now();
    let (ok, detail) = f();
    let elapsed = start.elapsed();
    match budget {
        Some(b) => (ok && elapsed <= b, format!("{detail}; {elapsed:.1?} (budget {b:?})")),
        None => (ok, detail),
    }
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    if args.get(1).map(String::as_str) == Some(EMIT_FLAG) {
        let path = args.get(2).expect("output path");
        std::fs::write(path, determinism_log()).expect("write determinism log");
        return ExitCode::SUCCESS;
    }
    // Cargo passes harness flags such as `--list`; there is nothing to list.
    if args.iter().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }

    let mut gate = Gate { failed: 0 };
    let (ok, d) = timed(Some(FORMULA_BUDGET), formula_fidelity);
    gate.report(1, "formula fidelity", ok, d);
    let (ok, d) = timed(Some(RETRIEVAL_BUDGET), retrieval_oracle);
    gate.report(2, "retrieval oracle equivalence", ok, d);
    let (ok, d) = timed(None, maintenance_invariants);
    gate.report(3, "memory-maintenance invariants", ok, d);
    let (ok, d) = timed(None, gate_semantics);
    gate.report(4, "gate semantics", ok, d);
    let (ok, d) = timed(Some(METRICS_BUDGET), metrics_oracle);
    gate.report(5, "metrics oracle equivalence", ok, d);
    ablation_criteria(&mut gate);
    let (ok, d) = timed(None, determinism);
    gate.report(9, "determinism", ok, d);
    let (ok, d) = timed(None, live_backend_contract);
    gate.report(10, "live-backend contract", ok, d);

    println!("acceptance: {} of 10 criteria passed", 10 - gate.failed);
    if gate.failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
