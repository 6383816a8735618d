//! Classification and calibration metrics over decision logs, and the
//! ablation runner.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::EngineConfig;
use crate::dataset::EpisodeRecord;
use crate::model::{CommandType, LocomotionMode, ScoreSet};
use crate::perception::{BackendKind, PerceptionBackend};
use crate::pipeline::{AblationCondition, Agent, Decision, DecisionLog};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no evaluable records")]
    Empty,
    #[error("ece needs at least one bin")]
    ZeroBins,
    #[error("decision {0} has no ground truth")]
    MissingGroundTruth(String),
    #[error("decision {0} has no command type")]
    MissingCommandType(String),
    #[error("backend for {condition}: {reason}")]
    Backend { condition: AblationCondition, reason: String },
}

/// One scored prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub ground_truth: LocomotionMode,
    pub predicted: LocomotionMode,
    pub confidence: f64,
    pub command_type: CommandType,
    pub refined: bool,
    pub condition: AblationCondition,
    pub scores: ScoreSet,
}

impl EvalRecord {
    pub fn correct(&self) -> bool {
        self.ground_truth == self.predicted
    }
}

/// Evaluable records from `decisions` plus the number of error decisions,
/// which are excluded.
pub fn eval_records(decisions: &[Decision]) -> Result<(Vec<EvalRecord>, usize), EvalError> {
    let mut records = Vec::with_capacity(decisions.len());
    let mut errors = 0;
    for d in decisions {
        let (Some(predicted), Some(scores)) = (d.final_mode, d.final_scores) else {
            errors += 1;
            continue;
        };
        records.push(EvalRecord {
            ground_truth: d.ground_truth.ok_or_else(|| EvalError::MissingGroundTruth(d.event_id.clone()))?,
            predicted,
            confidence: scores.confidence,
            command_type: d.command_type.ok_or_else(|| EvalError::MissingCommandType(d.event_id.clone()))?,
            refined: d.refined,
            condition: d.condition,
            scores,
        });
    }
    Ok((records, errors))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub mode: LocomotionMode,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrfReport {
    /// All twelve modes in canonical order.
    pub per_class: Vec<ClassMetrics>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// Counts, rows = ground truth, columns = prediction, in canonical mode order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 12]; 12],
}

impl ConfusionMatrix {
    pub fn get(&self, truth: LocomotionMode, predicted: LocomotionMode) -> u64 {
        self.counts[truth.index()][predicted.index()]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sum(&self, truth: LocomotionMode) -> u64 {
        self.counts[truth.index()].iter().sum()
    }

    pub fn column_sum(&self, predicted: LocomotionMode) -> u64 {
        self.counts.iter().map(|row| row[predicted.index()]).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("truth\\predicted");
        for m in LocomotionMode::ALL {
            let _ = write!(s, ",{}", m.code());
        }
        s.push('\n');
        for t in LocomotionMode::ALL {
            s.push_str(t.code());
            for c in self.counts[t.index()] {
                let _ = write!(s, ",{c}");
            }
            s.push('\n');
        }
        s
    }
}

pub fn confusion_matrix(records: &[EvalRecord], by: Option<CommandType>) -> ConfusionMatrix {
    let mut counts = [[0u64; 12]; 12];
    for r in records.iter().filter(|r| by.is_none_or(|t| r.command_type == t)) {
        counts[r.ground_truth.index()][r.predicted.index()] += 1;
    }
    ConfusionMatrix { counts }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 { 0.0 } else { num as f64 / den as f64 }
}

/// Per-class precision, recall and F1, averaged with support weights.
pub fn weighted_prf(records: &[EvalRecord]) -> Result<PrfReport, EvalError> {
    if records.is_empty() {
        return Err(EvalError::Empty);
    }
    let cm = confusion_matrix(records, None);
    let n = records.len() as f64;
    let mut per_class = Vec::with_capacity(12);
    let (mut precision, mut recall, mut f1) = (0.0, 0.0, 0.0);
    for m in LocomotionMode::ALL {
        let tp = cm.get(m, m);
        let support = cm.row_sum(m);
        let p = ratio(tp, cm.column_sum(m));
        let r = ratio(tp, support);
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        let w = support as f64;
        precision += w * p;
        recall += w * r;
        f1 += w * f;
        per_class.push(ClassMetrics { mode: m, precision: p, recall: r, f1: f, support });
    }
    Ok(PrfReport { per_class, precision: precision / n, recall: recall / n, f1: f1 / n, support: records.len() as u64 })
}

pub fn accuracy(records: &[EvalRecord]) -> Result<f64, EvalError> {
    if records.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(records.iter().filter(|r| r.correct()).count() as f64 / records.len() as f64)
}

/// Mean squared gap between confidence and the correctness indicator.
pub fn brier_score(records: &[EvalRecord]) -> Result<f64, EvalError> {
    if records.is_empty() {
        return Err(EvalError::Empty);
    }
    let sum: f64 = records
        .iter()
        .map(|r| {
            let o = if r.correct() { 1.0 } else { 0.0 };
            (r.confidence - o).powi(2)
        })
        .sum();
    Ok(sum / records.len() as f64)
}

/// Right-inclusive bin of `x` among `n` equal-width bins over `[0, 1]`:
/// bin `b` covers `(b/n, (b+1)/n]`, and 0 falls into the first bin.
pub fn bin_index(x: f64, n: usize) -> usize {
    let edge = |k: usize| k as f64 / n as f64;
    let mut b = ((x * n as f64).ceil() as usize).saturating_sub(1).min(n - 1);
    while b > 0 && x <= edge(b) {
        b -= 1;
    }
    while b + 1 < n && x > edge(b + 1) {
        b += 1;
    }
    b
}

/// Expected calibration error over `n_bins` equal-width right-inclusive
/// bins; empty bins contribute nothing.
pub fn ece(records: &[EvalRecord], n_bins: usize) -> Result<f64, EvalError> {
    if n_bins == 0 {
        return Err(EvalError::ZeroBins);
    }
    if records.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut count = vec![0u64; n_bins];
    let mut correct = vec![0u64; n_bins];
    let mut conf = vec![0.0f64; n_bins];
    for r in records {
        let b = bin_index(r.confidence, n_bins);
        count[b] += 1;
        correct[b] += u64::from(r.correct());
        conf[b] += r.confidence;
    }
    let n = records.len() as f64;
    let mut total = 0.0;
    for b in 0..n_bins {
        if count[b] == 0 {
            continue;
        }
        let k = count[b] as f64;
        total += k / n * (correct[b] as f64 / k - conf[b] / k).abs();
    }
    Ok(total)
}

pub const HISTOGRAM_BINS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreStats {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    /// Right-inclusive bins of width 0.05 over `[0, 1]`.
    pub histogram: Vec<u64>,
}

impl ScoreStats {
    fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let mut histogram = vec![0u64; HISTOGRAM_BINS];
        for v in values {
            histogram[bin_index(*v, HISTOGRAM_BINS)] += 1;
        }
        Self { mean, std: var.sqrt(), histogram }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumStats {
    pub count: usize,
    pub confidence: ScoreStats,
    pub vagueness: ScoreStats,
    pub discrepancy: ScoreStats,
}

/// Absolute gaps between the stratum means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanDifferences {
    pub confidence: f64,
    pub vagueness: f64,
    pub discrepancy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreDistributionReport {
    pub correct: Option<StratumStats>,
    pub incorrect: Option<StratumStats>,
    pub differences: Option<MeanDifferences>,
}

/// Score distributions split by prediction correctness. A stratum with no
/// records is reported as absent.
pub fn score_distribution_stats(records: &[EvalRecord]) -> ScoreDistributionReport {
    let stratum = |correct: bool| {
        let rs: Vec<_> = records.iter().filter(|r| r.correct() == correct).collect();
        if rs.is_empty() {
            return None;
        }
        let col = |f: fn(&EvalRecord) -> f64| ScoreStats::of(&rs.iter().map(|r| f(r)).collect::<Vec<_>>());
        Some(StratumStats {
            count: rs.len(),
            confidence: col(|r| r.scores.confidence),
            vagueness: col(|r| r.scores.vagueness),
            discrepancy: col(|r| r.scores.discrepancy),
        })
    };
    let correct = stratum(true);
    let incorrect = stratum(false);
    let differences = match (&correct, &incorrect) {
        (Some(c), Some(i)) => Some(MeanDifferences {
            confidence: (c.confidence.mean - i.confidence.mean).abs(),
            vagueness: (c.vagueness.mean - i.vagueness.mean).abs(),
            discrepancy: (c.discrepancy.mean - i.discrepancy.mean).abs(),
        }),
        _ => None,
    };
    ScoreDistributionReport { correct, incorrect, differences }
}

impl ScoreDistributionReport {
    /// One row per (stratum, score, bin).
    pub fn histogram_csv(&self) -> String {
        let mut s = String::from("stratum,score,bin_low,bin_high,count\n");
        for (name, stratum) in [("correct", &self.correct), ("incorrect", &self.incorrect)] {
            let Some(st) = stratum else { continue };
            for (score, stats) in [("confidence", &st.confidence), ("vagueness", &st.vagueness), ("discrepancy", &st.discrepancy)] {
                for (b, c) in stats.histogram.iter().enumerate() {
                    let lo = b as f64 / HISTOGRAM_BINS as f64;
                    let hi = (b + 1) as f64 / HISTOGRAM_BINS as f64;
                    let _ = writeln!(s, "{name},{score},{lo:.2},{hi:.2},{c}");
                }
            }
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeSummary {
    pub command_type: CommandType,
    pub count: usize,
    pub accuracy: f64,
    pub weighted_f1: f64,
    pub confusion: ConfusionMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub condition: AblationCondition,
    pub records: usize,
    pub errors: usize,
    pub refined: usize,
    pub accuracy: f64,
    pub prf: PrfReport,
    pub brier: f64,
    pub ece: f64,
    pub ece_bins: usize,
    /// Only command types present in the records.
    pub per_type: Vec<TypeSummary>,
    pub confusion: ConfusionMatrix,
    pub score_distribution: ScoreDistributionReport,
}

impl EvalReport {
    pub fn from_decisions(condition: AblationCondition, decisions: &[Decision], ece_bins: usize) -> Result<Self, EvalError> {
        let (records, errors) = eval_records(decisions)?;
        let prf = weighted_prf(&records)?;
        let mut per_type = Vec::new();
        for t in CommandType::ALL {
            let rs: Vec<_> = records.iter().copied().filter(|r| r.command_type == t).collect();
            if rs.is_empty() {
                continue;
            }
            per_type.push(TypeSummary {
                command_type: t,
                count: rs.len(),
                accuracy: accuracy(&rs)?,
                weighted_f1: weighted_prf(&rs)?.f1,
                confusion: confusion_matrix(&records, Some(t)),
            });
        }
        Ok(Self {
            condition,
            records: records.len(),
            errors,
            refined: records.iter().filter(|r| r.refined).count(),
            accuracy: accuracy(&records)?,
            prf,
            brier: brier_score(&records)?,
            ece: ece(&records, ece_bins)?,
            ece_bins,
            per_type,
            confusion: confusion_matrix(&records, None),
            score_distribution: score_distribution_stats(&records),
        })
    }

    pub fn from_log(log: &DecisionLog, ece_bins: usize) -> Result<Self, EvalError> {
        Self::from_decisions(log.header.condition, &log.decisions, ece_bins)
    }

    pub fn type_f1(&self, t: CommandType) -> Option<f64> {
        self.per_type.iter().find(|s| s.command_type == t).map(|s| s.weighted_f1)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "condition: {}", self.condition);
        let _ = writeln!(s, "records: {} (errors excluded: {}, refined: {})", self.records, self.errors, self.refined);
        let _ = writeln!(s, "accuracy: {:.4}", self.accuracy);
        let _ = writeln!(
            s,
            "weighted precision {:.4}  recall {:.4}  F1 {:.4}",
            self.prf.precision, self.prf.recall, self.prf.f1
        );
        let _ = writeln!(s, "brier {:.4}  ece {:.4} ({} bins)", self.brier, self.ece, self.ece_bins);
        s.push('\n');
        let _ = writeln!(s, "{:<6} {:>9} {:>9} {:>9} {:>8}", "mode", "precision", "recall", "f1", "support");
        for c in &self.prf.per_class {
            if c.support == 0 && self.confusion.column_sum(c.mode) == 0 {
                continue;
            }
            let _ = writeln!(s, "{:<6} {:>9.4} {:>9.4} {:>9.4} {:>8}", c.mode.code(), c.precision, c.recall, c.f1, c.support);
        }
        s.push('\n');
        let _ = writeln!(s, "{:<15} {:>6} {:>9} {:>9}", "command type", "n", "accuracy", "f1");
        for t in &self.per_type {
            let _ = writeln!(s, "{:<15} {:>6} {:>9.4} {:>9.4}", t.command_type.as_str(), t.count, t.accuracy, t.weighted_f1);
        }
        if let Some(d) = &self.score_distribution.differences {
            s.push('\n');
            let _ = writeln!(
                s,
                "mean difference correct vs incorrect: discrepancy {:.3}  vagueness {:.3}  confidence {:.3}",
                d.discrepancy, d.vagueness, d.confidence
            );
        }
        s
    }
}

/// Correct and incorrect counts under one condition, restricted to the
/// events refined in the STM+LTM run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubsetOutcome {
    pub condition: AblationCondition,
    pub correct: usize,
    pub incorrect: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementSubset {
    pub events: usize,
    pub outcomes: Vec<SubsetOutcome>,
}

impl RefinementSubset {
    pub fn outcome(&self, condition: AblationCondition) -> Option<&SubsetOutcome> {
        self.outcomes.iter().find(|o| o.condition == condition)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub reports: Vec<EvalReport>,
    pub refinement_subset: Option<RefinementSubset>,
}

impl AblationReport {
    /// Recomputes from per-condition logs. The refinement subset needs an
    /// STM+LTM log.
    pub fn from_logs(logs: &[DecisionLog], ece_bins: usize) -> Result<Self, EvalError> {
        let reports = logs.iter().map(|l| EvalReport::from_log(l, ece_bins)).collect::<Result<Vec<_>, _>>()?;
        let refinement_subset = logs.iter().find(|l| l.header.condition == AblationCondition::StmPlusLtm).map(|full| {
            let refined: std::collections::BTreeSet<&str> =
                full.decisions.iter().filter(|d| d.refined).map(|d| d.event_id.as_str()).collect();
            let outcomes = logs
                .iter()
                .map(|l| {
                    let (mut correct, mut incorrect) = (0, 0);
                    for d in l.decisions.iter().filter(|d| refined.contains(d.event_id.as_str())) {
                        if d.final_mode.is_some() && d.final_mode == d.ground_truth {
                            correct += 1;
                        } else {
                            incorrect += 1;
                        }
                    }
                    SubsetOutcome { condition: l.header.condition, correct, incorrect }
                })
                .collect();
            RefinementSubset { events: refined.len(), outcomes }
        });
        Ok(Self { reports, refinement_subset })
    }

    pub fn report(&self, condition: AblationCondition) -> Option<&EvalReport> {
        self.reports.iter().find(|r| r.condition == condition)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<11} {:>6} {:>8} {:>9} {:>8} {:>8} {:>8} {:>8} {:>7} {:>6}",
            "condition", "n", "accuracy", "precision", "recall", "f1", "brier", "ece", "refined", "errors"
        );
        for r in &self.reports {
            let _ = writeln!(
                s,
                "{:<11} {:>6} {:>8.4} {:>9.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>7} {:>6}",
                r.condition.tag(),
                r.records,
                r.accuracy,
                r.prf.precision,
                r.prf.recall,
                r.prf.f1,
                r.brier,
                r.ece,
                r.refined,
                r.errors
            );
        }
        s.push('\n');
        let _ = writeln!(s, "weighted F1 by command type");
        let _ = write!(s, "{:<11}", "condition");
        for t in CommandType::ALL {
            let _ = write!(s, " {:>15}", t.as_str());
        }
        s.push('\n');
        for r in &self.reports {
            let _ = write!(s, "{:<11}", r.condition.tag());
            for t in CommandType::ALL {
                match r.type_f1(t) {
                    Some(f) => {
                        let _ = write!(s, " {f:>15.4}");
                    }
                    None => {
                        let _ = write!(s, " {:>15}", "-");
                    }
                }
            }
            s.push('\n');
        }
        if let Some(sub) = &self.refinement_subset {
            s.push('\n');
            let _ = writeln!(s, "events refined under STMplusLTM: {}", sub.events);
            for o in &sub.outcomes {
                let _ = writeln!(s, "{:<11} correct {:>5}  incorrect {:>5}", o.condition.tag(), o.correct, o.incorrect);
            }
        }
        s
    }
}

/// Output of [`run_ablation`]: a log per condition and the combined report.
#[derive(Debug, Clone)]
pub struct AblationRun {
    pub logs: Vec<DecisionLog>,
    pub report: AblationReport,
}

/// Runs each condition over the same records with a fresh agent and a
/// backend from `backend_factory`.
pub fn run_ablation<F>(
    records: &[EpisodeRecord],
    mut backend_factory: F,
    conditions: &[AblationCondition],
    config: &EngineConfig,
) -> Result<AblationRun, EvalError>
where
    F: FnMut(AblationCondition) -> Result<Box<dyn PerceptionBackend>, String>,
{
    let mut logs = Vec::with_capacity(conditions.len());
    for &condition in conditions {
        let backend =
            backend_factory(condition).map_err(|reason| EvalError::Backend { condition, reason })?;
        let kind: BackendKind = backend.kind();
        let mut agent = Agent::with_hash_embedder(config.clone(), condition, backend);
        let mut log = DecisionLog::new(config, condition, kind);
        log.decisions = agent.run_dataset(records);
        logs.push(log);
    }
    let report = AblationReport::from_logs(&logs, config.ece_bins)?;
    Ok(AblationRun { logs, report })
}
