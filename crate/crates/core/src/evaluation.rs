//! Experiment protocol: train on the first k classes, run on all classes,
//! and sort every test record into one of four outcomes.
//!
//! | prediction | verdict | outcome |
//! |------------|---------|---------|
//! | correct    | reject  | false positive |
//! | correct    | accept  | true negative |
//! | wrong      | reject  | true positive |
//! | wrong      | accept  | false negative |
//!
//! A record whose truth is not a known class never counts as correct.

pub mod synthetic;

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{threshold_verdict, ThresholdConfig};
use crate::clustering::ClusteringConfig;
use crate::dumps::ActivationRecord;
use crate::geometry::{check_gamma, DomainKind, EnlargementFactor};
use crate::layer::LayerIndex;
use crate::monitor::{cluster_layer, train_monitor, Monitor, Verdict};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Detector {
    Monitor,
    Threshold { alpha: f64, normalize: bool },
}

impl Detector {
    pub fn label(&self) -> String {
        match self {
            Detector::Monitor => "monitor".into(),
            Detector::Threshold { alpha, normalize: false } => format!("threshold:{alpha}"),
            Detector::Threshold { alpha, normalize: true } => format!("threshold:{alpha}:normalized"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub k_known: usize,
    pub n_total: usize,
    pub layers: Vec<LayerIndex>,
    pub domain: DomainKind,
    pub clustering: ClusteringConfig,
    pub gamma: f64,
    pub include_test_training: bool,
    pub detector: Detector,
}

impl ExperimentConfig {
    /// Box monitor on `layers` with default clustering and no enlargement.
    pub fn new(k_known: usize, n_total: usize, layers: Vec<LayerIndex>) -> Self {
        ExperimentConfig {
            k_known,
            n_total,
            layers,
            domain: DomainKind::Box,
            clustering: ClusteringConfig::default(),
            gamma: 0.0,
            include_test_training: false,
            detector: Detector::Monitor,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_known < 2 || self.k_known >= self.n_total {
            return Err(Error::InvalidConfig(format!(
                "need 2 <= k < n, got k = {} and n = {}",
                self.k_known, self.n_total
            )));
        }
        match self.detector {
            Detector::Monitor => {
                if self.layers.is_empty() {
                    return Err(Error::InvalidConfig("at least one layer must be watched".into()));
                }
                check_gamma(self.gamma)?;
                self.clustering.validate()
            }
            Detector::Threshold { .. } => self.threshold_config().map(|_| ()),
        }
    }

    fn threshold_config(&self) -> Result<ThresholdConfig> {
        match self.detector {
            Detector::Threshold { alpha, normalize } => ThresholdConfig::new(alpha, normalize, self.k_known),
            Detector::Monitor => Err(Error::InvalidConfig("not a threshold detector".into())),
        }
    }
}

/// The classes a network trained on `k` classes knows: `0..k`.
pub fn select_known_classes(k: usize) -> Vec<usize> {
    (0..k).collect()
}

pub fn is_novel(truth: usize, k_known: usize) -> bool {
    truth >= k_known
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    TruePositive,
    FalsePositive,
    FalseNegative,
    TrueNegative,
}

pub fn classify_outcome(truth: usize, pred: usize, accepted: bool, k_known: usize) -> Outcome {
    let correct = !is_novel(truth, k_known) && pred == truth;
    match (correct, accepted) {
        (true, false) => Outcome::FalsePositive,
        (true, true) => Outcome::TrueNegative,
        (false, false) => Outcome::TruePositive,
        (false, true) => Outcome::FalseNegative,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub true_pos: usize,
    pub false_pos: usize,
    pub false_neg: usize,
    pub true_neg: usize,
}

impl OutcomeCounts {
    pub fn add(&mut self, o: Outcome) {
        match o {
            Outcome::TruePositive => self.true_pos += 1,
            Outcome::FalsePositive => self.false_pos += 1,
            Outcome::FalseNegative => self.false_neg += 1,
            Outcome::TrueNegative => self.true_neg += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.true_pos + self.false_pos + self.false_neg + self.true_neg
    }

    /// Rejections of any kind.
    pub fn warnings(&self) -> usize {
        self.true_pos + self.false_pos
    }

    fn pct(&self, n: usize) -> f64 {
        match self.total() {
            0 => 0.0,
            t => n as f64 / t as f64 * 100.0,
        }
    }

    pub fn tp_pct(&self) -> f64 {
        self.pct(self.true_pos)
    }

    pub fn fp_pct(&self) -> f64 {
        self.pct(self.false_pos)
    }

    pub fn fn_pct(&self) -> f64 {
        self.pct(self.false_neg)
    }

    pub fn tn_pct(&self) -> f64 {
        self.pct(self.true_neg)
    }
}

impl FromIterator<Outcome> for OutcomeCounts {
    fn from_iter<I: IntoIterator<Item = Outcome>>(iter: I) -> Self {
        let mut c = OutcomeCounts::default();
        for o in iter {
            c.add(o);
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordOutcome {
    pub id: u64,
    pub truth: usize,
    pub pred: usize,
    pub accepted: bool,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub k_known: usize,
    pub counts: OutcomeCounts,
    pub records: Vec<RecordOutcome>,
}

impl ExperimentResult {
    fn from_records(k_known: usize, records: Vec<RecordOutcome>) -> Self {
        ExperimentResult {
            k_known,
            counts: records.iter().map(|r| r.outcome).collect(),
            records,
        }
    }

    /// Share of novel-class records that were rejected.
    pub fn novel_detection_rate(&self) -> f64 {
        let novel: Vec<_> = self.records.iter().filter(|r| is_novel(r.truth, self.k_known)).collect();
        ratio(novel.iter().filter(|r| !r.accepted).count(), novel.len())
    }

    /// Share of known-class records that are false positives.
    pub fn known_false_alarm_rate(&self) -> f64 {
        let known: Vec<_> = self.records.iter().filter(|r| !is_novel(r.truth, self.k_known)).collect();
        ratio(
            known.iter().filter(|r| r.outcome == Outcome::FalsePositive).count(),
            known.len(),
        )
    }

    pub fn rejected_ids(&self) -> Vec<u64> {
        self.records.iter().filter(|r| !r.accepted).map(|r| r.id).collect()
    }
}

fn ratio(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

fn check_test_labels(test: &[ActivationRecord], n_total: usize) -> Result<()> {
    match test.iter().find(|r| r.truth >= n_total) {
        Some(r) => Err(Error::Schema(format!(
            "record {} has truth {} outside 0..{n_total}",
            r.id, r.truth
        ))),
        None => Ok(()),
    }
}

/// Records the monitor is built from: known-class training records, plus
/// known-class test records when simulating a converged abstraction.
pub fn training_records(
    train: &[ActivationRecord],
    test: &[ActivationRecord],
    k_known: usize,
    include_test_training: bool,
) -> Vec<ActivationRecord> {
    let extra = if include_test_training { test } else { &[] };
    train
        .iter()
        .chain(extra)
        .filter(|r| !is_novel(r.truth, k_known))
        .cloned()
        .collect()
}

/// Evaluates `verdict` on every test record, in order.
pub fn evaluate_with<F>(test: &[ActivationRecord], k_known: usize, verdict: F) -> Result<ExperimentResult>
where
    F: Fn(&ActivationRecord) -> Result<Verdict> + Sync,
{
    let records = test
        .par_iter()
        .map(|r| {
            let accepted = verdict(r)?.accepted;
            Ok(RecordOutcome {
                id: r.id,
                truth: r.truth,
                pred: r.pred,
                accepted,
                outcome: classify_outcome(r.truth, r.pred, accepted, k_known),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentResult::from_records(k_known, records))
}

pub fn evaluate_monitor(monitor: &Monitor, test: &[ActivationRecord], k_known: usize) -> Result<ExperimentResult> {
    evaluate_with(test, k_known, |r| monitor.verdict_record(r))
}

pub fn train_experiment_monitor(
    train: &[ActivationRecord],
    test: &[ActivationRecord],
    config: &ExperimentConfig,
) -> Result<Monitor> {
    config.validate()?;
    let records = training_records(train, test, config.k_known, config.include_test_training);
    train_monitor(&records, &config.layers, config.k_known, config.domain, &config.clustering)?.enlarge(config.gamma)
}

pub fn run_experiment(
    train: &[ActivationRecord],
    test: &[ActivationRecord],
    config: &ExperimentConfig,
) -> Result<ExperimentResult> {
    config.validate()?;
    check_test_labels(test, config.n_total)?;
    match config.detector {
        Detector::Monitor => {
            let monitor = train_experiment_monitor(train, test, config)?;
            evaluate_monitor(&monitor, test, config.k_known)
        }
        Detector::Threshold { .. } => {
            let tc = config.threshold_config()?;
            evaluate_with(test, config.k_known, |r| {
                threshold_verdict(r.layer(LayerIndex::OUTPUT)?, r.pred, &tc)
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub gamma: f64,
    pub counts: OutcomeCounts,
}

/// Per-record minimal enlargement factors of a box monitor.
pub fn record_factors(monitor: &Monitor, test: &[ActivationRecord]) -> Result<Vec<EnlargementFactor>> {
    test.par_iter()
        .map(|r| monitor.min_gamma_to_accept(r.pred, &r.layers))
        .collect()
}

/// Outcome counts for every γ in `gammas`.
///
/// Geometry is queried once per record; a record is accepted at γ iff its
/// minimal factor is at most γ. The monitor's own γ is ignored.
pub fn gamma_sweep(
    monitor: &Monitor,
    test: &[ActivationRecord],
    k_known: usize,
    gammas: &[f64],
) -> Result<Vec<SweepRow>> {
    for &g in gammas {
        check_gamma(g)?;
    }
    let factors = record_factors(monitor, test)?;
    Ok(gammas
        .iter()
        .map(|&gamma| SweepRow {
            gamma,
            counts: test
                .iter()
                .zip(&factors)
                .map(|(r, f)| classify_outcome(r.truth, r.pred, f.accepted_at(gamma), k_known))
                .collect(),
        })
        .collect())
}

/// Parses `start:stop:step` into an inclusive grid.
pub fn parse_gamma_grid(s: &str) -> Result<Vec<f64>> {
    let bad = || Error::InvalidConfig(format!("expected start:stop:step, got {s:?}"));
    let parts: Vec<f64> = s
        .split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    let [start, stop, step] = parts[..] else {
        return Err(bad());
    };
    if !(start >= 0.0 && stop >= start && step > 0.0 && stop.is_finite()) {
        return Err(bad());
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| start + i as f64 * step).collect())
}

/// One experiment per layer subset. The monitor is trained once on the union
/// of all layers; per-layer training is independent, so restricting it is the
/// same as training on the subset.
pub fn layer_combination_study(
    train: &[ActivationRecord],
    test: &[ActivationRecord],
    config: &ExperimentConfig,
    subsets: &[Vec<LayerIndex>],
) -> Result<Vec<(Vec<LayerIndex>, ExperimentResult)>> {
    let mut all: Vec<LayerIndex> = subsets.iter().flatten().copied().collect();
    all.sort();
    all.dedup();
    let base = ExperimentConfig {
        layers: all,
        detector: Detector::Monitor,
        ..config.clone()
    };
    base.validate()?;
    check_test_labels(test, config.n_total)?;
    let monitor = train_experiment_monitor(train, test, &base)?;
    subsets
        .iter()
        .map(|s| {
            let m = monitor.restrict(s)?;
            Ok((s.clone(), evaluate_monitor(&m, test, config.k_known)?))
        })
        .collect()
}

/// One experiment per domain. Unless `recluster` is set, clustering runs once
/// per layer and every domain abstracts the same clusters.
pub fn compare_abstractions(
    train: &[ActivationRecord],
    test: &[ActivationRecord],
    config: &ExperimentConfig,
    domains: &[DomainKind],
    recluster: bool,
) -> Result<Vec<(DomainKind, ExperimentResult)>> {
    let base = ExperimentConfig {
        detector: Detector::Monitor,
        ..config.clone()
    };
    base.validate()?;
    check_test_labels(test, config.n_total)?;
    if recluster {
        return domains
            .iter()
            .map(|&domain| {
                let c = ExperimentConfig { domain, ..base.clone() };
                Ok((domain, run_experiment(train, test, &c)?))
            })
            .collect();
    }
    let records = training_records(train, test, config.k_known, config.include_test_training);
    let clusters = base
        .layers
        .iter()
        .map(|&l| cluster_layer(&records, l, config.k_known, &config.clustering))
        .collect::<Result<Vec<_>>>()?;
    domains
        .iter()
        .map(|&domain| {
            let layers = clusters
                .iter()
                .map(|c| c.abstract_with(domain))
                .collect::<Result<Vec<_>>>()?;
            let monitor = Monitor::new(config.k_known, layers)?.enlarge(config.gamma)?;
            Ok((domain, evaluate_monitor(&monitor, test, config.k_known)?))
        })
        .collect()
}

pub fn format_layers(layers: &[LayerIndex]) -> String {
    layers.iter().map(ToString::to_string).collect::<Vec<_>>().join(";")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutcomeRow {
    pub k: usize,
    pub detector: String,
    pub domain: Option<DomainKind>,
    pub layers: String,
    pub tau: Option<f64>,
    pub gamma: Option<f64>,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub tp_pct: f64,
    pub fp_pct: f64,
    pub fn_pct: f64,
    pub tn_pct: f64,
}

impl OutcomeRow {
    pub fn new(config: &ExperimentConfig, counts: &OutcomeCounts) -> Self {
        let monitor = matches!(config.detector, Detector::Monitor);
        OutcomeRow {
            k: config.k_known,
            detector: config.detector.label(),
            domain: monitor.then_some(config.domain),
            layers: if monitor {
                format_layers(&config.layers)
            } else {
                LayerIndex::OUTPUT.to_string()
            },
            tau: monitor.then_some(config.clustering.tau),
            gamma: monitor.then_some(config.gamma),
            tp: counts.true_pos,
            fp: counts.false_pos,
            fn_: counts.false_neg,
            tn: counts.true_neg,
            tp_pct: counts.tp_pct(),
            fp_pct: counts.fp_pct(),
            fn_pct: counts.fn_pct(),
            tn_pct: counts.tn_pct(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
struct SweepCsvRow {
    gamma: f64,
    fp_pct: f64,
    fn_pct: f64,
    tp_pct: f64,
}

pub fn write_outcomes_to<W: Write>(w: W, rows: &[OutcomeRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush().map_err(|e| Error::io("<outcomes>", e))?;
    Ok(())
}

pub fn write_gamma_sweep_to<W: Write>(w: W, rows: &[SweepRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(SweepCsvRow {
            gamma: r.gamma,
            fp_pct: r.counts.fp_pct(),
            fn_pct: r.counts.fn_pct(),
            tp_pct: r.counts.tp_pct(),
        })?;
    }
    out.flush().map_err(|e| Error::io("<gamma sweep>", e))?;
    Ok(())
}

fn create(path: &Path) -> Result<std::fs::File> {
    std::fs::File::create(path).map_err(|e| Error::io(path, e))
}

pub fn write_outcomes(path: impl AsRef<Path>, rows: &[OutcomeRow]) -> Result<()> {
    write_outcomes_to(create(path.as_ref())?, rows)
}

pub fn write_gamma_sweep(path: impl AsRef<Path>, rows: &[SweepRow]) -> Result<()> {
    write_gamma_sweep_to(create(path.as_ref())?, rows)
}
