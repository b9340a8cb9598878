//! Output-probability threshold detector.
//!
//! Rejects a prediction when the probability of the predicted class,
//! computed by plain normalization `o_i / Σ o_j`, falls below a threshold.
//! With `normalize`, α is first rescaled from `[0, 1]` into `[1/n, 1]`, the
//! range a maximum probability over `n` classes can actually take.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::geometry::{Abstraction, BoxAbstraction, DomainKind, Interval};
use crate::layer::LayerIndex;
use crate::monitor::{LayerMonitor, LayerVerdict, Monitor, Verdict};
use crate::network::normalize;
use crate::{Error, Result};

/// Stand-in for an unbounded interval in the box encoding.
pub const UNBOUNDED: f64 = 1e30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdConfig {
    pub alpha: f64,
    pub normalize: bool,
    pub n_known: usize,
}

impl ThresholdConfig {
    pub fn new(alpha: f64, normalize: bool, n_known: usize) -> Result<Self> {
        let c = ThresholdConfig { alpha, normalize, n_known };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidConfig(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if self.n_known == 0 || (self.normalize && self.n_known < 2) {
            return Err(Error::InvalidConfig(format!(
                "normalization needs at least 2 known classes, got {}",
                self.n_known
            )));
        }
        Ok(())
    }
}

/// α′: α itself, or α mapped affinely onto `[1/n, 1]`.
pub fn effective_threshold(config: &ThresholdConfig) -> Result<f64> {
    config.validate()?;
    if !config.normalize {
        return Ok(config.alpha);
    }
    let inv = 1.0 / config.n_known as f64;
    Ok((inv + (1.0 - inv) * config.alpha).min(1.0))
}

fn probabilities(outputs: &[f64]) -> Result<Vec<f64>> {
    if let Some(o) = outputs.iter().find(|o| !o.is_finite() || **o < 0.0) {
        return Err(Error::Schema(format!(
            "threshold detector needs finite nonnegative outputs, got {o}"
        )));
    }
    normalize(outputs)
}

pub fn threshold_verdict(outputs: &[f64], pred: usize, config: &ThresholdConfig) -> Result<Verdict> {
    let threshold = effective_threshold(config)?;
    Error::check_dim(config.n_known, outputs.len())?;
    if pred >= outputs.len() {
        return Err(Error::UnknownClass { class: pred, known: outputs.len() });
    }
    let p = probabilities(outputs)?;
    Ok(Verdict::from_layers(vec![LayerVerdict {
        layer: LayerIndex::OUTPUT,
        contained: p[pred] >= threshold,
    }]))
}

/// The threshold detector as a box monitor on normalized outputs.
///
/// Class `i` gets the single box `[α′, 1]` in dimension `i` and
/// `[-UNBOUNDED, UNBOUNDED]` elsewhere. Query it with [`normalized_watch`].
pub fn threshold_monitor(config: &ThresholdConfig) -> Result<Monitor> {
    let threshold = effective_threshold(config)?;
    let n = config.n_known;
    let classes = (0..n)
        .map(|i| {
            let intervals = (0..n)
                .map(|j| {
                    if i == j {
                        Interval::new(threshold, 1.0)
                    } else {
                        Interval::new(-UNBOUNDED, UNBOUNDED)
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((i, vec![Abstraction::Box(BoxAbstraction::from_intervals(intervals)?)]))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;
    Monitor::new(
        n,
        vec![LayerMonitor {
            layer: LayerIndex::OUTPUT,
            domain: DomainKind::Box,
            tau: 1.0,
            classes,
        }],
    )
}

/// Output probabilities keyed by the output layer.
pub fn normalized_watch(outputs: &[f64]) -> Result<BTreeMap<LayerIndex, Vec<f64>>> {
    Ok(BTreeMap::from([(LayerIndex::OUTPUT, probabilities(outputs)?)]))
}
