//! Monitor construction and runtime verdicts.
//!
//! Training collects, per class `y`, the watched vectors of records with
//! `truth = pred = y`, splits them with [`adaptive_cluster`], and abstracts
//! every cluster. At runtime a prediction `y` is accepted iff, at every
//! watched layer, some abstraction of class `y` contains the observed vector.
//!
//! Enlargement is stored as a factor on the monitor and applied lazily at
//! query time, so one trained monitor can be re-queried at many γ values.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{adaptive_cluster, ClusteringConfig};
use crate::dumps::ActivationRecord;
use crate::geometry::{check_gamma, Abstraction, DomainKind, EnlargementFactor};
use crate::layer::LayerIndex;
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

/// Per-class abstractions at one watched layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerMonitor {
    pub layer: LayerIndex,
    pub domain: DomainKind,
    pub tau: f64,
    pub classes: BTreeMap<usize, Vec<Abstraction>>,
}

impl LayerMonitor {
    pub fn abstractions(&self, class: usize) -> &[Abstraction] {
        self.classes.get(&class).map_or(&[], Vec::as_slice)
    }

    /// Whether some abstraction of `class`, enlarged by `gamma`, contains `v`.
    pub fn contains(&self, class: usize, v: &[f64], gamma: f64) -> Result<bool> {
        for a in self.abstractions(class) {
            if a.contains_enlarged(v, gamma)? {
                return Ok(true);
            }
        }
        Ok(false)
    }

    /// Smallest box enlargement of `class` that contains `v`.
    pub fn min_gamma(&self, class: usize, v: &[f64]) -> Result<EnlargementFactor> {
        let mut best = EnlargementFactor::INFINITE;
        for a in self.abstractions(class) {
            let Abstraction::Box(b) = a else {
                return Err(Error::UnsupportedDomain(a.kind().to_string()));
            };
            let g = b.gamma_factor(v)?;
            if g < best {
                best = g;
            }
        }
        Ok(best)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerVerdict {
    pub layer: LayerIndex,
    pub contained: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub accepted: bool,
    pub layers: Vec<LayerVerdict>,
}

impl Verdict {
    pub fn from_layers(layers: Vec<LayerVerdict>) -> Self {
        Verdict {
            accepted: layers.iter().all(|l| l.contained),
            layers,
        }
    }

    pub fn as_str(&self) -> &'static str {
        if self.accepted {
            "accept"
        } else {
            "reject"
        }
    }
}

/// A list of layer monitors combined by conjunction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MonitorFile", into = "MonitorFile")]
pub struct Monitor {
    n_classes: usize,
    gamma: f64,
    layers: Vec<LayerMonitor>,
}

#[derive(Serialize, Deserialize)]
struct MonitorFile {
    version: u32,
    n_classes: usize,
    gamma: f64,
    layers: Vec<LayerMonitor>,
}

impl TryFrom<MonitorFile> for Monitor {
    type Error = Error;

    fn try_from(f: MonitorFile) -> Result<Self> {
        if f.version != FORMAT_VERSION {
            return Err(Error::Schema(format!(
                "unsupported monitor version {} (expected {FORMAT_VERSION})",
                f.version
            )));
        }
        let mut m = Monitor::new(f.n_classes, f.layers)?;
        m.set_gamma(f.gamma)?;
        Ok(m)
    }
}

impl From<Monitor> for MonitorFile {
    fn from(m: Monitor) -> Self {
        MonitorFile {
            version: FORMAT_VERSION,
            n_classes: m.n_classes,
            gamma: m.gamma,
            layers: m.layers,
        }
    }
}

impl Monitor {
    pub fn new(n_classes: usize, layers: Vec<LayerMonitor>) -> Result<Self> {
        let m = Monitor {
            n_classes,
            gamma: 0.0,
            layers,
        };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        if self.n_classes == 0 {
            return Err(Error::Schema("monitor needs at least one class".into()));
        }
        if self.layers.is_empty() {
            return Err(Error::Schema("monitor needs at least one layer".into()));
        }
        let class_set: Vec<usize> = self.layers[0].classes.keys().copied().collect();
        for lm in &self.layers {
            if lm.classes.keys().copied().ne(class_set.iter().copied()) {
                return Err(Error::Schema("layer monitors disagree on the class set".into()));
            }
            if let Some(&c) = lm.classes.keys().find(|&&c| c >= self.n_classes) {
                return Err(Error::Schema(format!(
                    "class {c} is outside 0..{}",
                    self.n_classes
                )));
            }
            let mut dim = None;
            for a in lm.classes.values().flatten() {
                a.validate()?;
                if a.kind() != lm.domain {
                    return Err(Error::Schema(format!(
                        "layer {} declares domain {} but holds a {}",
                        lm.layer,
                        lm.domain,
                        a.kind()
                    )));
                }
                match dim {
                    None => dim = Some(a.dim()),
                    Some(d) => Error::check_dim(d, a.dim())?,
                }
            }
        }
        let mut keys: Vec<LayerIndex> = self.layers.iter().map(|l| l.layer).collect();
        keys.sort();
        keys.dedup();
        if keys.len() != self.layers.len() {
            return Err(Error::Schema("a layer is monitored twice".into()));
        }
        Ok(())
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn layers(&self) -> &[LayerMonitor] {
        &self.layers
    }

    pub fn layer_keys(&self) -> Vec<LayerIndex> {
        self.layers.iter().map(|l| l.layer).collect()
    }

    fn set_gamma(&mut self, gamma: f64) -> Result<()> {
        check_gamma(gamma)?;
        self.gamma = gamma;
        Ok(())
    }

    /// The same abstractions, queried with enlargement factor `gamma`.
    pub fn enlarge(&self, gamma: f64) -> Result<Monitor> {
        let mut m = self.clone();
        m.set_gamma(gamma)?;
        Ok(m)
    }

    /// Keeps only the layer monitors whose layer is in `layers`, in that order.
    pub fn restrict(&self, layers: &[LayerIndex]) -> Result<Monitor> {
        let picked = layers
            .iter()
            .map(|l| {
                self.layers
                    .iter()
                    .find(|lm| lm.layer == *l)
                    .cloned()
                    .ok_or(Error::MissingLayer(*l))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut m = Monitor::new(self.n_classes, picked)?;
        m.gamma = self.gamma;
        Ok(m)
    }

    fn check_class(&self, pred: usize) -> Result<()> {
        if pred < self.n_classes {
            Ok(())
        } else {
            Err(Error::UnknownClass {
                class: pred,
                known: self.n_classes,
            })
        }
    }

    pub fn verdict(&self, pred: usize, watched: &BTreeMap<LayerIndex, Vec<f64>>) -> Result<Verdict> {
        self.check_class(pred)?;
        let layers = self
            .layers
            .iter()
            .map(|lm| {
                let v = watched.get(&lm.layer).ok_or(Error::MissingLayer(lm.layer))?;
                Ok(LayerVerdict {
                    layer: lm.layer,
                    contained: lm.contains(pred, v, self.gamma)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Verdict::from_layers(layers))
    }

    pub fn verdict_record(&self, record: &ActivationRecord) -> Result<Verdict> {
        self.verdict(record.pred, &record.layers)
    }

    /// Smallest γ at which the verdict becomes accept (box monitors only).
    ///
    /// Per layer this is the minimum box factor over the predicted class;
    /// across layers it is the maximum.
    pub fn min_gamma_to_accept(
        &self,
        pred: usize,
        watched: &BTreeMap<LayerIndex, Vec<f64>>,
    ) -> Result<EnlargementFactor> {
        self.check_class(pred)?;
        if let Some(lm) = self.layers.iter().find(|l| l.domain != DomainKind::Box) {
            return Err(Error::UnsupportedDomain(lm.domain.to_string()));
        }
        let mut worst = EnlargementFactor::ZERO;
        for lm in &self.layers {
            let v = watched.get(&lm.layer).ok_or(Error::MissingLayer(lm.layer))?;
            let g = lm.min_gamma(pred, v)?;
            if g > worst {
                worst = g;
            }
        }
        Ok(worst)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Monitor> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Monitor> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| {
            if e.is_data() {
                Error::Schema(format!("{}: {e}", path.display()))
            } else {
                Error::Parse {
                    path: path.to_path_buf(),
                    line: e.line(),
                    message: e.to_string(),
                }
            }
        })
    }
}

/// Clusters of correctly classified vectors per class at one layer.
///
/// Kept separate from abstraction so several domains can share one
/// clustering.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerClusters {
    pub layer: LayerIndex,
    pub tau: f64,
    /// `clusters[y]` lists the clusters of class `y`.
    pub clusters: Vec<Vec<Vec<Vec<f64>>>>,
}

impl LayerClusters {
    pub fn abstract_with(&self, domain: DomainKind) -> Result<LayerMonitor> {
        let classes = self
            .clusters
            .par_iter()
            .enumerate()
            .map(|(y, cs)| {
                let list = cs
                    .iter()
                    .map(|c| Abstraction::create(domain, c))
                    .collect::<Result<Vec<_>>>()?;
                Ok((y, list))
            })
            .collect::<Result<BTreeMap<_, _>>>()?;
        Ok(LayerMonitor {
            layer: self.layer,
            domain,
            tau: self.tau,
            classes,
        })
    }
}

/// Watched vectors of correctly classified records, grouped by class.
pub fn collect_class_vectors(
    records: &[ActivationRecord],
    layer: LayerIndex,
    n_classes: usize,
) -> Result<Vec<Vec<&[f64]>>> {
    let mut by_class = vec![Vec::new(); n_classes];
    for r in records {
        let v = r.layer(layer)?;
        if r.is_correct() && r.truth < n_classes {
            by_class[r.truth].push(v);
        }
    }
    Ok(by_class)
}

pub fn cluster_layer(
    records: &[ActivationRecord],
    layer: LayerIndex,
    n_classes: usize,
    config: &ClusteringConfig,
) -> Result<LayerClusters> {
    config.validate()?;
    let by_class = collect_class_vectors(records, layer, n_classes)?;
    let clusters = by_class
        .par_iter()
        .enumerate()
        .map(|(y, vectors)| {
            if vectors.is_empty() {
                warn!("layer {layer}: class {y} has no correctly classified samples; it will always be rejected");
                return Ok(Vec::new());
            }
            let clustering = adaptive_cluster(vectors, config)?;
            Ok(clustering
                .clusters(vectors)
                .into_iter()
                .map(|c| c.into_iter().map(<[f64]>::to_vec).collect())
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LayerClusters {
        layer,
        tau: config.tau,
        clusters,
    })
}

pub fn train_layer_monitor(
    records: &[ActivationRecord],
    layer: LayerIndex,
    n_classes: usize,
    domain: DomainKind,
    config: &ClusteringConfig,
) -> Result<LayerMonitor> {
    cluster_layer(records, layer, n_classes, config)?.abstract_with(domain)
}

/// Trains one layer monitor per entry of `layers`.
pub fn train_monitor(
    records: &[ActivationRecord],
    layers: &[LayerIndex],
    n_classes: usize,
    domain: DomainKind,
    config: &ClusteringConfig,
) -> Result<Monitor> {
    if n_classes == 0 {
        return Err(Error::InvalidConfig("n_classes must be positive".into()));
    }
    let monitors = layers
        .par_iter()
        .map(|&l| train_layer_monitor(records, l, n_classes, domain, config))
        .collect::<Result<Vec<_>>>()?;
    Monitor::new(n_classes, monitors)
}
