//! Seeded Gaussian-blob datasets shaped like activation dumps.
//!
//! Every class is an isotropic Gaussian around a center; centers are drawn
//! with rejection so that all pairs are at least `separation` apart. The
//! "network" predicts the nearest known center. Records carry three layers:
//!
//! - `-3`: the features under a fixed random linear map
//! - `-2`: the raw features
//! - `-1`: scores `1 / (1 + |x - c_j|²)` over the known classes

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dumps::{ActivationRecord, DumpMeta};
use crate::layer::LayerIndex;
use crate::network::argmax;
use crate::{Error, Result};

pub const MIXED: LayerIndex = LayerIndex(-3);
pub const FEATURES: LayerIndex = LayerIndex(-2);
pub const SCORES: LayerIndex = LayerIndex(-1);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_classes: usize,
    pub k_known: usize,
    pub dim: usize,
    pub separation: f64,
    pub spread: f64,
    /// Extra spread factor along the first feature axis (1 = isotropic).
    pub stretch: f64,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_classes: 4,
            k_known: 2,
            dim: 10,
            separation: 20.0,
            spread: 1.0,
            stretch: 1.0,
            train_per_class: 500,
            test_per_class: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub config: SyntheticConfig,
    pub centers: Vec<Vec<f64>>,
    pub mixing: Vec<Vec<f64>>,
    /// Known classes only.
    pub train: Vec<ActivationRecord>,
    /// All classes.
    pub test: Vec<ActivationRecord>,
}

impl SyntheticData {
    pub fn meta(&self) -> DumpMeta {
        let c = &self.config;
        DumpMeta::new(
            c.n_classes,
            BTreeMap::from([(MIXED, c.dim), (FEATURES, c.dim), (SCORES, c.k_known)]),
            "synthetic",
        )
    }
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn draw_centers(rng: &mut ChaCha8Rng, c: &SyntheticConfig) -> Result<Vec<Vec<f64>>> {
    let side = c.separation * c.n_classes as f64;
    let min_sq = c.separation * c.separation;
    for _ in 0..1000 {
        let mut centers: Vec<Vec<f64>> = Vec::with_capacity(c.n_classes);
        let mut attempts = 0;
        while centers.len() < c.n_classes && attempts < 10_000 {
            attempts += 1;
            let cand: Vec<f64> = (0..c.dim).map(|_| rng.random_range(0.0..side)).collect();
            if centers.iter().all(|o| dist_sq(o, &cand) >= min_sq) {
                centers.push(cand);
            }
        }
        if centers.len() == c.n_classes {
            return Ok(centers);
        }
    }
    Err(Error::InvalidConfig("could not place well-separated class centers".into()))
}

pub fn generate(config: &SyntheticConfig) -> Result<SyntheticData> {
    let c = config;
    if c.k_known == 0 || c.k_known > c.n_classes || c.dim == 0 {
        return Err(Error::InvalidConfig("synthetic data needs 0 < k_known <= n_classes and dim > 0".into()));
    }
    if !(c.separation >= 0.0 && c.spread > 0.0 && c.stretch > 0.0) {
        return Err(Error::InvalidConfig("separation, spread and stretch must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let centers = draw_centers(&mut rng, c)?;
    let scale = 1.0 / (c.dim as f64).sqrt();
    let mixing: Vec<Vec<f64>> = (0..c.dim)
        .map(|_| (0..c.dim).map(|_| rng.sample::<f64, _>(StandardNormal) * scale).collect())
        .collect();

    let mut next_id = 0u64;
    let mut sample = |rng: &mut ChaCha8Rng, class: usize| {
        let x: Vec<f64> = centers[class]
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let s = if i == 0 { c.spread * c.stretch } else { c.spread };
                m + s * rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        let mixed: Vec<f64> = mixing.iter().map(|row| row.iter().zip(&x).map(|(a, b)| a * b).sum()).collect();
        let scores: Vec<f64> = centers[..c.k_known].iter().map(|m| 1.0 / (1.0 + dist_sq(&x, m))).collect();
        let pred = argmax(&scores);
        let id = next_id;
        next_id += 1;
        ActivationRecord {
            id,
            truth: class,
            pred,
            layers: BTreeMap::from([(MIXED, mixed), (FEATURES, x), (SCORES, scores)]),
        }
    };

    let mut train = Vec::with_capacity(c.k_known * c.train_per_class);
    for class in 0..c.k_known {
        for _ in 0..c.train_per_class {
            train.push(sample(&mut rng, class));
        }
    }
    let mut test = Vec::with_capacity(c.n_classes * c.test_per_class);
    for class in 0..c.n_classes {
        for _ in 0..c.test_per_class {
            test.push(sample(&mut rng, class));
        }
    }
    Ok(SyntheticData {
        config: c.clone(),
        centers,
        mixing,
        train,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_separation() {
        let d = generate(&SyntheticConfig::default()).unwrap();
        assert_eq!(d.train.len(), 1000);
        assert_eq!(d.test.len(), 400);
        assert!(d.train.iter().all(|r| r.truth < 2));
        let meta = d.meta();
        for r in d.train.iter().chain(&d.test) {
            meta.validate_record(r).unwrap();
        }
        for (i, a) in d.centers.iter().enumerate() {
            for b in &d.centers[i + 1..] {
                assert!(dist_sq(a, b).sqrt() >= 20.0);
            }
        }
    }

    #[test]
    fn predictions_are_nearest_known_center() {
        let d = generate(&SyntheticConfig { seed: 3, ..Default::default() }).unwrap();
        for r in &d.test {
            let x = r.layer(FEATURES).unwrap();
            let best = (0..2)
                .min_by(|&a, &b| dist_sq(x, &d.centers[a]).total_cmp(&dist_sq(x, &d.centers[b])))
                .unwrap();
            assert_eq!(r.pred, best);
        }
    }

    #[test]
    fn seeded_generation_is_reproducible() {
        let c = SyntheticConfig { seed: 11, ..Default::default() };
        assert_eq!(generate(&c).unwrap(), generate(&c).unwrap());
        let other = generate(&SyntheticConfig { seed: 12, ..c.clone() }).unwrap();
        assert_ne!(generate(&c).unwrap().train, other.train);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(generate(&SyntheticConfig { k_known: 5, ..Default::default() }).is_err());
        assert!(generate(&SyntheticConfig { spread: 0.0, ..Default::default() }).is_err());
    }
}
