//! k-means (Lloyd iterations with k-means++ seeding) and the adaptive choice
//! of the cluster count.
//!
//! The adaptive loop grows k one step at a time while the relative drop of the
//! within-cluster sum of squares, `(SS(k) - SS(k+1)) / SS(k)`, stays at or
//! above the threshold τ.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ClusteringConfig {
    /// Relative-improvement threshold, in `(0, 1]`.
    pub tau: f64,
    pub seed: u64,
    pub max_k: usize,
    pub lloyd_max_iters: usize,
    pub restarts: usize,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        ClusteringConfig {
            tau: 0.07,
            seed: 0,
            max_k: 50,
            lloyd_max_iters: 300,
            restarts: 3,
        }
    }
}

impl ClusteringConfig {
    pub fn with_tau(tau: f64) -> Self {
        ClusteringConfig {
            tau,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "tau must lie in (0, 1], got {}",
                self.tau
            )));
        }
        if self.max_k == 0 || self.lloyd_max_iters == 0 || self.restarts == 0 {
            return Err(Error::InvalidConfig(
                "max_k, lloyd_max_iters and restarts must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Within-cluster sum of squared Euclidean distances.
    pub inertia: f64,
}

impl Clustering {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    /// Groups `points` by assignment; cluster `c` is element `c`.
    pub fn clusters<'a, P: AsRef<[f64]>>(&self, points: &'a [P]) -> Vec<Vec<&'a [f64]>> {
        let mut out = vec![Vec::new(); self.k()];
        for (p, &c) in points.iter().zip(&self.assignments) {
            out[c].push(p.as_ref());
        }
        out
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid; ties go to the lowest index.
fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(p, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn assign_all<P: AsRef<[f64]>>(points: &[P], centroids: &[Vec<f64>]) -> Vec<usize> {
    points.iter().map(|p| nearest(p.as_ref(), centroids).0).collect()
}

fn inertia_of<P: AsRef<[f64]>>(points: &[P], assign: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .zip(assign)
        .map(|(p, &c)| sq_dist(p.as_ref(), &centroids[c]))
        .sum()
}

fn means<P: AsRef<[f64]>>(points: &[P], assign: &[usize], k: usize, d: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (p, &c) in points.iter().zip(assign) {
        counts[c] += 1;
        for (s, &x) in sums[c].iter_mut().zip(p.as_ref()) {
            *s += x;
        }
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        let n = n.max(1) as f64;
        s.iter_mut().for_each(|x| *x /= n);
    }
    sums
}

/// Moves, for each empty cluster, the point farthest from its centroid
/// (among clusters with at least two members) into it.
fn repair_empty<P: AsRef<[f64]>>(points: &[P], assign: &mut [usize], centroids: &[Vec<f64>]) {
    let k = centroids.len();
    let mut counts = vec![0usize; k];
    for &c in assign.iter() {
        counts[c] += 1;
    }
    for empty in 0..k {
        if counts[empty] > 0 {
            continue;
        }
        let mut far: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate() {
            let c = assign[i];
            if counts[c] < 2 {
                continue;
            }
            let d = sq_dist(p.as_ref(), &centroids[c]);
            if far.is_none_or(|(_, best)| d > best) {
                far = Some((i, d));
            }
        }
        if let Some((i, _)) = far {
            counts[assign[i]] -= 1;
            assign[i] = empty;
            counts[empty] += 1;
        }
    }
}

fn kmeans_pp<P: AsRef<[f64]>>(points: &[P], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = Vec::with_capacity(k);
    centroids.push(points[rng.random_range(0..n)].as_ref().to_vec());
    let mut dist: Vec<f64> = points
        .iter()
        .map(|p| sq_dist(p.as_ref(), &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = dist.iter().sum();
        let idx = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &w) in dist.iter().enumerate() {
                acc += w;
                if acc > target && w > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = points[idx].as_ref().to_vec();
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min(sq_dist(p.as_ref(), &c));
        }
        centroids.push(c);
    }
    centroids
}

fn lloyd<P: AsRef<[f64]>>(
    points: &[P],
    mut centroids: Vec<Vec<f64>>,
    max_iters: usize,
    mut history: Option<&mut Vec<f64>>,
) -> Clustering {
    let k = centroids.len();
    let d = points[0].as_ref().len();
    let mut assign = assign_all(points, &centroids);
    for _ in 0..max_iters {
        repair_empty(points, &mut assign, &centroids);
        centroids = means(points, &assign, k, d);
        if let Some(h) = history.as_deref_mut() {
            h.push(inertia_of(points, &assign, &centroids));
        }
        let next = assign_all(points, &centroids);
        if next == assign {
            break;
        }
        assign = next;
    }
    repair_empty(points, &mut assign, &centroids);
    centroids = means(points, &assign, k, d);
    let inertia = inertia_of(points, &assign, &centroids);
    Clustering {
        assignments: assign,
        centroids,
        inertia,
    }
}

fn restart_rng(seed: u64, k: usize, restart: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((k as u64) << 32) | restart as u64);
    rng
}

/// Lloyd's algorithm, best of `config.restarts` seeded runs by inertia.
pub fn kmeans<P>(points: &[P], k: usize, config: &ClusteringConfig) -> Result<Clustering>
where
    P: AsRef<[f64]> + Sync,
{
    if k == 0 {
        return Err(Error::InvalidConfig("k must be positive".into()));
    }
    if k > points.len() {
        return Err(Error::InvalidConfig(format!(
            "k = {k} exceeds the number of points ({})",
            points.len()
        )));
    }
    crate::geometry::point_dim(points)?;
    if config.lloyd_max_iters == 0 || config.restarts == 0 {
        return Err(Error::InvalidConfig(
            "lloyd_max_iters and restarts must be positive".into(),
        ));
    }
    let runs: Vec<Clustering> = (0..config.restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = restart_rng(config.seed, k, r);
            let init = kmeans_pp(points, k, &mut rng);
            lloyd(points, init, config.lloyd_max_iters, None)
        })
        .collect();
    // lowest inertia, then lowest restart index
    let best = runs
        .into_iter()
        .reduce(|best, run| if run.inertia < best.inertia { run } else { best })
        .expect("at least one restart");
    Ok(best)
}

/// k-means with k grown from 1 until the relative improvement drops below τ.
pub fn adaptive_cluster<P>(points: &[P], config: &ClusteringConfig) -> Result<Clustering>
where
    P: AsRef<[f64]> + Sync,
{
    config.validate()?;
    let cap = config.max_k.min(points.len());
    let mut k = 1;
    let mut current = kmeans(points, 1, config)?;
    while current.inertia > 0.0 && k < cap {
        let next = kmeans(points, k + 1, config)?;
        let improvement = (current.inertia - next.inertia) / current.inertia;
        if improvement >= config.tau {
            current = next;
            k += 1;
        } else {
            break;
        }
    }
    Ok(current)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn blob(rng: &mut ChaCha8Rng, center: &[f64], spread: f64, n: usize) -> Vec<Vec<f64>> {
        let normal = Normal::new(0.0, spread).unwrap();
        (0..n)
            .map(|_| center.iter().map(|c| c + normal.sample(rng)).collect())
            .collect()
    }

    #[test]
    fn single_cluster_of_two_points() {
        let pts = vec![vec![0.0, 0.0], vec![0.1, 0.0]];
        let c = kmeans(&pts, 1, &ClusteringConfig::default()).unwrap();
        assert_eq!(c.centroids, vec![vec![0.05, 0.0]]);
        // hand computation: 2 * 0.05^2
        assert!((c.inertia - 0.005).abs() < 1e-15);
    }

    #[test]
    fn k_equal_to_n_has_zero_inertia() {
        let pts = vec![vec![0.0], vec![1.0], vec![5.0], vec![-3.0]];
        let c = kmeans(&pts, 4, &ClusteringConfig::default()).unwrap();
        assert_eq!(c.inertia, 0.0);
    }

    #[test]
    fn invalid_k() {
        let pts = vec![vec![0.0], vec![1.0]];
        assert!(kmeans(&pts, 3, &ClusteringConfig::default()).is_err());
        assert!(kmeans(&pts, 0, &ClusteringConfig::default()).is_err());
    }

    #[test]
    fn separates_two_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut pts = blob(&mut rng, &[0.0, 0.0], 0.1, 50);
        pts.extend(blob(&mut rng, &[100.0, 0.0], 0.1, 50));
        let c = kmeans(&pts, 2, &ClusteringConfig::default()).unwrap();
        let first = c.assignments[0];
        assert!(c.assignments[..50].iter().all(|&a| a == first));
        assert!(c.assignments[50..].iter().all(|&a| a != first));
        for (p, &a) in pts.iter().zip(&c.assignments) {
            assert_eq!(nearest(p, &c.centroids).0, a);
        }
    }

    #[test]
    fn adaptive_keeps_one_cluster_for_one_blob() {
        // in 32 dimensions splitting an isotropic blob gains well under 7%
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts = blob(&mut rng, &[0.0; 32], 0.1, 400);
        let cfg = ClusteringConfig::with_tau(0.07);
        let ss1 = kmeans(&pts, 1, &cfg).unwrap().inertia;
        let ss2 = kmeans(&pts, 2, &cfg).unwrap().inertia;
        assert!((ss1 - ss2) / ss1 < 0.07, "improvement {}", (ss1 - ss2) / ss1);
        assert_eq!(adaptive_cluster(&pts, &cfg).unwrap().k(), 1);
    }

    #[test]
    fn adaptive_finds_two_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut center = vec![0.0; 32];
        let mut pts = blob(&mut rng, &center, 0.1, 200);
        center[0] = 100.0;
        pts.extend(blob(&mut rng, &center, 0.1, 200));
        let cfg = ClusteringConfig::with_tau(0.07);
        let ss: Vec<f64> = (1..=3).map(|k| kmeans(&pts, k, &cfg).unwrap().inertia).collect();
        assert!((ss[0] - ss[1]) / ss[0] > 0.07);
        assert!((ss[1] - ss[2]) / ss[1] < 0.07);
        assert_eq!(adaptive_cluster(&pts, &cfg).unwrap().k(), 2);
    }

    #[test]
    fn repeated_point_stops_at_one() {
        let pts = vec![vec![3.0, 3.0]; 10];
        let c = adaptive_cluster(&pts, &ClusteringConfig::default()).unwrap();
        assert_eq!(c.k(), 1);
        assert_eq!(c.inertia, 0.0);
    }

    #[test]
    fn duplicates_keep_clusters_nonempty() {
        let pts = vec![vec![1.0], vec![1.0], vec![1.0], vec![2.0]];
        let c = kmeans(&pts, 3, &ClusteringConfig::default()).unwrap();
        let mut counts = [0; 3];
        for &a in &c.assignments {
            counts[a] += 1;
        }
        assert!(counts.iter().all(|&n| n > 0));
    }

    #[test]
    fn rejects_bad_tau() {
        let pts = vec![vec![0.0]];
        for tau in [0.0, -0.1, 1.5, f64::NAN] {
            assert!(adaptive_cluster(&pts, &ClusteringConfig::with_tau(tau)).is_err());
        }
    }

    #[test]
    fn inertia_never_increases_across_iterations() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let pts: Vec<Vec<f64>> = (0..300)
            .map(|_| (0..4).map(|_| rng.random_range(-10.0..10.0)).collect())
            .collect();
        for k in [2, 5, 9] {
            let init = kmeans_pp(&pts, k, &mut rng);
            let mut history = Vec::new();
            let c = lloyd(&pts, init, 300, Some(&mut history));
            for w in history.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12), "{} -> {}", w[0], w[1]);
            }
            assert!(c.inertia <= history[0] * (1.0 + 1e-12));
        }
    }

    proptest::proptest! {
        #[test]
        fn deterministic_and_nearest(seed in 0u64..1000, n in 3usize..60, k in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..3).map(|_| rng.random_range(-10.0..10.0)).collect())
                .collect();
            let cfg = ClusteringConfig { seed, ..Default::default() };
            let a = kmeans(&pts, k, &cfg).unwrap();
            let b = kmeans(&pts, k, &cfg).unwrap();
            proptest::prop_assert_eq!(&a, &b);
            for (p, &c) in pts.iter().zip(&a.assignments) {
                proptest::prop_assert_eq!(nearest(p, &a.centroids).0, c);
            }
            let adaptive = adaptive_cluster(&pts, &ClusteringConfig::with_tau(0.07)).unwrap();
            proptest::prop_assert!(adaptive.k() >= 1);
            proptest::prop_assert!(adaptive.clusters(&pts).iter().all(|c| !c.is_empty()));
        }
    }
}
