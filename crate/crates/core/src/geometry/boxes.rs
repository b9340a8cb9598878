use serde::{Deserialize, Serialize};

use super::{check_gamma, point_dim, scale_bounds, EnlargementFactor, OpCounter, Tally};
use crate::{Error, Result};

/// A closed interval `[low, high]` with `low <= high`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    low: f64,
    high: f64,
}

impl Interval {
    pub fn new(low: f64, high: f64) -> Result<Self> {
        // Also rejects NaN bounds.
        if low <= high {
            Ok(Interval { low, high })
        } else {
            Err(Error::Schema(format!("interval [{low}, {high}] has low > high")))
        }
    }

    pub fn point(x: f64) -> Self {
        Interval { low: x, high: x }
    }

    pub fn low(&self) -> f64 {
        self.low
    }

    pub fn high(&self) -> f64 {
        self.high
    }

    pub fn center(&self) -> f64 {
        (self.low + self.high) / 2.0
    }

    pub fn half_width(&self) -> f64 {
        (self.high - self.low) / 2.0
    }

    #[inline]
    pub fn contains(&self, x: f64) -> bool {
        self.low <= x && x <= self.high
    }

    pub fn contains_interval(&self, other: &Interval) -> bool {
        self.low <= other.low && other.high <= self.high
    }

    pub(crate) fn include(&mut self, x: f64) {
        if x < self.low {
            self.low = x;
        }
        if x > self.high {
            self.high = x;
        }
    }

    pub fn enlarge(&self, gamma: f64) -> Result<Interval> {
        check_gamma(gamma)?;
        let (low, high) = scale_bounds(self.low, self.high, 1.0 + gamma);
        Ok(Interval { low, high })
    }

    #[inline]
    pub(crate) fn contains_scaled(&self, x: f64, factor: f64) -> bool {
        let (low, high) = scale_bounds(self.low, self.high, factor);
        low <= x && x <= high
    }
}

/// Cartesian product of closed intervals, one per dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BoxRepr", into = "BoxRepr")]
pub struct BoxAbstraction {
    intervals: Vec<Interval>,
}

#[derive(Serialize, Deserialize)]
struct BoxRepr {
    low: Vec<f64>,
    high: Vec<f64>,
}

impl TryFrom<BoxRepr> for BoxAbstraction {
    type Error = Error;

    fn try_from(r: BoxRepr) -> Result<Self> {
        Error::check_dim(r.low.len(), r.high.len())?;
        let intervals = r
            .low
            .iter()
            .zip(&r.high)
            .map(|(&l, &h)| Interval::new(l, h))
            .collect::<Result<Vec<_>>>()?;
        BoxAbstraction::from_intervals(intervals)
    }
}

impl From<BoxAbstraction> for BoxRepr {
    fn from(b: BoxAbstraction) -> Self {
        BoxRepr {
            low: b.intervals.iter().map(Interval::low).collect(),
            high: b.intervals.iter().map(Interval::high).collect(),
        }
    }
}

impl BoxAbstraction {
    pub fn from_intervals(intervals: Vec<Interval>) -> Result<Self> {
        if intervals.is_empty() {
            return Err(Error::InvalidConfig("a box needs at least one dimension".into()));
        }
        Ok(BoxAbstraction { intervals })
    }

    /// Tightest box around `points`: per-coordinate minimum and maximum.
    pub fn create<P: AsRef<[f64]>>(points: &[P]) -> Result<Self> {
        point_dim(points)?;
        let mut intervals: Vec<Interval> =
            points[0].as_ref().iter().map(|&x| Interval::point(x)).collect();
        for p in &points[1..] {
            for (itv, &x) in intervals.iter_mut().zip(p.as_ref()) {
                itv.include(x);
            }
        }
        Ok(BoxAbstraction { intervals })
    }

    pub fn dim(&self) -> usize {
        self.intervals.len()
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.intervals
    }

    pub fn contains(&self, v: &[f64]) -> Result<bool> {
        self.contains_with(v, 0.0, &mut ())
    }

    /// Membership with an absolute slack `tolerance` on every bound.
    pub fn contains_with_tolerance(&self, v: &[f64], tolerance: f64) -> Result<bool> {
        self.contains_with(v, tolerance, &mut ())
    }

    pub fn contains_counted(&self, v: &[f64], counter: &mut OpCounter) -> Result<bool> {
        self.contains_with(v, 0.0, counter)
    }

    fn contains_with(&self, v: &[f64], tolerance: f64, tally: &mut impl Tally) -> Result<bool> {
        Error::check_dim(self.dim(), v.len())?;
        for (itv, &x) in self.intervals.iter().zip(v) {
            tally.tick(2);
            if !(itv.low - tolerance <= x && x <= itv.high + tolerance) {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Membership in `self.enlarge(gamma)` without allocating it.
    pub fn contains_enlarged(&self, v: &[f64], gamma: f64) -> Result<bool> {
        check_gamma(gamma)?;
        if gamma == 0.0 {
            return self.contains(v);
        }
        Error::check_dim(self.dim(), v.len())?;
        let factor = 1.0 + gamma;
        Ok(self
            .intervals
            .iter()
            .zip(v)
            .all(|(itv, &x)| itv.contains_scaled(x, factor)))
    }

    /// Rescales every interval about its center by `1 + gamma`.
    pub fn enlarge(&self, gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        let intervals = self
            .intervals
            .iter()
            .map(|itv| itv.enlarge(gamma))
            .collect::<Result<Vec<_>>>()?;
        Ok(BoxAbstraction { intervals })
    }

    /// Widens every bound outward by the fixed `margin`.
    pub fn enlarge_absolute(&self, margin: f64) -> Result<Self> {
        check_gamma(margin)?;
        let intervals = self
            .intervals
            .iter()
            .map(|itv| Interval::new(itv.low - margin, itv.high + margin))
            .collect::<Result<Vec<_>>>()?;
        Ok(BoxAbstraction { intervals })
    }

    /// The smallest γ for which `self.enlarge(γ)` contains `v`.
    pub fn gamma_factor(&self, v: &[f64]) -> Result<EnlargementFactor> {
        if self.contains(v)? {
            return Ok(EnlargementFactor::ZERO);
        }
        let mut gamma: f64 = 0.0;
        for (itv, &x) in self.intervals.iter().zip(v) {
            if itv.contains(x) {
                continue;
            }
            let half = itv.half_width();
            if half == 0.0 {
                return Ok(EnlargementFactor::INFINITE);
            }
            let ratio = (x - itv.center()).abs() / half - 1.0;
            gamma = gamma.max(ratio);
        }
        if !gamma.is_finite() {
            return Ok(EnlargementFactor::INFINITE);
        }
        // The closed form can land an ulp short of containment after rounding.
        let mut steps = 0;
        while !self.contains_enlarged(v, gamma)? {
            gamma += (gamma * f64::EPSILON).max(f64::EPSILON);
            steps += 1;
            if steps > 256 || !gamma.is_finite() {
                return Ok(EnlargementFactor::INFINITE);
            }
        }
        EnlargementFactor::new(gamma)
    }

    pub(crate) fn validate(&self) -> Result<()> {
        for itv in &self.intervals {
            if !(itv.low.is_finite() && itv.high.is_finite() && itv.low <= itv.high) {
                return Err(Error::Schema(format!(
                    "invalid box interval [{}, {}]",
                    itv.low, itv.high
                )));
            }
        }
        Ok(())
    }

    /// Whether every interval of `other` lies inside the matching interval here.
    pub fn includes(&self, other: &BoxAbstraction) -> bool {
        self.dim() == other.dim()
            && self
                .intervals
                .iter()
                .zip(&other.intervals)
                .all(|(a, b)| a.contains_interval(b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bx(bounds: &[(f64, f64)]) -> BoxAbstraction {
        BoxAbstraction::from_intervals(
            bounds.iter().map(|&(l, h)| Interval::new(l, h).unwrap()).collect(),
        )
        .unwrap()
    }

    fn green() -> Vec<Vec<f64>> {
        vec![
            vec![0.02, 0.33],
            vec![0.04, 0.3],
            vec![0.0, 0.27],
            vec![0.0, 0.3],
            vec![0.0, 0.39],
        ]
    }

    #[test]
    fn create_matches_green_box() {
        let b = BoxAbstraction::create(&green()).unwrap();
        assert_eq!(b, bx(&[(0.0, 0.04), (0.27, 0.39)]));
    }

    #[test]
    fn create_single_point_is_degenerate() {
        let b = BoxAbstraction::create(&[vec![1.0, 1.0]]).unwrap();
        assert_eq!(b, bx(&[(1.0, 1.0), (1.0, 1.0)]));
    }

    #[test]
    fn create_matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<Vec<f64>> = (0..100)
            .map(|_| (0..3).map(|_| rng.random_range(-5.0..5.0)).collect())
            .collect();
        let b = BoxAbstraction::create(&pts).unwrap();
        for i in 0..3 {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for p in &pts {
                if p[i] < lo {
                    lo = p[i];
                }
                if p[i] > hi {
                    hi = p[i];
                }
            }
            assert_eq!(b.intervals()[i].low(), lo);
            assert_eq!(b.intervals()[i].high(), hi);
        }
    }

    #[test]
    fn create_errors() {
        let empty: Vec<Vec<f64>> = vec![];
        assert!(matches!(BoxAbstraction::create(&empty), Err(Error::EmptyCluster)));
        assert_eq!(Error::EmptyCluster.to_string(), "cannot abstract empty cluster");
        assert!(matches!(
            BoxAbstraction::create(&[vec![1.0], vec![1.0, 2.0]]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn membership() {
        let g = bx(&[(0.0, 0.04), (0.27, 0.39)]);
        assert!(g.contains(&[0.02, 0.33]).unwrap());
        assert!(!g.contains(&[0.3, 0.45]).unwrap());
        assert!(bx(&[(0.0, 1.0), (0.0, 1.0)]).contains(&[0.0, 1.0]).unwrap());
        assert!(matches!(g.contains(&[0.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn tolerance_widens_membership() {
        let b = bx(&[(1.0, 1.0)]);
        assert!(!b.contains(&[1.0 + 1e-12]).unwrap());
        assert!(b.contains_with_tolerance(&[1.0 + 1e-12], 1e-9).unwrap());
    }

    #[test]
    fn enlarge_examples() {
        let b = bx(&[(0.0, 2.0)]);
        assert_eq!(b.enlarge(0.0).unwrap(), b);
        assert_eq!(b.enlarge(0.5).unwrap(), bx(&[(-0.5, 2.5)]));
        assert_eq!(bx(&[(1.0, 1.0)]).enlarge(10.0).unwrap(), bx(&[(1.0, 1.0)]));
        assert!(matches!(b.enlarge(-0.1), Err(Error::NegativeGamma(_))));
    }

    #[test]
    fn absolute_enlargement_adds_margin() {
        let b = bx(&[(1.0, 1.0), (0.0, 2.0)]);
        assert_eq!(b.enlarge_absolute(0.5).unwrap(), bx(&[(0.5, 1.5), (-0.5, 2.5)]));
    }

    #[test]
    fn gamma_factor_examples() {
        let b = bx(&[(0.0, 2.0), (0.0, 2.0)]);
        assert_eq!(b.gamma_factor(&[1.0, 1.0]).unwrap().value(), 0.0);
        assert_eq!(b.gamma_factor(&[4.0, 1.0]).unwrap().value(), 2.0);
        assert_eq!(b.enlarge(2.0).unwrap(), bx(&[(-2.0, 4.0), (-2.0, 4.0)]));
        assert!(b.enlarge(2.0).unwrap().contains(&[4.0, 1.0]).unwrap());
        let flat = bx(&[(1.0, 1.0), (0.0, 2.0)]);
        assert!(!flat.gamma_factor(&[2.0, 1.0]).unwrap().is_finite());
    }

    #[test]
    fn tightness_each_bound() {
        let pts = green();
        let b = BoxAbstraction::create(&pts).unwrap();
        for i in 0..b.dim() {
            for side in 0..2 {
                let mut itvs = b.intervals().to_vec();
                let eps = 1e-9;
                itvs[i] = if side == 0 {
                    Interval::new(itvs[i].low() + eps, itvs[i].high().max(itvs[i].low() + eps)).unwrap()
                } else {
                    Interval::new(itvs[i].low().min(itvs[i].high() - eps), itvs[i].high() - eps).unwrap()
                };
                let shrunk = BoxAbstraction::from_intervals(itvs).unwrap();
                assert!(pts.iter().any(|p| !shrunk.contains(p).unwrap()));
            }
        }
    }

    fn points_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (1usize..6).prop_flat_map(|d| {
            prop::collection::vec(prop::collection::vec(-100.0f64..100.0, d), 1..30)
        })
    }

    proptest! {
        #[test]
        fn creation_points_are_members(pts in points_strategy()) {
            let b = BoxAbstraction::create(&pts).unwrap();
            for p in &pts {
                prop_assert!(b.contains(p).unwrap());
            }
        }

        #[test]
        fn monotone_in_data(pts in points_strategy(), extra in 0usize..10, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = pts[0].len();
            let mut bigger = pts.clone();
            for _ in 0..extra {
                bigger.push((0..d).map(|_| rng.random_range(-200.0..200.0)).collect());
            }
            let small = BoxAbstraction::create(&pts).unwrap();
            let large = BoxAbstraction::create(&bigger).unwrap();
            prop_assert!(large.includes(&small));
        }

        #[test]
        fn enlargement_monotone(pts in points_strategy(), g1 in 0.0f64..5.0, g2 in 0.0f64..5.0) {
            let (g1, g2) = if g1 <= g2 { (g1, g2) } else { (g2, g1) };
            let b = BoxAbstraction::create(&pts).unwrap();
            let e1 = b.enlarge(g1).unwrap();
            let e2 = b.enlarge(g2).unwrap();
            prop_assert!(e2.includes(&e1));
            prop_assert!(e1.includes(&b));
        }

        #[test]
        fn gamma_factor_is_minimal(pts in points_strategy(), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = BoxAbstraction::create(&pts).unwrap();
            let v: Vec<f64> = (0..b.dim()).map(|_| rng.random_range(-300.0..300.0)).collect();
            let g = b.gamma_factor(&v).unwrap();
            if g.is_finite() {
                let g = g.value();
                prop_assert!(b.enlarge(g).unwrap().contains(&v).unwrap());
                prop_assert!(b.contains_enlarged(&v, g).unwrap());
                if g > 0.0 {
                    let below = g * (1.0 - 1e-6);
                    prop_assert!(!b.enlarge(below).unwrap().contains(&v).unwrap());
                }
            } else {
                prop_assert!(!b.enlarge(1e12).unwrap().contains(&v).unwrap());
            }
        }

        #[test]
        fn lazy_enlargement_matches_materialized(pts in points_strategy(), gamma in 0.0f64..3.0, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = BoxAbstraction::create(&pts).unwrap();
            let e = b.enlarge(gamma).unwrap();
            for _ in 0..20 {
                let v: Vec<f64> = (0..b.dim()).map(|_| rng.random_range(-150.0..150.0)).collect();
                prop_assert_eq!(e.contains(&v).unwrap(), b.contains_enlarged(&v, gamma).unwrap());
            }
        }
    }
}
