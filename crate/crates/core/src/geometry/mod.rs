//! Abstraction domains over real vector spaces.
//!
//! Each domain is built from a nonempty set of points, answers membership
//! queries with closed bounds, and can be enlarged by a relative factor γ
//! (each bound pair is rescaled about its midpoint by `1 + γ`). Enlargement
//! never moves a bound inward, so `enlarge(A, γ)` is monotone in γ and
//! `enlarge(A, 0)` is `A` itself.

mod ball;
mod boxes;
mod octagon;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use ball::BallAbstraction;
pub use boxes::{BoxAbstraction, Interval};
pub use octagon::OctagonAbstraction;

/// Receives one tick per scalar constraint evaluated during a membership test.
pub trait Tally {
    fn tick(&mut self, n: u64);
}

impl Tally for () {
    #[inline(always)]
    fn tick(&mut self, _: u64) {}
}

/// Counts scalar comparisons performed by membership queries.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct OpCounter(pub u64);

impl Tally for OpCounter {
    #[inline]
    fn tick(&mut self, n: u64) {
        self.0 += n;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainKind {
    Box,
    Octagon,
    Ball,
}

impl DomainKind {
    pub const ALL: [DomainKind; 3] = [DomainKind::Box, DomainKind::Octagon, DomainKind::Ball];

    pub fn as_str(self) -> &'static str {
        match self {
            DomainKind::Box => "box",
            DomainKind::Octagon => "octagon",
            DomainKind::Ball => "ball",
        }
    }
}

impl fmt::Display for DomainKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DomainKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "box" => Ok(DomainKind::Box),
            "octagon" => Ok(DomainKind::Octagon),
            "ball" => Ok(DomainKind::Ball),
            other => Err(Error::InvalidConfig(format!("unknown domain {other:?}"))),
        }
    }
}

/// Minimal relative enlargement that makes a box contain a point.
///
/// Zero iff the point is already contained; infinite when a zero-width
/// dimension disagrees with the point. Serialized as a number, or as the
/// string `"inf"` when infinite.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct EnlargementFactor(f64);

impl EnlargementFactor {
    pub const ZERO: EnlargementFactor = EnlargementFactor(0.0);
    pub const INFINITE: EnlargementFactor = EnlargementFactor(f64::INFINITY);

    pub fn new(gamma: f64) -> Result<Self> {
        if gamma >= 0.0 {
            Ok(EnlargementFactor(gamma))
        } else {
            Err(Error::NegativeGamma(gamma))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_finite(self) -> bool {
        self.0.is_finite()
    }

    /// Whether enlarging by `gamma` is enough.
    pub fn accepted_at(self, gamma: f64) -> bool {
        self.0 <= gamma
    }
}

impl fmt::Display for EnlargementFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_infinite() {
            f.write_str("inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl Serialize for EnlargementFactor {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for EnlargementFactor {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) if v >= 0.0 => Ok(EnlargementFactor(v)),
            Repr::Str(s) if s == "inf" => Ok(EnlargementFactor::INFINITE),
            _ => Err(serde::de::Error::custom("expected a nonnegative number or \"inf\"")),
        }
    }
}

/// One abstraction of any supported domain, tagged by `kind` in JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Abstraction {
    Box(BoxAbstraction),
    Octagon(OctagonAbstraction),
    Ball(BallAbstraction),
}

impl Abstraction {
    pub fn create<P: AsRef<[f64]>>(kind: DomainKind, points: &[P]) -> Result<Self> {
        Ok(match kind {
            DomainKind::Box => Abstraction::Box(BoxAbstraction::create(points)?),
            DomainKind::Octagon => Abstraction::Octagon(OctagonAbstraction::create(points)?),
            DomainKind::Ball => Abstraction::Ball(BallAbstraction::create(points)?),
        })
    }

    pub fn kind(&self) -> DomainKind {
        match self {
            Abstraction::Box(_) => DomainKind::Box,
            Abstraction::Octagon(_) => DomainKind::Octagon,
            Abstraction::Ball(_) => DomainKind::Ball,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Abstraction::Box(b) => b.dim(),
            Abstraction::Octagon(o) => o.dim(),
            Abstraction::Ball(b) => b.dim(),
        }
    }

    pub fn contains(&self, v: &[f64]) -> Result<bool> {
        match self {
            Abstraction::Box(b) => b.contains(v),
            Abstraction::Octagon(o) => o.contains(v),
            Abstraction::Ball(b) => b.contains(v),
        }
    }

    /// Membership in the abstraction enlarged by `gamma`, without building it.
    ///
    /// Balls are never enlarged; `gamma` only affects boxes and octagons.
    pub fn contains_enlarged(&self, v: &[f64], gamma: f64) -> Result<bool> {
        match self {
            Abstraction::Box(b) => b.contains_enlarged(v, gamma),
            Abstraction::Octagon(o) => o.contains_enlarged(v, gamma),
            Abstraction::Ball(b) => b.contains(v),
        }
    }

    pub fn contains_counted(&self, v: &[f64], counter: &mut OpCounter) -> Result<bool> {
        match self {
            Abstraction::Box(b) => b.contains_counted(v, counter),
            Abstraction::Octagon(o) => o.contains_counted(v, counter),
            Abstraction::Ball(b) => b.contains_counted(v, counter),
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        match self {
            Abstraction::Box(b) => b.validate(),
            Abstraction::Octagon(o) => o.validate(),
            Abstraction::Ball(b) => b.validate(),
        }
    }
}

/// Checks that `points` is nonempty with a uniform dimension `d >= 1`.
pub(crate) fn point_dim<P: AsRef<[f64]>>(points: &[P]) -> Result<usize> {
    let first = points.first().ok_or(Error::EmptyCluster)?;
    let d = first.as_ref().len();
    if d == 0 {
        return Err(Error::InvalidConfig("points must have at least one dimension".into()));
    }
    for p in points {
        Error::check_dim(d, p.as_ref().len())?;
    }
    Ok(d)
}

pub fn check_gamma(gamma: f64) -> Result<()> {
    if gamma >= 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::NegativeGamma(gamma))
    }
}

/// Rescales `[low, high]` about its midpoint by `factor >= 1`.
///
/// The result never lies inside the original pair, which keeps enlargement
/// monotone even where the midpoint arithmetic rounds.
#[inline]
pub(crate) fn scale_bounds(low: f64, high: f64, factor: f64) -> (f64, f64) {
    if factor == 1.0 {
        return (low, high);
    }
    let center = (low + high) / 2.0;
    let half = (high - low) / 2.0;
    ((center - factor * half).min(low), (center + factor * half).max(high))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn abstraction_json_shapes() {
        let b = Abstraction::create(DomainKind::Box, &[vec![0.0, 1.0], vec![2.0, 3.0]]).unwrap();
        assert_eq!(
            serde_json::to_string(&b).unwrap(),
            r#"{"kind":"box","low":[0.0,1.0],"high":[2.0,3.0]}"#
        );
        let ball = Abstraction::create(DomainKind::Ball, &[vec![0.0, 0.0], vec![2.0, 0.0]]).unwrap();
        assert_eq!(
            serde_json::to_string(&ball).unwrap(),
            r#"{"kind":"ball","center":[1.0,0.0],"radius":1.0}"#
        );
        let oct = Abstraction::create(DomainKind::Octagon, &[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!(
            serde_json::to_string(&oct).unwrap(),
            r#"{"kind":"octagon","unary":{"low":[0.0,0.0],"high":[1.0,1.0]},"sum":{"low":[[0.0]],"high":[[2.0]]},"diff":{"low":[[0.0]],"high":[[0.0]]}}"#
        );
        for a in [b, ball, oct] {
            let text = serde_json::to_string(&a).unwrap();
            let back: Abstraction = serde_json::from_str(&text).unwrap();
            assert_eq!(back, a);
        }
    }

    #[test]
    fn rejects_invalid_json_bounds() {
        let bad = r#"{"kind":"box","low":[1.0],"high":[0.0]}"#;
        assert!(serde_json::from_str::<Abstraction>(bad).is_err());
        let bad_ball = r#"{"kind":"ball","center":[1.0],"radius":-1.0}"#;
        assert!(serde_json::from_str::<Abstraction>(bad_ball).is_err());
    }

    #[test]
    fn enlargement_factor_serializes_infinity_as_string() {
        assert_eq!(serde_json::to_string(&EnlargementFactor::INFINITE).unwrap(), "\"inf\"");
        assert_eq!(serde_json::to_string(&EnlargementFactor::new(2.0).unwrap()).unwrap(), "2.0");
        let back: EnlargementFactor = serde_json::from_str("\"inf\"").unwrap();
        assert!(!back.is_finite());
        assert_eq!(EnlargementFactor::INFINITE.to_string(), "inf");
    }

    #[test]
    fn domain_kind_parses() {
        for k in DomainKind::ALL {
            assert_eq!(k.as_str().parse::<DomainKind>().unwrap(), k);
        }
        assert!("zonotope".parse::<DomainKind>().is_err());
    }
}
