use serde::{Deserialize, Serialize};

use super::{point_dim, OpCounter, Tally};
use crate::{Error, Result};

/// Euclidean ball centered at the mean of its creation points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BallRepr", into = "BallRepr")]
pub struct BallAbstraction {
    center: Vec<f64>,
    radius: f64,
}

#[derive(Serialize, Deserialize)]
struct BallRepr {
    center: Vec<f64>,
    radius: f64,
}

impl TryFrom<BallRepr> for BallAbstraction {
    type Error = Error;

    fn try_from(r: BallRepr) -> Result<Self> {
        let ball = BallAbstraction {
            center: r.center,
            radius: r.radius,
        };
        ball.validate()?;
        Ok(ball)
    }
}

impl From<BallAbstraction> for BallRepr {
    fn from(b: BallAbstraction) -> Self {
        BallRepr {
            center: b.center,
            radius: b.radius,
        }
    }
}

fn distance(a: &[f64], b: &[f64], tally: &mut impl Tally) -> f64 {
    tally.tick(a.len() as u64);
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

impl BallAbstraction {
    pub fn new(center: Vec<f64>, radius: f64) -> Result<Self> {
        let ball = BallAbstraction { center, radius };
        ball.validate()?;
        Ok(ball)
    }

    pub fn create<P: AsRef<[f64]>>(points: &[P]) -> Result<Self> {
        let d = point_dim(points)?;
        let mut center = vec![0.0; d];
        for p in points {
            for (c, &x) in center.iter_mut().zip(p.as_ref()) {
                *c += x;
            }
        }
        let m = points.len() as f64;
        center.iter_mut().for_each(|c| *c /= m);
        // membership recomputes the same distance, so every creation point is a member
        let radius = points
            .iter()
            .map(|p| distance(p.as_ref(), &center, &mut ()))
            .fold(0.0, f64::max);
        Ok(BallAbstraction { center, radius })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn contains(&self, v: &[f64]) -> Result<bool> {
        self.contains_with(v, 0.0, &mut ())
    }

    pub fn contains_with_tolerance(&self, v: &[f64], tolerance: f64) -> Result<bool> {
        self.contains_with(v, tolerance, &mut ())
    }

    pub fn contains_counted(&self, v: &[f64], counter: &mut OpCounter) -> Result<bool> {
        self.contains_with(v, 0.0, counter)
    }

    fn contains_with(&self, v: &[f64], tolerance: f64, tally: &mut impl Tally) -> Result<bool> {
        Error::check_dim(self.dim(), v.len())?;
        Ok(distance(v, &self.center, tally) <= self.radius + tolerance)
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.center.is_empty() {
            return Err(Error::Schema("ball needs at least one dimension".into()));
        }
        if !(self.radius >= 0.0 && self.radius.is_finite()) {
            return Err(Error::Schema(format!("invalid ball radius {}", self.radius)));
        }
        if self.center.iter().any(|c| !c.is_finite()) {
            return Err(Error::Schema("ball center must be finite".into()));
        }
        Ok(())
    }
}
