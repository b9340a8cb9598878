use serde::{Deserialize, Serialize};

use super::{check_gamma, point_dim, scale_bounds, OpCounter, Tally};
use crate::{Error, Result};

/// Box plus bounds on every pairwise sum `x_i + x_j` and difference
/// `x_i - x_j` (`i < j`).
///
/// Bounds are kept as a flat constraint table (no closure or tightening).
/// Pair constraints are stored row-major over the strict upper triangle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "OctagonRepr", into = "OctagonRepr")]
pub struct OctagonAbstraction {
    dim: usize,
    unary_low: Vec<f64>,
    unary_high: Vec<f64>,
    sum_low: Vec<f64>,
    sum_high: Vec<f64>,
    diff_low: Vec<f64>,
    diff_high: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Bounds<T> {
    low: T,
    high: T,
}

#[derive(Serialize, Deserialize)]
struct OctagonRepr {
    unary: Bounds<Vec<f64>>,
    sum: Bounds<Vec<Vec<f64>>>,
    diff: Bounds<Vec<Vec<f64>>>,
}

#[inline]
fn pair_count(d: usize) -> usize {
    d * d.saturating_sub(1) / 2
}

/// Splits a flat upper-triangle table into rows `i = 0..d-1`, row `i`
/// holding the entries for `j = i+1..d`.
fn to_rows(flat: &[f64], d: usize) -> Vec<Vec<f64>> {
    let mut rows = Vec::with_capacity(d.saturating_sub(1));
    let mut start = 0;
    for i in 0..d.saturating_sub(1) {
        let len = d - i - 1;
        rows.push(flat[start..start + len].to_vec());
        start += len;
    }
    rows
}

fn from_rows(rows: Vec<Vec<f64>>, d: usize) -> Result<Vec<f64>> {
    if rows.len() != d.saturating_sub(1) {
        return Err(Error::Schema(format!(
            "octagon pair table has {} rows, expected {}",
            rows.len(),
            d.saturating_sub(1)
        )));
    }
    let mut flat = Vec::with_capacity(pair_count(d));
    for (i, row) in rows.into_iter().enumerate() {
        Error::check_dim(d - i - 1, row.len())?;
        flat.extend(row);
    }
    Ok(flat)
}

impl TryFrom<OctagonRepr> for OctagonAbstraction {
    type Error = Error;

    fn try_from(r: OctagonRepr) -> Result<Self> {
        let dim = r.unary.low.len();
        let oct = OctagonAbstraction {
            dim,
            unary_low: r.unary.low,
            unary_high: r.unary.high,
            sum_low: from_rows(r.sum.low, dim)?,
            sum_high: from_rows(r.sum.high, dim)?,
            diff_low: from_rows(r.diff.low, dim)?,
            diff_high: from_rows(r.diff.high, dim)?,
        };
        oct.validate()?;
        Ok(oct)
    }
}

impl From<OctagonAbstraction> for OctagonRepr {
    fn from(o: OctagonAbstraction) -> Self {
        let d = o.dim;
        OctagonRepr {
            sum: Bounds {
                low: to_rows(&o.sum_low, d),
                high: to_rows(&o.sum_high, d),
            },
            diff: Bounds {
                low: to_rows(&o.diff_low, d),
                high: to_rows(&o.diff_high, d),
            },
            unary: Bounds {
                low: o.unary_low,
                high: o.unary_high,
            },
        }
    }
}

impl OctagonAbstraction {
    pub fn create<P: AsRef<[f64]>>(points: &[P]) -> Result<Self> {
        let d = point_dim(points)?;
        let pairs = pair_count(d);
        let mut oct = OctagonAbstraction {
            dim: d,
            unary_low: vec![f64::INFINITY; d],
            unary_high: vec![f64::NEG_INFINITY; d],
            sum_low: vec![f64::INFINITY; pairs],
            sum_high: vec![f64::NEG_INFINITY; pairs],
            diff_low: vec![f64::INFINITY; pairs],
            diff_high: vec![f64::NEG_INFINITY; pairs],
        };
        for p in points {
            let x = p.as_ref();
            for i in 0..d {
                oct.unary_low[i] = oct.unary_low[i].min(x[i]);
                oct.unary_high[i] = oct.unary_high[i].max(x[i]);
            }
            let mut k = 0;
            for i in 0..d {
                for j in i + 1..d {
                    let s = x[i] + x[j];
                    let t = x[i] - x[j];
                    oct.sum_low[k] = oct.sum_low[k].min(s);
                    oct.sum_high[k] = oct.sum_high[k].max(s);
                    oct.diff_low[k] = oct.diff_low[k].min(t);
                    oct.diff_high[k] = oct.diff_high[k].max(t);
                    k += 1;
                }
            }
        }
        Ok(oct)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Index of the pair `(i, j)`, `i < j`, in the flat tables.
    pub fn pair_index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < j && j < self.dim);
        i * (2 * self.dim - i - 1) / 2 + (j - i - 1)
    }

    pub fn unary_bounds(&self, i: usize) -> (f64, f64) {
        (self.unary_low[i], self.unary_high[i])
    }

    pub fn sum_bounds(&self, i: usize, j: usize) -> (f64, f64) {
        let k = self.pair_index(i, j);
        (self.sum_low[k], self.sum_high[k])
    }

    pub fn diff_bounds(&self, i: usize, j: usize) -> (f64, f64) {
        let k = self.pair_index(i, j);
        (self.diff_low[k], self.diff_high[k])
    }

    /// Number of stored scalar bounds: `2d + 2d(d-1)`.
    pub fn bound_count(&self) -> usize {
        2 * self.dim + 4 * pair_count(self.dim)
    }

    pub fn contains(&self, v: &[f64]) -> Result<bool> {
        self.contains_with(v, 1.0, 0.0, &mut ())
    }

    pub fn contains_with_tolerance(&self, v: &[f64], tolerance: f64) -> Result<bool> {
        self.contains_with(v, 1.0, tolerance, &mut ())
    }

    pub fn contains_counted(&self, v: &[f64], counter: &mut OpCounter) -> Result<bool> {
        self.contains_with(v, 1.0, 0.0, counter)
    }

    pub fn contains_enlarged(&self, v: &[f64], gamma: f64) -> Result<bool> {
        check_gamma(gamma)?;
        self.contains_with(v, 1.0 + gamma, 0.0, &mut ())
    }

    fn contains_with(
        &self,
        v: &[f64],
        factor: f64,
        tolerance: f64,
        tally: &mut impl Tally,
    ) -> Result<bool> {
        Error::check_dim(self.dim, v.len())?;
        let within = |low: f64, high: f64, x: f64| {
            let (low, high) = scale_bounds(low, high, factor);
            low - tolerance <= x && x <= high + tolerance
        };
        for i in 0..self.dim {
            tally.tick(2);
            if !within(self.unary_low[i], self.unary_high[i], v[i]) {
                return Ok(false);
            }
        }
        let mut k = 0;
        for i in 0..self.dim {
            for j in i + 1..self.dim {
                tally.tick(4);
                if !within(self.sum_low[k], self.sum_high[k], v[i] + v[j])
                    || !within(self.diff_low[k], self.diff_high[k], v[i] - v[j])
                {
                    return Ok(false);
                }
                k += 1;
            }
        }
        Ok(true)
    }

    /// Rescales every bound pair about its midpoint by `1 + gamma`.
    pub fn enlarge(&self, gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        let factor = 1.0 + gamma;
        let scale = |low: &[f64], high: &[f64]| -> (Vec<f64>, Vec<f64>) {
            low.iter()
                .zip(high)
                .map(|(&l, &h)| scale_bounds(l, h, factor))
                .unzip()
        };
        let (unary_low, unary_high) = scale(&self.unary_low, &self.unary_high);
        let (sum_low, sum_high) = scale(&self.sum_low, &self.sum_high);
        let (diff_low, diff_high) = scale(&self.diff_low, &self.diff_high);
        Ok(OctagonAbstraction {
            dim: self.dim,
            unary_low,
            unary_high,
            sum_low,
            sum_high,
            diff_low,
            diff_high,
        })
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Schema("octagon needs at least one dimension".into()));
        }
        Error::check_dim(self.dim, self.unary_high.len())?;
        let pairs = pair_count(self.dim);
        for table in [&self.sum_low, &self.sum_high, &self.diff_low, &self.diff_high] {
            Error::check_dim(pairs, table.len())?;
        }
        let tables = [
            (&self.unary_low, &self.unary_high),
            (&self.sum_low, &self.sum_high),
            (&self.diff_low, &self.diff_high),
        ];
        for (low, high) in tables {
            for (&l, &h) in low.iter().zip(high.iter()) {
                if !(l.is_finite() && h.is_finite() && l <= h) {
                    return Err(Error::Schema(format!("invalid octagon bound [{l}, {h}]")));
                }
            }
        }
        Ok(())
    }
}
