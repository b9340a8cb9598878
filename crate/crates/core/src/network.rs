//! Dense feedforward inference: `forward`, `classify`, and `watch`.
//!
//! By default every affine map `W x + b` is evaluated exactly on the decimal
//! values of its inputs and weights and rounded to `f64` once, so decimal
//! fixtures reproduce decimal results bit-for-bit. [`Arithmetic::Float`] uses
//! plain `f64` accumulation instead.

use std::fs;
use std::path::Path;

use num_bigint::BigInt;
use serde::{Deserialize, Serialize};

use crate::layer::LayerIndex;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Softmax,
    Identity,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Arithmetic {
    #[default]
    ExactDecimal,
    Float,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// Row-major, `out x in`.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: Vec<Vec<f64>>, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        let layer = DenseLayer {
            weights,
            bias,
            activation,
        };
        layer.validate()?;
        Ok(layer)
    }

    pub fn input_dim(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn output_dim(&self) -> usize {
        self.weights.len()
    }

    fn validate(&self) -> Result<()> {
        if self.weights.is_empty() || self.input_dim() == 0 {
            return Err(Error::Schema("dense layer has an empty weight matrix".into()));
        }
        Error::check_dim(self.weights.len(), self.bias.len())?;
        let cols = self.input_dim();
        for row in &self.weights {
            Error::check_dim(cols, row.len())?;
        }
        if self
            .weights
            .iter()
            .flatten()
            .chain(&self.bias)
            .any(|w| !w.is_finite())
        {
            return Err(Error::Schema("weights and biases must be finite".into()));
        }
        Ok(())
    }

    fn apply(&self, x: &[f64], arithmetic: Arithmetic) -> Result<Vec<f64>> {
        Error::check_dim(self.input_dim(), x.len())?;
        let pre: Vec<f64> = match arithmetic {
            Arithmetic::Float => self
                .weights
                .iter()
                .zip(&self.bias)
                .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
                .collect(),
            Arithmetic::ExactDecimal => {
                let xs = x.iter().map(|&v| Decimal::from_f64(v)).collect::<Result<Vec<_>>>()?;
                self.weights
                    .iter()
                    .zip(&self.bias)
                    .map(|(row, &b)| {
                        let mut acc = Decimal::from_f64(b)?;
                        for (&w, xv) in row.iter().zip(&xs) {
                            acc = acc.add(&Decimal::from_f64(w)?.mul(xv));
                        }
                        Ok(acc.to_f64())
                    })
                    .collect::<Result<Vec<_>>>()?
            }
        };
        Ok(match self.activation {
            Activation::Identity => pre,
            Activation::Relu => pre.into_iter().map(|v| if v < 0.0 { 0.0 } else { v }).collect(),
            Activation::Softmax => softmax(&pre),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkModel {
    pub input_dim: usize,
    pub layers: Vec<DenseLayer>,
}

impl NetworkModel {
    pub fn new(input_dim: usize, layers: Vec<DenseLayer>) -> Result<Self> {
        let model = NetworkModel { input_dim, layers };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Schema("network has no layers".into()));
        }
        let mut width = self.input_dim;
        for layer in &self.layers {
            layer.validate()?;
            Error::check_dim(width, layer.input_dim())?;
            width = layer.output_dim();
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: NetworkModel = serde_json::from_str(text)?;
        model.validate()?;
        Ok(model)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, DenseLayer::output_dim)
    }

    /// Post-activation output of every layer, first to last.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.forward_with(x, Arithmetic::default())
    }

    pub fn forward_with(&self, x: &[f64], arithmetic: Arithmetic) -> Result<Vec<Vec<f64>>> {
        Error::check_dim(self.input_dim, x.len())?;
        let mut outputs: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let input = outputs.last().map_or(x, Vec::as_slice);
            let out = layer.apply(input, arithmetic)?;
            outputs.push(out);
        }
        Ok(outputs)
    }

    pub fn classify(&self, x: &[f64]) -> Result<usize> {
        let outputs = self.forward(x)?;
        Ok(argmax(outputs.last().expect("validated model has layers")))
    }

    pub fn watch(&self, x: &[f64], layer: LayerIndex) -> Result<Vec<f64>> {
        let i = layer.resolve(self.layers.len())?;
        let mut outputs = self.forward(x)?;
        Ok(outputs.swap_remove(i))
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Plain normalization `o_i / sum_j o_j`.
pub fn normalize(v: &[f64]) -> Result<Vec<f64>> {
    let sum: f64 = v.iter().sum();
    if sum == 0.0 || !sum.is_finite() {
        return Err(Error::ZeroSum);
    }
    Ok(v.iter().map(|x| x / sum).collect())
}

/// Exponential softmax, shifted by the maximum for stability.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Exact decimal `mantissa * 10^-scale`.
#[derive(Debug, Clone, PartialEq)]
struct Decimal {
    mantissa: BigInt,
    scale: u32,
}

impl Decimal {
    /// The shortest decimal that round-trips to `x`.
    fn from_f64(x: f64) -> Result<Self> {
        if !x.is_finite() {
            return Err(Error::InvalidConfig(format!("non-finite value {x} in network input")));
        }
        let text = format!("{x:e}");
        let (digits, exp) = text.split_once('e').expect("LowerExp always has an exponent");
        let exp: i64 = exp.parse().expect("valid exponent");
        let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
        let mantissa: BigInt = format!("{int_part}{frac_part}")
            .parse()
            .expect("decimal digits");
        let shift = exp - frac_part.len() as i64;
        Ok(if shift >= 0 {
            Decimal {
                mantissa: mantissa * BigInt::from(10u32).pow(shift as u32),
                scale: 0,
            }
        } else {
            Decimal {
                mantissa,
                scale: (-shift) as u32,
            }
        })
    }

    fn rescaled(&self, scale: u32) -> BigInt {
        &self.mantissa * BigInt::from(10u32).pow(scale - self.scale)
    }

    fn add(&self, other: &Decimal) -> Decimal {
        let scale = self.scale.max(other.scale);
        Decimal {
            mantissa: self.rescaled(scale) + other.rescaled(scale),
            scale,
        }
    }

    fn mul(&self, other: &Decimal) -> Decimal {
        Decimal {
            mantissa: &self.mantissa * &other.mantissa,
            scale: self.scale + other.scale,
        }
    }

    /// Correctly rounded conversion (via the standard library's parser).
    fn to_f64(&self) -> f64 {
        format!("{}e-{}", self.mantissa, self.scale)
            .parse()
            .expect("decimal text parses")
    }
}
