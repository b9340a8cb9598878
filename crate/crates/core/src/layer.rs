//! Layer addressing shared by the network, dump, and monitor formats.

use std::fmt;
use std::str::FromStr;

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

use crate::{Error, Result};

/// A layer of a feedforward network.
///
/// Nonnegative values address dense layers from the front (0 is the output
/// of the first dense layer); negative values count from the end, so `-1` is
/// the output layer and `-2` the last hidden layer. Serialized as a decimal
/// string such as `"-2"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LayerIndex(pub i32);

impl LayerIndex {
    pub const OUTPUT: LayerIndex = LayerIndex(-1);

    /// Resolves to a zero-based position among `layers` dense layers.
    pub fn resolve(self, layers: usize) -> Result<usize> {
        let err = Error::InvalidLayer { index: self, layers };
        if self.0 >= 0 {
            let i = self.0 as usize;
            if i < layers {
                Ok(i)
            } else {
                Err(err)
            }
        } else {
            let back = self.0.unsigned_abs() as usize;
            if back <= layers {
                Ok(layers - back)
            } else {
                Err(err)
            }
        }
    }
}

impl fmt::Display for LayerIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for LayerIndex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.trim()
            .parse::<i32>()
            .map(LayerIndex)
            .map_err(|_| Error::InvalidConfig(format!("invalid layer index {s:?}")))
    }
}

impl From<i32> for LayerIndex {
    fn from(v: i32) -> Self {
        LayerIndex(v)
    }
}

impl Serialize for LayerIndex {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LayerIndex {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(de::Error::custom)
    }
}

/// Parses a comma-separated list such as `-3,-2`.
pub fn parse_layer_list(s: &str) -> Result<Vec<LayerIndex>> {
    let layers = s
        .split(',')
        .filter(|p| !p.trim().is_empty())
        .map(str::parse)
        .collect::<Result<Vec<_>>>()?;
    if layers.is_empty() {
        return Err(Error::InvalidConfig("empty layer list".into()));
    }
    Ok(layers)
}
