//! Activation dumps: one JSON Lines file per split.
//!
//! The first line holds [`DumpMeta`]; every following line is one
//! [`ActivationRecord`]. Layer keys are signed decimal strings (`"-2"` is the
//! last hidden layer). Reals are written in shortest round-trip form, so a
//! value read back is bit-identical to the value written, and identical
//! records always serialize to identical bytes.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::layer::LayerIndex;
use crate::network::NetworkModel;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpMeta {
    pub n_classes: usize,
    pub layer_dims: BTreeMap<LayerIndex, usize>,
    #[serde(default)]
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationRecord {
    pub id: u64,
    pub truth: usize,
    pub pred: usize,
    pub layers: BTreeMap<LayerIndex, Vec<f64>>,
}

impl ActivationRecord {
    pub fn layer(&self, layer: LayerIndex) -> Result<&[f64]> {
        self.layers
            .get(&layer)
            .map(Vec::as_slice)
            .ok_or(Error::MissingLayer(layer))
    }

    pub fn is_correct(&self) -> bool {
        self.truth == self.pred
    }
}

impl DumpMeta {
    pub fn new(n_classes: usize, layer_dims: BTreeMap<LayerIndex, usize>, source: impl Into<String>) -> Self {
        DumpMeta {
            n_classes,
            layer_dims,
            source: source.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 {
            return Err(Error::Schema("n_classes must be positive".into()));
        }
        if let Some((k, _)) = self.layer_dims.iter().find(|(_, &d)| d == 0) {
            return Err(Error::Schema(format!("layer {k} has dimension 0")));
        }
        Ok(())
    }

    pub fn validate_record(&self, r: &ActivationRecord) -> Result<()> {
        if r.truth >= self.n_classes || r.pred >= self.n_classes {
            return Err(Error::Schema(format!(
                "record {}: class labels ({}, {}) exceed n_classes = {}",
                r.id, r.truth, r.pred, self.n_classes
            )));
        }
        for (key, v) in &r.layers {
            let d = self.layer_dims.get(key).ok_or_else(|| {
                Error::Schema(format!("record {}: layer {key} is not declared in the meta line", r.id))
            })?;
            if v.len() != *d {
                return Err(Error::Schema(format!(
                    "record {}: layer {key} has {} values, expected {d}",
                    r.id,
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Schema(format!("record {}: layer {key} has non-finite values", r.id)));
            }
        }
        if r.layers.len() != self.layer_dims.len() {
            let missing = self
                .layer_dims
                .keys()
                .find(|k| !r.layers.contains_key(k))
                .expect("a declared layer is missing");
            return Err(Error::Schema(format!("record {}: layer {missing} is missing", r.id)));
        }
        Ok(())
    }
}

pub fn write_dump_to<W: Write>(mut w: W, meta: &DumpMeta, records: &[ActivationRecord]) -> Result<()> {
    meta.validate()?;
    for r in records {
        meta.validate_record(r)?;
    }
    let io = |e| Error::io("<dump>", e);
    serde_json::to_writer(&mut w, meta)?;
    w.write_all(b"\n").map_err(io)?;
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn write_dump(path: impl AsRef<Path>, meta: &DumpMeta, records: &[ActivationRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_dump_to(BufWriter::new(file), meta, records).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

/// Reads and validates a dump. `origin` only labels error messages.
pub fn read_dump_from<R: BufRead>(reader: R, origin: &Path) -> Result<(DumpMeta, Vec<ActivationRecord>)> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        message,
    };
    let mut lines = reader.lines().enumerate();
    let meta: DumpMeta = loop {
        match lines.next() {
            None => return Err(parse_err(1, "missing meta line".into())),
            Some((i, line)) => {
                let line = line.map_err(|e| Error::io(origin, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                break serde_json::from_str(&line).map_err(|e| parse_err(i + 1, e.to_string()))?;
            }
        }
    };
    meta.validate()?;
    let mut records = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ActivationRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(i + 1, e.to_string()))?;
        meta.validate_record(&record)?;
        records.push(record);
    }
    Ok((meta, records))
}

pub fn read_dump(path: impl AsRef<Path>) -> Result<(DumpMeta, Vec<ActivationRecord>)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dump_from(BufReader::new(file), path)
}

/// Runs `model` on labeled inputs, recording the requested layers.
pub fn dump_from_network(
    model: &NetworkModel,
    inputs: &[(usize, Vec<f64>)],
    layers: &[LayerIndex],
) -> Result<Vec<ActivationRecord>> {
    let n = model.layers.len();
    let positions = layers
        .iter()
        .map(|l| l.resolve(n))
        .collect::<Result<Vec<_>>>()?;
    inputs
        .iter()
        .enumerate()
        .map(|(id, (truth, x))| {
            let outputs = model.forward(x)?;
            let pred = crate::network::argmax(outputs.last().expect("validated model has layers"));
            let layers = layers
                .iter()
                .zip(&positions)
                .map(|(&l, &p)| (l, outputs[p].clone()))
                .collect();
            Ok(ActivationRecord {
                id: id as u64,
                truth: *truth,
                pred,
                layers,
            })
        })
        .collect()
}

/// Meta line describing the dumps produced by [`dump_from_network`].
pub fn meta_for_network(
    model: &NetworkModel,
    layers: &[LayerIndex],
    n_classes: usize,
    source: impl Into<String>,
) -> Result<DumpMeta> {
    let n = model.layers.len();
    let layer_dims = layers
        .iter()
        .map(|&l| Ok((l, model.layers[l.resolve(n)?].output_dim())))
        .collect::<Result<BTreeMap<_, _>>>()?;
    Ok(DumpMeta::new(n_classes, layer_dims, source))
}
