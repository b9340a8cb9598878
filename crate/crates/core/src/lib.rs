//! Runtime novelty monitors for neural-network classifiers.
//!
//! A monitor watches the outputs of selected hidden layers. During training it
//! collects the activation vectors of correctly classified inputs per class,
//! clusters them, and abstracts each cluster by a box (or an octagon or a
//! Euclidean ball). At runtime a prediction is accepted only if, at every
//! watched layer, some abstraction of the predicted class contains the
//! observed vector.
//!
//! Module map:
//!
//! - [`geometry`]: abstraction domains (box, octagon, ball)
//! - [`clustering`]: k-means and the adaptive choice of k
//! - [`network`]: dense feedforward inference (`classify`, `watch`)
//! - [`dumps`]: the JSON Lines activation-dump format
//! - [`monitor`]: training and runtime verdicts
//! - [`baseline`]: the softmax-threshold detector
//! - [`evaluation`]: the experiment harness and a synthetic fixture
//! - [`cli`]: the `otb` command-line tool

pub mod baseline;
pub mod cli;
pub mod clustering;
pub mod dumps;
mod error;
pub mod evaluation;
pub mod geometry;
pub mod layer;
pub mod monitor;
pub mod network;

pub use error::{Error, Result};
pub use layer::LayerIndex;
