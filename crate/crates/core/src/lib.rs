//! Synthetic motif benchmarks, a small message-passing GNN, and a
//! parameterized explainer that scores edges by their contribution to the
//! GNN's predictions.

pub mod dataio;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod explainer;
pub mod gnn;
pub mod graph;
pub mod rng;
pub mod synthgen;

pub use dataset::{Dataset, Instance, Task};
pub use error::{Error, Result};
pub use explainer::{ExplainTrainConfig, Explanation, ExplainerNet};
pub use gnn::{GnnModel, TrainConfig};
pub use graph::{EdgeScores, Graph};
