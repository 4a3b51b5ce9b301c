//! Small differentiable-computation core: tape autodiff, dense and GRU
//! layers, and Adam.

mod adam;
mod graph;
mod layers;
mod params;

pub use adam::{Adam, AdamState};
pub use graph::{pairwise_euclidean, sigmoid, softmax_rows, Graph, Var};
pub use layers::{Dense, Gru, SeqBatch};
pub use params::{ParamId, ParamStore};
