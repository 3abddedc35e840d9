//! Dense tensors, reverse-mode differentiation, and the Adam optimizer.

mod adam;
mod checkpoint;
mod graph;
mod params;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, FORMAT_VERSION as CHECKPOINT_VERSION};
pub use graph::{sigmoid, Graph, Var};
pub use params::{glorot_uniform, Gradients, ParamId, ParamStore, Parameter};
pub use tensor::Tensor;
