//! Typological language vectors learned from multilingual translation.

pub mod autograd;
pub mod bpe;
pub mod corpus;
pub mod error;
pub mod kv;
pub mod nn;
pub mod pipeline;
pub mod predict;
pub mod repr;
pub mod scalar;
pub mod synth;
pub mod typology;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = autograd::Tensor<f64>;
pub type ParamStore = autograd::ParamStore<f64>;
pub type Graph = autograd::Graph<f64>;
pub type Seq2Seq = nn::Seq2Seq<f64>;
pub type RnnLm = nn::RnnLm<f64>;
pub type LogRegModel = predict::LogRegModel<f64>;
