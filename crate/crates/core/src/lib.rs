//! Few-shot molecular property prediction with property-aware embeddings and
//! adaptive relation graphs.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, which the tests and the command-line tool use.

pub mod chem;
pub mod embed;
pub mod encoder;
pub mod error;
pub mod meta;
pub mod nn;
pub mod relgraph;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = tensor::Tensor<f64>;
pub type Model = meta::ParameterStore<f64>;
pub type EncoderWeights = encoder::EncoderWeights<f64>;
pub type RelationWeights = relgraph::RelationWeights<f64>;
pub type ProjectionWeights = embed::ProjectionWeights<f64>;
