//! Language-guided denoising for video-text retrieval, at desk scale.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`). Aliases for
//! the common concrete instantiations are provided below; training and
//! evaluation default to `f64`.

pub mod banks;
pub mod checkpoint;
pub mod cli;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod gradsuite;
pub mod nn;
pub mod objectives;
pub mod optim;
pub mod metrics;
pub mod params;
pub mod scalar;
pub mod sfp;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Graph64 = tensor::Graph<f64>;
pub type Graph32 = tensor::Graph<f32>;
pub type ParamStore64 = params::ParamStore<f64>;
pub type ParamStore32 = params::ParamStore<f32>;
pub type MemoryBank64 = banks::MemoryBank<f64>;
pub type MemoryBank32 = banks::MemoryBank<f32>;
pub type TokenSequence64 = encoders::TokenSequence<f64>;
pub type TokenSequence32 = encoders::TokenSequence<f32>;
