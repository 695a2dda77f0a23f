//! Graphically structured diffusion models.
//!
//! Graphical models over arrays of variables are compiled into sparse
//! attention masks; a transformer denoiser restricted to those masks is
//! trained as a conditional diffusion model over the model's nodes.

pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod graph_model;
pub mod harness;
pub mod mask;
pub mod nn;
pub mod ppl;
pub mod scalar;
pub mod tasks;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = nn::Tensor<f32>;
pub type Tensor64 = nn::Tensor<f64>;
pub type Denoiser32 = denoiser::Denoiser<f32>;
pub type Denoiser64 = denoiser::Denoiser<f64>;
