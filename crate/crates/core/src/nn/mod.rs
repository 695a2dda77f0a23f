//! Minimal differentiable compute core.

pub mod adam;
pub mod attention;
pub mod gradcheck;
pub mod graph;
pub mod params;
pub mod tensor;

pub use adam::AdamState;
pub use attention::{dense_masked_attention, packed_attention, packed_attention_heads, OpCounter};
pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{Graph, Var};
pub use params::{Gradients, ParamId, ParameterStore};
pub use tensor::Tensor;
