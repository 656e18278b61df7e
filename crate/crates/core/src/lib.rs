//! Multimodal image + caption hate-content classifier.
//!
//! A vision transformer and a caption transformer encode the two inputs,
//! caption features gate the image tokens, a self-attention layer mixes the
//! fused sequence, and a softmax head gives `[P(no-hate), P(hate)]`. All of
//! it runs on the small reverse-mode autodiff engine in [`tensor`].

pub mod caption;
pub mod data;
mod error;
pub mod fusion;
pub mod gradcam;
pub mod model;
pub mod params;
pub mod tensor;
pub mod train;
pub mod transformer;
pub mod vision;

pub use error::{Error, Result};
pub use model::{AblationFlags, AblationMode, ModelConfig, StmaModel};
pub use params::ParamStore;
pub use tensor::{Graph, Tensor, Var};
