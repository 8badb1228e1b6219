//! UACANet: uncertainty-augmented context attention for polyp segmentation.
//!
//! Everything is built on a self-contained tensor type with reverse-mode
//! automatic differentiation — no external ML framework. The main pieces:
//!
//! - [`tensor`]: dense tensors, differentiable ops, gradient checking
//! - [`attention`]: parallel axial attention and the encoder/decoder built on it
//! - [`uaca`]: uncertainty-augmented context attention
//! - [`model`]: the full network
//! - [`loss`] / [`metrics`]: training objective and evaluation scores
//! - [`data`]: Netpbm I/O, synthetic blob benchmark, augmentations
//! - [`train`]: Adam, polynomial LR decay, checkpoints
//! - [`cli`]: the `train | eval | predict | selftest` command surface
//!
//! See the `examples/` directory for a runnable tour of each capability.

pub mod attention;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod layers;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod reference;
pub mod selftest;
pub mod tensor;
pub mod train;
pub mod uaca;

pub use error::{Error, Result};
pub use model::{Model, ModelConfig};
pub use tensor::{no_grad, Element, Tensor};
