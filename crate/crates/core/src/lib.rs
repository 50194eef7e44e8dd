//! Vision transformer micro-framework: a dense reverse-mode autodiff core,
//! ViT / MLP-Mixer / Local-ViT / NiNformer blocks and classifiers, MNIST and
//! CIFAR ingestion, Adam training, gradient checking, and latency/FLOP
//! benchmarking.

pub mod benchmark;
pub mod cli;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod models;
pub mod nn;
pub mod params;
pub mod presets;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{Gradients, Graph, Scalar, Tensor, TensorError, Var};
