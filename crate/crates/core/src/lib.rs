//! Eye-landmark localization: stacked deep-aggregation hourglasses with
//! inter-stage self-attention, decoded by a differentiable soft-argmax.

pub mod ablation;
pub mod attention;
pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod heatmap;
pub mod image;
pub mod infer;
pub mod landmarks;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod plot;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
