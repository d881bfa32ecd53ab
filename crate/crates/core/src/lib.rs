//! Hierarchical cross-modal fusion for visual question answering over
//! industrial scenes, with its baselines, metrics, ablation harness and a
//! synthetic corpus generator.

pub mod ablation;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod gradcheck;
pub mod head;
pub mod language;
pub mod model;
pub mod parallel;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod visual;

pub use error::{Result, VlqaError};
pub use tensor::Tensor;
