//! Generative graph self-supervised pre-training and fine-tuning for social bot detection.

pub mod autodiff;
pub mod checkpoint;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod finetune;
pub mod graph;
pub mod optim;
pub mod pretext;
pub mod synth;

pub use error::{Error, Result};
