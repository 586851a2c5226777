//! History-injection transformer (HiT) core for continuous multi-temporal
//! change detection.
//!
//! Everything numerical lives here: a small tensor/layer library with
//! explicit forward and backward passes, the ViT encoder with a
//! stage-indexed injection point, the history-embedding mechanism itself,
//! the pyramid segmentation decoder, losses and metrics, the synthetic
//! scene generator, the storage footprint model, and the binary wire
//! formats (checkpoints, rasters, embedding records).
//!
//! The crate is `no_std` + `alloc` so the inference path can be hosted on
//! embedded targets; all file and clock access lives in the companion CLI
//! crate. Every operation is deterministic: identical inputs and seeds
//! produce bit-identical outputs within one build.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod config;
pub mod conv;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod footprint;
pub mod gradcheck;
pub mod hit;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod optim;
pub mod params;
pub mod rng;
pub mod scalar;
pub mod synth;
pub mod tensor;
pub mod wire;

pub use config::ModelConfig;
pub use error::{Error, Result};
pub use hit::HistoryEmbedding;
pub use model::{BaselineModel, HitModel};
pub use tensor::Tensor;
