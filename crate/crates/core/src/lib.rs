//! Neural CSI feedback compression with online fine-tuning.
//!
//! A desk-scale implementation of a learned CSI codec (convolutional
//! encoder/decoder with a factorized entropy model), lossless range coding of
//! latents, and lossless spike-and-slab coding of decoder model updates, so a
//! deployed decoder can follow encoder-side fine-tuning at a measured bit cost.

pub mod adam;
pub mod bitstream;
pub mod channel;
pub mod checkpoint;
pub mod codec;
pub mod csibin;
pub mod error;
pub mod finetune;
pub mod latent;
pub mod rangecoder;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod update;

pub use error::{Error, Result};
pub use tensor::Tensor;
