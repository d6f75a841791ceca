//! Contrastive sentence representation learning on CPU.
//!
//! Tokenisation and vocabularies, sentence-level augmentations, masked-LM
//! corruption, contrastive batch assembly, a Transformer encoder with
//! hand-written gradients, NT-Xent and masked-LM objectives, Adam training
//! with checkpoints, and STS-style evaluation.

pub mod augment;
pub mod batching;
pub mod checkpoint;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod masking;
pub mod objectives;
pub mod optim;
pub mod rng;
pub mod run;
pub mod scalar;
pub mod synthetic;
pub mod text;
pub mod train;

pub use error::{Error, Result};
