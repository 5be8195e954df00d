//! Temporal alignment of vision and audio embeddings for multimodal
//! sequence models.
//!
//! - [`temporal`]: rotary time embeddings and a learned time table.
//! - [`sequencing`]: interleaving of timestamped tokens into time groups.
//! - [`alignnet`]: query projection, attention blocks, contrastive loss.
//! - [`compression`]: halving the audio token rate.
//! - [`grpo`]: group-relative policy optimisation and rule-based rewards.
//! - [`harness`]: synthetic data, training loops, ablations and file IO.

pub mod alignnet;
pub mod compression;
pub mod error;
pub mod grpo;
pub mod harness;
pub mod numerics;
pub mod parallel;
pub mod sequencing;
pub mod temporal;

pub use error::{OmniError, Result};
pub use parallel::Execution;
