//! Hierarchical meeting summarization, end to end and from scratch.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`]: dense `f64` tensors with reverse-mode autodiff
//! - [`nn`]: positional encodings, multi-head attention, transformer blocks
//! - [`model`]: the two-level encoder / dual-cross-attention decoder
//! - [`data`]: tokenization, vocabularies, corpora, the news-to-meeting converter
//! - [`train`]: RAdam with warmup, gradient clipping and accumulation, checkpoints
//! - [`decode`]: length-synchronous beam search with trigram blocking
//! - [`eval`]: n-gram and skip-bigram overlap metrics plus reference baselines

pub mod data;
pub mod decode;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod train;

pub use tensor::{grad_check, Mask, Tensor, TensorError};
