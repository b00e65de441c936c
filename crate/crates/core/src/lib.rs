//! Numerical core for multi-granularity, modal-attention dense affect prediction.
//!
//! Everything in this crate is pure computation over in-memory data: the
//! dense-layer kernel with hand-written backward passes, modal attention
//! fusion, NetVLAD pooling, the mixture-of-experts head, the training loop,
//! per-video correlation evaluation and the synthetic dataset generator.
//! File formats, checkpoints and the command line live in the `mgnma` crate.
#![cfg_attr(not(test), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod error;
pub mod eval;
pub mod features;
pub mod fusion;
pub mod gradcheck;
pub mod model;
pub mod moe;
pub mod netvlad;
pub mod nn;
pub mod synth;
pub mod tensor;
pub mod trainer;
pub mod video_level;

pub use error::{Error, Result};
pub use tensor::{Matrix, Real};

/// Number of evoked-expression classes predicted per frame.
pub const NUM_CLASSES: usize = 15;
