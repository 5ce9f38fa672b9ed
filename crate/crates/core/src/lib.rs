//! Token-based zero-shot voice conversion: DVAE tokenizers, a Perceiver style
//! encoder, a dual-head token language model and a conditioned vocoder.

// `!(x > 0.0)` checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audio;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod dvae;
pub mod error;
pub mod eval;
pub mod lm;
pub mod manifest;
pub mod numerics;
pub mod pipeline;
pub mod styleenc;
pub mod vocoder;

pub use error::{Error, Result};
