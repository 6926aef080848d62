//! Explainable recommendation with user/item ID embeddings acting both as
//! continuous prompts for a small decoder-only language model and as
//! matrix-factorization factors, trained jointly under an uncertainty-weighted
//! multi-task loss.

pub mod checkpoint;
pub mod cli;
pub mod corpus;
pub mod decoding;
pub mod embeddings;
pub mod error;
pub mod lm;
pub mod metrics;
pub mod model;
pub mod mtl;
pub mod rec_head;
pub mod scalar;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
