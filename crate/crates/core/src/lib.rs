//! Context-adapted recurrent language models.
//!
//! Sentences carry one or more categorical context variables. Their
//! embeddings are combined into a context vector that adapts the recurrent
//! layer (additive bias and multiplicative rescaling) and the output layer
//! (low-rank logit offset). A Bloom-gated feature-hashed bias adds a learned
//! offset per observed (word, context value) pair.

pub mod checkpoint;
pub mod context;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod hashbias;
mod linalg;
pub mod model;
pub mod registry;
pub mod tokenize;
pub mod train;

pub use error::{Error, Result};
pub use linalg::{log_softmax, log_sum_exp};
