//! Perplexity, generative classification, classification metrics and beam
//! search.

mod beam;
mod classify;
mod metrics;

pub use beam::{beam_search, Hypothesis, ModelScorer, SequenceScorer};
pub use classify::{classify, ClassificationTask, Classification, ScoringMode};
pub use metrics::{accuracy_f1, auc, average_auc, z_scores, AucSummary};

use rayon::prelude::*;

use crate::corpus::EncodedExample;
use crate::error::{Error, Result};
use crate::model::Model;

/// `exp(−Σ log p / N)` from per-token log-probabilities.
pub fn perplexity_from_log_probs(total_log_prob: f64, tokens: usize) -> f64 {
    (-total_log_prob / tokens as f64).exp()
}

/// Per-token perplexity over `examples`, end tokens included.
pub fn perplexity(model: &Model, examples: &[EncodedExample]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Invalid("perplexity of an empty example set".into()));
    }
    let per_example: Vec<Result<(f64, usize)>> = examples
        .par_iter()
        .map(|ex| Ok((model.total_log_prob(ex)?, ex.num_targets())))
        .collect();
    let (mut total, mut tokens) = (0.0, 0usize);
    for r in per_example {
        let (lp, n) = r?;
        total += lp;
        tokens += n;
    }
    if tokens == 0 {
        return Err(Error::Invalid("no predicted tokens".into()));
    }
    Ok(perplexity_from_log_probs(total, tokens))
}
