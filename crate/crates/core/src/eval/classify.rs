use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::metrics::z_scores;
use super::perplexity_from_log_probs;
use crate::corpus::EncodedExample;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::train::Objective;

/// Identify one context variable with the others known.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassificationTask {
    pub target_variable: usize,
    /// Candidate value ids, at least two.
    pub candidates: Vec<u32>,
}

impl ClassificationTask {
    pub fn validate(&self, model: &Model) -> Result<()> {
        let n = model.config.num_variables();
        if self.target_variable >= n {
            return Err(Error::OutOfRange {
                what: "context variable",
                id: self.target_variable,
                size: n,
            });
        }
        if self.candidates.len() < 2 {
            return Err(Error::Invalid("classification needs at least two candidates".into()));
        }
        Ok(())
    }
}

pub enum ScoringMode<'a> {
    /// Full-softmax perplexity.
    Exact,
    /// Perplexity from a sampled objective's loss; approximate.
    Approximate { objective: &'a dyn Objective, seed: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Classification {
    pub perplexities: Vec<f64>,
    /// Negated z-scores of the perplexities; higher means more likely.
    pub scores: Vec<f64>,
    /// Index into the task's candidates.
    pub predicted: usize,
}

impl Classification {
    /// Scores from perplexities. The prediction is the lowest perplexity,
    /// ties going to the lowest candidate id.
    pub fn from_perplexities(perplexities: Vec<f64>, candidates: &[u32]) -> Self {
        let scores = z_scores(&perplexities).into_iter().map(|z| -z).collect();
        let predicted = (0..perplexities.len())
            .min_by(|&a, &b| {
                perplexities[a]
                    .total_cmp(&perplexities[b])
                    .then(candidates[a].cmp(&candidates[b]))
            })
            .expect("at least one candidate");
        Self {
            perplexities,
            scores,
            predicted,
        }
    }
}

/// Scores `example` under each candidate value of the task's variable.
pub fn classify(
    model: &Model,
    task: &ClassificationTask,
    example: &EncodedExample,
    mode: &ScoringMode,
) -> Result<Classification> {
    task.validate(model)?;
    let tokens = example.num_targets();
    if tokens == 0 {
        return Err(Error::Invalid("example has no predicted tokens".into()));
    }
    let mut perplexities = Vec::with_capacity(task.candidates.len());
    for &cand in &task.candidates {
        let mut ex = example.clone();
        ex.context_ids[task.target_variable] = cand;
        let log_prob = match mode {
            ScoringMode::Exact => model.total_log_prob(&ex)?,
            ScoringMode::Approximate { objective, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                -model.sequence_loss(&ex, *objective, 0.0, &mut rng)?
            }
        };
        perplexities.push(perplexity_from_log_probs(log_prob, tokens));
    }
    Ok(Classification::from_perplexities(perplexities, &task.candidates))
}
