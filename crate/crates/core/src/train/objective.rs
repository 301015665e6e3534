//! Training objectives: cross-entropy over a candidate set of output words.
//!
//! The full softmax uses the whole vocabulary. The sampled softmax uses the
//! target plus `k` negatives drawn with replacement from the unigram
//! distribution; each negative's logit is shifted by `−ln(k·q(w))`, its
//! expected count. The target is always present (expected count 1, no
//! shift) and negatives equal to the target are dropped.

use rand::distributions::{Distribution, WeightedIndex};
use rand::RngCore;

use crate::linalg::log_sum_exp;
use crate::registry::Registry;

#[derive(Clone, Debug, PartialEq)]
pub struct CandidateSet {
    pub ids: Vec<u32>,
    /// `ln` of each candidate's expected count; subtracted from its logit.
    pub log_expected_counts: Vec<f64>,
    pub target_pos: usize,
}

impl CandidateSet {
    pub fn full(target: u32, vocab_size: usize) -> Self {
        Self {
            ids: (0..vocab_size as u32).collect(),
            log_expected_counts: vec![0.0; vocab_size],
            target_pos: target as usize,
        }
    }

    pub fn target(&self) -> u32 {
        self.ids[self.target_pos]
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// `−log softmax(logits)[target]` and its gradient `softmax − onehot`.
pub fn full_softmax_loss(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let lse = log_sum_exp(logits);
    let mut grad: Vec<f64> = logits.iter().map(|l| (l - lse).exp()).collect();
    grad[target] -= 1.0;
    (lse - logits[target], grad)
}

/// Cross-entropy over `set` given raw candidate logits (before correction).
/// Returns the loss and the gradient w.r.t. the raw logits.
pub fn candidate_loss(raw_logits: &[f64], set: &CandidateSet) -> (f64, Vec<f64>) {
    let corrected: Vec<f64> = raw_logits
        .iter()
        .zip(&set.log_expected_counts)
        .map(|(l, c)| l - c)
        .collect();
    full_softmax_loss(&corrected, set.target_pos)
}

pub trait Objective: Send + Sync {
    fn name(&self) -> &'static str;
    /// Whether every candidate set is the whole vocabulary.
    fn full_vocabulary(&self) -> bool {
        false
    }
    fn candidates(&self, target: u32, vocab_size: usize, rng: &mut dyn RngCore) -> CandidateSet;
}

pub struct FullSoftmax;

impl Objective for FullSoftmax {
    fn name(&self) -> &'static str {
        "full"
    }

    fn full_vocabulary(&self) -> bool {
        true
    }

    fn candidates(&self, target: u32, vocab_size: usize, _rng: &mut dyn RngCore) -> CandidateSet {
        CandidateSet::full(target, vocab_size)
    }
}

pub struct SampledSoftmax {
    samples: usize,
    unigram: Vec<f64>,
    sampler: WeightedIndex<f64>,
}

impl SampledSoftmax {
    /// `unigram` may be unnormalized weights.
    pub fn new(samples: usize, unigram: Vec<f64>) -> Self {
        assert!(samples >= 1, "at least one negative sample");
        let sampler = WeightedIndex::new(&unigram).expect("unigram distribution has positive mass");
        let total: f64 = unigram.iter().sum();
        let unigram = unigram.into_iter().map(|q| q / total).collect();
        Self {
            samples,
            unigram,
            sampler,
        }
    }

    pub fn samples(&self) -> usize {
        self.samples
    }
}

impl Objective for SampledSoftmax {
    fn name(&self) -> &'static str {
        "sampled"
    }

    fn candidates(&self, target: u32, _vocab_size: usize, rng: &mut dyn RngCore) -> CandidateSet {
        let mut ids = Vec::with_capacity(self.samples + 1);
        let mut log_expected_counts = Vec::with_capacity(self.samples + 1);
        ids.push(target);
        log_expected_counts.push(0.0);
        let k = self.samples as f64;
        for _ in 0..self.samples {
            let w = self.sampler.sample(rng) as u32;
            if w == target {
                continue;
            }
            ids.push(w);
            log_expected_counts.push((k * self.unigram[w as usize]).ln());
        }
        CandidateSet {
            ids,
            log_expected_counts,
            target_pos: 0,
        }
    }
}

pub struct ObjectiveArgs {
    pub negative_samples: usize,
    pub unigram: Vec<f64>,
}

pub fn objectives() -> Registry<dyn Objective, ObjectiveArgs> {
    let mut reg: Registry<dyn Objective, ObjectiveArgs> = Registry::new("objective");
    reg.register("full", |_| Box::new(FullSoftmax))
        .register("sampled", |a| {
            Box::new(SampledSoftmax::new(a.negative_samples.max(1), a.unigram.clone()))
        });
    reg
}
