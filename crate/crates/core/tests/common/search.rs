//! Brute-force references for metrics, decoding and hashing.

use std::collections::HashSet;

use ctxlm::eval::SequenceScorer;
use ctxlm::hashbias::{expected_false_positive_rate, ObservedPairFilter};
use ctxlm::log_softmax;
use ctxlm::model::{Adaptation, Model, ModelConfig};
use num_bigint::BigUint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{random_examples, randomized_model};

pub fn wide(w: u64, c: u64, r0: u64, ri: u64, l: u64) -> u64 {
    let v = (BigUint::from(w) * r0 + BigUint::from(c) * ri) % l;
    u64::try_from(v).unwrap()
}

pub type Pairs = Vec<(u32, u32)>;

/// `n` distinct random pairs and `probes` further pairs disjoint from them.
pub fn pairs(seed: u64, n: usize, probes: usize) -> (Pairs, Pairs) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut draw = |count: usize| {
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let p = (rng.gen_range(0..1u32 << 31), rng.gen_range(0..1u32 << 31));
            if seen.insert(p) {
                out.push(p);
            }
        }
        out
    };
    let inserted = draw(n);
    let held_out = draw(probes);
    (inserted, held_out)
}

pub fn measured_fpr(seed: u64, bits: u64, n: usize, probes: usize) -> (f64, f64) {
    let (inserted, held_out) = pairs(seed, n, probes);
    let mut filter = ObservedPairFilter::new(seed, bits, 1);
    for &(w, c) in &inserted {
        filter.insert(0, w, c);
    }
    assert!(inserted.iter().all(|&(w, c)| filter.contains(0, w, c)), "false negative");
    let hits = held_out.iter().filter(|&&(w, c)| filter.contains(0, w, c)).count();
    (hits as f64 / probes as f64, expected_false_positive_rate(n as u64, bits))
}

pub fn auc_by_pairs(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let (mut twice, mut pairs) = (0u64, 0u64);
    for (i, &p) in positive.iter().enumerate() {
        for (j, &q) in positive.iter().enumerate() {
            if p && !q {
                pairs += 1;
                twice += if scores[i] > scores[j] {
                    2
                } else if scores[i] == scores[j] {
                    1
                } else {
                    0
                };
            }
        }
    }
    (pairs > 0).then(|| twice as f64 / (2 * pairs) as f64)
}

/// Table-driven scorer: each prefix gets its own seeded distribution over
/// four tokens, token 0 ending the sentence. Logits are coarse so ties occur.
pub struct TableScorer {
    pub seed: u64,
}

impl TableScorer {
    fn distribution(&self, prefix: &[u32]) -> Vec<f64> {
        let key = prefix.iter().fold(self.seed, |h, &t| h.wrapping_mul(31).wrapping_add(t as u64 + 1));
        let mut r = ChaCha8Rng::seed_from_u64(key);
        let logits: Vec<f64> = (0..4).map(|_| r.gen_range(0..3) as f64).collect();
        log_softmax(&logits)
    }
}

impl SequenceScorer for TableScorer {
    type State = Vec<u32>;

    fn start(&self) -> (Vec<u32>, Vec<f64>) {
        (Vec::new(), self.distribution(&[]))
    }

    fn advance(&self, state: &Vec<u32>, token: u32) -> (Vec<u32>, Vec<f64>) {
        let mut next = state.clone();
        next.push(token);
        let lp = self.distribution(&next);
        (next, lp)
    }

    fn end_token(&self) -> u32 {
        0
    }
}

/// Best complete sequence by brute force: ends with the end token or has
/// `max_len` tokens. Ties go to the lexicographically smaller sequence.
pub fn exhaustive<S: SequenceScorer>(scorer: &S, max_len: usize) -> (Vec<u32>, f64) {
    fn go<S: SequenceScorer>(
        s: &S,
        state: &S::State,
        lp: &[f64],
        prefix: &mut Vec<u32>,
        score: f64,
        max_len: usize,
        best: &mut Option<(Vec<u32>, f64)>,
    ) {
        for (w, &p) in lp.iter().enumerate() {
            if p == f64::NEG_INFINITY {
                continue;
            }
            prefix.push(w as u32);
            let total = score + p;
            if w as u32 == s.end_token() || prefix.len() == max_len {
                let better = match best {
                    None => true,
                    Some((t, b)) => total > *b || (total == *b && prefix < t),
                };
                if better {
                    *best = Some((prefix.clone(), total));
                }
            } else {
                let (next, nlp) = s.advance(state, w as u32);
                go(s, &next, &nlp, prefix, total, max_len, best);
            }
            prefix.pop();
        }
    }
    let (state, lp) = scorer.start();
    let mut best = None;
    go(scorer, &state, &lp, &mut Vec::new(), 0.0, max_len, &mut best);
    best.unwrap()
}

pub fn greedy<S: SequenceScorer>(scorer: &S, max_len: usize) -> Vec<u32> {
    let (mut state, mut lp) = scorer.start();
    let mut out = Vec::new();
    loop {
        let (w, _) = lp
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i, p) } else { best });
        out.push(w as u32);
        if w as u32 == scorer.end_token() || out.len() == max_len {
            return out;
        }
        (state, lp) = scorer.advance(&state, w as u32);
    }
}

/// Toy language model with four generable tokens (end token plus three
/// words); the sentence-begin and UNK ids are masked.
pub fn toy_model(seed: u64) -> Model {
    let cfg = ModelConfig {
        vocab_size: 6,
        embed_dim: 4,
        lstm_dim: 6,
        context_cardinalities: vec![3, 2],
        context_embed_dims: vec![2, 2],
        context_dim: 3,
        adaptation: Adaptation::all(),
    };
    let examples = random_examples(seed, 20, &cfg, 4);
    randomized_model(&cfg, seed, 1.5, &examples)
}

