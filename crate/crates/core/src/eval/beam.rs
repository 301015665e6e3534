use std::cmp::Ordering;

use crate::corpus::{BOS_ID, EOS_ID, UNK_ID};
use crate::error::Result;
use crate::linalg::log_softmax;
use crate::model::{Model, RecurrentState, SentenceContext};

/// Incremental next-token distributions. Tokens with log-probability `−∞`
/// are never generated.
pub trait SequenceScorer {
    type State: Clone;
    /// State after the sentence-begin token, with the first token's log-probs.
    fn start(&self) -> (Self::State, Vec<f64>);
    /// Feeds `token` and returns the log-probs for the following position.
    fn advance(&self, state: &Self::State, token: u32) -> (Self::State, Vec<f64>);
    fn end_token(&self) -> u32;
}

/// A model with a fixed sentence context. The sentence-begin and UNK tokens
/// are excluded from generation.
pub struct ModelScorer<'a> {
    model: &'a Model,
    context: SentenceContext,
}

impl<'a> ModelScorer<'a> {
    pub fn new(model: &'a Model, context_ids: &[u32]) -> Result<Self> {
        Ok(Self {
            model,
            context: model.sentence_context(context_ids, true)?,
        })
    }

    fn distribution(&self, logits: &[f64]) -> Vec<f64> {
        let mut lp = log_softmax(logits);
        lp[BOS_ID as usize] = f64::NEG_INFINITY;
        lp[UNK_ID as usize] = f64::NEG_INFINITY;
        lp
    }
}

impl SequenceScorer for ModelScorer<'_> {
    type State = RecurrentState;

    fn start(&self) -> (RecurrentState, Vec<f64>) {
        self.advance(&self.model.initial_state(), BOS_ID)
    }

    fn advance(&self, state: &RecurrentState, token: u32) -> (RecurrentState, Vec<f64>) {
        let (next, logits) = self.model.step(&self.context, state, token);
        let lp = self.distribution(&logits);
        (next, lp)
    }

    fn end_token(&self) -> u32 {
        EOS_ID
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Generated tokens, the end token included when one was produced.
    pub tokens: Vec<u32>,
    pub log_prob: f64,
}

impl Hypothesis {
    /// Higher score first, then lexicographically smaller tokens.
    fn rank(&self, other: &Self) -> Ordering {
        other
            .log_prob
            .total_cmp(&self.log_prob)
            .then_with(|| self.tokens.cmp(&other.tokens))
    }
}

/// Beam search without length normalization. A hypothesis is complete when
/// it produces the end token or reaches `max_len` tokens; the best complete
/// hypothesis is returned. With `beam_width == 1` this is greedy decoding.
pub fn beam_search<S: SequenceScorer>(scorer: &S, beam_width: usize, max_len: usize) -> Hypothesis {
    assert!(beam_width >= 1 && max_len >= 1);
    let eos = scorer.end_token();
    let (state, lp) = scorer.start();
    let mut live: Vec<(Hypothesis, S::State, Vec<f64>)> = vec![(
        Hypothesis {
            tokens: Vec::new(),
            log_prob: 0.0,
        },
        state,
        lp,
    )];
    let mut completed: Vec<Hypothesis> = Vec::new();
    for len in 1..=max_len {
        let mut expansions: Vec<(usize, Hypothesis)> = Vec::new();
        for (i, (hyp, _, lp)) in live.iter().enumerate() {
            for (w, &p) in lp.iter().enumerate() {
                if p == f64::NEG_INFINITY {
                    continue;
                }
                let mut tokens = hyp.tokens.clone();
                tokens.push(w as u32);
                expansions.push((
                    i,
                    Hypothesis {
                        tokens,
                        log_prob: hyp.log_prob + p,
                    },
                ));
            }
        }
        expansions.sort_by(|a, b| a.1.rank(&b.1));
        expansions.truncate(beam_width);
        let mut next_live = Vec::new();
        for (parent, hyp) in expansions {
            let last = *hyp.tokens.last().unwrap();
            if last == eos || len == max_len {
                completed.push(hyp);
            } else {
                let (state, lp) = scorer.advance(&live[parent].1, last);
                next_live.push((hyp, state, lp));
            }
        }
        live = next_live;
        let best_done = completed.iter().map(|h| h.log_prob).fold(f64::NEG_INFINITY, f64::max);
        let best_live = live.iter().map(|h| h.0.log_prob).fold(f64::NEG_INFINITY, f64::max);
        // scores only decrease as hypotheses grow
        if live.is_empty() || best_done > best_live {
            break;
        }
    }
    completed.sort_by(|a, b| a.rank(b));
    completed.into_iter().next().unwrap_or(Hypothesis {
        tokens: Vec::new(),
        log_prob: f64::NEG_INFINITY,
    })
}
