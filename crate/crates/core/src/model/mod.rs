//! Context-adapted CIFG-LSTM language model: forward pass, per-token
//! log-probabilities, and exact gradients by backpropagation through time.

mod cell;
mod params;

use ndarray::{Array1, ArrayView1};
use rand::RngCore;

pub use cell::{cifg_backward, cifg_step, CellCache, RecurrentState};
pub use params::{Adaptation, LmParams, ModelConfig, Params};

use crate::corpus::EncodedExample;
use crate::error::{Error, Result};
use crate::hashbias::{HashedBias, SparseGrad};
use crate::linalg::{add_outer, log_softmax};
use crate::train::dropout::apply_dropout;
use crate::train::objective::{candidate_loss, Objective};

/// Gradients for every trainable quantity: dense tensors plus the sparse
/// hash-table slots touched.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub params: Params,
    pub hash: SparseGrad,
}

impl Gradients {
    pub fn zeros_like(params: &Params) -> Self {
        Self {
            params: params.zeros_like(),
            hash: SparseGrad::new(),
        }
    }

    pub fn add(&mut self, other: &Gradients) {
        self.params.add_scaled(&other.params, 1.0);
        for (&k, &v) in &other.hash {
            *self.hash.entry(k).or_default() += v;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.params.scale(factor);
        self.hash.values_mut().for_each(|v| *v *= factor);
    }
}

/// Per-sentence quantities that depend only on the context: computed once
/// and reused at every step.
#[derive(Clone, Debug)]
pub struct SentenceContext {
    pub context_ids: Vec<u32>,
    /// `c̄`; empty when no mechanism consumes it.
    pub vector: Array1<f64>,
    /// `1 + C_u·c̄`.
    pub input_scale: Option<Array1<f64>>,
    /// `1 + C_w·c̄`.
    pub recurrent_scale: Option<Array1<f64>>,
    /// `F·c̄`.
    pub additive: Option<Array1<f64>>,
    /// `G·c̄` over the vocabulary.
    pub lowrank: Option<Array1<f64>>,
    /// `Hash(w, c_{1:n})` for every word, when precomputed.
    pub hash_bias: Option<Vec<f64>>,
}

/// The stacked pre-activation
/// `(1 + C_u·c̄) ⊙ U·x + (1 + C_w·c̄) ⊙ S·h + F·c̄ + b_1`, recomputing every
/// context term. Terms for disabled mechanisms are omitted.
pub fn adapted_preactivation(
    word_vec: ArrayView1<f64>,
    prev_h: ArrayView1<f64>,
    context_vec: ArrayView1<f64>,
    lm: &LmParams,
    adaptation: Adaptation,
) -> Result<Array1<f64>> {
    if word_vec.len() != lm.u.ncols() || prev_h.len() != lm.s.ncols() {
        return Err(Error::Shape(format!(
            "word vector {} / hidden {} vs U {:?} / S {:?}",
            word_vec.len(),
            prev_h.len(),
            lm.u.dim(),
            lm.s.dim()
        )));
    }
    let scale = |m: &ndarray::Array2<f64>| m.dot(&context_vec) + 1.0;
    let su = adaptation.multiplicative.then(|| scale(&lm.cu));
    let sw = adaptation.multiplicative.then(|| scale(&lm.cw));
    let fa = adaptation.additive.then(|| lm.f.dot(&context_vec));
    let ux = lm.u.dot(&word_vec);
    let sh = lm.s.dot(&prev_h);
    Ok(combine(&ux, &sh, su.as_ref(), sw.as_ref(), fa.as_ref(), &lm.b1))
}

fn combine(
    ux: &Array1<f64>,
    sh: &Array1<f64>,
    su: Option<&Array1<f64>>,
    sw: Option<&Array1<f64>>,
    fa: Option<&Array1<f64>>,
    b1: &Array1<f64>,
) -> Array1<f64> {
    Array1::from_shape_fn(ux.len(), |j| {
        let a = su.map_or(ux[j], |s| s[j] * ux[j]);
        let b = sw.map_or(sh[j], |s| s[j] * sh[j]);
        let mut v = a + b;
        if let Some(f) = fa {
            v += f[j];
        }
        v + b1[j]
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: Params,
    /// Present exactly when hash adaptation is enabled.
    pub hash: Option<HashedBias>,
}

struct StepCache {
    input: u32,
    x: Array1<f64>,
    in_mask: Option<Array1<f64>>,
    ux: Array1<f64>,
    sh: Array1<f64>,
    prev_h: Array1<f64>,
    cell: CellCache,
    out_mask: Option<Array1<f64>>,
    h_dropped: Array1<f64>,
    proj: Array1<f64>,
    candidates: Vec<u32>,
    d_logits: Vec<f64>,
}

impl Model {
    pub fn new(config: ModelConfig, params: Params, hash: Option<HashedBias>) -> Result<Self> {
        config.validate()?;
        if config.adaptation.hash != hash.is_some() {
            return Err(Error::Config(
                "hash table must be supplied exactly when hash adaptation is enabled".into(),
            ));
        }
        if let Some(hb) = &hash {
            if hb.table.num_variables() != config.num_variables() {
                return Err(Error::Config("hash table variable count mismatch".into()));
            }
        }
        let expected = Params::zeros(&config);
        for ((name, a), (_, b)) in params.tensors().iter().zip(expected.tensors()) {
            if a.len() != b.len() {
                return Err(Error::Shape(format!("tensor {name}: {} vs {}", a.len(), b.len())));
            }
        }
        Ok(Self {
            config,
            params,
            hash,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    pub fn initial_state(&self) -> RecurrentState {
        RecurrentState::zeros(self.config.lstm_dim)
    }

    /// Precomputes the context-dependent terms for one sentence. With
    /// `precompute_hash` the hashed bias is evaluated for the whole
    /// vocabulary up front.
    pub fn sentence_context(&self, context_ids: &[u32], precompute_hash: bool) -> Result<SentenceContext> {
        let a = self.config.adaptation;
        let vector = if a.uses_context_vector() {
            self.params.context.embed(context_ids)?
        } else {
            self.check_context_ids(context_ids)?;
            Array1::zeros(0)
        };
        let lm = &self.params.lm;
        let scale = |m: &ndarray::Array2<f64>| m.dot(&vector) + 1.0;
        let hash_bias = match (&self.hash, precompute_hash) {
            (Some(hb), true) => Some(
                (0..self.vocab_size() as u32)
                    .map(|w| hb.lookup(w, context_ids))
                    .collect(),
            ),
            _ => None,
        };
        Ok(SentenceContext {
            context_ids: context_ids.to_vec(),
            input_scale: a.multiplicative.then(|| scale(&lm.cu)),
            recurrent_scale: a.multiplicative.then(|| scale(&lm.cw)),
            additive: a.additive.then(|| lm.f.dot(&vector)),
            lowrank: a.lowrank.then(|| lm.g.dot(&vector)),
            hash_bias,
            vector,
        })
    }

    fn check_context_ids(&self, ids: &[u32]) -> Result<()> {
        if ids.len() != self.config.num_variables() {
            return Err(Error::Shape(format!(
                "expected {} context ids, got {}",
                self.config.num_variables(),
                ids.len()
            )));
        }
        for (&id, &card) in ids.iter().zip(&self.config.context_cardinalities) {
            if id as usize >= card {
                return Err(Error::OutOfRange {
                    what: "context value",
                    id: id as usize,
                    size: card,
                });
            }
        }
        Ok(())
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        match tokens.iter().find(|&&t| t as usize >= self.vocab_size()) {
            Some(&t) => Err(Error::OutOfRange {
                what: "token",
                id: t as usize,
                size: self.vocab_size(),
            }),
            None => Ok(()),
        }
    }

    fn preactivation(&self, sc: &SentenceContext, x: &Array1<f64>, prev_h: &Array1<f64>) -> (Array1<f64>, Array1<f64>, Array1<f64>) {
        let lm = &self.params.lm;
        let ux = lm.u.dot(x);
        let sh = lm.s.dot(prev_h);
        let pre = combine(
            &ux,
            &sh,
            sc.input_scale.as_ref(),
            sc.recurrent_scale.as_ref(),
            sc.additive.as_ref(),
            &lm.b1,
        );
        (pre, ux, sh)
    }

    /// `⟨W_w, proj⟩ + G_w·c̄ + b_2[w] + Hash(w, c_{1:n})`.
    #[inline]
    fn logit(&self, sc: &SentenceContext, proj: &Array1<f64>, w: u32) -> f64 {
        let lm = &self.params.lm;
        let mut v = lm.w.row(w as usize).dot(proj);
        if let Some(gc) = &sc.lowrank {
            v += gc[w as usize];
        }
        v += lm.b2[w as usize];
        if let Some(hb) = &self.hash {
            v += match &sc.hash_bias {
                Some(pre) => pre[w as usize],
                None => hb.lookup(w, &sc.context_ids),
            };
        }
        v
    }

    /// Advances the recurrence by one input token and returns the logits
    /// over the full vocabulary for the next position.
    pub fn step(&self, sc: &SentenceContext, state: &RecurrentState, token: u32) -> (RecurrentState, Vec<f64>) {
        let x = self.params.lm.w.row(token as usize).to_owned();
        let (pre, _, _) = self.preactivation(sc, &x, &state.h);
        let (next, _) = cifg_step(pre.view(), state);
        let proj = self.params.lm.p.dot(&next.h);
        let logits = (0..self.vocab_size() as u32)
            .map(|w| self.logit(sc, &proj, w))
            .collect();
        (next, logits)
    }

    /// `log p(w_t | w_{<t}, c̄)` for every predicted position, end token
    /// included. No dropout.
    pub fn log_probs(&self, example: &EncodedExample) -> Result<Vec<f64>> {
        self.check_tokens(&example.token_ids)?;
        let sc = self.sentence_context(&example.context_ids, true)?;
        let mut state = self.initial_state();
        let mut out = Vec::with_capacity(example.num_targets());
        for pair in example.token_ids.windows(2) {
            let (next, logits) = self.step(&sc, &state, pair[0]);
            out.push(log_softmax(&logits)[pair[1] as usize]);
            state = next;
        }
        Ok(out)
    }

    pub fn total_log_prob(&self, example: &EncodedExample) -> Result<f64> {
        Ok(self.log_probs(example)?.iter().sum())
    }

    /// Summed cross-entropy of `example` under `objective`, forward only.
    pub fn sequence_loss(
        &self,
        example: &EncodedExample,
        objective: &dyn Objective,
        dropout: f64,
        rng: &mut dyn RngCore,
    ) -> Result<f64> {
        self.run(example, objective, dropout, rng, None)
    }

    /// Summed cross-entropy of `example` and its gradient, accumulated into
    /// `grads`. Dropout is applied to the recurrent layer's input and output
    /// when `dropout > 0`.
    pub fn loss_and_grad(
        &self,
        example: &EncodedExample,
        objective: &dyn Objective,
        dropout: f64,
        rng: &mut dyn RngCore,
        grads: &mut Gradients,
    ) -> Result<f64> {
        self.run(example, objective, dropout, rng, Some(grads))
    }

    fn run(
        &self,
        example: &EncodedExample,
        objective: &dyn Objective,
        dropout: f64,
        rng: &mut dyn RngCore,
        grads: Option<&mut Gradients>,
    ) -> Result<f64> {
        self.check_tokens(&example.token_ids)?;
        let sc = self.sentence_context(&example.context_ids, objective.full_vocabulary())?;
        let lm = &self.params.lm;
        let training = dropout > 0.0;
        let mut state = self.initial_state();
        let mut caches = Vec::with_capacity(example.num_targets());
        let mut loss = 0.0;
        for pair in example.token_ids.windows(2) {
            let (input, target) = (pair[0], pair[1]);
            let mut x = lm.w.row(input as usize).to_owned();
            let in_mask = apply_dropout(&mut x, dropout, rng, training);
            let (pre, ux, sh) = self.preactivation(&sc, &x, &state.h);
            let (next, cell) = cifg_step(pre.view(), &state);
            let mut h_dropped = next.h.clone();
            let out_mask = apply_dropout(&mut h_dropped, dropout, rng, training);
            let proj = lm.p.dot(&h_dropped);
            let set = objective.candidates(target, self.vocab_size(), rng);
            let logits: Vec<f64> = set.ids.iter().map(|&w| self.logit(&sc, &proj, w)).collect();
            let (step_loss, d_logits) = candidate_loss(&logits, &set);
            loss += step_loss;
            if grads.is_some() {
                caches.push(StepCache {
                    input,
                    x,
                    in_mask,
                    ux,
                    sh,
                    prev_h: std::mem::replace(&mut state.h, Array1::zeros(0)),
                    cell,
                    out_mask,
                    h_dropped,
                    proj,
                    candidates: set.ids,
                    d_logits,
                });
            }
            state = next;
        }
        if let Some(g) = grads {
            self.backward(&sc, &caches, g);
        }
        Ok(loss)
    }

    fn backward(&self, sc: &SentenceContext, caches: &[StepCache], grads: &mut Gradients) {
        if caches.is_empty() {
            return;
        }
        let lm = &self.params.lm;
        let a = self.config.adaptation;
        let (d, v) = (self.config.lstm_dim, self.vocab_size());
        let g = &mut grads.params.lm;

        // Gradients of per-word biases that are constant over the sentence.
        let mut d_word_bias = vec![0.0; v];
        let mut d_su = Array1::<f64>::zeros(if a.multiplicative { 3 * d } else { 0 });
        let mut d_sw = d_su.clone();
        let mut d_fa = Array1::<f64>::zeros(if a.additive { 3 * d } else { 0 });

        let mut d_h_next = Array1::<f64>::zeros(d);
        let mut d_cell_next = Array1::<f64>::zeros(d);
        for c in caches.iter().rev() {
            let mut d_proj = Array1::<f64>::zeros(self.config.embed_dim);
            for (&w, &dl) in c.candidates.iter().zip(&c.d_logits) {
                let wi = w as usize;
                g.w.row_mut(wi).scaled_add(dl, &c.proj);
                d_proj.scaled_add(dl, &lm.w.row(wi));
                g.b2[wi] += dl;
                d_word_bias[wi] += dl;
            }
            add_outer(&mut g.p, &d_proj, &c.h_dropped);
            let mut d_h = lm.p.t().dot(&d_proj);
            if let Some(m) = &c.out_mask {
                d_h *= m;
            }
            d_h += &d_h_next;

            let (d_pre, d_prev_cell) = cifg_backward(&c.cell, &d_h, &d_cell_next);
            g.b1 += &d_pre;
            if a.additive {
                d_fa += &d_pre;
            }
            let (d_ux, d_sh) = match (&sc.input_scale, &sc.recurrent_scale) {
                (Some(su), Some(sw)) => {
                    d_su += &(&d_pre * &c.ux);
                    d_sw += &(&d_pre * &c.sh);
                    (&d_pre * su, &d_pre * sw)
                }
                _ => (d_pre.clone(), d_pre),
            };
            add_outer(&mut g.u, &d_ux, &c.x);
            let mut d_x = lm.u.t().dot(&d_ux);
            if let Some(m) = &c.in_mask {
                d_x *= m;
            }
            g.w.row_mut(c.input as usize).scaled_add(1.0, &d_x);
            add_outer(&mut g.s, &d_sh, &c.prev_h);
            d_h_next = lm.s.t().dot(&d_sh);
            d_cell_next = d_prev_cell;
        }

        let mut d_context = Array1::<f64>::zeros(sc.vector.len());
        if a.lowrank {
            let d_gc = Array1::from(d_word_bias.clone());
            add_outer(&mut g.g, &d_gc, &sc.vector);
            d_context += &lm.g.t().dot(&d_gc);
        }
        if a.additive {
            add_outer(&mut g.f, &d_fa, &sc.vector);
            d_context += &lm.f.t().dot(&d_fa);
        }
        if a.multiplicative {
            add_outer(&mut g.cu, &d_su, &sc.vector);
            add_outer(&mut g.cw, &d_sw, &sc.vector);
            d_context += &lm.cu.t().dot(&d_su);
            d_context += &lm.cw.t().dot(&d_sw);
        }
        if a.uses_context_vector() {
            self.params.context.backward(
                &sc.context_ids,
                &sc.vector,
                &d_context,
                &mut grads.params.context,
            );
        }
        if let Some(hb) = &self.hash {
            for (w, &dl) in d_word_bias.iter().enumerate() {
                hb.accumulate_grad(w as u32, &sc.context_ids, dl, &mut grads.hash);
            }
        }
    }
}
