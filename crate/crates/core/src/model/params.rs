use ndarray::{Array1, Array2};
use rand::distributions::{Distribution, Uniform};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::context::ContextParams;
use crate::error::{Error, Result};

/// Independent switches for the four adaptation mechanisms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Adaptation {
    /// `F·c̄` added to the recurrent pre-activation.
    pub additive: bool,
    /// `(1 + C_u·c̄)` and `(1 + C_w·c̄)` rescaling of the input and recurrent terms.
    pub multiplicative: bool,
    /// `G·c̄` added to the output logits.
    pub lowrank: bool,
    /// Bloom-gated hashed (word, context value) bias added to the logits.
    pub hash: bool,
}

impl Adaptation {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn all() -> Self {
        Self {
            additive: true,
            multiplicative: true,
            lowrank: true,
            hash: true,
        }
    }

    /// Whether any mechanism consumes the context vector.
    pub fn uses_context_vector(&self) -> bool {
        self.additive || self.multiplicative || self.lowrank
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub lstm_dim: usize,
    /// `|C_i|` per variable, UNK bucket included.
    pub context_cardinalities: Vec<usize>,
    /// `d_i` per variable.
    pub context_embed_dims: Vec<usize>,
    /// `k`, shared by every adaptation matrix.
    pub context_dim: usize,
    pub adaptation: Adaptation,
}

impl ModelConfig {
    pub fn num_variables(&self) -> usize {
        self.context_cardinalities.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.vocab_size < 3 || self.embed_dim == 0 || self.lstm_dim == 0 {
            return bad("vocab_size ≥ 3, embed_dim and lstm_dim must be positive".into());
        }
        if self.context_cardinalities.len() != self.context_embed_dims.len() {
            return bad("one embedding size per context variable required".into());
        }
        if self.context_cardinalities.contains(&0) {
            return bad("context cardinalities must be positive".into());
        }
        if self.num_variables() == 1 && self.context_embed_dims[0] != self.context_dim {
            return bad(format!(
                "with one context variable its embedding size ({}) is the context dimension ({})",
                self.context_embed_dims[0], self.context_dim
            ));
        }
        let a = self.adaptation;
        if (a.uses_context_vector() || a.hash) && self.num_variables() == 0 {
            return bad("adaptation requires at least one context variable".into());
        }
        if a.uses_context_vector() && self.context_dim == 0 {
            return bad("context_dim must be positive".into());
        }
        Ok(())
    }
}

/// Language-model tensors. Disabled mechanisms hold `0 × 0` matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct LmParams {
    /// Tied word embeddings, `|V| × e`.
    pub w: Array2<f64>,
    /// `3d × e`.
    pub u: Array2<f64>,
    /// `3d × d`.
    pub s: Array2<f64>,
    pub b1: Array1<f64>,
    /// `3d × k`.
    pub f: Array2<f64>,
    pub cu: Array2<f64>,
    pub cw: Array2<f64>,
    /// Projection of the recurrent output into embedding space, `e × d`.
    pub p: Array2<f64>,
    /// `|V| × k`.
    pub g: Array2<f64>,
    pub b2: Array1<f64>,
}

/// Every dense trainable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    pub context: ContextParams,
    pub lm: LmParams,
}

impl Params {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let (v, e, d, k) = (cfg.vocab_size, cfg.embed_dim, cfg.lstm_dim, cfg.context_dim);
        let a = cfg.adaptation;
        let adapt = |on: bool, rows: usize| {
            if on {
                Array2::zeros((rows, k))
            } else {
                Array2::zeros((0, 0))
            }
        };
        Self {
            context: ContextParams::zeros(&cfg.context_cardinalities, &cfg.context_embed_dims, k),
            lm: LmParams {
                w: Array2::zeros((v, e)),
                u: Array2::zeros((3 * d, e)),
                s: Array2::zeros((3 * d, d)),
                b1: Array1::zeros(3 * d),
                f: adapt(a.additive, 3 * d),
                cu: adapt(a.multiplicative, 3 * d),
                cw: adapt(a.multiplicative, 3 * d),
                p: Array2::zeros((e, d)),
                g: adapt(a.lowrank, v),
                b2: Array1::zeros(v),
            },
        }
    }

    /// Random initialization. Context tensors, `F` and `G` are uniform in
    /// `[-0.05, 0.05]`; `W` uniform in `[-0.1, 0.1]`; `U`, `S`, `P` uniform in
    /// `±1/√fan_in`; rescaling matrices and biases start at zero.
    pub fn init<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let mut p = Self::zeros(cfg);
        p.context = ContextParams::init(
            &cfg.context_cardinalities,
            &cfg.context_embed_dims,
            cfg.context_dim,
            rng,
        );
        let fill = |m: &mut Array2<f64>, r: f64, rng: &mut R| {
            let dist = Uniform::new_inclusive(-r, r);
            m.iter_mut().for_each(|v| *v = dist.sample(rng));
        };
        let lm = &mut p.lm;
        fill(&mut lm.w, 0.1, rng);
        fill(&mut lm.u, 1.0 / (cfg.embed_dim as f64).sqrt(), rng);
        fill(&mut lm.s, 1.0 / (cfg.lstm_dim as f64).sqrt(), rng);
        fill(&mut lm.p, 1.0 / (cfg.lstm_dim as f64).sqrt(), rng);
        fill(&mut lm.f, crate::context::INIT_RANGE, rng);
        fill(&mut lm.g, crate::context::INIT_RANGE, rng);
        p
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.tensors_mut().into_iter().for_each(|(_, t)| t.fill(0.0));
        z
    }

    /// Named flat views in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let ContextParams {
            embeddings,
            combiners,
            bias,
        } = &self.context;
        let LmParams {
            w,
            u,
            s,
            b1,
            f,
            cu,
            cw,
            p,
            g,
            b2,
        } = &self.lm;
        let mut out: Vec<(String, &[f64])> = Vec::new();
        for (i, e) in embeddings.iter().enumerate() {
            out.push((format!("context.embedding.{i}"), e.as_slice().unwrap()));
        }
        for (i, m) in combiners.iter().enumerate() {
            out.push((format!("context.combiner.{i}"), m.as_slice().unwrap()));
        }
        out.push(("context.bias".into(), bias.as_slice().unwrap()));
        for (name, t) in [
            ("W", w.as_slice()),
            ("U", u.as_slice()),
            ("S", s.as_slice()),
            ("b1", b1.as_slice()),
            ("F", f.as_slice()),
            ("C_u", cu.as_slice()),
            ("C_w", cw.as_slice()),
            ("P", p.as_slice()),
            ("G", g.as_slice()),
            ("b2", b2.as_slice()),
        ] {
            out.push((name.into(), t.unwrap()));
        }
        out
    }

    /// Mutable counterpart of [`tensors`](Self::tensors), same order.
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let ContextParams {
            embeddings,
            combiners,
            bias,
        } = &mut self.context;
        let LmParams {
            w,
            u,
            s,
            b1,
            f,
            cu,
            cw,
            p,
            g,
            b2,
        } = &mut self.lm;
        let mut out: Vec<(String, &mut [f64])> = Vec::new();
        for (i, e) in embeddings.iter_mut().enumerate() {
            out.push((format!("context.embedding.{i}"), e.as_slice_mut().unwrap()));
        }
        for (i, m) in combiners.iter_mut().enumerate() {
            out.push((format!("context.combiner.{i}"), m.as_slice_mut().unwrap()));
        }
        out.push(("context.bias".into(), bias.as_slice_mut().unwrap()));
        for (name, t) in [
            ("W", w.as_slice_mut()),
            ("U", u.as_slice_mut()),
            ("S", s.as_slice_mut()),
            ("b1", b1.as_slice_mut()),
            ("F", f.as_slice_mut()),
            ("C_u", cu.as_slice_mut()),
            ("C_w", cw.as_slice_mut()),
            ("P", p.as_slice_mut()),
            ("G", g.as_slice_mut()),
            ("b2", b2.as_slice_mut()),
        ] {
            out.push((name.into(), t.unwrap()));
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// `self += scale · other`.
    pub fn add_scaled(&mut self, other: &Params, scale: f64) {
        for ((_, dst), (_, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += scale * s);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, t) in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn sum_squares(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, t)| t.iter())
            .map(|v| v * v)
            .sum()
    }
}
