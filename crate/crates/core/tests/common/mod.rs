#![allow(dead_code)]
pub mod markov;
pub mod search;
pub mod smoke;

use ctxlm::corpus::{EncodedExample, BOS_ID, EOS_ID};
use ctxlm::hashbias::{HashedBias, HashedBiasTable, ObservedPairFilter};
use ctxlm::model::{Adaptation, Model, ModelConfig, Params};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// |V|=20, e=8, d=12, two variables of cardinality 3, d_i=3, k=4.
pub fn tiny_config(adaptation: Adaptation) -> ModelConfig {
    ModelConfig {
        vocab_size: 20,
        embed_dim: 8,
        lstm_dim: 12,
        context_cardinalities: vec![3, 3],
        context_embed_dims: vec![3, 3],
        context_dim: 4,
        adaptation,
    }
}

pub fn random_example(rng: &mut impl Rng, vocab: usize, cards: &[usize], max_content: usize) -> EncodedExample {
    let len = rng.gen_range(1..=max_content);
    let mut token_ids = vec![BOS_ID];
    token_ids.extend((0..len).map(|_| rng.gen_range(3..vocab as u32)));
    token_ids.push(EOS_ID);
    EncodedExample {
        context_ids: cards.iter().map(|&c| rng.gen_range(0..c as u32)).collect(),
        token_ids,
    }
}

pub fn random_examples(seed: u64, n: usize, cfg: &ModelConfig, max_content: usize) -> Vec<EncodedExample> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| random_example(&mut r, cfg.vocab_size, &cfg.context_cardinalities, max_content))
        .collect()
}

/// Every parameter uniform in `±scale`, including the rescaling matrices
/// and the hash table (l=97, filter of 512 bits built from `observed`).
pub fn randomized_model(cfg: &ModelConfig, seed: u64, scale: f64, observed: &[EncodedExample]) -> Model {
    let mut r = rng(seed);
    let mut params = Params::zeros(cfg);
    for (_, t) in params.tensors_mut() {
        t.iter_mut().for_each(|v| *v = r.gen_range(-scale..scale));
    }
    let n = cfg.num_variables();
    let hash = cfg.adaptation.hash.then(|| {
        let mut table = HashedBiasTable::new(seed, 97, n);
        table.values.iter_mut().for_each(|v| *v = r.gen_range(-scale..scale));
        HashedBias::new(table, ObservedPairFilter::from_examples(seed, 512, n, observed))
    });
    Model::new(cfg.clone(), params, hash).unwrap()
}

use ctxlm::model::Gradients;
use ctxlm::train::Objective;

/// Denominator floor for relative error, so gradients that are zero up to
/// rounding do not dominate the comparison.
pub const REL_FLOOR: f64 = 1e-5;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

fn total_loss(model: &Model, examples: &[EncodedExample], objective: &dyn Objective, dropout: f64, seed: u64) -> f64 {
    examples
        .iter()
        .enumerate()
        .map(|(i, ex)| {
            let mut r = rng(seed + i as u64);
            model.sequence_loss(ex, objective, dropout, &mut r).unwrap()
        })
        .sum()
}

pub fn analytic_grads(model: &Model, examples: &[EncodedExample], objective: &dyn Objective, dropout: f64, seed: u64) -> Gradients {
    let mut g = Gradients::zeros_like(&model.params);
    for (i, ex) in examples.iter().enumerate() {
        let mut r = rng(seed + i as u64);
        model.loss_and_grad(ex, objective, dropout, &mut r, &mut g).unwrap();
    }
    g
}

/// Worst relative error per tensor between analytic gradients and central
/// differences with step `h`. The hash table is reported as "H".
pub fn gradient_check(
    model: &Model,
    examples: &[EncodedExample],
    objective: &dyn Objective,
    dropout: f64,
    seed: u64,
    h: f64,
) -> Vec<(String, f64)> {
    let analytic = analytic_grads(model, examples, objective, dropout, seed);
    let mut probe = model.clone();
    let mut report = Vec::new();
    let names: Vec<(String, usize)> = model.params.tensors().iter().map(|(n, t)| (n.clone(), t.len())).collect();
    for (ti, (name, len)) in names.iter().enumerate() {
        let mut worst = 0.0f64;
        for j in 0..*len {
            let orig = model.params.tensors()[ti].1[j];
            let set = |p: &mut Model, v: f64| p.params.tensors_mut()[ti].1[j] = v;
            set(&mut probe, orig + h);
            let up = total_loss(&probe, examples, objective, dropout, seed);
            set(&mut probe, orig - h);
            let down = total_loss(&probe, examples, objective, dropout, seed);
            set(&mut probe, orig);
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.params.tensors()[ti].1[j];
            worst = worst.max(rel_err(a, numeric));
        }
        report.push((name.clone(), worst));
    }
    if let Some(hb) = &model.hash {
        let mut worst = 0.0f64;
        for slot in 0..hb.table.values.len() {
            let orig = hb.table.values[slot];
            let set = |p: &mut Model, v: f64| p.hash.as_mut().unwrap().table.values[slot] = v;
            set(&mut probe, orig + h);
            let up = total_loss(&probe, examples, objective, dropout, seed);
            set(&mut probe, orig - h);
            let down = total_loss(&probe, examples, objective, dropout, seed);
            set(&mut probe, orig);
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.hash.get(&slot).copied().unwrap_or(0.0);
            worst = worst.max(rel_err(a, numeric));
        }
        report.push(("H".into(), worst));
    }
    report
}

/// Copy of `model` with a different switch set, sharing every tensor the
/// two configurations have in common.
pub fn with_adaptation(model: &Model, adaptation: Adaptation) -> Model {
    let mut cfg = model.config.clone();
    cfg.adaptation = adaptation;
    let mut params = Params::zeros(&cfg);
    params.context = model.params.context.clone();
    let (src, dst) = (&model.params.lm, &mut params.lm);
    dst.w = src.w.clone();
    dst.u = src.u.clone();
    dst.s = src.s.clone();
    dst.b1 = src.b1.clone();
    dst.p = src.p.clone();
    dst.b2 = src.b2.clone();
    if adaptation.additive {
        dst.f = src.f.clone();
    }
    if adaptation.multiplicative {
        dst.cu = src.cu.clone();
        dst.cw = src.cw.clone();
    }
    if adaptation.lowrank {
        dst.g = src.g.clone();
    }
    let hash = if adaptation.hash { model.hash.clone() } else { None };
    Model::new(cfg, params, hash).unwrap()
}

/// Whether both models give bit-identical per-token log-probabilities.
pub fn bit_identical(a: &Model, b: &Model, examples: &[EncodedExample]) -> bool {
    examples.iter().all(|ex| {
        let (la, lb) = (a.log_probs(ex).unwrap(), b.log_probs(ex).unwrap());
        la.len() == lb.len() && la.iter().zip(&lb).all(|(x, y)| x.to_bits() == y.to_bits())
    })
}

/// Writes a line straight to stdout, bypassing the test harness capture so
/// reports show up in plain `cargo test` output.
pub fn report(line: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}
