use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::config::TrainConfig;
use super::objective::{objectives, Objective, ObjectiveArgs};
use crate::corpus::{EncodedExample, EOS_ID};
use crate::error::{Error, Result};
use crate::eval::perplexity;
use crate::hashbias::{HashedBias, HashedBiasTable, ObservedPairFilter};
use crate::model::{Gradients, Model, ModelConfig, Params};

/// Examples per gradient work unit. Fixed so the reduction order, and with
/// it every floating-point sum, does not depend on the thread count.
const CHUNK: usize = 8;

/// Stream ids for the seeded generators.
const INIT_STREAM: u64 = 2;
const SHUFFLE_STREAM: u64 = 3;

/// Sentences of a mini-batch padded to a common length.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub context_ids: Vec<Vec<u32>>,
    /// Each row padded with the end token up to `width`.
    pub tokens: Vec<Vec<u32>>,
    pub lengths: Vec<usize>,
    pub width: usize,
}

impl Batch {
    pub fn new(examples: &[&EncodedExample], width: Option<usize>) -> Self {
        let longest = examples.iter().map(|e| e.token_ids.len()).max().unwrap_or(0);
        let width = width.unwrap_or(longest).max(longest);
        Self {
            context_ids: examples.iter().map(|e| e.context_ids.clone()).collect(),
            tokens: examples
                .iter()
                .map(|e| {
                    let mut t = e.token_ids.clone();
                    t.resize(width, EOS_ID);
                    t
                })
                .collect(),
            lengths: examples.iter().map(|e| e.token_ids.len()).collect(),
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Row `i` with padding masked off.
    pub fn row(&self, i: usize) -> EncodedExample {
        EncodedExample {
            context_ids: self.context_ids[i].clone(),
            token_ids: self.tokens[i][..self.lengths[i]].to_vec(),
        }
    }

    pub fn num_targets(&self) -> usize {
        self.lengths.iter().map(|l| l.saturating_sub(1)).sum()
    }
}

/// Seed for the per-example generator (dropout masks, negative samples).
fn example_seed(seed: u64, step: u64, row: usize) -> u64 {
    let mut x = seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (row as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    // splitmix64 finalizer
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Summed loss and gradient over a batch; the gradient is the mean over
/// predicted positions.
pub fn batch_gradient(
    model: &Model,
    batch: &Batch,
    objective: &dyn Objective,
    dropout: f64,
    seed: u64,
    step: u64,
) -> Result<(f64, Gradients)> {
    let rows: Vec<usize> = (0..batch.len()).collect();
    let partials: Vec<Result<(f64, Gradients)>> = rows
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grads = Gradients::zeros_like(&model.params);
            let mut loss = 0.0;
            for &i in chunk {
                let mut rng = ChaCha8Rng::seed_from_u64(example_seed(seed, step, i));
                loss += model.loss_and_grad(&batch.row(i), objective, dropout, &mut rng, &mut grads)?;
            }
            Ok((loss, grads))
        })
        .collect();
    let mut total = Gradients::zeros_like(&model.params);
    let mut loss = 0.0;
    for p in partials {
        let (l, g) = p?;
        loss += l;
        total.add(&g);
    }
    let n = batch.num_targets();
    if n > 0 {
        total.scale(1.0 / n as f64);
    }
    Ok((loss, total))
}

/// Randomly initialized model for `config`. The hash table and filter, when
/// enabled, are built from `train` with the config seed.
pub fn build_model(
    config: &TrainConfig,
    vocab_size: usize,
    cardinalities: &[usize],
    train: &[EncodedExample],
) -> Result<Model> {
    let n = cardinalities.len();
    let dims = config.embed_dims(n);
    if dims.len() != n {
        return Err(Error::Config(format!(
            "{} context embedding sizes for {n} context variables",
            dims.len()
        )));
    }
    let context_dim = if n == 1 { dims[0] } else { config.context_dim };
    let model_config = ModelConfig {
        vocab_size,
        embed_dim: config.embed_dim,
        lstm_dim: config.lstm_dim,
        context_cardinalities: cardinalities.to_vec(),
        context_embed_dims: dims,
        context_dim,
        adaptation: config.adaptation(),
    };
    model_config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(INIT_STREAM);
    let params = Params::init(&model_config, &mut rng);
    let hash = config.hash.then(|| {
        HashedBias::new(
            HashedBiasTable::new(config.seed, config.hash_size, n),
            ObservedPairFilter::from_examples(config.seed, config.bloom_bits, n, train),
        )
    });
    Model::new(model_config, params, hash)
}

pub fn build_objective(config: &TrainConfig, unigram: &[f64]) -> Result<Box<dyn Objective>> {
    let name = if config.negative_samples == 0 { "full" } else { "sampled" };
    objectives().create(
        name,
        &ObjectiveArgs {
            negative_samples: config.negative_samples,
            unigram: unigram.to_vec(),
        },
    )
}

/// Batches of similar-length sentences in seeded random order.
pub fn make_batches(examples: &[EncodedExample], batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(rng);
    // stable sort keeps the shuffled order within each length bucket
    order.sort_by_key(|&i| examples[i].token_ids.len());
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    batches.shuffle(rng);
    batches
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean per-token training loss over the epoch.
    pub train_loss: f64,
    pub heldout_ppl: Option<f64>,
    /// Seconds since training started.
    pub wall_time: f64,
}

pub struct TrainOutcome {
    /// Lowest held-out perplexity seen (the final model without held-out data).
    pub best: Model,
    pub last: Model,
    pub metrics: Vec<EpochMetrics>,
}

/// Trains `model` in place. `on_epoch` sees every epoch's metrics as they
/// are produced.
pub fn train_loop(
    config: &TrainConfig,
    mut model: Model,
    train: &[EncodedExample],
    heldout: &[EncodedExample],
    unigram: &[f64],
    mut on_epoch: impl FnMut(&EpochMetrics, &Model),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Invalid("empty training set".into()));
    }
    if unigram.len() != model.vocab_size() {
        return Err(Error::Config(format!(
            "unigram distribution over {} ids for a vocabulary of {}",
            unigram.len(),
            model.vocab_size()
        )));
    }
    let objective = build_objective(config, unigram)?;
    let mut adam = Adam::new(&model, AdamConfig::with_learning_rate(config.learning_rate));
    let mut shuffle = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle.set_stream(SHUFFLE_STREAM);
    let start = Instant::now();
    let mut metrics = Vec::new();
    let mut best: Option<(f64, Model)> = None;
    let mut stale = 0;
    for epoch in 1..=config.max_epochs {
        let (mut loss_sum, mut tokens) = (0.0, 0usize);
        for idx in make_batches(train, config.batch_size, &mut shuffle) {
            let rows: Vec<&EncodedExample> = idx.iter().map(|&i| &train[i]).collect();
            let batch = Batch::new(&rows, None);
            let (loss, mut grads) =
                batch_gradient(&model, &batch, objective.as_ref(), config.dropout, config.seed, adam.steps())?;
            if let Some(max) = config.clip_norm {
                let norm = (grads.params.sum_squares() + grads.hash.values().map(|g| g * g).sum::<f64>()).sqrt();
                if norm > max {
                    grads.scale(max / norm);
                }
            }
            adam.step(&mut model, &grads)?;
            loss_sum += loss;
            tokens += batch.num_targets();
        }
        let heldout_ppl = if heldout.is_empty() {
            None
        } else {
            Some(perplexity(&model, heldout)?)
        };
        let m = EpochMetrics {
            epoch,
            train_loss: loss_sum / tokens.max(1) as f64,
            heldout_ppl,
            wall_time: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: train loss {:.4}, held-out ppl {}",
            m.train_loss,
            heldout_ppl.map_or("-".into(), |p| format!("{p:.3}"))
        );
        on_epoch(&m, &model);
        metrics.push(m);
        if let Some(ppl) = heldout_ppl {
            if best.as_ref().is_none_or(|(b, _)| ppl < *b) {
                best = Some((ppl, model.clone()));
                stale = 0;
            } else {
                stale += 1;
                if stale >= config.patience {
                    log::info!("no held-out improvement for {stale} evaluations; stopping");
                    break;
                }
            }
        }
    }
    let best = best.map_or_else(|| model.clone(), |(_, m)| m);
    Ok(TrainOutcome {
        best,
        last: model,
        metrics,
    })
}
