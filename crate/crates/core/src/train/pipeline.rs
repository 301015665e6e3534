//! Corpus to checkpoint in one call.

use crate::checkpoint::Checkpoint;
use crate::corpus::{ContextValueRegistry, EncodedExample, Encoder, RawCorpus, Vocabulary};
use crate::error::{Error, Result};
use crate::model::Model;

use super::config::TrainConfig;
use super::trainer::{build_model, train_loop, EpochMetrics};

/// Vocabulary, registry and encoded splits ready for training.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub vocab: Vocabulary,
    pub registry: ContextValueRegistry,
    pub train: Vec<EncodedExample>,
    pub heldout: Vec<EncodedExample>,
}

impl Prepared {
    /// Builds the vocabulary and registry from `train` unless `tables` are
    /// given, then encodes both splits.
    pub fn new(
        config: &TrainConfig,
        train: &RawCorpus,
        heldout: Option<&RawCorpus>,
        tables: Option<(Vocabulary, ContextValueRegistry)>,
    ) -> Result<Self> {
        config.validate()?;
        let (mut vocab, registry) = match tables {
            Some(t) => t,
            None => (
                Vocabulary::build(train, config.min_count, config.max_len)?,
                ContextValueRegistry::build(train, &config.context_names, config.context_threshold, config.max_len)?,
            ),
        };
        // unigram counts always come from the training split
        vocab.recount(train, config.max_len);
        let encoder = Encoder::new(&vocab, &registry, config.max_len);
        let train = encoder.encode_all(train)?;
        let heldout = match heldout {
            Some(c) => encoder.encode_all(c)?,
            None => Vec::new(),
        };
        Ok(Self {
            vocab,
            registry,
            train,
            heldout,
        })
    }

    pub fn initial_model(&self, config: &TrainConfig) -> Result<Model> {
        if self.registry.is_empty() && (config.adaptation().uses_context_vector() || config.hash) {
            return Err(Error::Config("adaptation enabled but the corpus has no context fields".into()));
        }
        build_model(config, self.vocab.len(), &self.registry.cardinalities(), &self.train)
    }
}

/// Trains from scratch and packages the best model (lowest held-out
/// perplexity, or the final one without held-out data).
pub fn fit(
    config: &TrainConfig,
    data: &Prepared,
    on_epoch: impl FnMut(&EpochMetrics, &Model),
) -> Result<(Checkpoint, Vec<EpochMetrics>)> {
    let model = data.initial_model(config)?;
    let outcome = train_loop(config, model, &data.train, &data.heldout, &data.vocab.unigram(), on_epoch)?;
    let checkpoint = Checkpoint {
        train_config: config.clone(),
        vocab: data.vocab.clone(),
        registry: data.registry.clone(),
        model: outcome.best,
    };
    Ok((checkpoint, outcome.metrics))
}
