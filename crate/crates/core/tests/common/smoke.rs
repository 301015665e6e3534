//! The 200-sentence smoke corpus and its training setup.

use std::path::PathBuf;

use ctxlm::corpus::RawCorpus;
use ctxlm::model::Adaptation;
use ctxlm::tokenize::WordTokenizer;
use ctxlm::train::{Prepared, TrainConfig};

pub fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

pub fn smoke_config() -> TrainConfig {
    let mut c = TrainConfig {
        batch_size: 20,
        embed_dim: 16,
        lstm_dim: 24,
        context_dim: 4,
        learning_rate: 0.01,
        max_epochs: 5,
        seed: 17,
        bloom_bits: 1 << 16,
        hash_size: 1_009,
        context_names: vec!["topic".into(), "mood".into()],
        ..TrainConfig::default()
    };
    c.set_adaptation(Adaptation::all());
    c
}

pub fn smoke(config: &TrainConfig, heldout: bool) -> Prepared {
    let train = RawCorpus::read(data("smoke.tsv"), &WordTokenizer).unwrap();
    let held = heldout.then(|| RawCorpus::read(data("smoke_heldout.tsv"), &WordTokenizer).unwrap());
    Prepared::new(config, &train, held.as_ref(), None).unwrap()
}

