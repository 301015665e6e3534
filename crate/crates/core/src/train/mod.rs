pub mod adam;
pub mod config;
pub mod dropout;
pub mod objective;
mod pipeline;
mod trainer;

pub use adam::{Adam, AdamConfig};
pub use config::TrainConfig;
pub use dropout::apply_dropout;
pub use objective::{candidate_loss, full_softmax_loss, CandidateSet, FullSoftmax, Objective, SampledSoftmax};
pub use pipeline::{fit, Prepared};
pub use trainer::*;
