//! Data rejuvenation for sequence-to-sequence training corpora.
//!
//! A small recurrent encoder–decoder scores every training pair by its
//! length-normalized sentence probability. The lowest-scoring pairs are
//! labelled inactive, re-translated by a model trained on the remaining
//! (active) pairs, and merged back for the final training run. The crate
//! also carries the diagnostics used to study the effect: BLEU with paired
//! bootstrap, IBM Model 1 alignments, coverage, frequency rank, uncertainty,
//! margin and gradient signal-to-noise ratio.

pub mod analysis;
pub mod corpus;
pub mod error;
pub mod identify;
pub mod inference;
pub mod nnet;
pub mod pipeline;
pub mod rejuvenate;

#[cfg(test)]
mod trained_oracles;

pub use corpus::{ParallelCorpus, SentencePair, Side, SyntheticSpec, Vocabulary};
pub use error::{Error, Result};
pub use identify::{BinPartition, InactiveSplit};
pub use inference::{DecodeConfig, DecodeMode, ScoredCorpus};
pub use nnet::{CellKind, ModelConfig, Seq2SeqModel, TrainConfig, TrainingLog};
pub use rejuvenate::{RejuvenatedCorpus, Strategy};

use sha2::{Digest, Sha256};

/// Hex SHA-256 digest.
pub fn hash_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: impl AsRef<std::path::Path>) -> Result<String> {
    use error::IoContext;
    let path = path.as_ref();
    Ok(hash_bytes(&std::fs::read(path).at(path)?))
}
