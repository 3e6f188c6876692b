//! Shared fixtures for the benchmarks.

use rejuv_core::corpus::gen_synthetic;
use rejuv_core::nnet::EncodedPair;
use rejuv_core::{ModelConfig, ParallelCorpus, Seq2SeqModel, SyntheticSpec};

/// Synthetic corpus at benchmark scale, 30% hard pairs.
pub fn corpus(num_pairs: usize) -> ParallelCorpus {
    gen_synthetic(&SyntheticSpec {
        num_pairs,
        vocab_size: 200,
        rare_vocab_size: 200,
        hard_fraction: 0.3,
        rare_prob: 0.4,
        swap_prob: 0.5,
        seed: 11,
        ..Default::default()
    })
    .expect("valid spec")
}

/// Freshly initialized model with the reference dimensions.
pub fn model(corpus: &ParallelCorpus, hidden_dim: usize) -> Seq2SeqModel {
    let cfg = ModelConfig {
        emb_dim: 32,
        hidden_dim,
        init_scale: 0.3,
        seed: 5,
        ..Default::default()
    };
    Seq2SeqModel::init_for_corpus(&cfg, corpus).expect("valid config")
}

pub fn batch(model: &Seq2SeqModel, corpus: &ParallelCorpus, size: usize) -> Vec<EncodedPair> {
    corpus
        .iter()
        .take(size)
        .map(|p| model.encode(p).expect("in-vocabulary pair"))
        .collect()
}
