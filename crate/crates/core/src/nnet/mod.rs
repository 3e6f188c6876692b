//! Miniature recurrent encoder–decoder with hand-derived gradients.
//!
//! The encoder is a stack of one or two unidirectional LSTM or GRU layers
//! over the source tokens followed by EOS. A single-layer decoder of the same
//! cell type starts from the top encoder layer's final state and, with dot
//! attention enabled, combines its hidden state with the attention context
//! through a `tanh` projection before the output softmax.

mod cell;
pub mod checkpoint;
pub mod linalg;
mod seq2seq;
pub mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{build_vocab, ParallelCorpus, SentencePair, Side, Vocabulary, EOS};
use crate::error::{Error, Result};

pub use seq2seq::{DecoderState, EncodedPair, EncodedSource, Gradients, StepOutput};
pub use train::{train, EvalRecord, LrSchedule, StepRecord, TrainConfig, TrainingLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Lstm,
    Gru,
}

impl CellKind {
    pub fn gates(self) -> usize {
        match self {
            CellKind::Lstm => 4,
            CellKind::Gru => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attention {
    Dot,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub cell: CellKind,
    pub emb_dim: usize,
    pub hidden_dim: usize,
    pub enc_layers: usize,
    pub attention: Attention,
    pub init_scale: f64,
    pub seed: u64,
    /// Vocabulary truncation applied when the model is built from a corpus.
    #[serde(default = "default_max_vocab")]
    pub max_vocab: usize,
    #[serde(default = "default_min_freq")]
    pub min_freq: u64,
}

fn default_max_vocab() -> usize {
    50_000
}

fn default_min_freq() -> u64 {
    1
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            cell: CellKind::Lstm,
            emb_dim: 32,
            hidden_dim: 64,
            enc_layers: 1,
            attention: Attention::Dot,
            init_scale: 0.1,
            seed: 1,
            max_vocab: default_max_vocab(),
            min_freq: default_min_freq(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.emb_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Config("embedding and hidden dims must be positive".into()));
        }
        if !(1..=2).contains(&self.enc_layers) {
            return Err(Error::Config(format!(
                "encoder layers must be 1 or 2, got {}",
                self.enc_layers
            )));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(Error::Config("init_scale must be positive".into()));
        }
        Ok(())
    }
}

/// A contiguous tensor inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Slot {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }

    pub fn row(&self, r: usize) -> std::ops::Range<usize> {
        let start = self.offset + r * self.cols;
        start..start + self.cols
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellSlots {
    pub kind: CellKind,
    pub input: usize,
    pub hidden: usize,
    pub wx: Slot,
    pub wh: Slot,
    pub bx: Slot,
    /// Recurrent bias; GRU only.
    pub bh: Option<Slot>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub src_emb: Slot,
    pub tgt_emb: Slot,
    pub enc: Vec<CellSlots>,
    pub dec: CellSlots,
    pub att: Option<(Slot, Slot)>,
    pub out_w: Slot,
    pub out_b: Slot,
    /// Every tensor with its name, in declaration order.
    pub named: Vec<(String, Slot)>,
    pub total: usize,
}

struct LayoutBuilder {
    offset: usize,
    named: Vec<(String, Slot)>,
}

impl LayoutBuilder {
    fn slot(&mut self, name: String, rows: usize, cols: usize) -> Slot {
        let s = Slot {
            offset: self.offset,
            rows,
            cols,
        };
        self.offset += s.len();
        self.named.push((name, s));
        s
    }

    fn cell(&mut self, prefix: &str, kind: CellKind, input: usize, hidden: usize) -> CellSlots {
        let g = kind.gates() * hidden;
        let wx = self.slot(format!("{prefix}.wx"), g, input);
        let wh = self.slot(format!("{prefix}.wh"), g, hidden);
        let bx = self.slot(format!("{prefix}.bx"), g, 1);
        let bh = (kind == CellKind::Gru).then(|| self.slot(format!("{prefix}.bh"), g, 1));
        CellSlots {
            kind,
            input,
            hidden,
            wx,
            wh,
            bx,
            bh,
        }
    }
}

impl Layout {
    pub fn new(cfg: &ModelConfig, src_vocab: usize, tgt_vocab: usize) -> Self {
        let (e, h) = (cfg.emb_dim, cfg.hidden_dim);
        let mut b = LayoutBuilder {
            offset: 0,
            named: Vec::new(),
        };
        let src_emb = b.slot("src_emb".into(), src_vocab, e);
        let tgt_emb = b.slot("tgt_emb".into(), tgt_vocab, e);
        let enc = (0..cfg.enc_layers)
            .map(|l| b.cell(&format!("enc{l}"), cfg.cell, if l == 0 { e } else { h }, h))
            .collect();
        let dec = b.cell("dec", cfg.cell, e, h);
        let att = match cfg.attention {
            Attention::Dot => Some((b.slot("att.w".into(), h, 2 * h), b.slot("att.b".into(), h, 1))),
            Attention::None => None,
        };
        let out_w = b.slot("out.w".into(), tgt_vocab, h);
        let out_b = b.slot("out.b".into(), tgt_vocab, 1);
        Layout {
            src_emb,
            tgt_emb,
            enc,
            dec,
            att,
            out_w,
            out_b,
            total: b.offset,
            named: b.named,
        }
    }
}

/// Parameters, architecture and vocabularies of one translation model.
#[derive(Debug, Clone, PartialEq)]
pub struct Seq2SeqModel {
    pub config: ModelConfig,
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
    pub layout: Layout,
    pub params: Vec<f64>,
}

impl Seq2SeqModel {
    /// Uniform(−init_scale, init_scale) initialization from the config seed.
    pub fn init(config: &ModelConfig, src_vocab: Vocabulary, tgt_vocab: Vocabulary) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config, src_vocab.len(), tgt_vocab.len());
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let s = config.init_scale;
        let params = (0..layout.total).map(|_| rng.gen_range(-s..s)).collect();
        Ok(Self {
            config: config.clone(),
            src_vocab,
            tgt_vocab,
            layout,
            params,
        })
    }

    /// Builds both vocabularies from `corpus`, then initializes.
    pub fn init_for_corpus(config: &ModelConfig, corpus: &ParallelCorpus) -> Result<Self> {
        let sv = build_vocab(corpus, Side::Source, config.max_vocab, config.min_freq)?;
        let tv = build_vocab(corpus, Side::Target, config.max_vocab, config.min_freq)?;
        Self::init(config, sv, tv)
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn encode(&self, pair: &SentencePair) -> Result<EncodedPair> {
        if pair.src.is_empty() {
            return Err(Error::Precondition(format!("pair {} has an empty source", pair.id)));
        }
        let mut src = self.src_vocab.encode(&pair.src);
        src.push(EOS);
        Ok(EncodedPair {
            id: pair.id,
            src,
            tgt: self.tgt_vocab.encode(&pair.tgt),
        })
    }

    pub fn encode_source(&self, src: &[String]) -> Result<Vec<u32>> {
        if src.is_empty() {
            return Err(Error::Precondition("empty source sentence".into()));
        }
        let mut ids = self.src_vocab.encode(src);
        ids.push(EOS);
        Ok(ids)
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// Digest of the serialized checkpoint; identifies a trained model.
    pub fn content_hash(&self) -> String {
        crate::hash_bytes(&checkpoint::to_bytes(self))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Vocabulary;

    fn vocab(n: usize) -> Vocabulary {
        Vocabulary::from_entries((0..n).map(|i| (format!("w{i}"), (n - i) as u64)).collect()).unwrap()
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let cfg = ModelConfig {
            emb_dim: 4,
            hidden_dim: 5,
            ..Default::default()
        };
        let a = Seq2SeqModel::init(&cfg, vocab(5), vocab(6)).unwrap();
        let b = Seq2SeqModel::init(&cfg, vocab(5), vocab(6)).unwrap();
        assert_eq!(a.params, b.params);
        let c = Seq2SeqModel::init(&ModelConfig { seed: 2, ..cfg.clone() }, vocab(5), vocab(6)).unwrap();
        assert_ne!(a.params, c.params);
        assert!(a.params.iter().all(|p| p.abs() < cfg.init_scale));
    }

    #[test]
    fn parameter_count_matches_closed_form() {
        let (e, h) = (8usize, 8usize);
        let cfg = ModelConfig {
            cell: CellKind::Lstm,
            emb_dim: e,
            hidden_dim: h,
            enc_layers: 1,
            attention: Attention::Dot,
            ..Default::default()
        };
        let (sv, tv) = (vocab(7), vocab(9));
        let (vs, vt) = (sv.len(), tv.len());
        let m = Seq2SeqModel::init(&cfg, sv, tv).unwrap();
        let lstm = 4 * h * e + 4 * h * h + 4 * h;
        let expected = vs * e + vt * e + 2 * lstm + (h * 2 * h + h) + (vt * h + vt);
        assert_eq!(m.num_params(), expected);
        // 11*8 + 13*8 + 2*544 + 136 + 117
        assert_eq!(expected, 1533);
    }

    #[test]
    fn gru_two_layer_no_attention_count() {
        let (e, h) = (3usize, 4usize);
        let cfg = ModelConfig {
            cell: CellKind::Gru,
            emb_dim: e,
            hidden_dim: h,
            enc_layers: 2,
            attention: Attention::None,
            ..Default::default()
        };
        let m = Seq2SeqModel::init(&cfg, vocab(2), vocab(2)).unwrap();
        let gru = |i: usize| 3 * h * i + 3 * h * h + 6 * h;
        assert_eq!(m.num_params(), 6 * e + 6 * e + gru(e) + gru(h) + gru(e) + 6 * h + 6);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for cfg in [
            ModelConfig {
                hidden_dim: 0,
                ..Default::default()
            },
            ModelConfig {
                enc_layers: 3,
                ..Default::default()
            },
            ModelConfig {
                init_scale: 0.0,
                ..Default::default()
            },
        ] {
            assert!(Seq2SeqModel::init(&cfg, vocab(2), vocab(2)).is_err());
        }
    }
}
