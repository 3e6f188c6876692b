//! Sentence scoring and generation.
//!
//! The activeness score of a pair is the geometric mean of its teacher-forced
//! token probabilities, EOS included: `I = exp(mean_t log p(y_t | x, y_<t))`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{ParallelCorpus, SentencePair, BOS, EOS, PAD, UNK};
use crate::error::{Error, IoContext, Result};
use crate::nnet::linalg::argmax;
use crate::nnet::Seq2SeqModel;

/// Teacher-forced log-probability of each target token followed by EOS.
pub fn forward_logprobs(model: &Seq2SeqModel, pair: &SentencePair) -> Result<Vec<f64>> {
    let ep = model.encode(pair)?;
    Ok(model.token_logprobs(&ep))
}

/// Mean token log-probability, `log I`.
pub fn log_score(model: &Seq2SeqModel, pair: &SentencePair) -> Result<f64> {
    let lp = forward_logprobs(model, pair)?;
    Ok(lp.iter().sum::<f64>() / lp.len() as f64)
}

pub fn sentence_score(model: &Seq2SeqModel, pair: &SentencePair) -> Result<f64> {
    log_score(model, pair).map(f64::exp)
}

/// How per-token probabilities are folded into one sentence score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreKind {
    /// Geometric mean over target length.
    #[default]
    Normalized,
    /// Plain product of token probabilities.
    RawProduct,
}

/// Per-id activeness scores plus the identity of the model and corpus that
/// produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCorpus {
    pub scores: BTreeMap<u64, f64>,
    pub model_hash: String,
    pub corpus_hash: String,
}

impl ScoredCorpus {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<f64> {
        self.scores.get(&id).copied()
    }

    /// `(id, score)` ascending by score, ties by id.
    pub fn ranked(&self) -> Vec<(u64, f64)> {
        let mut v: Vec<(u64, f64)> = self.scores.iter().map(|(&i, &s)| (i, s)).collect();
        v.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        v
    }

    pub fn to_tsv(&self) -> String {
        let mut out = format!("# model={} corpus={}\n", self.model_hash, self.corpus_hash);
        for (id, s) in &self.scores {
            writeln!(out, "{id}\t{s:.11e}").unwrap();
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_tsv()).at(path)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).at(path)?;
        let parse_err = |line: usize, msg: &str| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: msg.to_string(),
        };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| parse_err(1, "missing header"))?;
        let mut model_hash = None;
        let mut corpus_hash = None;
        for field in header.trim_start_matches('#').split_whitespace() {
            match field.split_once('=') {
                Some(("model", v)) => model_hash = Some(v.to_string()),
                Some(("corpus", v)) => corpus_hash = Some(v.to_string()),
                _ => {}
            }
        }
        let (Some(model_hash), Some(corpus_hash)) = (model_hash, corpus_hash) else {
            return Err(parse_err(1, "header must carry model= and corpus="));
        };
        let mut scores = BTreeMap::new();
        for (i, line) in lines.enumerate() {
            let n = i + 2;
            let (id, s) = line
                .split_once('\t')
                .ok_or_else(|| parse_err(n, "expected id<TAB>score"))?;
            let id: u64 = id.parse().map_err(|_| parse_err(n, "bad id"))?;
            let s: f64 = s.parse().map_err(|_| parse_err(n, "bad score"))?;
            if scores.insert(id, s).is_some() {
                return Err(parse_err(n, "duplicate id"));
            }
        }
        Ok(Self {
            scores,
            model_hash,
            corpus_hash,
        })
    }
}

pub fn score_corpus(model: &Seq2SeqModel, corpus: &ParallelCorpus) -> Result<ScoredCorpus> {
    score_corpus_with(model, corpus, ScoreKind::Normalized)
}

pub fn score_corpus_with(model: &Seq2SeqModel, corpus: &ParallelCorpus, kind: ScoreKind) -> Result<ScoredCorpus> {
    if corpus.is_empty() {
        return Err(Error::Precondition("cannot score an empty corpus".into()));
    }
    let scored: Vec<(u64, f64)> = corpus
        .pairs
        .par_iter()
        .map(|p| {
            let lp = forward_logprobs(model, p).map_err(|e| Error::Phase {
                phase: "score".into(),
                msg: format!("pair {}: {e}", p.id),
            })?;
            let sum: f64 = lp.iter().sum();
            let s = match kind {
                ScoreKind::Normalized => (sum / lp.len() as f64).exp(),
                ScoreKind::RawProduct => sum.exp(),
            };
            if s.is_finite() {
                Ok((p.id, s))
            } else {
                Err(Error::NonFiniteLoss { pair_id: p.id })
            }
        })
        .collect::<Result<_>>()?;
    let mut scores = BTreeMap::new();
    for (id, s) in scored {
        if scores.insert(id, s).is_some() {
            return Err(Error::Precondition(format!("duplicate pair id {id}")));
        }
    }
    Ok(ScoredCorpus {
        scores,
        model_hash: model.content_hash(),
        corpus_hash: corpus.content_hash(),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    Greedy,
    #[default]
    Beam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub mode: DecodeMode,
    pub beam: usize,
    /// Maximum decoder steps, EOS included; `None` means `2·|src| + 5`.
    pub max_len: Option<usize>,
    /// Rank finished beam hypotheses by log-prob divided by output length.
    pub length_norm: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            mode: DecodeMode::Beam,
            beam: 5,
            max_len: None,
            length_norm: true,
        }
    }
}

impl DecodeConfig {
    pub fn greedy() -> Self {
        Self {
            mode: DecodeMode::Greedy,
            beam: 1,
            ..Default::default()
        }
    }

    pub fn beam(width: usize) -> Self {
        Self {
            beam: width,
            ..Default::default()
        }
    }

    pub fn max_len_for(&self, src_len: usize) -> usize {
        self.max_len.unwrap_or(2 * src_len + 5)
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam == 0 {
            return Err(Error::Config("beam width must be at least 1".into()));
        }
        if self.max_len == Some(0) {
            return Err(Error::Config("max decode length must be at least 1".into()));
        }
        Ok(())
    }
}

/// A generated sequence. `tokens` excludes EOS.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub tokens: Vec<String>,
    pub ids: Vec<u32>,
    /// Total log-probability of the emitted steps.
    pub log_prob: f64,
    /// Decoder steps taken, EOS included when emitted.
    pub steps: usize,
    /// Whether generation ended with EOS rather than the length limit.
    pub finished: bool,
}

impl Decoded {
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn normalized_score(&self) -> f64 {
        self.log_prob / self.steps.max(1) as f64
    }

    fn build(model: &Seq2SeqModel, ids: Vec<u32>, log_prob: f64, finished: bool) -> Self {
        let steps = ids.len() + usize::from(finished);
        Self {
            tokens: model.tgt_vocab.decode(&ids),
            ids,
            log_prob,
            steps,
            finished,
        }
    }
}

/// PAD, BOS and UNK are never generated.
fn mask(log_probs: &mut [f64]) {
    for t in [PAD, BOS, UNK] {
        log_probs[t as usize] = f64::NEG_INFINITY;
    }
}

pub fn greedy_decode(model: &Seq2SeqModel, src: &[String], cfg: &DecodeConfig) -> Result<Decoded> {
    cfg.validate()?;
    let src_ids = model.encode_source(src)?;
    let max_len = cfg.max_len_for(src.len());
    let enc = model.encode_source_ids(&src_ids);
    let mut state = enc.initial_state();
    let mut prev = BOS;
    let mut ids = Vec::new();
    let mut log_prob = 0.0;
    for _ in 0..max_len {
        let mut out = model.decode_step(&enc, &state, prev);
        mask(&mut out.log_probs);
        let best = argmax(&out.log_probs);
        log_prob += out.log_probs[best];
        if best == EOS as usize {
            return Ok(Decoded::build(model, ids, log_prob, true));
        }
        ids.push(best as u32);
        prev = best as u32;
        state = out.state;
    }
    Ok(Decoded::build(model, ids, log_prob, false))
}

struct Hyp {
    ids: Vec<u32>,
    log_prob: f64,
    state: crate::nnet::DecoderState,
}

/// Beam search. Every step keeps the `beam` best expansions by cumulative
/// log-probability; expansions ending in EOS leave the beam as finished
/// hypotheses, and survivors at the length limit are finished without EOS.
/// The greedy path competes as one more candidate, so widening the beam never
/// yields a worse final score than greedy decoding.
pub fn beam_decode(model: &Seq2SeqModel, src: &[String], cfg: &DecodeConfig) -> Result<Decoded> {
    cfg.validate()?;
    if cfg.beam == 1 {
        return greedy_decode(model, src, cfg);
    }
    let src_ids = model.encode_source(src)?;
    let max_len = cfg.max_len_for(src.len());
    let enc = model.encode_source_ids(&src_ids);
    let mut live = vec![Hyp {
        ids: Vec::new(),
        log_prob: 0.0,
        state: enc.initial_state(),
    }];
    let mut finished: Vec<Decoded> = Vec::new();
    for step in 0..max_len {
        // (hyp index, token, cumulative log-prob, step output index)
        let mut cands: Vec<(usize, u32, f64)> = Vec::new();
        let mut outs = Vec::with_capacity(live.len());
        for (h, hyp) in live.iter().enumerate() {
            let prev = hyp.ids.last().copied().unwrap_or(BOS);
            let mut out = model.decode_step(&enc, &hyp.state, prev);
            mask(&mut out.log_probs);
            for (tok, &lp) in out.log_probs.iter().enumerate() {
                if lp.is_finite() {
                    cands.push((h, tok as u32, hyp.log_prob + lp));
                }
            }
            outs.push(out);
        }
        cands.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
        cands.truncate(cfg.beam);
        let last = step + 1 == max_len;
        let mut next = Vec::new();
        for (h, tok, lp) in cands {
            let mut ids = live[h].ids.clone();
            if tok == EOS {
                finished.push(Decoded::build(model, ids, lp, true));
                continue;
            }
            ids.push(tok);
            if last {
                finished.push(Decoded::build(model, ids, lp, false));
            } else {
                next.push(Hyp {
                    ids,
                    log_prob: lp,
                    state: outs[h].state.clone(),
                });
            }
        }
        live = next;
        if live.is_empty() {
            break;
        }
    }
    finished.push(greedy_decode(model, src, cfg)?);
    let key = |d: &Decoded| {
        if cfg.length_norm {
            d.normalized_score()
        } else {
            d.log_prob
        }
    };
    let mut best = finished.swap_remove(0);
    for d in finished {
        if key(&d) > key(&best) {
            best = d;
        }
    }
    Ok(best)
}

pub fn decode(model: &Seq2SeqModel, src: &[String], cfg: &DecodeConfig) -> Result<Decoded> {
    match cfg.mode {
        DecodeMode::Greedy => greedy_decode(model, src, cfg),
        DecodeMode::Beam => beam_decode(model, src, cfg),
    }
}

/// Decodes every source in parallel; output order follows the input.
pub fn decode_all(model: &Seq2SeqModel, srcs: &[&[String]], cfg: &DecodeConfig) -> Result<Vec<Decoded>> {
    srcs.par_iter().map(|s| decode(model, s, cfg)).collect()
}
