//! Corpus-level BLEU-4 without smoothing.

use std::collections::HashMap;

use crate::corpus::ParallelCorpus;
use crate::error::{Error, Result};
use crate::inference::{decode_all, DecodeConfig};
use crate::nnet::Seq2SeqModel;

pub const MAX_ORDER: usize = 4;

/// Clipped n-gram matches and candidate n-gram totals of one sentence.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: [u64; MAX_ORDER],
    pub totals: [u64; MAX_ORDER],
    pub cand_len: u64,
    pub ref_len: u64,
}

impl std::ops::AddAssign for BleuStats {
    fn add_assign(&mut self, o: Self) {
        for n in 0..MAX_ORDER {
            self.matches[n] += o.matches[n];
            self.totals[n] += o.totals[n];
        }
        self.cand_len += o.cand_len;
        self.ref_len += o.ref_len;
    }
}

fn ngrams<S: AsRef<str>>(toks: &[S], n: usize) -> HashMap<Vec<&str>, u64> {
    let mut m = HashMap::new();
    for w in toks.windows(n) {
        *m.entry(w.iter().map(AsRef::as_ref).collect()).or_default() += 1;
    }
    m
}

pub fn sentence_stats<S: AsRef<str>>(cand: &[S], reference: &[S]) -> BleuStats {
    let mut s = BleuStats {
        cand_len: cand.len() as u64,
        ref_len: reference.len() as u64,
        ..Default::default()
    };
    for n in 1..=MAX_ORDER {
        let c = ngrams(cand, n);
        let r = ngrams(reference, n);
        s.totals[n - 1] = c.values().sum();
        s.matches[n - 1] = c.iter().map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0))).sum();
    }
    s
}

impl BleuStats {
    /// BLEU in `[0, 100]` from accumulated statistics.
    pub fn score(&self) -> f64 {
        if self.matches.contains(&0) {
            return 0.0;
        }
        let log_p: f64 = self
            .matches
            .iter()
            .zip(&self.totals)
            .map(|(&m, &t)| (m as f64 / t as f64).ln())
            .sum::<f64>()
            / MAX_ORDER as f64;
        let bp = if self.cand_len < self.ref_len {
            (1.0 - self.ref_len as f64 / self.cand_len as f64).exp()
        } else {
            1.0
        };
        100.0 * bp * log_p.exp()
    }
}

pub fn corpus_stats<S: AsRef<str>>(cands: &[Vec<S>], refs: &[Vec<S>]) -> Result<Vec<BleuStats>> {
    if cands.len() != refs.len() {
        return Err(Error::Precondition(format!(
            "{} candidates for {} references",
            cands.len(),
            refs.len()
        )));
    }
    if cands.is_empty() {
        return Err(Error::Precondition("BLEU needs at least one sentence".into()));
    }
    Ok(cands.iter().zip(refs).map(|(c, r)| sentence_stats(c, r)).collect())
}

pub fn bleu<S: AsRef<str>>(cands: &[Vec<S>], refs: &[Vec<S>]) -> Result<f64> {
    let mut total = BleuStats::default();
    for s in corpus_stats(cands, refs)? {
        total += s;
    }
    Ok(total.score())
}

/// Translates every source of `test` and scores against its targets.
pub fn model_bleu(model: &Seq2SeqModel, test: &ParallelCorpus, cfg: &DecodeConfig) -> Result<f64> {
    let hyps = translate(model, test, cfg)?;
    let refs: Vec<Vec<String>> = test.iter().map(|p| p.tgt.clone()).collect();
    bleu(&hyps, &refs)
}

pub fn translate(model: &Seq2SeqModel, corpus: &ParallelCorpus, cfg: &DecodeConfig) -> Result<Vec<Vec<String>>> {
    let srcs: Vec<&[String]> = corpus.iter().map(|p| p.src.as_slice()).collect();
    Ok(decode_all(model, &srcs, cfg)?.into_iter().map(|d| d.tokens).collect())
}
