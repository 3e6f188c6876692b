//! Subset diagnostics: alignment coverage, target frequency rank,
//! translation uncertainty, teacher-forced margin, gradient signal-to-noise
//! ratio, and per-bin attribute ratios.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;

use super::ibm1::AlignmentModel;
use crate::corpus::{ParallelCorpus, Vocabulary};
use crate::error::{Error, Result};
use crate::identify::BinPartition;
use crate::nnet::Seq2SeqModel;

pub const GSNR_EPS: f64 = 1e-12;

fn non_empty(subset: &ParallelCorpus, what: &str) -> Result<()> {
    if subset.is_empty() {
        Err(Error::Precondition(format!("{what} of an empty subset")))
    } else {
        Ok(())
    }
}

/// Mean over pairs of the fraction of source positions that at least one
/// target token aligns to.
pub fn coverage(subset: &ParallelCorpus, align: &AlignmentModel) -> Result<f64> {
    non_empty(subset, "coverage")?;
    let total: f64 = subset
        .iter()
        .map(|p| {
            let mut hit = vec![false; p.src.len()];
            for i in align.viterbi_align(p).links.into_iter().flatten() {
                hit[i] = true;
            }
            hit.iter().filter(|&&h| h).count() as f64 / p.src.len() as f64
        })
        .sum();
    Ok(total / subset.len() as f64)
}

/// Mean 1-based frequency rank over every target token of the subset.
pub fn frequency_rank(subset: &ParallelCorpus, vocab: &Vocabulary) -> Result<f64> {
    non_empty(subset, "frequency rank")?;
    let mut sum = 0u64;
    let mut n = 0u64;
    for p in subset.iter() {
        for t in &p.tgt {
            let r = vocab
                .rank(t)
                .ok_or_else(|| Error::Precondition(format!("token {t:?} of pair {} is not in the vocabulary", p.id)))?;
            sum += r as u64;
            n += 1;
        }
    }
    Ok(sum as f64 / n as f64)
}

/// Average over source types seen in the subset of the entropy (nats) of
/// the targets aligned to them. NULL links are ignored.
pub fn uncertainty(subset: &ParallelCorpus, align: &AlignmentModel) -> Result<f64> {
    non_empty(subset, "uncertainty")?;
    let mut counts: BTreeMap<&str, HashMap<&str, u64>> = BTreeMap::new();
    for p in subset.iter() {
        for (j, link) in align.viterbi_align(p).links.into_iter().enumerate() {
            if let Some(i) = link {
                *counts
                    .entry(p.src[i].as_str())
                    .or_default()
                    .entry(p.tgt[j].as_str())
                    .or_default() += 1;
            }
        }
    }
    if counts.is_empty() {
        return Err(Error::Precondition("no aligned (non-NULL) links in the subset".into()));
    }
    let total: f64 = counts.values().map(|ys| entropy(ys.values().copied())).sum();
    Ok(total / counts.len() as f64)
}

fn entropy(counts: impl Iterator<Item = u64> + Clone) -> f64 {
    let n: u64 = counts.clone().sum();
    let mut ks: Vec<u64> = counts.collect();
    ks.sort_unstable();
    ks.into_iter()
        .map(|k| {
            let p = k as f64 / n as f64;
            p * (1.0 / p).ln()
        })
        .sum::<f64>()
}

/// Mean over teacher-forced positions of `p(gold) − max_{v≠gold} p(v)`.
pub fn margin(model: &Seq2SeqModel, subset: &ParallelCorpus) -> Result<f64> {
    non_empty(subset, "margin")?;
    let per_pair: Vec<(f64, usize)> = subset
        .pairs
        .par_iter()
        .map(|p| {
            let ep = model.encode(p)?;
            let rows = model.step_distributions(&ep);
            let gold: Vec<u32> = ep.tgt.iter().copied().chain([crate::corpus::EOS]).collect();
            let sum = rows
                .iter()
                .zip(&gold)
                .map(|(row, &g)| position_margin(row, g as usize))
                .sum();
            Ok((sum, rows.len()))
        })
        .collect::<Result<_>>()?;
    let (sum, n) = per_pair.into_iter().fold((0.0, 0), |(a, b), (c, d)| (a + c, b + d));
    Ok(sum / n as f64)
}

pub fn position_margin(probs: &[f64], gold: usize) -> f64 {
    let other = probs
        .iter()
        .enumerate()
        .filter(|&(v, _)| v != gold)
        .map(|(_, &p)| p)
        .fold(f64::NEG_INFINITY, f64::max);
    probs[gold] - other
}

/// Streaming per-parameter mean and unbiased variance.
#[derive(Debug, Clone)]
pub struct Welford {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    pub fn new(dim: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn push(&mut self, x: &[f64]) {
        self.n += 1;
        let k = self.n as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let d = v - *m;
            *m += d / k;
            *s += d * (v - *m);
        }
    }

    /// Mean over parameters of `mean² / (var + ε)`.
    pub fn gsnr(&self) -> Result<f64> {
        if self.n < 2 {
            return Err(Error::Precondition(format!(
                "GSNR needs at least 2 examples, got {}",
                self.n
            )));
        }
        let denom = (self.n - 1) as f64;
        let total: f64 = self
            .mean
            .iter()
            .zip(&self.m2)
            .map(|(m, s)| m * m / (s / denom + GSNR_EPS))
            .sum();
        Ok(total / self.mean.len() as f64)
    }
}

/// GSNR of explicit per-example gradient vectors.
pub fn gsnr_from_gradients(grads: &[Vec<f64>]) -> Result<f64> {
    let dim = grads.first().map_or(0, Vec::len);
    let mut w = Welford::new(dim);
    for g in grads {
        w.push(g);
    }
    w.gsnr()
}

/// GSNR over the per-example gradients of the mean token loss. Gradients
/// are computed in parallel blocks and folded in corpus order.
pub fn gsnr(model: &Seq2SeqModel, sample: &ParallelCorpus) -> Result<f64> {
    const BLOCK: usize = 16;
    if sample.len() < 2 {
        return Err(Error::Precondition(format!(
            "GSNR needs at least 2 examples, got {}",
            sample.len()
        )));
    }
    let encoded: Vec<_> = sample.iter().map(|p| model.encode(p)).collect::<Result<_>>()?;
    let mut w = Welford::new(model.num_params());
    for block in encoded.chunks(BLOCK) {
        let grads: Vec<Vec<f64>> = block
            .par_iter()
            .map(|ep| {
                let mut g = vec![0.0; model.num_params()];
                model.accumulate_grad(ep, 1.0 / ep.steps() as f64, &mut g);
                g
            })
            .collect();
        for g in &grads {
            w.push(g);
        }
    }
    w.gsnr()
}

/// Fraction of pairs in each bin whose `meta[key] == value`.
pub fn attribute_ratio_per_bin(
    partition: &BinPartition,
    corpus: &ParallelCorpus,
    key: &str,
    value: &str,
) -> Result<Vec<f64>> {
    let index = corpus.index();
    partition
        .bins
        .iter()
        .map(|ids| {
            let mut hits = 0usize;
            for id in ids {
                let pos = *index.get(id).ok_or(Error::MissingId(*id))?;
                let v = corpus.pairs[pos].meta.get(key).ok_or_else(|| Error::MissingMeta {
                    id: *id,
                    key: key.to_string(),
                })?;
                hits += usize::from(v == value);
            }
            Ok(hits as f64 / ids.len().max(1) as f64)
        })
        .collect()
}
