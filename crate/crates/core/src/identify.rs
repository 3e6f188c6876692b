//! Rank-based bins, inactive/active splits, cross-model agreement and
//! removal experiments.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::bleu::model_bleu;
use crate::corpus::ParallelCorpus;
use crate::error::{Error, IoContext, Result};
use crate::inference::{DecodeConfig, ScoredCorpus};
use crate::nnet::{train, ModelConfig, Seq2SeqModel, TrainConfig};

/// `B` bins of ids; bin 1 holds the lowest scores. Within a bin ids are in
/// ascending `(score, id)` order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinPartition {
    pub bins: Vec<Vec<u64>>,
}

impl BinPartition {
    pub fn num_bins(&self) -> usize {
        self.bins.len()
    }

    pub fn len(&self) -> usize {
        self.bins.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Ids of bin `b`, 1-based.
    pub fn bin(&self, b: usize) -> &[u64] {
        &self.bins[b - 1]
    }

    pub fn universe(&self) -> BTreeSet<u64> {
        self.bins.iter().flatten().copied().collect()
    }

    /// Map from id to its 1-based bin.
    pub fn bin_of(&self) -> BTreeMap<u64, usize> {
        self.bins
            .iter()
            .enumerate()
            .flat_map(|(b, ids)| ids.iter().map(move |&id| (id, b + 1)))
            .collect()
    }

    pub fn mean_scores(&self, scores: &ScoredCorpus) -> Vec<f64> {
        self.bins
            .iter()
            .map(|ids| ids.iter().map(|id| scores.scores[id]).sum::<f64>() / ids.len() as f64)
            .collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (b, ids) in self.bins.iter().enumerate() {
            for id in ids {
                writeln!(out, "{id}\t{}", b + 1).unwrap();
            }
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
        let mut bins: Vec<Vec<u64>> = Vec::new();
        for (n, (id, b)) in parse_tsv(path, &text)?.into_iter().enumerate() {
            let id: u64 = id.parse().map_err(|_| parse_err(path, n + 1, "bad id"))?;
            let b: usize = b.parse().map_err(|_| parse_err(path, n + 1, "bad bin"))?;
            if b == 0 {
                return Err(parse_err(path, n + 1, "bins are 1-based"));
            }
            if bins.len() < b {
                bins.resize(b, Vec::new());
            }
            bins[b - 1].push(id);
        }
        Ok(Self { bins })
    }
}

/// Bottom `R`% of ids by `(score, id)` versus the rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InactiveSplit {
    pub inactive: BTreeSet<u64>,
    pub active: BTreeSet<u64>,
    pub ratio: f64,
}

impl InactiveSplit {
    pub fn to_tsv(&self) -> String {
        let mut all: Vec<(u64, &str)> = self.inactive.iter().map(|&i| (i, "inactive")).collect();
        all.extend(self.active.iter().map(|&i| (i, "active")));
        all.sort_unstable();
        let mut out = String::new();
        for (id, label) in all {
            writeln!(out, "{id}\t{label}").unwrap();
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_tsv()).at(path)
    }

    /// Reads a split file; the ratio is recovered from the set sizes.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).at(path)?;
        let mut inactive = BTreeSet::new();
        let mut active = BTreeSet::new();
        for (n, (id, label)) in parse_tsv(path, &text)?.into_iter().enumerate() {
            let id: u64 = id.parse().map_err(|_| parse_err(path, n + 1, "bad id"))?;
            match label {
                "inactive" => inactive.insert(id),
                "active" => active.insert(id),
                _ => return Err(parse_err(path, n + 1, "label must be inactive or active")),
            };
        }
        let n = inactive.len() + active.len();
        let ratio = if n == 0 {
            0.0
        } else {
            100.0 * inactive.len() as f64 / n as f64
        };
        Ok(Self {
            inactive,
            active,
            ratio,
        })
    }
}

fn parse_err(path: &Path, line: usize, msg: &str) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.to_string(),
    }
}

fn parse_tsv<'a>(path: &Path, text: &'a str) -> Result<Vec<(&'a str, &'a str)>> {
    text.lines()
        .enumerate()
        .map(|(n, l)| {
            l.split_once('\t')
                .ok_or_else(|| parse_err(path, n + 1, "expected two tab-separated fields"))
        })
        .collect()
}

/// Sorts ascending by `(score, id)` and cuts at `⌊kN/B⌋`, `k = 0..=B`.
pub fn rank_and_bin(scores: &ScoredCorpus, num_bins: usize) -> Result<BinPartition> {
    let n = scores.len();
    if num_bins == 0 || num_bins > n {
        return Err(Error::Precondition(format!("need 1 ≤ B ≤ N, got B={num_bins}, N={n}")));
    }
    let ranked: Vec<u64> = scores.ranked().into_iter().map(|(id, _)| id).collect();
    let bins = (0..num_bins)
        .map(|k| ranked[k * n / num_bins..(k + 1) * n / num_bins].to_vec())
        .collect();
    Ok(BinPartition { bins })
}

/// Number of inactive examples for ratio `r` percent of `n`.
pub fn inactive_count(r: f64, n: usize) -> usize {
    (r * n as f64 / 100.0).floor() as usize
}

pub fn split_inactive(scores: &ScoredCorpus, ratio: f64) -> Result<InactiveSplit> {
    if !(ratio > 0.0 && ratio < 100.0) {
        return Err(Error::Precondition(format!(
            "inactive ratio must be in (0, 100), got {ratio}"
        )));
    }
    let k = inactive_count(ratio, scores.len());
    let ranked = scores.ranked();
    Ok(InactiveSplit {
        inactive: ranked[..k].iter().map(|r| r.0).collect(),
        active: ranked[k..].iter().map(|r| r.0).collect(),
        ratio,
    })
}

fn check_universes(parts: &[BinPartition], b: usize) -> Result<(usize, usize)> {
    if parts.len() < 2 {
        return Err(Error::Precondition("overlap needs at least two partitions".into()));
    }
    let nb = parts[0].num_bins();
    if !(1..=nb).contains(&b) {
        return Err(Error::Precondition(format!("bin {b} out of range 1..={nb}")));
    }
    let universe = parts[0].universe();
    for p in &parts[1..] {
        if p.num_bins() != nb {
            return Err(Error::Universe(format!("bin counts differ: {nb} vs {}", p.num_bins())));
        }
        if p.universe() != universe {
            return Err(Error::Universe("partitions cover different ids".into()));
        }
    }
    Ok((universe.len(), nb))
}

/// `|⋂_m bin_b(m)| / ⌈N/B⌉`.
pub fn overlap_ratio(parts: &[BinPartition], b: usize) -> Result<f64> {
    let (n, nb) = check_universes(parts, b)?;
    let mut shared: BTreeSet<u64> = parts[0].bin(b).iter().copied().collect();
    for p in &parts[1..] {
        let other: BTreeSet<u64> = p.bin(b).iter().copied().collect();
        shared = shared.intersection(&other).copied().collect();
    }
    Ok(shared.len() as f64 / n.div_ceil(nb) as f64)
}

/// Mean of `overlap_ratio` over all unordered pairs of partitions.
pub fn overlap_ratio_pairwise(parts: &[BinPartition], b: usize) -> Result<f64> {
    check_universes(parts, b)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..parts.len() {
        for j in i + 1..parts.len() {
            total += overlap_ratio(&[parts[i].clone(), parts[j].clone()], b)?;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    Inactive,
    Active,
    Random,
}

/// Ids removed at `ratio` percent: the lowest scores, the highest scores, or
/// a seeded uniform draw.
pub fn select_for_removal(scores: &ScoredCorpus, ratio: f64, selection: Selection, seed: u64) -> BTreeSet<u64> {
    let k = inactive_count(ratio, scores.len());
    let ranked = scores.ranked();
    match selection {
        Selection::Inactive => ranked[..k].iter().map(|r| r.0).collect(),
        Selection::Active => ranked[ranked.len() - k..].iter().map(|r| r.0).collect(),
        Selection::Random => {
            let mut ids: Vec<u64> = scores.scores.keys().copied().collect();
            ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            ids.truncate(k);
            ids.into_iter().collect()
        }
    }
}

/// Everything needed to train a model and measure its test BLEU.
#[derive(Debug, Clone)]
pub struct TrainEval<'a> {
    pub model: &'a ModelConfig,
    pub train: &'a TrainConfig,
    pub valid: &'a ParallelCorpus,
    pub test: &'a ParallelCorpus,
    pub decode: &'a DecodeConfig,
}

impl TrainEval<'_> {
    /// Trains a fresh model on `corpus` and returns it with its test BLEU.
    pub fn run(&self, corpus: &ParallelCorpus) -> Result<(Seq2SeqModel, f64)> {
        let init = Seq2SeqModel::init_for_corpus(self.model, corpus)?;
        let (model, _) = train(&init, corpus, self.valid, self.train)?;
        let bleu = model_bleu(&model, self.test, self.decode)?;
        Ok((model, bleu))
    }
}

/// Test BLEU after removing each ratio of examples by `selection`.
/// Ratio 0 is accepted and trains on the full corpus.
pub fn removal_curve(
    corpus: &ParallelCorpus,
    scores: &ScoredCorpus,
    ratios: &[f64],
    selection: Selection,
    ctx: &TrainEval<'_>,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    let ids: BTreeSet<u64> = corpus.ids().into_iter().collect();
    let scored: BTreeSet<u64> = scores.scores.keys().copied().collect();
    if ids != scored {
        return Err(Error::Universe("scores do not cover the corpus ids".into()));
    }
    let mut out = Vec::with_capacity(ratios.len());
    for &r in ratios {
        if !(0.0..100.0).contains(&r) {
            return Err(Error::Precondition(format!(
                "removal ratio must be in [0, 100), got {r}"
            )));
        }
        let removed = select_for_removal(scores, r, selection, seed);
        let kept: Vec<u64> = ids.difference(&removed).copied().collect();
        let (_, bleu) = ctx.run(&corpus.subset(&kept))?;
        out.push((r, bleu));
    }
    Ok(out)
}
