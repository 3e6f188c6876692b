//! IBM Model 1 lexical translation table trained by EM, aligning each
//! target token to one source position or to NULL.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::corpus::{ParallelCorpus, SentencePair};
use crate::error::{Error, IoContext, Result};

pub const NULL_TOKEN: &str = "<null>";

/// `t(y | x)` for source types `x` (index 0 is NULL) and target types `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentModel {
    pub src_types: Vec<String>,
    pub tgt_types: Vec<String>,
    src_index: HashMap<String, u32>,
    tgt_index: HashMap<String, u32>,
    /// Only co-occurring pairs are stored; absent entries are zero.
    table: HashMap<(u32, u32), f64>,
    pub iterations: usize,
}

/// Aligned source position per target token; `None` is NULL.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alignment {
    pub links: Vec<Option<usize>>,
}

fn intern(index: &mut HashMap<String, u32>, types: &mut Vec<String>, tok: &str) -> u32 {
    if let Some(&i) = index.get(tok) {
        return i;
    }
    let i = types.len() as u32;
    types.push(tok.to_string());
    index.insert(tok.to_string(), i);
    i
}

pub fn train_ibm1(corpus: &ParallelCorpus, iterations: usize) -> Result<AlignmentModel> {
    if corpus.is_empty() {
        return Err(Error::Precondition("alignment needs a non-empty corpus".into()));
    }
    if iterations == 0 {
        return Err(Error::Precondition("alignment needs at least one EM iteration".into()));
    }
    let mut src_types = vec![NULL_TOKEN.to_string()];
    let mut src_index = HashMap::from([(NULL_TOKEN.to_string(), 0u32)]);
    let mut tgt_types = Vec::new();
    let mut tgt_index = HashMap::new();
    let sents: Vec<(Vec<u32>, Vec<u32>)> = corpus
        .iter()
        .map(|p| {
            let mut s = vec![0u32];
            s.extend(p.src.iter().map(|t| intern(&mut src_index, &mut src_types, t)));
            let t = p
                .tgt
                .iter()
                .map(|t| intern(&mut tgt_index, &mut tgt_types, t))
                .collect();
            (s, t)
        })
        .collect();
    let uniform = 1.0 / tgt_types.len() as f64;
    let mut table: HashMap<(u32, u32), f64> = HashMap::new();
    for (s, t) in &sents {
        for &x in s {
            for &y in t {
                table.insert((x, y), uniform);
            }
        }
    }
    for _ in 0..iterations {
        let mut counts: HashMap<(u32, u32), f64> = HashMap::with_capacity(table.len());
        let mut totals = vec![0.0; src_types.len()];
        for (s, t) in &sents {
            for &y in t {
                let z: f64 = s.iter().map(|&x| table[&(x, y)]).sum();
                for &x in s {
                    let d = table[&(x, y)] / z;
                    *counts.entry((x, y)).or_default() += d;
                    totals[x as usize] += d;
                }
            }
        }
        for ((x, y), c) in counts {
            table.insert((x, y), c / totals[x as usize]);
        }
    }
    Ok(AlignmentModel {
        src_types,
        tgt_types,
        src_index,
        tgt_index,
        table,
        iterations,
    })
}

impl AlignmentModel {
    /// `t(y | x)`; unseen tokens have probability zero. Pass
    /// [`NULL_TOKEN`] as `x` for the NULL row.
    pub fn prob(&self, y: &str, x: &str) -> f64 {
        match (self.src_index.get(x), self.tgt_index.get(y)) {
            (Some(&xi), Some(&yi)) => self.table.get(&(xi, yi)).copied().unwrap_or(0.0),
            _ => 0.0,
        }
    }

    /// Sum of each conditional row, NULL first.
    pub fn row_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.src_types.len()];
        for (&(x, _), &p) in &self.table {
            sums[x as usize] += p;
        }
        sums
    }

    /// Most probable target type for source type `x`, ties to the
    /// lexicographically smallest.
    pub fn best_target(&self, x: &str) -> Option<&str> {
        let xi = *self.src_index.get(x)?;
        self.table
            .iter()
            .filter(|((s, _), _)| *s == xi)
            .map(|(&(_, y), &p)| (self.tgt_types[y as usize].as_str(), p))
            .max_by(|a, b| a.1.total_cmp(&b.1).then_with(|| b.0.cmp(a.0)))
            .map(|(y, _)| y)
    }

    /// Per target token, the source position maximizing `t(y | x)`; ties go
    /// to the leftmost position and NULL wins only when strictly better.
    pub fn viterbi_align(&self, pair: &SentencePair) -> Alignment {
        let links = pair
            .tgt
            .iter()
            .map(|y| {
                let mut best: Option<(usize, f64)> = None;
                for (i, x) in pair.src.iter().enumerate() {
                    let p = self.prob(y, x);
                    if best.is_none_or(|(_, b)| p > b) {
                        best = Some((i, p));
                    }
                }
                let null = self.prob(y, NULL_TOKEN);
                match best {
                    Some((_, b)) if null > b => None,
                    Some((i, _)) => Some(i),
                    None => None,
                }
            })
            .collect();
        Alignment { links }
    }

    /// `src<TAB>tgt<TAB>prob` lines sorted by source then target.
    pub fn to_tsv(&self) -> String {
        let mut rows: Vec<(&str, &str, f64)> = self
            .table
            .iter()
            .map(|(&(x, y), &p)| {
                (
                    self.src_types[x as usize].as_str(),
                    self.tgt_types[y as usize].as_str(),
                    p,
                )
            })
            .collect();
        rows.sort_by(|a, b| a.0.cmp(b.0).then(a.1.cmp(b.1)));
        let mut out = String::new();
        for (x, y, p) in rows {
            writeln!(out, "{x}\t{y}\t{p:.12e}").unwrap();
        }
        out
    }

    pub fn write_table(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_tsv()).at(path)
    }
}
