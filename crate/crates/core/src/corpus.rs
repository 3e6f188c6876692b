//! Parallel corpora, vocabularies, plain-text I/O, deterministic splits and
//! the synthetic lexicon-translation task used to exercise the pipeline.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

pub type Meta = BTreeMap<String, String>;

pub const META_GOLD_CLASS: &str = "gold_class";
pub const META_PROVENANCE: &str = "provenance";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentencePair {
    pub id: u64,
    pub src: Vec<String>,
    pub tgt: Vec<String>,
    #[serde(default)]
    pub meta: Meta,
}

impl SentencePair {
    pub fn new(id: u64, src: Vec<String>, tgt: Vec<String>) -> Self {
        Self {
            id,
            src,
            tgt,
            meta: Meta::new(),
        }
    }

    pub fn from_text(id: u64, src: &str, tgt: &str) -> Self {
        Self::new(id, tokenize(src), tokenize(tgt))
    }

    pub fn with_meta(mut self, key: &str, value: &str) -> Self {
        self.meta.insert(key.to_string(), value.to_string());
        self
    }

    /// The pair with source and target exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            id: self.id,
            src: self.tgt.clone(),
            tgt: self.src.clone(),
            meta: self.meta.clone(),
        }
    }
}

pub fn tokenize(line: &str) -> Vec<String> {
    line.split_whitespace().map(str::to_string).collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelCorpus {
    pub pairs: Vec<SentencePair>,
}

impl ParallelCorpus {
    pub fn new(pairs: Vec<SentencePair>) -> Self {
        Self { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, SentencePair> {
        self.pairs.iter()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.pairs.iter().map(|p| p.id).collect()
    }

    /// Map from id to position in `pairs`.
    pub fn index(&self) -> HashMap<u64, usize> {
        self.pairs.iter().enumerate().map(|(i, p)| (p.id, i)).collect()
    }

    /// Pairs whose id is in `ids`, in corpus order.
    pub fn subset<'a>(&self, ids: impl IntoIterator<Item = &'a u64>) -> ParallelCorpus {
        let keep: std::collections::HashSet<u64> = ids.into_iter().copied().collect();
        ParallelCorpus::new(self.pairs.iter().filter(|p| keep.contains(&p.id)).cloned().collect())
    }

    pub fn swapped(&self) -> ParallelCorpus {
        ParallelCorpus::new(self.pairs.iter().map(SentencePair::swapped).collect())
    }

    /// Checks the structural invariants: non-empty sides and unique ids.
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::with_capacity(self.len());
        for p in &self.pairs {
            if p.src.is_empty() || p.tgt.is_empty() {
                return Err(Error::Precondition(format!("pair {} has an empty side", p.id)));
            }
            if !seen.insert(p.id) {
                return Err(Error::Precondition(format!("duplicate pair id {}", p.id)));
            }
        }
        Ok(())
    }

    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(&self.pairs).expect("corpus serializes");
        crate::hash_bytes(&bytes)
    }
}

impl FromIterator<SentencePair> for ParallelCorpus {
    fn from_iter<I: IntoIterator<Item = SentencePair>>(iter: I) -> Self {
        ParallelCorpus::new(iter.into_iter().collect())
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).at(path)?;
    let mut lines = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.at(path)?;
        if line.trim().is_empty() {
            return Err(Error::EmptyLine {
                path: path.to_path_buf(),
                line: i + 1,
            });
        }
        lines.push(line);
    }
    Ok(lines)
}

/// Reads a bitext: pair `i` comes from line `i` of each file, ids `0..N`.
pub fn load_parallel(src_path: impl AsRef<Path>, tgt_path: impl AsRef<Path>) -> Result<ParallelCorpus> {
    let src = read_lines(src_path.as_ref())?;
    let tgt = read_lines(tgt_path.as_ref())?;
    if src.len() != tgt.len() {
        return Err(Error::LineCountMismatch {
            src: src.len(),
            tgt: tgt.len(),
        });
    }
    Ok(src
        .iter()
        .zip(&tgt)
        .enumerate()
        .map(|(i, (s, t))| SentencePair::from_text(i as u64, s, t))
        .collect())
}

/// Like [`load_parallel`], then restores ids and meta from a sidecar file.
pub fn load_parallel_with_meta(
    src_path: impl AsRef<Path>,
    tgt_path: impl AsRef<Path>,
    meta_path: impl AsRef<Path>,
) -> Result<ParallelCorpus> {
    let mut corpus = load_parallel(src_path, tgt_path)?;
    let meta_path = meta_path.as_ref();
    let rows = read_meta(meta_path)?;
    if rows.len() != corpus.len() {
        return Err(Error::Parse {
            path: meta_path.to_path_buf(),
            line: rows.len(),
            msg: format!("{} meta rows for {} pairs", rows.len(), corpus.len()),
        });
    }
    for (pair, (id, meta)) in corpus.pairs.iter_mut().zip(rows) {
        pair.id = id;
        pair.meta = meta;
    }
    corpus.validate()?;
    Ok(corpus)
}

fn read_meta(path: &Path) -> Result<Vec<(u64, Meta)>> {
    let file = File::open(path).at(path)?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.at(path)?;
        let parse_err = |msg: &str| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: msg.to_string(),
        };
        let (id, rest) = line.split_once('\t').ok_or_else(|| parse_err("missing tab"))?;
        let id: u64 = id.parse().map_err(|_| parse_err("bad id"))?;
        let mut meta = Meta::new();
        for kv in rest.split(';').filter(|s| !s.is_empty()) {
            let (k, v) = kv.split_once('=').ok_or_else(|| parse_err("expected key=value"))?;
            meta.insert(k.to_string(), v.to_string());
        }
        rows.push((id, meta));
    }
    Ok(rows)
}

fn check_meta_text(s: &str) -> Result<()> {
    if s.contains(['\t', '\n', ';', '=']) {
        return Err(Error::Config(format!("meta text {s:?} contains a reserved character")));
    }
    Ok(())
}

/// Writes one sentence per line; optionally the `id<TAB>k=v;k=v` sidecar.
pub fn save_parallel(
    corpus: &ParallelCorpus,
    src_path: impl AsRef<Path>,
    tgt_path: impl AsRef<Path>,
    meta_path: Option<&Path>,
) -> Result<()> {
    let write_side = |path: &Path, side: fn(&SentencePair) -> &Vec<String>| -> Result<()> {
        let mut w = BufWriter::new(File::create(path).at(path)?);
        for p in &corpus.pairs {
            writeln!(w, "{}", side(p).join(" ")).at(path)?;
        }
        w.flush().at(path)
    };
    write_side(src_path.as_ref(), |p| &p.src)?;
    write_side(tgt_path.as_ref(), |p| &p.tgt)?;
    if let Some(path) = meta_path {
        let mut w = BufWriter::new(File::create(path).at(path)?);
        for p in &corpus.pairs {
            let mut fields = Vec::with_capacity(p.meta.len());
            for (k, v) in &p.meta {
                check_meta_text(k)?;
                check_meta_text(v)?;
                fields.push(format!("{k}={v}"));
            }
            writeln!(w, "{}\t{}", p.id, fields.join(";")).at(path)?;
        }
        w.flush().at(path)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Source,
    Target,
}

/// Token inventory ordered by descending frequency, ties lexicographic, after
/// the four reserved symbols.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    freqs: Vec<u64>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Builds a vocabulary from explicit (token, frequency) entries; entries
    /// must already be in canonical order.
    pub fn from_entries(entries: Vec<(String, u64)>) -> Result<Self> {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut freqs = vec![0; RESERVED.len()];
        for (t, f) in entries {
            tokens.push(t);
            freqs.push(f);
        }
        let index: HashMap<String, u32> = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        if index.len() != tokens.len() {
            return Err(Error::Format("duplicate vocabulary token".into()));
        }
        Ok(Self { tokens, freqs, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn freq(&self, id: u32) -> u64 {
        self.freqs[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn freqs(&self) -> &[u64] {
        &self.freqs
    }

    /// 1-based descending-frequency rank of a non-reserved token.
    pub fn rank(&self, token: &str) -> Option<usize> {
        self.id(token)
            .filter(|&i| i as usize >= RESERVED.len())
            .map(|i| i as usize - RESERVED.len() + 1)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t).unwrap_or(UNK)).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }
}

pub fn build_vocab(corpus: &ParallelCorpus, side: Side, max_size: usize, min_freq: u64) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::Precondition(
            "cannot build a vocabulary from an empty corpus".into(),
        ));
    }
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for p in &corpus.pairs {
        let toks = match side {
            Side::Source => &p.src,
            Side::Target => &p.tgt,
        };
        for t in toks {
            *counts.entry(t.as_str()).or_default() += 1;
        }
    }
    let mut entries: Vec<(String, u64)> = counts
        .into_iter()
        .filter(|&(t, c)| c >= min_freq && !RESERVED.contains(&t))
        .map(|(t, c)| (t.to_string(), c))
        .collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    entries.truncate(max_size);
    Vocabulary::from_entries(entries)
}

/// Generator settings for the lexicon-translation task.
///
/// Source token `s{i}` translates to `t{perm(i)}` under the primary lexicon.
/// Hard pairs draw each target token from a secondary lexicon onto the rare
/// tokens `r{j}` with probability `rare_prob`, then swap one adjacent target
/// pair with probability `swap_prob`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_pairs: usize,
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub hard_fraction: f64,
    pub rare_prob: f64,
    #[serde(default = "one")]
    pub swap_prob: f64,
    /// Size of the rare target inventory of the secondary lexicon.
    pub rare_vocab_size: usize,
    /// Zipf exponent of the source unigram distribution; 0 is uniform.
    #[serde(default)]
    pub zipf_exponent: f64,
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_pairs: 1000,
            vocab_size: 50,
            min_len: 3,
            max_len: 8,
            hard_fraction: 0.0,
            rare_prob: 0.3,
            swap_prob: 1.0,
            rare_vocab_size: 50,
            zipf_exponent: 1.0,
            seed: 1,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.vocab_size == 0 || self.rare_vocab_size == 0 {
            return bad("vocabulary sizes must be positive");
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return bad("length range must satisfy 1 <= min_len <= max_len");
        }
        for (name, v) in [
            ("hard_fraction", self.hard_fraction),
            ("rare_prob", self.rare_prob),
            ("swap_prob", self.swap_prob),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.zipf_exponent.is_nan() || self.zipf_exponent < 0.0 {
            return bad("zipf_exponent must be non-negative");
        }
        Ok(())
    }

    /// The two lexicons as total functions on source indices.
    pub fn lexicons(&self) -> Lexicons {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed_1e81_c0de);
        let mut primary: Vec<usize> = (0..self.vocab_size).collect();
        primary.shuffle(&mut rng);
        let secondary = (0..self.vocab_size)
            .map(|_| rng.gen_range(0..self.rare_vocab_size))
            .collect();
        Lexicons { primary, secondary }
    }
}

#[derive(Debug, Clone)]
pub struct Lexicons {
    pub primary: Vec<usize>,
    pub secondary: Vec<usize>,
}

pub fn src_token(i: usize) -> String {
    format!("s{i}")
}

pub fn tgt_token(i: usize) -> String {
    format!("t{i}")
}

pub fn rare_token(i: usize) -> String {
    format!("r{i}")
}

impl Lexicons {
    /// Primary-lexicon image of a source sentence; `None` for foreign tokens.
    pub fn image(&self, src: &[String]) -> Option<Vec<String>> {
        src.iter()
            .map(|t| {
                t.strip_prefix('s')
                    .and_then(|n| n.parse::<usize>().ok())
                    .filter(|&i| i < self.primary.len())
                    .map(|i| tgt_token(self.primary[i]))
            })
            .collect()
    }
}

pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<ParallelCorpus> {
    spec.validate()?;
    let lex = spec.lexicons();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // Inverse-CDF sampling from a Zipf law over source indices.
    let weights: Vec<f64> = (1..=spec.vocab_size)
        .map(|r| (r as f64).powf(-spec.zipf_exponent))
        .collect();
    let total: f64 = weights.iter().sum();
    let mut cdf = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in &weights {
        acc += w / total;
        cdf.push(acc);
    }

    let n_hard = (spec.hard_fraction * spec.num_pairs as f64).round() as usize;
    let mut order: Vec<usize> = (0..spec.num_pairs).collect();
    order.shuffle(&mut rng);
    let mut is_hard = vec![false; spec.num_pairs];
    for &i in &order[..n_hard.min(spec.num_pairs)] {
        is_hard[i] = true;
    }

    let mut pairs = Vec::with_capacity(spec.num_pairs);
    for (id, &hard) in is_hard.iter().enumerate() {
        let len = rng.gen_range(spec.min_len..=spec.max_len);
        let src_idx: Vec<usize> = (0..len)
            .map(|_| {
                let u: f64 = rng.gen();
                cdf.partition_point(|&c| c < u).min(spec.vocab_size - 1)
            })
            .collect();
        let src: Vec<String> = src_idx.iter().map(|&i| src_token(i)).collect();
        let mut tgt: Vec<String> = src_idx.iter().map(|&i| tgt_token(lex.primary[i])).collect();
        if hard {
            for (t, &i) in tgt.iter_mut().zip(&src_idx) {
                if rng.gen_bool(spec.rare_prob) {
                    *t = rare_token(lex.secondary[i]);
                }
            }
            if len >= 2 && rng.gen_bool(spec.swap_prob) {
                let j = rng.gen_range(0..len - 1);
                tgt.swap(j, j + 1);
            }
        }
        let class = if hard { "hard" } else { "clean" };
        pairs.push(SentencePair::new(id as u64, src, tgt).with_meta(META_GOLD_CLASS, class));
    }
    Ok(ParallelCorpus::new(pairs))
}

/// Copy of `corpus` with every target replaced by its primary-lexicon image
/// and tagged clean. Pairs with foreign source tokens are kept unchanged.
pub fn cleaned(spec: &SyntheticSpec, corpus: &ParallelCorpus) -> ParallelCorpus {
    let lex = spec.lexicons();
    corpus
        .iter()
        .map(|p| match lex.image(&p.src) {
            Some(tgt) => SentencePair { tgt, ..p.clone() }.with_meta(META_GOLD_CLASS, "clean"),
            None => p.clone(),
        })
        .collect()
}

/// Seeded shuffle then contiguous cut into (train, valid, test); valid and
/// test get `floor(f * N)` pairs and train takes the remainder. Each part is
/// returned in id order.
pub fn split(
    corpus: &ParallelCorpus,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(ParallelCorpus, ParallelCorpus, ParallelCorpus)> {
    let (ftr, fva, fte) = fractions;
    if !(ftr > 0.0 && fva > 0.0 && fte > 0.0) || ((ftr + fva + fte) - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions must be positive and sum to 1, got {fractions:?}"
        )));
    }
    let n = corpus.len();
    let n_valid = (fva * n as f64).floor() as usize;
    let n_test = (fte * n as f64).floor() as usize;
    let n_train = n - n_valid - n_test;
    if n_train == 0 || n_valid == 0 || n_test == 0 {
        return Err(Error::Precondition(format!(
            "split of {n} pairs yields an empty part ({n_train}/{n_valid}/{n_test})"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    // A separate stream keeps the cut independent of a generator that was
    // seeded with the same value.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    order.shuffle(&mut rng);
    let take = |range: std::ops::Range<usize>| {
        let mut idx = order[range].to_vec();
        idx.sort_by_key(|&i| corpus.pairs[i].id);
        ParallelCorpus::new(idx.into_iter().map(|i| corpus.pairs[i].clone()).collect())
    };
    Ok((
        take(0..n_train),
        take(n_train..n_train + n_valid),
        take(n_train + n_valid..n),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn load_single_pair() {
        let dir = tempfile::tempdir().unwrap();
        let (s, t) = (dir.path().join("a.src"), dir.path().join("a.tgt"));
        std::fs::write(&s, "a b\n").unwrap();
        std::fs::write(&t, "x y\n").unwrap();
        let c = load_parallel(&s, &t).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.pairs[0].id, 0);
        assert_eq!(c.pairs[0].src, toks("a b"));
        assert_eq!(c.pairs[0].tgt, toks("x y"));
        assert!(c.pairs[0].meta.is_empty());
    }

    #[test]
    fn load_rejects_count_mismatch_and_empty_lines() {
        let dir = tempfile::tempdir().unwrap();
        let (s, t) = (dir.path().join("a.src"), dir.path().join("a.tgt"));
        std::fs::write(&s, "a\nb\nc\n").unwrap();
        std::fs::write(&t, "x\ny\n").unwrap();
        let err = load_parallel(&s, &t).unwrap_err();
        assert_eq!(err.to_string(), "line count 3 ≠ 2");

        std::fs::write(&t, "x\n  \nz\n").unwrap();
        match load_parallel(&s, &t).unwrap_err() {
            Error::EmptyLine { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn save_writes_meta_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let c = ParallelCorpus::new(vec![
            SentencePair::from_text(0, "a", "x").with_meta(META_GOLD_CLASS, "hard")
        ]);
        let (s, t, m) = (
            dir.path().join("c.src"),
            dir.path().join("c.tgt"),
            dir.path().join("c.meta"),
        );
        save_parallel(&c, &s, &t, Some(&m)).unwrap();
        assert_eq!(std::fs::read_to_string(&s).unwrap(), "a\n");
        assert_eq!(std::fs::read_to_string(&t).unwrap(), "x\n");
        assert_eq!(std::fs::read_to_string(&m).unwrap(), "0\tgold_class=hard\n");
    }

    #[test]
    fn save_rejects_reserved_meta_characters() {
        let dir = tempfile::tempdir().unwrap();
        let c = ParallelCorpus::new(vec![SentencePair::from_text(0, "a", "x").with_meta("k", "a;b")]);
        let m = dir.path().join("m");
        assert!(save_parallel(&c, dir.path().join("s"), dir.path().join("t"), Some(&m)).is_err());
    }

    #[test]
    fn round_trip_random_corpus() {
        let spec = SyntheticSpec {
            num_pairs: 100,
            hard_fraction: 0.3,
            seed: 9,
            ..Default::default()
        };
        let c = gen_synthetic(&spec).unwrap();
        let (train, _, _) = split(&c, (0.8, 0.1, 0.1), 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (s, t, m) = (dir.path().join("s"), dir.path().join("t"), dir.path().join("m"));
        save_parallel(&c, &s, &t, Some(&m)).unwrap();
        assert_eq!(load_parallel_with_meta(&s, &t, &m).unwrap(), c);
        // bitext alone keeps tokens; ids become positional
        let plain = load_parallel(&s, &t).unwrap();
        assert!(plain
            .iter()
            .zip(c.iter())
            .all(|(a, b)| a.src == b.src && a.tgt == b.tgt));
        // non-contiguous ids survive through the sidecar
        save_parallel(&train, &s, &t, Some(&m)).unwrap();
        assert_eq!(load_parallel_with_meta(&s, &t, &m).unwrap(), train);
    }

    #[test]
    fn vocab_order_and_min_freq() {
        let c = ParallelCorpus::new(vec![SentencePair::new(0, toks("q"), toks("a a b"))]);
        let v = build_vocab(&c, Side::Target, 100, 1).unwrap();
        assert_eq!(&v.tokens()[4..], &["a".to_string(), "b".to_string()]);
        assert_eq!(v.freq(4), 2);
        assert_eq!(v.freq(5), 1);
        assert_eq!(v.rank("a"), Some(1));

        let v2 = build_vocab(&c, Side::Target, 100, 2).unwrap();
        assert_eq!(v2.encode(&toks("a b")), vec![4, UNK]);
    }

    #[test]
    fn vocab_ties_are_lexicographic_and_truncation_applies() {
        let c = ParallelCorpus::new(vec![SentencePair::new(0, toks("c b a c"), toks("x"))]);
        let v = build_vocab(&c, Side::Source, 2, 1).unwrap();
        assert_eq!(&v.tokens()[4..], &["c".to_string(), "a".to_string()]);
        assert_eq!(v.len(), 6);
    }

    #[test]
    fn vocab_encode_decode_on_random_corpus() {
        let c = gen_synthetic(&SyntheticSpec {
            num_pairs: 1000,
            vocab_size: 80,
            hard_fraction: 0.2,
            seed: 4,
            ..Default::default()
        })
        .unwrap();
        let v = build_vocab(&c, Side::Target, 1000, 30).unwrap();
        for p in c.iter() {
            let round = v.decode(&v.encode(&p.tgt));
            for (orig, got) in p.tgt.iter().zip(&round) {
                if v.id(orig).is_some() {
                    assert_eq!(orig, got);
                } else {
                    assert_eq!(got, "<unk>");
                }
            }
        }
        assert!(v.freqs()[4..].windows(2).all(|w| w[0] >= w[1]));
        assert!(v.freqs()[4..].iter().all(|&f| f >= 30));
    }

    #[test]
    fn synthetic_clean_pairs_follow_lexicon() {
        let spec = SyntheticSpec {
            num_pairs: 200,
            hard_fraction: 0.0,
            ..Default::default()
        };
        let lex = spec.lexicons();
        for p in gen_synthetic(&spec).unwrap().iter() {
            assert_eq!(lex.image(&p.src).unwrap(), p.tgt);
            assert_eq!(p.meta[META_GOLD_CLASS], "clean");
        }
    }

    #[test]
    fn synthetic_swap_only_hard_pairs() {
        let spec = SyntheticSpec {
            num_pairs: 200,
            hard_fraction: 1.0,
            rare_prob: 0.0,
            swap_prob: 1.0,
            ..Default::default()
        };
        let lex = spec.lexicons();
        for p in gen_synthetic(&spec).unwrap().iter() {
            let img = lex.image(&p.src).unwrap();
            let diff: Vec<usize> = (0..img.len()).filter(|&i| img[i] != p.tgt[i]).collect();
            match diff.as_slice() {
                [] => {}
                [a, b] => {
                    assert_eq!(a + 1, *b);
                    assert_eq!(img[*a], p.tgt[*b]);
                    assert_eq!(img[*b], p.tgt[*a]);
                }
                d => panic!("not a single adjacent swap: {d:?}"),
            }
            assert_eq!(p.meta[META_GOLD_CLASS], "hard");
        }
    }

    #[test]
    fn synthetic_is_deterministic_per_seed() {
        let spec = SyntheticSpec {
            num_pairs: 300,
            hard_fraction: 0.3,
            ..Default::default()
        };
        assert_eq!(gen_synthetic(&spec).unwrap(), gen_synthetic(&spec).unwrap());
        let hard = |c: &ParallelCorpus| -> Vec<u64> {
            c.iter()
                .filter(|p| p.meta[META_GOLD_CLASS] == "hard")
                .map(|p| p.id)
                .collect()
        };
        let other = gen_synthetic(&SyntheticSpec {
            seed: 2,
            ..spec.clone()
        })
        .unwrap();
        assert_ne!(hard(&gen_synthetic(&spec).unwrap()), hard(&other));
    }

    #[test]
    fn split_sizes_and_determinism() {
        let c = gen_synthetic(&SyntheticSpec {
            num_pairs: 10,
            ..Default::default()
        })
        .unwrap();
        let (a, b, d) = split(&c, (0.8, 0.1, 0.1), 5).unwrap();
        assert_eq!((a.len(), b.len(), d.len()), (8, 1, 1));
        let mut all: Vec<u64> = a.ids().into_iter().chain(b.ids()).chain(d.ids()).collect();
        all.sort();
        assert_eq!(all, c.ids());
        assert_eq!(split(&c, (0.8, 0.1, 0.1), 5).unwrap(), (a, b, d));
        assert!(split(&c, (0.9, 0.05, 0.05), 5).is_err());
        assert!(split(&c, (0.5, 0.2, 0.2), 5).is_err());
    }

    proptest! {
        #[test]
        fn hard_fraction_within_one(n in 1usize..400, q in 0.0f64..=1.0, seed in 0u64..1000) {
            let c = gen_synthetic(&SyntheticSpec { num_pairs: n, hard_fraction: q, seed, ..Default::default() }).unwrap();
            let hard = c.iter().filter(|p| p.meta[META_GOLD_CLASS] == "hard").count() as f64;
            prop_assert!((hard - q * n as f64).abs() <= 1.0);
        }

        #[test]
        fn split_partitions_exhaustively(n in 20usize..300, seed in 0u64..1000) {
            let c = gen_synthetic(&SyntheticSpec { num_pairs: n, seed, ..Default::default() }).unwrap();
            let (a, b, d) = split(&c, (0.7, 0.15, 0.15), seed).unwrap();
            let mut all: Vec<u64> = a.ids().into_iter().chain(b.ids()).chain(d.ids()).collect();
            all.sort();
            prop_assert_eq!(all, c.ids());
        }
    }
}
