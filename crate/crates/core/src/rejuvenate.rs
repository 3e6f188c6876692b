//! Re-labelling inactive pairs and composing final training sets.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{save_parallel, ParallelCorpus, SentencePair, META_PROVENANCE};
use crate::error::{Error, IoContext, Result};
use crate::inference::{decode, greedy_decode, DecodeConfig};
use crate::nnet::{train, ModelConfig, Seq2SeqModel, TrainConfig, TrainingLog};

pub const META_REJUVENATION: &str = "rejuvenation";
pub const PROVENANCE_ORIGINAL: &str = "original";
pub const PROVENANCE_FT: &str = "rejuvenated-ft";
pub const PROVENANCE_BT: &str = "rejuvenated-bt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Reverse,
}

/// How rejuvenated pairs enter the final training set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Ft,
    Bt,
    Both,
    RemoveOnly,
    Diversify,
}

impl Strategy {
    pub fn needs_forward(self) -> bool {
        matches!(self, Strategy::Ft | Strategy::Both | Strategy::Diversify)
    }

    pub fn needs_reverse(self) -> bool {
        matches!(self, Strategy::Bt | Strategy::Both | Strategy::Diversify)
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::Config(format!("unknown strategy {s:?}")))
    }
}

/// Which side a rejuvenated set regenerated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Ft,
    Bt,
}

/// Regenerated pairs keyed by original id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejuvenatedCorpus {
    pub pairs: BTreeMap<u64, SentencePair>,
    pub side: Side,
    pub model_hash: String,
}

impl RejuvenatedCorpus {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn failures(&self) -> usize {
        self.pairs
            .values()
            .filter(|p| p.meta.get(META_REJUVENATION).is_some_and(|v| v == "failed"))
            .count()
    }

    pub fn to_corpus(&self) -> ParallelCorpus {
        self.pairs.values().cloned().collect()
    }

    /// Writes `<stem>.src`, `<stem>.tgt`, `<stem>.meta` and a JSON manifest
    /// `<stem>.json` recording the side and rejuvenator identity.
    pub fn save(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        save_parallel(
            &self.to_corpus(),
            dir.join(format!("{stem}.src")),
            dir.join(format!("{stem}.tgt")),
            Some(&dir.join(format!("{stem}.meta"))),
        )?;
        let manifest = serde_json::json!({
            "side": self.side,
            "model_hash": self.model_hash,
            "pairs": self.len(),
            "failed": self.failures(),
        });
        let path = dir.join(format!("{stem}.json"));
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").at(&path)
    }

    pub fn load(dir: impl AsRef<Path>, stem: &str) -> Result<Self> {
        let dir = dir.as_ref();
        let corpus = crate::corpus::load_parallel_with_meta(
            dir.join(format!("{stem}.src")),
            dir.join(format!("{stem}.tgt")),
            dir.join(format!("{stem}.meta")),
        )?;
        let path = dir.join(format!("{stem}.json"));
        let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).at(&path)?)?;
        Ok(Self {
            pairs: corpus.pairs.into_iter().map(|p| (p.id, p)).collect(),
            side: serde_json::from_value(manifest["side"].clone())?,
            model_hash: manifest["model_hash"].as_str().unwrap_or_default().to_string(),
        })
    }
}

/// Trains a rejuvenation model on the active pairs; the reverse direction
/// learns target → source.
pub fn train_rejuvenator(
    active: &ParallelCorpus,
    valid: &ParallelCorpus,
    direction: Direction,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<(Seq2SeqModel, TrainingLog)> {
    if active.is_empty() {
        return Err(Error::Precondition(
            "rejuvenator needs a non-empty active corpus".into(),
        ));
    }
    let (tr, va) = match direction {
        Direction::Forward => (active.clone(), valid.clone()),
        Direction::Reverse => (active.swapped(), valid.swapped()),
    };
    let init = Seq2SeqModel::init_for_corpus(model_cfg, &tr)?;
    train(&init, &tr, &va, train_cfg)
}

/// Decodes `src`, retrying greedily on an empty output. `None` means both
/// attempts came back empty.
fn regenerate(model: &Seq2SeqModel, src: &[String], cfg: &DecodeConfig) -> Result<Option<Vec<String>>> {
    let d = decode(model, src, cfg)?;
    if !d.is_empty() {
        return Ok(Some(d.tokens));
    }
    let g = greedy_decode(model, src, cfg)?;
    Ok((!g.is_empty()).then_some(g.tokens))
}

fn rejuvenate(
    model: &Seq2SeqModel,
    pairs: &ParallelCorpus,
    cfg: &DecodeConfig,
    side: Side,
) -> Result<RejuvenatedCorpus> {
    use rayon::prelude::*;
    let provenance = match side {
        Side::Ft => PROVENANCE_FT,
        Side::Bt => PROVENANCE_BT,
    };
    let out: Vec<SentencePair> = pairs
        .pairs
        .par_iter()
        .map(|p| {
            let input = match side {
                Side::Ft => &p.src,
                Side::Bt => &p.tgt,
            };
            let mut q = p.clone();
            match regenerate(model, input, cfg)? {
                Some(tokens) => match side {
                    Side::Ft => q.tgt = tokens,
                    Side::Bt => q.src = tokens,
                },
                None => {
                    q.meta.insert(META_REJUVENATION.into(), "failed".into());
                }
            }
            q.meta.insert(META_PROVENANCE.into(), provenance.into());
            Ok(q)
        })
        .collect::<Result<_>>()?;
    Ok(RejuvenatedCorpus {
        pairs: out.into_iter().map(|p| (p.id, p)).collect(),
        side,
        model_hash: model.content_hash(),
    })
}

/// Replaces each target with the forward model's translation of the source.
pub fn forward_translate(
    model: &Seq2SeqModel,
    pairs: &ParallelCorpus,
    cfg: &DecodeConfig,
) -> Result<RejuvenatedCorpus> {
    rejuvenate(model, pairs, cfg, Side::Ft)
}

/// Replaces each source with the reverse model's translation of the target.
pub fn back_translate(model: &Seq2SeqModel, pairs: &ParallelCorpus, cfg: &DecodeConfig) -> Result<RejuvenatedCorpus> {
    rejuvenate(model, pairs, cfg, Side::Bt)
}

fn tag_original(p: &SentencePair) -> SentencePair {
    let mut q = p.clone();
    q.meta
        .entry(META_PROVENANCE.into())
        .or_insert_with(|| PROVENANCE_ORIGINAL.into());
    q
}

/// Builds a final training set. Active pairs come first in their corpus
/// order, then rejuvenated pairs by original id (FT before BT under
/// `Both`). Ids are renumbered `0..len`; the source id is kept in meta
/// `orig_id`.
pub fn compose(
    active: &ParallelCorpus,
    inactive_ids: &[u64],
    rejuvenated: &[&RejuvenatedCorpus],
    strategy: Strategy,
) -> Result<ParallelCorpus> {
    let wanted: &[Side] = match strategy {
        Strategy::RemoveOnly => &[],
        Strategy::Ft => &[Side::Ft],
        Strategy::Bt => &[Side::Bt],
        Strategy::Both => &[Side::Ft, Side::Bt],
        Strategy::Diversify => {
            return Err(Error::Config(
                "diversify builds its corpus with `diversify`, not `compose`".into(),
            ))
        }
    };
    let active_ids: std::collections::BTreeSet<u64> = active.ids().into_iter().collect();
    if let Some(id) = inactive_ids.iter().find(|id| active_ids.contains(id)) {
        return Err(Error::Universe(format!("id {id} is both active and inactive")));
    }
    let mut out: Vec<SentencePair> = active.iter().map(tag_original).collect();
    for &side in wanted {
        let set = rejuvenated
            .iter()
            .find(|r| r.side == side)
            .ok_or_else(|| Error::Config(format!("strategy {strategy:?} needs a {side:?} rejuvenated set")))?;
        let mut ids = inactive_ids.to_vec();
        ids.sort_unstable();
        for id in ids {
            out.push(set.pairs.get(&id).ok_or(Error::MissingId(id))?.clone());
        }
    }
    Ok(renumber(out))
}

fn renumber(pairs: Vec<SentencePair>) -> ParallelCorpus {
    pairs
        .into_iter()
        .enumerate()
        .map(|(i, mut p)| {
            p.meta.entry("orig_id".into()).or_insert_with(|| p.id.to_string());
            p.id = i as u64;
            p
        })
        .collect()
}

/// Original corpus plus a forward-translated and a back-translated copy of
/// every pair (3N pairs), renumbered densely.
pub fn diversify(
    corpus: &ParallelCorpus,
    forward: &Seq2SeqModel,
    reverse: &Seq2SeqModel,
    cfg: &DecodeConfig,
) -> Result<ParallelCorpus> {
    let ft = forward_translate(forward, corpus, cfg)?;
    let bt = back_translate(reverse, corpus, cfg)?;
    let mut out: Vec<SentencePair> = corpus.iter().map(tag_original).collect();
    out.extend(corpus.iter().map(|p| ft.pairs[&p.id].clone()));
    out.extend(corpus.iter().map(|p| bt.pairs[&p.id].clone()));
    Ok(renumber(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{gen_synthetic, SyntheticSpec};
    use crate::nnet::Attention;

    fn tiny_model(c: &ParallelCorpus) -> Seq2SeqModel {
        let cfg = ModelConfig {
            emb_dim: 4,
            hidden_dim: 6,
            attention: Attention::Dot,
            ..Default::default()
        };
        Seq2SeqModel::init_for_corpus(&cfg, c).unwrap()
    }

    fn corpus(n: u64) -> ParallelCorpus {
        gen_synthetic(&SyntheticSpec {
            num_pairs: n as usize,
            vocab_size: 8,
            seed: 2,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn sides_are_preserved() {
        let c = corpus(12);
        let m = tiny_model(&c);
        let rev = tiny_model(&c.swapped());
        let ft = forward_translate(&m, &c, &DecodeConfig::beam(3)).unwrap();
        let bt = back_translate(&rev, &c, &DecodeConfig::beam(3)).unwrap();
        for p in c.iter() {
            assert_eq!(ft.pairs[&p.id].src, p.src);
            assert_eq!(bt.pairs[&p.id].tgt, p.tgt);
            assert_eq!(ft.pairs[&p.id].meta[META_PROVENANCE], PROVENANCE_FT);
            assert!(!ft.pairs[&p.id].tgt.is_empty());
        }
        assert!(
            forward_translate(&m, &ParallelCorpus::default(), &DecodeConfig::greedy())
                .unwrap()
                .is_empty()
        );
    }

    #[test]
    fn failed_decodes_keep_the_original() {
        let c = corpus(5);
        let mut m = tiny_model(&c);
        m.params[m.layout.out_b.offset + crate::corpus::EOS as usize] = 100.0;
        let ft = forward_translate(&m, &c, &DecodeConfig::default()).unwrap();
        assert_eq!(ft.failures(), 5);
        for p in c.iter() {
            assert_eq!(ft.pairs[&p.id].tgt, p.tgt);
        }
    }

    fn fake_set(c: &ParallelCorpus, side: Side) -> RejuvenatedCorpus {
        RejuvenatedCorpus {
            pairs: c
                .iter()
                .map(|p| (p.id, p.clone().with_meta(META_PROVENANCE, "x")))
                .collect(),
            side,
            model_hash: "h".into(),
        }
    }

    #[test]
    fn compose_sizes() {
        let c = corpus(1000);
        let inactive: Vec<u64> = (0..100).collect();
        let active = c.subset(&(100..1000).collect::<Vec<u64>>());
        let inact = c.subset(&inactive);
        let ft = fake_set(&inact, Side::Ft);
        let bt = fake_set(&inact, Side::Bt);
        assert_eq!(
            compose(&active, &inactive, &[], Strategy::RemoveOnly).unwrap().len(),
            900
        );
        let out = compose(&active, &inactive, &[&ft], Strategy::Ft).unwrap();
        assert_eq!(out.len(), 1000);
        assert_eq!(out.ids(), (0..1000).collect::<Vec<u64>>());
        assert_eq!(
            compose(&active, &inactive, &[&ft, &bt], Strategy::Both).unwrap().len(),
            1100
        );
        assert!(compose(&active, &inactive, &[&ft], Strategy::Bt).is_err());
        let missing = fake_set(&c.subset(&[0u64, 1]), Side::Ft);
        assert!(matches!(
            compose(&active, &inactive, &[&missing], Strategy::Ft),
            Err(Error::MissingId(2))
        ));
    }

    #[test]
    fn compose_ft_preserves_active_content() {
        let c = corpus(50);
        let inactive: Vec<u64> = vec![3, 7, 11];
        let active_ids: Vec<u64> = c.ids().into_iter().filter(|i| !inactive.contains(i)).collect();
        let active = c.subset(&active_ids);
        let ft = fake_set(&c.subset(&inactive), Side::Ft);
        let out = compose(&active, &inactive, &[&ft], Strategy::Ft).unwrap();
        let mut orig: Vec<String> = out.iter().map(|p| p.meta["orig_id"].clone()).collect();
        orig.sort();
        let mut expect: Vec<String> = c.ids().iter().map(u64::to_string).collect();
        expect.sort();
        assert_eq!(orig, expect);
        for p in out.iter().take(active.len()) {
            let src = &c.pairs[c.index()[&p.meta["orig_id"].parse::<u64>().unwrap()]];
            assert_eq!((&p.src, &p.tgt), (&src.src, &src.tgt));
        }
    }

    #[test]
    fn diversify_triples_and_keeps_originals() {
        let c = corpus(10);
        let m = tiny_model(&c);
        let rev = tiny_model(&c.swapped());
        let cfg = DecodeConfig::greedy();
        let d = diversify(&c, &m, &rev, &cfg).unwrap();
        assert_eq!(d.len(), 30);
        let ft = forward_translate(&m, &c, &cfg).unwrap();
        for (i, p) in c.iter().enumerate() {
            assert_eq!((&d.pairs[i].src, &d.pairs[i].tgt), (&p.src, &p.tgt));
            assert_eq!(d.pairs[10 + i].tgt, ft.pairs[&p.id].tgt);
        }
    }

    #[test]
    fn save_and_load() {
        let c = corpus(6);
        let m = tiny_model(&c);
        let ft = forward_translate(&m, &c, &DecodeConfig::greedy()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ft.save(dir.path(), "ft").unwrap();
        assert_eq!(RejuvenatedCorpus::load(dir.path(), "ft").unwrap(), ft);
    }

    #[test]
    fn strategy_parses() {
        assert_eq!("remove-only".parse::<Strategy>().unwrap(), Strategy::RemoveOnly);
        assert_eq!("both".parse::<Strategy>().unwrap(), Strategy::Both);
        assert!("nope".parse::<Strategy>().is_err());
    }
}
