//! Binary checkpoint format.
//!
//! Layout, all integers little-endian:
//! `"RJV1"`, `u32` version, `u32` length + config JSON, source and target
//! vocabularies (`u32` count, then per entry `u32` length + UTF-8 token and
//! `u64` frequency, reserved symbols excluded), `u64` parameter count, then
//! the parameters as `f64`.

use std::path::Path;

use super::{ModelConfig, Seq2SeqModel};
use crate::corpus::{Vocabulary, RESERVED};
use crate::error::{Error, IoContext, Result};

const MAGIC: &[u8; 4] = b"RJV1";
pub const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    put_u32(out, b.len() as u32);
    out.extend_from_slice(b);
}

fn put_vocab(out: &mut Vec<u8>, v: &Vocabulary) {
    let skip = RESERVED.len();
    put_u32(out, (v.len() - skip) as u32);
    for (t, f) in v.tokens()[skip..].iter().zip(&v.freqs()[skip..]) {
        put_bytes(out, t.as_bytes());
        out.extend_from_slice(&f.to_le_bytes());
    }
}

pub fn to_bytes(model: &Seq2SeqModel) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + model.params.len() * 8);
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    let cfg = serde_json::to_vec(&model.config).expect("config serializes");
    put_bytes(&mut out, &cfg);
    put_vocab(&mut out, &model.src_vocab);
    put_vocab(&mut out, &model.tgt_vocab);
    out.extend_from_slice(&(model.params.len() as u64).to_le_bytes());
    for p in &model.params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    fn vocab(&mut self) -> Result<Vocabulary> {
        let n = self.u32()? as usize;
        let mut entries = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let t = std::str::from_utf8(self.bytes()?)
                .map_err(|e| Error::Format(format!("vocabulary token: {e}")))?
                .to_string();
            entries.push((t, self.u64()?));
        }
        Vocabulary::from_entries(entries)
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<Seq2SeqModel> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4).ok() != Some(&MAGIC[..]) {
        return Err(Error::Format("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Version {
            found: version,
            expected: VERSION,
        });
    }
    let config: ModelConfig = serde_json::from_slice(r.bytes()?).map_err(|e| Error::Format(format!("config: {e}")))?;
    let src_vocab = r.vocab()?;
    let tgt_vocab = r.vocab()?;
    let n = r.u64()? as usize;
    let raw = r.take(
        n.checked_mul(8)
            .ok_or_else(|| Error::Format("parameter count overflow".into()))?,
    )?;
    if r.pos != buf.len() {
        return Err(Error::Format(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    let mut model = Seq2SeqModel::init(&config, src_vocab, tgt_vocab)?;
    if model.params.len() != n {
        return Err(Error::Format(format!(
            "parameter count {n} does not match architecture ({})",
            model.params.len()
        )));
    }
    for (p, chunk) in model.params.iter_mut().zip(raw.chunks_exact(8)) {
        *p = f64::from_le_bytes(chunk.try_into().unwrap());
    }
    Ok(model)
}

pub fn save_checkpoint(model: &Seq2SeqModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_bytes(model)).at(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Seq2SeqModel> {
    let path = path.as_ref();
    from_bytes(&std::fs::read(path).at(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ParallelCorpus;
    use crate::corpus::SentencePair;
    use crate::nnet::{Attention, CellKind};

    fn model(cell: CellKind) -> Seq2SeqModel {
        let c: ParallelCorpus = [
            SentencePair::from_text(0, "s1 s2 s2", "t1 t2"),
            SentencePair::from_text(1, "s3 s1", "t3 t3 t1"),
        ]
        .into_iter()
        .collect();
        let cfg = ModelConfig {
            cell,
            emb_dim: 4,
            hidden_dim: 6,
            enc_layers: 2,
            attention: Attention::Dot,
            seed: 9,
            ..Default::default()
        };
        Seq2SeqModel::init_for_corpus(&cfg, &c).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for cell in [CellKind::Lstm, CellKind::Gru] {
            let m = model(cell);
            let back = from_bytes(&to_bytes(&m)).unwrap();
            assert_eq!(back, m);
            assert_eq!(back.content_hash(), m.content_hash());
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = model(CellKind::Lstm);
        save_checkpoint(&m, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), m);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = to_bytes(&model(CellKind::Lstm));
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(from_bytes(&bad_magic), Err(Error::Format(_))));
        assert!(matches!(from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Format(_))));
        let mut bad_version = bytes.clone();
        bad_version[4] = 7;
        assert!(matches!(
            from_bytes(&bad_version),
            Err(Error::Version { found: 7, expected: 1 })
        ));
        let mut trailing = bytes;
        trailing.push(0);
        assert!(matches!(from_bytes(&trailing), Err(Error::Format(_))));
    }
}
