//! Paired bootstrap resampling over test sentences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::bleu::{corpus_stats, BleuStats};
use crate::error::{Error, Result};

/// Fraction of `resamples` seeded resamples (with replacement) in which
/// system B's BLEU is at least system A's.
pub fn paired_bootstrap<S: AsRef<str>>(
    cand_a: &[Vec<S>],
    cand_b: &[Vec<S>],
    refs: &[Vec<S>],
    resamples: usize,
    seed: u64,
) -> Result<f64> {
    if resamples == 0 {
        return Err(Error::Precondition("bootstrap needs at least one resample".into()));
    }
    let a = corpus_stats(cand_a, refs)?;
    let b = corpus_stats(cand_b, refs)?;
    let n = a.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut wins = 0usize;
    for _ in 0..resamples {
        let mut sa = BleuStats::default();
        let mut sb = BleuStats::default();
        for _ in 0..n {
            let i = rng.gen_range(0..n);
            sa += a[i];
            sb += b[i];
        }
        if sb.score() >= sa.score() {
            wins += 1;
        }
    }
    Ok(wins as f64 / resamples as f64)
}
