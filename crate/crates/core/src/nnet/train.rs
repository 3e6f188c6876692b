//! Adam training with gradient-norm clipping, seeded epoch shuffles and
//! best-validation-perplexity model selection.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EncodedPair, Seq2SeqModel};
use crate::analysis::bleu::bleu;
use crate::corpus::ParallelCorpus;
use crate::error::{Error, Result};
use crate::inference::{greedy_decode, DecodeConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Sentences per batch.
    pub batch_size: usize,
    pub max_steps: usize,
    /// Global gradient-norm clip.
    pub clip: f64,
    pub eval_interval: usize,
    /// Evaluations without a validation-perplexity improvement before
    /// stopping; 0 disables early stopping.
    pub patience: usize,
    pub seed: u64,
    /// Validation pairs greedily decoded for BLEU at each evaluation;
    /// 0 skips validation BLEU.
    #[serde(default = "default_bleu_sample")]
    pub valid_bleu_sample: usize,
    #[serde(default)]
    pub schedule: LrSchedule,
}

/// Learning-rate schedule over `max_steps`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Decays linearly from `lr` at step 1 to `lr / max_steps` at the last step.
    Linear,
}

impl LrSchedule {
    pub fn rate(self, lr: f64, step: usize, max_steps: usize) -> f64 {
        match self {
            LrSchedule::Constant => lr,
            LrSchedule::Linear => lr * (max_steps + 1 - step.min(max_steps)) as f64 / max_steps as f64,
        }
    }
}

fn default_bleu_sample() -> usize {
    200
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 32,
            max_steps: 2000,
            clip: 1.0,
            eval_interval: 200,
            patience: 0,
            seed: 1,
            valid_bleu_sample: default_bleu_sample(),
            schedule: LrSchedule::Constant,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.batch_size > 0
            && self.clip > 0.0
            && self.eval_interval > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid training hyperparameters: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: usize,
    /// Mean training loss over the steps since the previous evaluation.
    pub train_loss: f64,
    pub valid_ppl: f64,
    pub valid_bleu: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
    pub best_step: Option<usize>,
}

impl TrainingLog {
    pub fn losses(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.loss).collect()
    }

    pub fn seconds(&self) -> f64 {
        self.steps.iter().map(|s| s.seconds).sum()
    }

    pub fn best_valid_ppl(&self) -> Option<f64> {
        let best = self.best_step?;
        self.evals.iter().find(|e| e.step == best).map(|e| e.valid_ppl)
    }

    /// `step,loss,valid_ppl,valid_bleu`, one row per evaluation.
    pub fn learning_curve_csv(&self) -> String {
        let mut out = String::from("step,loss,valid_ppl,valid_bleu\n");
        for e in &self.evals {
            let bleu = e.valid_bleu.map(|b| format!("{b:.6}")).unwrap_or_default();
            out.push_str(&format!("{},{:.9},{:.9},{}\n", e.step, e.train_loss, e.valid_ppl, bleu));
        }
        out
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + cfg.eps);
        }
    }
}

fn clip_norm(g: &mut [f64], max_norm: f64) {
    let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        g.iter_mut().for_each(|x| *x *= s);
    }
}

pub fn encode_corpus(model: &Seq2SeqModel, corpus: &ParallelCorpus) -> Result<Vec<EncodedPair>> {
    corpus.iter().map(|p| model.encode(p)).collect()
}

fn evaluate(
    model: &Seq2SeqModel,
    valid: &[EncodedPair],
    valid_corpus: &ParallelCorpus,
    cfg: &TrainConfig,
) -> Result<(f64, Option<f64>)> {
    let ppl = model.batch_loss(valid).exp();
    if cfg.valid_bleu_sample == 0 {
        return Ok((ppl, None));
    }
    let dc = DecodeConfig::greedy();
    let sample = &valid_corpus.pairs[..cfg.valid_bleu_sample.min(valid_corpus.len())];
    let mut hyps = Vec::with_capacity(sample.len());
    for p in sample {
        hyps.push(greedy_decode(model, &p.src, &dc)?.tokens);
    }
    let refs: Vec<Vec<String>> = sample.iter().map(|p| p.tgt.clone()).collect();
    Ok((ppl, Some(bleu(&hyps, &refs)?)))
}

/// Trains `model` and returns the checkpoint with the best validation
/// perplexity together with the training log.
pub fn train(
    model: &Seq2SeqModel,
    train_corpus: &ParallelCorpus,
    valid_corpus: &ParallelCorpus,
    cfg: &TrainConfig,
) -> Result<(Seq2SeqModel, TrainingLog)> {
    cfg.validate()?;
    if train_corpus.is_empty() || valid_corpus.is_empty() {
        return Err(Error::Precondition(
            "training and validation corpora must be non-empty".into(),
        ));
    }
    let mut log = TrainingLog::default();
    if cfg.max_steps == 0 {
        return Ok((model.clone(), log));
    }
    let data = encode_corpus(model, train_corpus)?;
    let valid = encode_corpus(model, valid_corpus)?;

    let mut current = model.clone();
    let mut best = model.clone();
    let mut best_ppl = f64::INFINITY;
    let mut stale = 0usize;
    let mut adam = Adam::new(current.params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = data.len();
    let mut batch = Vec::with_capacity(cfg.batch_size);
    let mut since_eval = Vec::new();

    for step in 1..=cfg.max_steps {
        let started = Instant::now();
        batch.clear();
        while batch.len() < cfg.batch_size {
            if cursor == data.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(data[order[cursor]].clone());
            cursor += 1;
            if cursor == data.len() {
                break;
            }
        }
        let mut g = match current.batch_grad(&batch) {
            Ok(g) => g,
            Err(Error::NonFiniteLoss { .. }) => return Err(Error::Diverged { step }),
            Err(e) => return Err(e),
        };
        if !g.loss.is_finite() {
            return Err(Error::Diverged { step });
        }
        clip_norm(&mut g.values, cfg.clip);
        let lr = cfg.schedule.rate(cfg.lr, step, cfg.max_steps);
        adam.update(&mut current.params, &g.values, lr, cfg);
        log.steps.push(StepRecord {
            step,
            loss: g.loss,
            seconds: started.elapsed().as_secs_f64(),
        });
        since_eval.push(g.loss);

        if step % cfg.eval_interval == 0 || step == cfg.max_steps {
            let (ppl, bleu) = evaluate(&current, &valid, valid_corpus, cfg)?;
            if !ppl.is_finite() {
                return Err(Error::Diverged { step });
            }
            log.evals.push(EvalRecord {
                step,
                train_loss: since_eval.iter().sum::<f64>() / since_eval.len() as f64,
                valid_ppl: ppl,
                valid_bleu: bleu,
            });
            since_eval.clear();
            if ppl < best_ppl {
                best_ppl = ppl;
                best.params.copy_from_slice(&current.params);
                log.best_step = Some(step);
                stale = 0;
            } else {
                stale += 1;
                if cfg.patience > 0 && stale >= cfg.patience {
                    break;
                }
            }
        }
    }
    Ok((best, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{gen_synthetic, split, SyntheticSpec};
    use crate::nnet::{Attention, CellKind, ModelConfig};

    fn task(n: usize) -> (ParallelCorpus, ParallelCorpus) {
        let c = gen_synthetic(&SyntheticSpec {
            num_pairs: n,
            vocab_size: 12,
            min_len: 2,
            max_len: 5,
            hard_fraction: 0.0,
            zipf_exponent: 0.0,
            seed: 3,
            ..Default::default()
        })
        .unwrap();
        let (tr, va, _) = split(&c, (0.8, 0.1, 0.1), 1).unwrap();
        (tr, va)
    }

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            cell: CellKind::Lstm,
            emb_dim: 16,
            hidden_dim: 24,
            attention: Attention::Dot,
            ..Default::default()
        }
    }

    #[test]
    fn zero_steps_returns_initial_model() {
        let (tr, va) = task(50);
        let m = Seq2SeqModel::init_for_corpus(&small_cfg(), &tr).unwrap();
        let (out, log) = train(
            &m,
            &tr,
            &va,
            &TrainConfig {
                max_steps: 0,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(out, m);
        assert!(log.steps.is_empty() && log.evals.is_empty());
    }

    #[test]
    fn training_is_deterministic_and_loss_trends_down() {
        let (tr, va) = task(400);
        let m = Seq2SeqModel::init_for_corpus(&small_cfg(), &tr).unwrap();
        let cfg = TrainConfig {
            max_steps: 200,
            batch_size: 16,
            lr: 5e-3,
            eval_interval: 100,
            valid_bleu_sample: 10,
            ..Default::default()
        };
        let (a, log) = train(&m, &tr, &va, &cfg).unwrap();
        let (b, _) = train(&m, &tr, &va, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        let mut first: Vec<f64> = log.losses()[..50].to_vec();
        let mut last: Vec<f64> = log.losses()[150..].to_vec();
        first.sort_by(f64::total_cmp);
        last.sort_by(f64::total_cmp);
        assert!(last[25] < first[25], "median loss {} !< {}", last[25], first[25]);
        assert!(log.steps.windows(2).all(|w| w[0].step < w[1].step));
        assert_eq!(log.evals.len(), 2);
        assert_eq!(log.learning_curve_csv().lines().count(), 3);
    }

    #[test]
    fn linear_schedule_endpoints() {
        let s = LrSchedule::Linear;
        assert_eq!(s.rate(0.5, 1, 4), 0.5);
        assert_eq!(s.rate(0.5, 3, 4), 0.25);
        assert_eq!(s.rate(0.5, 4, 4), 0.125);
        assert_eq!(LrSchedule::Constant.rate(0.5, 4, 4), 0.5);
        let cfg: TrainConfig = serde_json::from_str(r#"{"lr":0.1,"beta1":0.9,"beta2":0.99,"eps":1e-8,"batch_size":4,"max_steps":4,"clip":1.0,"eval_interval":2,"patience":0,"seed":1}"#).unwrap();
        assert_eq!(cfg.schedule, LrSchedule::Constant);
    }

    #[test]
    fn invalid_hyperparameters_rejected() {
        let (tr, va) = task(50);
        let m = Seq2SeqModel::init_for_corpus(&small_cfg(), &tr).unwrap();
        for cfg in [
            TrainConfig {
                clip: 0.0,
                ..Default::default()
            },
            TrainConfig {
                lr: -1.0,
                ..Default::default()
            },
            TrainConfig {
                batch_size: 0,
                ..Default::default()
            },
        ] {
            assert!(matches!(train(&m, &tr, &va, &cfg), Err(Error::Config(_))));
        }
    }

    #[test]
    fn divergence_reports_step() {
        let (tr, va) = task(50);
        let mut m = Seq2SeqModel::init_for_corpus(&small_cfg(), &tr).unwrap();
        let w = m.layout.out_w;
        m.params[w.range()].iter_mut().for_each(|p| *p = f64::NAN);
        match train(
            &m,
            &tr,
            &va,
            &TrainConfig {
                max_steps: 5,
                ..Default::default()
            },
        ) {
            Err(Error::Diverged { step }) => assert_eq!(step, 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
