//! Oracles that need a trained model or a full synthetic corpus.

use std::sync::OnceLock;

use crate::analysis::{attribute_ratio_per_bin, coverage, train_ibm1, uncertainty};
use crate::corpus::{gen_synthetic, split, META_GOLD_CLASS};
use crate::identify::{rank_and_bin, split_inactive};
use crate::inference::{decode, forward_logprobs, score_corpus};
use crate::nnet::checkpoint::{from_bytes, to_bytes};
use crate::nnet::{train, LrSchedule};
use crate::pipeline::{materialize, PipelineConfig};
use crate::rejuvenate::{back_translate, diversify, forward_translate, train_rejuvenator, Direction};
use crate::{DecodeConfig, ModelConfig, ParallelCorpus, SentencePair, Seq2SeqModel, SyntheticSpec, TrainConfig};

fn model_cfg() -> ModelConfig {
    ModelConfig {
        emb_dim: 16,
        hidden_dim: 32,
        init_scale: 0.3,
        seed: 2,
        ..Default::default()
    }
}

fn train_cfg(steps: usize) -> TrainConfig {
    TrainConfig {
        lr: 0.01,
        max_steps: steps,
        eval_interval: 250,
        valid_bleu_sample: 0,
        schedule: LrSchedule::Linear,
        seed: 2,
        ..Default::default()
    }
}

fn task(hard_fraction: f64, seed: u64) -> (SyntheticSpec, ParallelCorpus, ParallelCorpus, ParallelCorpus) {
    let spec = SyntheticSpec {
        num_pairs: 2500,
        vocab_size: 50,
        rare_vocab_size: 50,
        hard_fraction,
        rare_prob: 0.4,
        swap_prob: 0.5,
        seed,
        ..Default::default()
    };
    let (tr, va, te) = split(&gen_synthetic(&spec).unwrap(), (0.8, 0.1, 0.1), seed).unwrap();
    (spec, tr, va, te)
}

fn is_hard(p: &SentencePair) -> bool {
    p.meta.get(META_GOLD_CLASS).map(String::as_str) == Some("hard")
}

struct Lexicon {
    spec: SyntheticSpec,
    test: ParallelCorpus,
    model: Seq2SeqModel,
    best_ppl: f64,
}

/// Forward rejuvenator on the clean lexicon task, trained once.
fn lexicon() -> &'static Lexicon {
    static CELL: OnceLock<Lexicon> = OnceLock::new();
    CELL.get_or_init(|| {
        let (spec, tr, va, test) = task(0.0, 7);
        let (model, log) = train_rejuvenator(&tr, &va, Direction::Forward, &model_cfg(), &train_cfg(2000)).unwrap();
        Lexicon {
            spec,
            test,
            model,
            best_ppl: log.best_valid_ppl().unwrap(),
        }
    })
}

#[test]
fn lexicon_task_reaches_low_perplexity() {
    let ppl = lexicon().best_ppl;
    assert!(ppl <= 1.2, "validation perplexity {ppl}");
}

#[test]
fn lexicon_model_translates_held_out_sources() {
    let lx = lexicon();
    let lex = lx.spec.lexicons();
    let cfg = DecodeConfig::greedy();
    let right = lx
        .test
        .iter()
        .filter(|p| decode(&lx.model, &p.src, &cfg).unwrap().tokens == lex.image(&p.src).unwrap())
        .count();
    assert!(right as f64 >= 0.95 * lx.test.len() as f64, "{right}/{}", lx.test.len());
}

#[test]
fn checkpoint_preserves_log_probs() {
    let m = &lexicon().model;
    let back = from_bytes(&to_bytes(m)).unwrap();
    for p in lexicon().test.iter().take(10) {
        assert_eq!(forward_logprobs(m, p).unwrap(), forward_logprobs(&back, p).unwrap());
    }
}

#[test]
fn forward_copy_of_diversify_is_forward_translation() {
    let lx = lexicon();
    let sample = lx.test.subset(&lx.test.ids()[..20]);
    let cfg = DecodeConfig::greedy();
    let ft = forward_translate(&lx.model, &sample, &cfg).unwrap();
    let div = diversify(&sample, &lx.model, &lx.model, &cfg).unwrap();
    assert_eq!(div.len(), 60);
    let copies: Vec<_> = div.pairs[20..40].iter().map(|p| (&p.src, &p.tgt)).collect();
    let expected: Vec<_> = ft.pairs.values().map(|p| (&p.src, &p.tgt)).collect();
    assert_eq!(copies, expected);
}

#[test]
fn back_translation_recovers_sources_on_identity_task() {
    let (_, tr, va, te) = task(0.0, 9);
    let ident = |c: &ParallelCorpus| -> ParallelCorpus {
        c.iter()
            .map(|p| SentencePair::new(p.id, p.src.clone(), p.src.clone()))
            .collect()
    };
    let (model, _) = train_rejuvenator(
        &ident(&tr),
        &ident(&va),
        Direction::Reverse,
        &model_cfg(),
        &train_cfg(2500),
    )
    .unwrap();
    let test = ident(&te);
    let bt = back_translate(&model, &test, &DecodeConfig::beam(3)).unwrap();
    let same = test.iter().filter(|p| bt.pairs[&p.id].src == p.src).count();
    assert!(same as f64 >= 0.95 * test.len() as f64, "{same}/{}", test.len());
}

#[test]
fn identification_and_rejuvenation_on_planted_corpus() {
    let (spec, tr, va, _) = task(0.3, 11);
    let init = Seq2SeqModel::init_for_corpus(&model_cfg(), &tr).unwrap();
    let (identifier, _) = train(&init, &tr, &va, &train_cfg(1500)).unwrap();
    let scores = score_corpus(&identifier, &tr).unwrap();

    let bins = rank_and_bin(&scores, 10).unwrap();
    let ratios = attribute_ratio_per_bin(&bins, &tr, META_GOLD_CLASS, "hard").unwrap();
    assert!(ratios[0] > 0.3, "bin-1 hard ratio {ratios:?}");

    let split = split_inactive(&scores, 10.0).unwrap();
    let active = tr.subset(&split.active);
    let (rejuvenator, _) = train_rejuvenator(&active, &va, Direction::Forward, &model_cfg(), &train_cfg(1500)).unwrap();
    let hard: Vec<u64> = tr
        .subset(&split.inactive)
        .iter()
        .filter(|p| is_hard(p))
        .map(|p| p.id)
        .collect();
    assert!(!hard.is_empty());
    let rejuvenated = forward_translate(&rejuvenator, &tr.subset(&hard), &DecodeConfig::beam(5)).unwrap();
    let lex = spec.lexicons();
    let simple = rejuvenated
        .pairs
        .values()
        .filter(|p| Some(&p.tgt) == lex.image(&p.src).as_ref())
        .count();
    assert!(simple as f64 >= 0.8 * hard.len() as f64, "{simple}/{}", hard.len());
}

#[test]
fn planted_pairs_have_lower_coverage_and_higher_uncertainty() {
    let data = materialize(&PipelineConfig::reference(1, "").data).unwrap();
    let align = train_ibm1(&data.train, 5).unwrap();
    let part = |hard: bool| {
        let ids: Vec<u64> = data.train.iter().filter(|p| is_hard(p) == hard).map(|p| p.id).collect();
        data.train.subset(&ids)
    };
    let (hard, clean) = (part(true), part(false));
    assert!(coverage(&hard, &align).unwrap() < coverage(&clean, &align).unwrap());
    assert!(uncertainty(&hard, &align).unwrap() > uncertainty(&clean, &align).unwrap());
}
