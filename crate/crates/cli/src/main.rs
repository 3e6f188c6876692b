//! `rejuv`: command-line front end for the rejuvenation toolkit.
//!
//! Every subcommand reads an optional JSON pipeline configuration with
//! `--config`; explicit flags override the matching fields. Failures exit
//! nonzero and print one JSON object on stderr.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde_json::json;

use rejuv_core::analysis::{
    bleu, bleu::translate, coverage, frequency_rank, gsnr, margin, paired_bootstrap, train_ibm1, uncertainty,
    MetricsReport,
};
use rejuv_core::corpus::{build_vocab, load_parallel, load_parallel_with_meta, save_parallel};
use rejuv_core::identify::{rank_and_bin, split_inactive, BinPartition, InactiveSplit};
use rejuv_core::inference::{score_corpus_with, DecodeMode, ScoreKind};
use rejuv_core::nnet::checkpoint::{load_checkpoint, save_checkpoint};
use rejuv_core::pipeline::{
    emit_report, materialize, overlap_table, run_pipeline, run_variants, DataSource, Datasets, PipelineConfig,
    ReportFormat, StageConfig, VariantAxis, ROLE_FINAL, ROLE_IDENTIFY,
};
use rejuv_core::rejuvenate::{
    back_translate, compose, forward_translate, train_rejuvenator, Direction, RejuvenatedCorpus, Side,
};
use rejuv_core::{CellKind, DecodeConfig, ParallelCorpus, Strategy};

#[derive(Parser)]
#[command(
    name = "rejuv",
    version,
    about = "Identify, rejuvenate and retrain on inactive training pairs"
)]
struct Cli {
    /// JSON pipeline configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus and write train/valid/test files.
    Gen(GenArgs),
    /// Train a translation model.
    Train(TrainArgs),
    /// Score every pair of a corpus with a trained model.
    Score(ScoreArgs),
    /// Rank scores into equal bins.
    Bin(BinArgs),
    /// Label the lowest-scoring pairs inactive.
    Split(SplitArgs),
    /// Re-translate the inactive pairs of a split.
    Rejuvenate(RejuvenateArgs),
    /// Build the final training set from active and rejuvenated pairs.
    Compose(ComposeArgs),
    /// Test BLEU, optionally with a paired bootstrap against a baseline.
    Evaluate(EvaluateArgs),
    /// Corpus properties of the inactive and active subsets, and model margin/GSNR.
    Analyze(AnalyzeArgs),
    /// Per-bin overlap of identifiers along one axis, or of given partitions.
    Overlap(OverlapArgs),
    /// Run every phase end to end.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct CorpusArgs {
    #[arg(long)]
    src: PathBuf,
    #[arg(long)]
    tgt: PathBuf,
    /// Sidecar with ids and tags (`id<TAB>k=v;...`).
    #[arg(long)]
    meta: Option<PathBuf>,
}

impl CorpusArgs {
    fn load(&self) -> anyhow::Result<ParallelCorpus> {
        load_corpus(&self.src, &self.tgt, self.meta.as_deref())
    }
}

fn load_corpus(src: &Path, tgt: &Path, meta: Option<&Path>) -> anyhow::Result<ParallelCorpus> {
    Ok(match meta {
        Some(m) => load_parallel_with_meta(src, tgt, m)?,
        None => load_parallel(src, tgt)?,
    })
}

#[derive(Args, Default)]
struct StageFlags {
    /// Configuration section to start from: identify, rejuvenate or final.
    #[arg(long, default_value = "identify")]
    role: String,
    #[arg(long)]
    cell: Option<String>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    emb: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    clip: Option<f64>,
    #[arg(long)]
    eval_interval: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    /// Seed for both initialization and batch order.
    #[arg(long)]
    seed: Option<u64>,
}

impl StageFlags {
    fn resolve(&self, cfg: &PipelineConfig) -> anyhow::Result<StageConfig> {
        let mut s = match self.role.as_str() {
            "identify" => cfg.identify.clone(),
            "rejuvenate" => cfg.rejuvenate.clone(),
            "final" => cfg.final_stage.clone(),
            other => bail!("unknown role {other:?}; expected identify, rejuvenate or final"),
        };
        if let Some(c) = &self.cell {
            s.model.cell = parse_enum::<CellKind>(c, "cell")?;
        }
        set(&mut s.model.hidden_dim, self.hidden);
        set(&mut s.model.emb_dim, self.emb);
        set(&mut s.model.enc_layers, self.layers);
        set(&mut s.train.lr, self.lr);
        set(&mut s.train.max_steps, self.steps);
        set(&mut s.train.batch_size, self.batch);
        set(&mut s.train.clip, self.clip);
        set(&mut s.train.eval_interval, self.eval_interval);
        set(&mut s.train.patience, self.patience);
        if let Some(seed) = self.seed {
            s.model.seed = seed;
            s.train.seed = seed;
        }
        s.model.validate()?;
        s.train.validate()?;
        Ok(s)
    }
}

#[derive(Args)]
struct DecodeFlags {
    /// Beam width; 1 decodes greedily.
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long)]
    greedy: bool,
    /// Maximum decoder steps including EOS.
    #[arg(long)]
    max_len: Option<usize>,
}

impl DecodeFlags {
    fn resolve(&self, base: &DecodeConfig) -> anyhow::Result<DecodeConfig> {
        let mut d = base.clone();
        if let Some(b) = self.beam {
            d = DecodeConfig {
                max_len: d.max_len,
                ..DecodeConfig::beam(b)
            };
        }
        if self.greedy {
            d.mode = DecodeMode::Greedy;
        }
        if self.max_len.is_some() {
            d.max_len = self.max_len;
        }
        d.validate()?;
        Ok(d)
    }
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    pairs: Option<usize>,
    #[arg(long)]
    vocab: Option<usize>,
    #[arg(long)]
    hard_fraction: Option<f64>,
    #[arg(long)]
    rare_prob: Option<f64>,
    #[arg(long)]
    zipf: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    split_seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    valid_src: PathBuf,
    #[arg(long)]
    valid_tgt: PathBuf,
    /// Checkpoint path; the log and learning curve are written beside it.
    #[arg(long)]
    out: PathBuf,
    /// Train target → source.
    #[arg(long)]
    reverse: bool,
    #[command(flatten)]
    stage: StageFlags,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    out: PathBuf,
    /// Plain product of token probabilities instead of the geometric mean.
    #[arg(long)]
    raw_product: bool,
}

#[derive(Args)]
struct BinArgs {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    scores: PathBuf,
    /// Percent of pairs labelled inactive.
    #[arg(long)]
    ratio: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RejuvenateArgs {
    /// Forward model for `ft`, reverse model for `bt`.
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    split: PathBuf,
    /// ft regenerates targets, bt regenerates sources.
    #[arg(long, default_value = "ft")]
    side: String,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    decode: DecodeFlags,
}

#[derive(Args)]
struct ComposeArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    split: PathBuf,
    /// Directory holding `ft.*` and/or `bt.*` from `rejuvenate`.
    #[arg(long)]
    rejuvenated: Option<PathBuf>,
    #[arg(long)]
    strategy: Option<String>,
    /// Output prefix; writes `.src`, `.tgt` and `.meta`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Baseline model for the paired bootstrap.
    #[arg(long)]
    baseline: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    resamples: usize,
    #[arg(long, default_value_t = 1)]
    bootstrap_seed: u64,
    #[command(flatten)]
    decode: DecodeFlags,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Full training corpus.
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    split: Option<PathBuf>,
    /// Model for margin and GSNR.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    ibm1_iters: Option<usize>,
    #[arg(long)]
    gsnr_sample: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OverlapArgs {
    /// seed, capacity or architecture; trains one identifier per value.
    #[arg(long, requires = "values")]
    axis: Option<String>,
    #[arg(long, value_delimiter = ',')]
    values: Vec<String>,
    /// Compare existing partition files instead of training.
    #[arg(long, num_args = 2.., conflicts_with = "axis")]
    partitions: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    ratio: Option<f64>,
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    direction: Option<String>,
    #[arg(long)]
    speedup: bool,
    /// Use the built-in reference configuration as the base.
    #[arg(long)]
    reference: bool,
    /// Also write the report in this format to `--report-dir`.
    #[arg(long, requires = "report_dir")]
    report_format: Option<String>,
    #[arg(long)]
    report_dir: Option<PathBuf>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn parse_enum<T: DeserializeOwned>(s: &str, what: &str) -> anyhow::Result<T> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| anyhow!("unknown {what} {s:?}"))
}

fn load_config(path: Option<&Path>) -> anyhow::Result<PipelineConfig> {
    match path {
        None => Ok(PipelineConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            Ok(serde_json::from_str(&text).map_err(rejuv_core::Error::from)?)
        }
    }
}

fn write_json(value: &serde_json::Value, out: Option<&Path>) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn side_stem(side: Side) -> &'static str {
    match side {
        Side::Ft => "ft",
        Side::Bt => "bt",
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Gen(a) => {
            let DataSource::Synthetic { spec, split_seed, .. } = &mut cfg.data else {
                bail!("gen needs a synthetic data source in the configuration");
            };
            set(&mut spec.num_pairs, a.pairs);
            set(&mut spec.vocab_size, a.vocab);
            set(&mut spec.hard_fraction, a.hard_fraction);
            set(&mut spec.rare_prob, a.rare_prob);
            set(&mut spec.zipf_exponent, a.zipf);
            set(&mut spec.seed, a.seed);
            set(split_seed, a.split_seed);
            let Datasets {
                train: tr,
                valid: va,
                test: te,
            } = materialize(&cfg.data)?;
            std::fs::create_dir_all(&a.out_dir)?;
            for (name, c) in [("train", &tr), ("valid", &va), ("test", &te)] {
                let p = |e: &str| a.out_dir.join(format!("{name}.{e}"));
                save_parallel(c, p("src"), p("tgt"), Some(&p("meta")))?;
            }
            write_json(&json!({"train": tr.len(), "valid": va.len(), "test": te.len()}), None)
        }
        Command::Train(a) => {
            let stage = a.stage.resolve(&cfg)?;
            let train_c = a.corpus.load()?;
            let valid = load_parallel(&a.valid_src, &a.valid_tgt)?;
            let direction = if a.reverse {
                Direction::Reverse
            } else {
                Direction::Forward
            };
            let (model, log) = train_rejuvenator(&train_c, &valid, direction, &stage.model, &stage.train)?;
            save_checkpoint(&model, &a.out)?;
            let log_path = a.out.with_extension("log.json");
            std::fs::write(&log_path, serde_json::to_string(&log)?)?;
            std::fs::write(a.out.with_extension("curve.csv"), log.learning_curve_csv())?;
            write_json(
                &json!({
                    "checkpoint": a.out,
                    "params": model.num_params(),
                    "best_step": log.best_step,
                    "best_valid_ppl": log.best_valid_ppl(),
                }),
                None,
            )
        }
        Command::Score(a) => {
            let model = load_checkpoint(&a.model)?;
            let kind = if a.raw_product {
                ScoreKind::RawProduct
            } else {
                ScoreKind::Normalized
            };
            let scores = score_corpus_with(&model, &a.corpus.load()?, kind)?;
            scores.write(&a.out)?;
            write_json(&json!({"scored": scores.len()}), None)
        }
        Command::Bin(a) => {
            let scores = rejuv_core::ScoredCorpus::read(&a.scores)?;
            let part = rank_and_bin(&scores, a.bins.unwrap_or(cfg.bins))?;
            part.write(&a.out)?;
            let means = part.mean_scores(&scores);
            let rows: Vec<_> = (1..=part.num_bins())
                .map(|b| json!({"bin": b, "size": part.bin(b).len(), "mean_score": means[b - 1]}))
                .collect();
            write_json(&json!(rows), None)
        }
        Command::Split(a) => {
            let scores = rejuv_core::ScoredCorpus::read(&a.scores)?;
            let s = split_inactive(&scores, a.ratio.unwrap_or(cfg.ratio))?;
            s.write(&a.out)?;
            write_json(&json!({"inactive": s.inactive.len(), "active": s.active.len()}), None)
        }
        Command::Rejuvenate(a) => {
            let model = load_checkpoint(&a.model)?;
            let corpus = a.corpus.load()?;
            let split = InactiveSplit::read(&a.split)?;
            let inactive = corpus.subset(&split.inactive);
            let decode = a.decode.resolve(&cfg.decode)?;
            let side = parse_enum::<Side>(&a.side, "side")?;
            let rej = match side {
                Side::Ft => forward_translate(&model, &inactive, &decode)?,
                Side::Bt => back_translate(&model, &inactive, &decode)?,
            };
            std::fs::create_dir_all(&a.out_dir)?;
            rej.save(&a.out_dir, side_stem(side))?;
            write_json(&json!({"rejuvenated": rej.len(), "failures": rej.failures()}), None)
        }
        Command::Compose(a) => {
            let strategy = match &a.strategy {
                Some(s) => s.parse::<Strategy>()?,
                None => cfg.strategy,
            };
            let corpus = a.corpus.load()?;
            let split = InactiveSplit::read(&a.split)?;
            let active = corpus.subset(&split.active);
            let inactive_ids: Vec<u64> = split.inactive.iter().copied().collect();
            let mut sets = Vec::new();
            for (needed, side) in [
                (strategy.needs_forward(), Side::Ft),
                (strategy.needs_reverse(), Side::Bt),
            ] {
                if needed && strategy != Strategy::Diversify {
                    let dir = a
                        .rejuvenated
                        .as_ref()
                        .ok_or_else(|| anyhow!("strategy {strategy:?} needs --rejuvenated"))?;
                    sets.push(RejuvenatedCorpus::load(dir, side_stem(side))?);
                }
            }
            let refs: Vec<&RejuvenatedCorpus> = sets.iter().collect();
            let composed = compose(&active, &inactive_ids, &refs, strategy)?;
            let p = |e: &str| PathBuf::from(format!("{}.{e}", a.out.display()));
            save_parallel(&composed, p("src"), p("tgt"), Some(&p("meta")))?;
            write_json(&json!({"pairs": composed.len()}), None)
        }
        Command::Evaluate(a) => {
            let model = load_checkpoint(&a.model)?;
            let test = a.corpus.load()?;
            let decode = a.decode.resolve(&cfg.eval_decode)?;
            let refs: Vec<Vec<String>> = test.iter().map(|p| p.tgt.clone()).collect();
            let hyps = translate(&model, &test, &decode)?;
            let mut report = MetricsReport {
                bleu: Some(bleu(&hyps, &refs)?),
                ..Default::default()
            };
            let mut baseline_bleu = None;
            if let Some(b) = &a.baseline {
                let base = translate(&load_checkpoint(b)?, &test, &decode)?;
                baseline_bleu = Some(bleu(&base, &refs)?);
                report.bootstrap_p = Some(paired_bootstrap(&base, &hyps, &refs, a.resamples, a.bootstrap_seed)?);
            }
            let mut value = serde_json::to_value(&report)?;
            if let Some(b) = baseline_bleu {
                value["baseline_bleu"] = json!(b);
            }
            write_json(&value, a.out.as_deref())
        }
        Command::Analyze(a) => {
            let train_c = a.corpus.load()?;
            let align = train_ibm1(&train_c, a.ibm1_iters.unwrap_or(cfg.analysis.ibm1_iters))?;
            let vocab = build_vocab(&train_c, rejuv_core::corpus::Side::Target, usize::MAX, 1)?;
            let props = |c: &ParallelCorpus| -> anyhow::Result<MetricsReport> {
                Ok(MetricsReport {
                    frequency_rank: Some(frequency_rank(c, &vocab)?),
                    coverage: Some(coverage(c, &align)?),
                    uncertainty: Some(uncertainty(c, &align)?),
                    ..Default::default()
                })
            };
            let mut out = serde_json::Map::new();
            out.insert("all".into(), serde_json::to_value(props(&train_c)?)?);
            if let Some(s) = &a.split {
                let split = InactiveSplit::read(s)?;
                out.insert(
                    "inactive".into(),
                    serde_json::to_value(props(&train_c.subset(&split.inactive))?)?,
                );
                out.insert(
                    "active".into(),
                    serde_json::to_value(props(&train_c.subset(&split.active))?)?,
                );
            }
            if let Some(m) = &a.model {
                let model = load_checkpoint(m)?;
                let n = a.gsnr_sample.unwrap_or(cfg.analysis.gsnr_sample).max(2);
                let sample = train_c.subset(&train_c.ids().into_iter().take(n).collect::<Vec<_>>());
                let report = MetricsReport {
                    margin: Some(margin(&model, &train_c)?),
                    gsnr: Some(gsnr(&model, &sample)?),
                    ..Default::default()
                };
                out.insert("model".into(), serde_json::to_value(report)?);
            }
            write_json(&serde_json::Value::Object(out), a.out.as_deref())
        }
        Command::Overlap(a) => {
            let report = if let Some(axis) = &a.axis {
                let axis: VariantAxis = axis.parse()?;
                run_variants(&cfg, axis, &a.values)?
            } else {
                if a.partitions.len() < 2 {
                    bail!("overlap needs --axis with --values, or at least two --partitions");
                }
                let parts = a
                    .partitions
                    .iter()
                    .map(BinPartition::read)
                    .collect::<Result<Vec<_>, _>>()?;
                let names: Vec<String> = a.partitions.iter().map(|p| p.display().to_string()).collect();
                overlap_table(VariantAxis::Seed, &names, parts)?
            };
            let csv = report.to_csv();
            match &a.out {
                Some(p) => std::fs::write(p, csv)?,
                None => print!("{csv}"),
            }
            Ok(())
        }
        Command::Pipeline(a) => {
            if a.reference {
                if cli.config.is_some() {
                    bail!("--reference and --config are mutually exclusive");
                }
                cfg = PipelineConfig::reference(1, "run");
            }
            set(&mut cfg.out_dir, a.out_dir);
            set(&mut cfg.seed, a.seed);
            set(&mut cfg.ratio, a.ratio);
            set(&mut cfg.bins, a.bins);
            if let Some(s) = &a.strategy {
                cfg.strategy = s.parse()?;
            }
            if let Some(d) = &a.direction {
                cfg.direction = parse_enum(d, "direction")?;
            }
            cfg.speedup |= a.speedup;
            let manifest = run_pipeline(&cfg)?;
            if let (Some(fmt), Some(dir)) = (&a.report_format, &a.report_dir) {
                emit_report(&manifest, parse_enum::<ReportFormat>(fmt, "report format")?, dir)?;
            }
            let report = manifest.report.as_ref().expect("complete run has a report");
            write_json(
                &json!({
                    "out_dir": cfg.out_dir,
                    "trained_models": manifest.trained_models,
                    "skipped_phases": manifest.phases.iter().filter(|p| p.skipped).map(|p| &p.name).collect::<Vec<_>>(),
                    "seconds": manifest.total_seconds(),
                    "final_bleu": report.final_metrics.bleu,
                    "baseline_bleu": report.baseline.as_ref().and_then(|b| b.bleu),
                    "final_train_pairs": report.final_train_pairs,
                    "checkpoints": {
                        "identify": manifest.checkpoints.get(ROLE_IDENTIFY),
                        "final": manifest.checkpoints.get(ROLE_FINAL),
                    },
                }),
                None,
            )
        }
    }
}

fn error_line(err: &anyhow::Error) -> String {
    let kind = err
        .chain()
        .find_map(|e| e.downcast_ref::<rejuv_core::Error>())
        .map_or("cli", |e| e.kind());
    json!({"error": {"kind": kind, "message": format!("{err:#}")}}).to_string()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            eprintln!(
                "{}",
                json!({"error": {"kind": "usage", "message": e.to_string().trim()}})
            );
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::FAILURE
        }
    }
}
