//! End-to-end orchestration: identify, rejuvenate, retrain, evaluate.
//!
//! Every phase writes its artifacts under the output directory and records
//! their SHA-256 digests in `manifest.json` together with a key derived from
//! the phase's configuration and upstream digests. A re-run skips every
//! phase whose key matches and whose artifacts are intact on disk.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::analysis::bleu::translate;
use crate::analysis::ibm1::train_ibm1;
use crate::analysis::{bleu, coverage, frequency_rank, gsnr, margin, paired_bootstrap, uncertainty, MetricsReport};
use crate::corpus::{
    build_vocab, cleaned, gen_synthetic, load_parallel, load_parallel_with_meta, save_parallel, split, ParallelCorpus,
    Side, SyntheticSpec, META_GOLD_CLASS,
};
use crate::error::{Error, IoContext, Result};
use crate::identify::{
    overlap_ratio, overlap_ratio_pairwise, rank_and_bin, split_inactive, BinPartition, InactiveSplit,
};
use crate::inference::{score_corpus, DecodeConfig, ScoredCorpus};
use crate::nnet::checkpoint::{load_checkpoint, save_checkpoint};
use crate::nnet::{train, CellKind, LrSchedule, ModelConfig, Seq2SeqModel, TrainConfig, TrainingLog};
use crate::rejuvenate::{
    back_translate, compose, diversify, forward_translate, train_rejuvenator, Direction, RejuvenatedCorpus, Strategy,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    /// Generated corpus cut into train/valid/test.
    Synthetic {
        spec: SyntheticSpec,
        #[serde(default = "default_fractions")]
        fractions: (f64, f64, f64),
        #[serde(default)]
        split_seed: u64,
        /// Give valid and test pairs their clean translations, so planted
        /// noise only exists in training data.
        #[serde(default = "yes")]
        clean_eval: bool,
    },
    /// Existing bitext files. `train_meta` optionally carries per-pair tags.
    Files {
        train_src: PathBuf,
        train_tgt: PathBuf,
        #[serde(default)]
        train_meta: Option<PathBuf>,
        valid_src: PathBuf,
        valid_tgt: PathBuf,
        test_src: PathBuf,
        test_tgt: PathBuf,
    },
}

fn yes() -> bool {
    true
}

fn default_fractions() -> (f64, f64, f64) {
    (0.8, 0.1, 0.1)
}

/// Model and optimizer settings of one training role.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub enabled: bool,
    pub ibm1_iters: usize,
    /// Training pairs (lowest ids first) used for GSNR.
    pub gsnr_sample: usize,
    pub bootstrap_resamples: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            ibm1_iters: 5,
            gsnr_sample: 256,
            bootstrap_resamples: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub data: DataSource,
    /// Percent of training pairs labelled inactive.
    pub ratio: f64,
    pub bins: usize,
    pub identify: StageConfig,
    pub rejuvenate: StageConfig,
    #[serde(rename = "final")]
    pub final_stage: StageConfig,
    pub strategy: Strategy,
    /// Reuse the identification model as the rejuvenator.
    pub speedup: bool,
    /// Direction of the identification model.
    pub direction: Direction,
    /// Decoding used to rejuvenate.
    pub decode: DecodeConfig,
    /// Decoding used for test BLEU.
    pub eval_decode: DecodeConfig,
    /// Master seed; every role derives its own seed from it.
    pub seed: u64,
    pub analysis: AnalysisConfig,
    pub out_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            data: DataSource::Synthetic {
                spec: SyntheticSpec::default(),
                fractions: default_fractions(),
                split_seed: 0,
                clean_eval: true,
            },
            ratio: 10.0,
            bins: 10,
            identify: StageConfig::default(),
            rejuvenate: StageConfig::default(),
            final_stage: StageConfig::default(),
            strategy: Strategy::Ft,
            speedup: false,
            direction: Direction::Forward,
            decode: DecodeConfig::default(),
            eval_decode: DecodeConfig::greedy(),
            seed: 1,
            analysis: AnalysisConfig::default(),
            out_dir: PathBuf::from("run"),
        }
    }
}

/// The reference synthetic task: 12,500 pairs cut 80/10/10, so 10,000
/// training pairs, with 30% planted hard pairs.
pub fn reference_spec() -> SyntheticSpec {
    SyntheticSpec {
        num_pairs: 12_500,
        vocab_size: 200,
        min_len: 3,
        max_len: 8,
        hard_fraction: 0.3,
        rare_prob: 0.4,
        swap_prob: 0.5,
        rare_vocab_size: 200,
        zipf_exponent: 1.0,
        seed: 1,
    }
}

impl PipelineConfig {
    /// Reference-scale run: hidden size 64 for every role.
    pub fn reference(seed: u64, out_dir: impl Into<PathBuf>) -> Self {
        let stage = StageConfig {
            model: ModelConfig {
                emb_dim: 32,
                hidden_dim: 64,
                // Small initial weights leave attention nearly uniform and
                // training can sit on a unigram plateau for thousands of steps.
                init_scale: 0.3,
                ..Default::default()
            },
            train: TrainConfig {
                lr: 0.01,
                batch_size: 32,
                max_steps: 600,
                eval_interval: 150,
                valid_bleu_sample: 100,
                // A constant rate leaves test BLEU spread over several points
                // across seeds at this budget.
                schedule: LrSchedule::Linear,
                ..Default::default()
            },
        };
        Self {
            data: DataSource::Synthetic {
                spec: reference_spec(),
                fractions: default_fractions(),
                split_seed: 1,
                clean_eval: true,
            },
            identify: stage.clone(),
            rejuvenate: stage.clone(),
            final_stage: stage,
            seed,
            out_dir: out_dir.into(),
            ..Default::default()
        }
    }
}

/// Seed for `role` under master seed `master`.
pub fn derive_seed(master: u64, role: &str) -> u64 {
    let digest = crate::hash_bytes(format!("{master}/{role}").as_bytes());
    u64::from_str_radix(&digest[..16], 16).expect("hex digest")
}

pub const ROLE_IDENTIFY: &str = "identify";
pub const ROLE_FORWARD: &str = "rejuvenate-forward";
pub const ROLE_REVERSE: &str = "rejuvenate-reverse";
pub const ROLE_FINAL: &str = "final";

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ratio > 0.0 && self.ratio < 100.0) {
            return Err(Error::Config(format!("ratio must be in (0, 100), got {}", self.ratio)));
        }
        if self.bins == 0 {
            return Err(Error::Config("bins must be positive".into()));
        }
        if self.speedup {
            let ok = matches!(
                (self.direction, self.strategy),
                (_, Strategy::RemoveOnly) | (Direction::Forward, Strategy::Ft) | (Direction::Reverse, Strategy::Bt)
            );
            if !ok {
                return Err(Error::Config(format!(
                    "speed-up mode reuses the {:?} identifier and cannot serve strategy {:?}",
                    self.direction, self.strategy
                )));
            }
        }
        for s in [&self.identify, &self.rejuvenate, &self.final_stage] {
            s.model.validate()?;
            s.train.validate()?;
        }
        self.decode.validate()?;
        self.eval_decode.validate()
    }

    /// Stage settings for `role` with its derived seed applied to both
    /// initialization and batch order.
    pub fn seeded_stage(&self, role: &str) -> StageConfig {
        let mut s = match role {
            ROLE_IDENTIFY => self.identify.clone(),
            ROLE_FINAL => self.final_stage.clone(),
            _ => self.rejuvenate.clone(),
        };
        let seed = derive_seed(self.seed, role);
        s.model.seed = seed;
        s.train.seed = seed;
        s
    }

    /// Roles of the translation models this configuration trains.
    pub fn trained_roles(&self) -> Vec<String> {
        let mut roles = vec![ROLE_IDENTIFY.to_string()];
        if !self.speedup {
            match self.strategy {
                Strategy::RemoveOnly => {}
                Strategy::Ft => roles.push(ROLE_FORWARD.into()),
                Strategy::Bt => roles.push(ROLE_REVERSE.into()),
                Strategy::Both => roles.extend([ROLE_FORWARD.into(), ROLE_REVERSE.into()]),
                Strategy::Diversify => {
                    if self.direction == Direction::Reverse {
                        roles.push(ROLE_FORWARD.into());
                    }
                    roles.push(ROLE_REVERSE.into());
                }
            }
        }
        roles.push(ROLE_FINAL.into());
        roles
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseStatus {
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub name: String,
    pub key: String,
    pub status: PhaseStatus,
    pub seconds: f64,
    pub skipped: bool,
    /// Artifact path relative to the output directory → SHA-256.
    pub artifacts: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: PipelineConfig,
    pub seeds: BTreeMap<String, u64>,
    pub trained_models: Vec<String>,
    pub phases: Vec<PhaseRecord>,
    /// Role → checkpoint digest.
    pub checkpoints: BTreeMap<String, String>,
    pub report: Option<PipelineReport>,
}

impl RunManifest {
    pub fn phase(&self, name: &str) -> Option<&PhaseRecord> {
        self.phases.iter().find(|p| p.name == name)
    }

    pub fn total_seconds(&self) -> f64 {
        self.phases.iter().map(|p| p.seconds).sum()
    }

    /// Checks that every recorded artifact exists with its recorded digest.
    pub fn verify(&self, out_dir: &Path) -> Result<()> {
        for p in &self.phases {
            for (rel, hash) in &p.artifacts {
                if crate::hash_file(out_dir.join(rel))? != *hash {
                    return Err(Error::Phase {
                        phase: p.name.clone(),
                        msg: format!("artifact {rel} does not match its recorded digest"),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Ok(serde_json::from_str(&std::fs::read_to_string(path).at(path)?)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinRow {
    pub bin: usize,
    pub size: usize,
    pub mean_score: f64,
    /// Fraction of `gold_class=hard` pairs, when every pair is tagged.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub hard_ratio: Option<f64>,
}

/// Deterministic summary of a run; holds no timings.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub train_pairs: usize,
    pub inactive_pairs: usize,
    pub final_train_pairs: usize,
    /// The final model.
    #[serde(rename = "final")]
    pub final_metrics: MetricsReport,
    /// The identification model, as the no-rejuvenation baseline; present
    /// when it translates forward.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub baseline: Option<MetricsReport>,
    pub inactive: MetricsReport,
    pub active: MetricsReport,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rejuvenated_ft: Option<MetricsReport>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rejuvenated_bt: Option<MetricsReport>,
    /// Standard deviation of the training loss over the last 30% of steps.
    pub identify_loss_tail_std: f64,
    pub final_loss_tail_std: f64,
    pub bins: Vec<BinRow>,
}

/// Standard deviation (population) of the last 30% of `losses`.
pub fn tail_std(losses: &[f64]) -> f64 {
    let n = losses.len();
    if n == 0 {
        return 0.0;
    }
    let start = n - (0.3 * n as f64).ceil() as usize;
    let tail = &losses[start.min(n - 1)..];
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;
    (tail.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / tail.len() as f64).sqrt()
}

/// Train/valid/test corpora of a run.
#[derive(Debug, Clone)]
pub struct Datasets {
    pub train: ParallelCorpus,
    pub valid: ParallelCorpus,
    pub test: ParallelCorpus,
}

pub fn materialize(data: &DataSource) -> Result<Datasets> {
    match data {
        DataSource::Synthetic {
            spec,
            fractions,
            split_seed,
            clean_eval,
        } => {
            let c = gen_synthetic(spec)?;
            let (train, valid, test) = split(&c, *fractions, *split_seed)?;
            if *clean_eval {
                return Ok(Datasets {
                    valid: cleaned(spec, &valid),
                    test: cleaned(spec, &test),
                    train,
                });
            }
            Ok(Datasets { train, valid, test })
        }
        DataSource::Files {
            train_src,
            train_tgt,
            train_meta,
            valid_src,
            valid_tgt,
            test_src,
            test_tgt,
        } => Ok(Datasets {
            train: match train_meta {
                Some(m) => load_parallel_with_meta(train_src, train_tgt, m)?,
                None => load_parallel(train_src, train_tgt)?,
            },
            valid: load_parallel(valid_src, valid_tgt)?,
            test: load_parallel(test_src, test_tgt)?,
        }),
    }
}

fn hash_json<T: Serialize>(v: &T) -> String {
    crate::hash_bytes(&serde_json::to_vec(v).expect("serializable"))
}

fn save_log(log: &TrainingLog, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
    let json = dir.join(format!("{stem}.log.json"));
    let csv = dir.join(format!("{stem}.curve.csv"));
    std::fs::write(&json, serde_json::to_string(log)?).at(&json)?;
    std::fs::write(&csv, log.learning_curve_csv()).at(&csv)?;
    Ok(vec![json, csv])
}

fn load_log(dir: &Path, stem: &str) -> Result<TrainingLog> {
    let path = dir.join(format!("{stem}.log.json"));
    Ok(serde_json::from_str(&std::fs::read_to_string(&path).at(&path)?)?)
}

fn load_split(dir: &Path, stem: &str) -> Result<ParallelCorpus> {
    load_parallel_with_meta(
        dir.join(format!("{stem}.src")),
        dir.join(format!("{stem}.tgt")),
        dir.join(format!("{stem}.meta")),
    )
}

fn save_split(c: &ParallelCorpus, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
    let paths: Vec<PathBuf> = ["src", "tgt", "meta"]
        .iter()
        .map(|e| dir.join(format!("{stem}.{e}")))
        .collect();
    save_parallel(c, &paths[0], &paths[1], Some(&paths[2]))?;
    Ok(paths)
}

struct Runner {
    cfg: PipelineConfig,
    out: PathBuf,
    previous: BTreeMap<String, PhaseRecord>,
    manifest: RunManifest,
}

impl Runner {
    fn dir(&self, sub: &str) -> Result<PathBuf> {
        let d = self.out.join(sub);
        std::fs::create_dir_all(&d).at(&d)?;
        Ok(d)
    }

    fn rel(&self, p: &Path) -> String {
        p.strip_prefix(&self.out)
            .unwrap_or(p)
            .to_string_lossy()
            .replace('\\', "/")
    }

    fn artifact_hash(&self, phase: &str, rel: &str) -> String {
        self.manifest
            .phase(phase)
            .and_then(|p| p.artifacts.get(rel))
            .cloned()
            .unwrap_or_default()
    }

    fn intact(&self, rec: &PhaseRecord, key: &str) -> bool {
        rec.status == PhaseStatus::Done
            && rec.key == key
            && rec
                .artifacts
                .iter()
                .all(|(rel, h)| crate::hash_file(self.out.join(rel)).is_ok_and(|x| x == *h))
    }

    fn write_manifest(&self) -> Result<()> {
        let path = self.out.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&self.manifest)? + "\n").at(&path)
    }

    /// Runs `body` unless an intact record with the same key exists.
    fn phase(
        &mut self,
        name: &str,
        key_material: String,
        body: impl FnOnce(&mut Self) -> Result<Vec<PathBuf>>,
    ) -> Result<()> {
        let key = crate::hash_bytes(key_material.as_bytes());
        if let Some(rec) = self.previous.get(name) {
            if self.intact(rec, &key) {
                let mut rec = rec.clone();
                rec.skipped = true;
                rec.seconds = 0.0;
                self.manifest.phases.push(rec);
                return Ok(());
            }
        }
        let started = Instant::now();
        let result = body(self);
        let seconds = started.elapsed().as_secs_f64();
        match result {
            Ok(paths) => {
                let mut artifacts = BTreeMap::new();
                for p in paths {
                    artifacts.insert(self.rel(&p), crate::hash_file(&p)?);
                }
                self.manifest.phases.push(PhaseRecord {
                    name: name.into(),
                    key,
                    status: PhaseStatus::Done,
                    seconds,
                    skipped: false,
                    artifacts,
                    error: None,
                });
                self.write_manifest()
            }
            Err(e) => {
                let msg = e.to_string();
                self.manifest.phases.push(PhaseRecord {
                    name: name.into(),
                    key,
                    status: PhaseStatus::Failed,
                    seconds,
                    skipped: false,
                    artifacts: BTreeMap::new(),
                    error: Some(msg.clone()),
                });
                self.write_manifest()?;
                Err(Error::Phase {
                    phase: name.into(),
                    msg,
                })
            }
        }
    }

    fn train_role(
        &self,
        role: &str,
        corpus: &ParallelCorpus,
        valid: &ParallelCorpus,
        dir: &Path,
    ) -> Result<Vec<PathBuf>> {
        let stage = self.cfg.seeded_stage(role);
        let init = Seq2SeqModel::init_for_corpus(&stage.model, corpus)?;
        let (model, log) = train(&init, corpus, valid, &stage.train)?;
        let ckpt = dir.join(format!("{role}.ckpt"));
        save_checkpoint(&model, &ckpt)?;
        let mut paths = vec![ckpt];
        paths.extend(save_log(&log, dir, role)?);
        Ok(paths)
    }
}

/// Runs (or resumes) the full pipeline in `cfg.out_dir`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunManifest> {
    cfg.validate()?;
    let out = cfg.out_dir.clone();
    std::fs::create_dir_all(&out).at(&out)?;
    let previous = match RunManifest::load(out.join("manifest.json")) {
        Ok(m) => m.phases.into_iter().map(|p| (p.name.clone(), p)).collect(),
        Err(_) => BTreeMap::new(),
    };
    let seeds = [ROLE_IDENTIFY, ROLE_FORWARD, ROLE_REVERSE, ROLE_FINAL]
        .iter()
        .map(|r| (r.to_string(), derive_seed(cfg.seed, r)))
        .collect();
    let mut r = Runner {
        cfg: cfg.clone(),
        out,
        previous,
        manifest: RunManifest {
            config: cfg.clone(),
            seeds,
            trained_models: cfg.trained_roles(),
            phases: Vec::new(),
            checkpoints: BTreeMap::new(),
            report: None,
        },
    };

    // 0. Data.
    r.phase("data", hash_json(&cfg.data), |r| {
        let d = materialize(&r.cfg.data)?;
        let dir = r.dir("data")?;
        let mut paths = save_split(&d.train, &dir, "train")?;
        paths.extend(save_split(&d.valid, &dir, "valid")?);
        paths.extend(save_split(&d.test, &dir, "test")?);
        Ok(paths)
    })?;
    let data_dir = r.out.join("data");
    let data_key = r
        .manifest
        .phase("data")
        .map(|p| hash_json(&p.artifacts))
        .unwrap_or_default();
    let train_c = load_split(&data_dir, "train")?;
    let valid_c = load_split(&data_dir, "valid")?;
    let test_c = load_split(&data_dir, "test")?;
    let reverse_ident = cfg.direction == Direction::Reverse;

    // 1. Identification model.
    let key = format!(
        "{data_key}|{}|{:?}",
        hash_json(&cfg.seeded_stage(ROLE_IDENTIFY)),
        cfg.direction
    );
    r.phase("identify", key, |r| {
        let dir = r.dir("identify")?;
        let (tr, va) = if reverse_ident {
            (train_c.swapped(), valid_c.swapped())
        } else {
            (train_c.clone(), valid_c.clone())
        };
        r.train_role(ROLE_IDENTIFY, &tr, &va, &dir)
    })?;
    let ident_dir = r.out.join("identify");
    let ident_ckpt = format!("identify/{ROLE_IDENTIFY}.ckpt");
    let ident_hash = r.artifact_hash("identify", &ident_ckpt);
    r.manifest.checkpoints.insert(ROLE_IDENTIFY.into(), ident_hash.clone());

    // 2. Score, bin, split.
    let key = format!("{ident_hash}|{data_key}|{}|{}", cfg.ratio, cfg.bins);
    r.phase("score", key, |r| {
        let model = load_checkpoint(r.out.join(&ident_ckpt))?;
        let scored_on = if reverse_ident {
            train_c.swapped()
        } else {
            train_c.clone()
        };
        let scores = score_corpus(&model, &scored_on)?;
        let dir = r.dir("identify")?;
        let sp = dir.join("scores.tsv");
        scores.write(&sp)?;
        // Bins and split come from the file so resumed runs see identical values.
        let scores = ScoredCorpus::read(&sp)?;
        let part = rank_and_bin(&scores, r.cfg.bins)?;
        let split = split_inactive(&scores, r.cfg.ratio)?;
        let (pp, ss) = (dir.join("partition.tsv"), dir.join("split.tsv"));
        part.write(&pp)?;
        split.write(&ss)?;
        Ok(vec![sp, pp, ss])
    })?;
    let scores = ScoredCorpus::read(ident_dir.join("scores.tsv"))?;
    let partition = BinPartition::read(ident_dir.join("partition.tsv"))?;
    let split = InactiveSplit::read(ident_dir.join("split.tsv"))?;
    let split_hash = r.artifact_hash("score", "identify/split.tsv");
    let inactive_ids: Vec<u64> = split.inactive.iter().copied().collect();
    let active_ids: Vec<u64> = split.active.iter().copied().collect();
    let active = train_c.subset(&active_ids);
    let inactive = train_c.subset(&inactive_ids);

    // 3. Rejuvenation models.
    let needs_fwd = !cfg.speedup && cfg.trained_roles().iter().any(|r| r == ROLE_FORWARD);
    let needs_rev = !cfg.speedup && cfg.trained_roles().iter().any(|r| r == ROLE_REVERSE);
    let diversify_mode = cfg.strategy == Strategy::Diversify;
    let key = format!(
        "{split_hash}|{data_key}|{}|{}|{}|{needs_fwd}|{needs_rev}|{diversify_mode}",
        hash_json(&cfg.seeded_stage(ROLE_FORWARD)),
        hash_json(&cfg.seeded_stage(ROLE_REVERSE)),
        cfg.speedup
    );
    r.phase("rejuvenator", key, |r| {
        let dir = r.dir("rejuvenate")?;
        // Diversification trains its models on the full corpus.
        let base = if diversify_mode { &train_c } else { &active };
        let mut paths = Vec::new();
        for (role, direction, needed) in [
            (ROLE_FORWARD, Direction::Forward, needs_fwd),
            (ROLE_REVERSE, Direction::Reverse, needs_rev),
        ] {
            if !needed {
                continue;
            }
            let stage = r.cfg.seeded_stage(role);
            let (model, log) = train_rejuvenator(base, &valid_c, direction, &stage.model, &stage.train)?;
            let ckpt = dir.join(format!("{role}.ckpt"));
            save_checkpoint(&model, &ckpt)?;
            paths.push(ckpt);
            paths.extend(save_log(&log, &dir, role)?);
        }
        Ok(paths)
    })?;
    let rej_dir = r.out.join("rejuvenate");
    let model_path = |role: &str| -> PathBuf {
        let own = rej_dir.join(format!("{role}.ckpt"));
        let reuse_ident = match role {
            ROLE_FORWARD => cfg.speedup || (diversify_mode && !reverse_ident),
            _ => cfg.speedup,
        };
        if reuse_ident {
            ident_dir.join(format!("{ROLE_IDENTIFY}.ckpt"))
        } else {
            own
        }
    };
    for (role, needed) in [
        (ROLE_FORWARD, cfg.strategy.needs_forward()),
        (ROLE_REVERSE, cfg.strategy.needs_reverse()),
    ] {
        if needed {
            let h = crate::hash_file(model_path(role))?;
            r.manifest.checkpoints.insert(role.into(), h);
        }
    }

    // 4. Rejuvenate.
    let key = format!(
        "{split_hash}|{}|{:?}|{}",
        hash_json(&r.manifest.checkpoints),
        cfg.strategy,
        hash_json(&cfg.decode)
    );
    r.phase("rejuvenate", key, |r| {
        let dir = r.dir("rejuvenate")?;
        let mut paths = Vec::new();
        match r.cfg.strategy {
            Strategy::RemoveOnly => {}
            Strategy::Diversify => {
                let fwd = load_checkpoint(model_path(ROLE_FORWARD))?;
                let rev = load_checkpoint(model_path(ROLE_REVERSE))?;
                let d = diversify(&train_c, &fwd, &rev, &r.cfg.decode)?;
                paths.extend(save_split(&d, &dir, "diversified")?);
            }
            s => {
                if s.needs_forward() {
                    let fwd = load_checkpoint(model_path(ROLE_FORWARD))?;
                    forward_translate(&fwd, &inactive, &r.cfg.decode)?.save(&dir, "ft")?;
                    paths.extend(["ft.src", "ft.tgt", "ft.meta", "ft.json"].map(|f| dir.join(f)));
                }
                if s.needs_reverse() {
                    let rev = load_checkpoint(model_path(ROLE_REVERSE))?;
                    back_translate(&rev, &inactive, &r.cfg.decode)?.save(&dir, "bt")?;
                    paths.extend(["bt.src", "bt.tgt", "bt.meta", "bt.json"].map(|f| dir.join(f)));
                }
            }
        }
        Ok(paths)
    })?;
    let load_set = |stem: &str| -> Result<Option<RejuvenatedCorpus>> {
        if rej_dir.join(format!("{stem}.json")).exists() && cfg.strategy != Strategy::RemoveOnly {
            RejuvenatedCorpus::load(&rej_dir, stem).map(Some)
        } else {
            Ok(None)
        }
    };
    let ft_set = if cfg.strategy.needs_forward() && cfg.strategy != Strategy::Diversify {
        load_set("ft")?
    } else {
        None
    };
    let bt_set = if cfg.strategy.needs_reverse() && cfg.strategy != Strategy::Diversify {
        load_set("bt")?
    } else {
        None
    };

    // 5. Compose.
    let rej_hashes = r
        .manifest
        .phase("rejuvenate")
        .map(|p| hash_json(&p.artifacts))
        .unwrap_or_default();
    let key = format!("{split_hash}|{rej_hashes}|{:?}", cfg.strategy);
    r.phase("compose", key, |r| {
        let composed = if r.cfg.strategy == Strategy::Diversify {
            load_split(&rej_dir, "diversified")?
        } else {
            let sets: Vec<&RejuvenatedCorpus> = ft_set.iter().chain(bt_set.iter()).collect();
            compose(&active, &inactive_ids, &sets, r.cfg.strategy)?
        };
        let dir = r.dir("final")?;
        save_split(&composed, &dir, "train")
    })?;
    let final_dir = r.out.join("final");
    let final_train = load_split(&final_dir, "train")?;

    // 6. Final model, trained from scratch.
    let composed_hash = r
        .manifest
        .phase("compose")
        .map(|p| hash_json(&p.artifacts))
        .unwrap_or_default();
    let key = format!(
        "{composed_hash}|{data_key}|{}",
        hash_json(&cfg.seeded_stage(ROLE_FINAL))
    );
    r.phase("final", key, |r| {
        let dir = r.dir("final")?;
        r.train_role(ROLE_FINAL, &final_train, &valid_c, &dir)
    })?;
    let final_hash = r.artifact_hash("final", &format!("final/{ROLE_FINAL}.ckpt"));
    r.manifest.checkpoints.insert(ROLE_FINAL.into(), final_hash.clone());

    // 7. Evaluate and report.
    let key = format!(
        "{final_hash}|{ident_hash}|{split_hash}|{rej_hashes}|{}|{}",
        hash_json(&cfg.eval_decode),
        hash_json(&cfg.analysis)
    );
    let ctx = EvalContext {
        cfg,
        train: &train_c,
        test: &test_c,
        active: &active,
        inactive: &inactive,
        final_train: &final_train,
        scores: &scores,
        partition: &partition,
        ft: ft_set.as_ref(),
        bt: bt_set.as_ref(),
    };
    r.phase("evaluate", key, |r| {
        let final_model = load_checkpoint(final_dir.join(format!("{ROLE_FINAL}.ckpt")))?;
        let ident = load_checkpoint(ident_dir.join(format!("{ROLE_IDENTIFY}.ckpt")))?;
        let report = ctx.evaluate(
            &final_model,
            &ident,
            &load_log(&ident_dir, ROLE_IDENTIFY)?,
            &load_log(&final_dir, ROLE_FINAL)?,
        )?;
        let dir = r.dir("report")?;
        let mut paths = emit_report_files(&report, &dir, ReportFormat::Json)?;
        paths.extend(emit_report_files(&report, &dir, ReportFormat::Csv)?);
        Ok(paths)
    })?;
    let report_path = r.out.join("report").join("report.json");
    r.manifest.report = Some(serde_json::from_str(
        &std::fs::read_to_string(&report_path).at(&report_path)?,
    )?);
    r.write_manifest()?;
    Ok(r.manifest)
}

struct EvalContext<'a> {
    cfg: &'a PipelineConfig,
    train: &'a ParallelCorpus,
    test: &'a ParallelCorpus,
    active: &'a ParallelCorpus,
    inactive: &'a ParallelCorpus,
    final_train: &'a ParallelCorpus,
    scores: &'a ScoredCorpus,
    partition: &'a BinPartition,
    ft: Option<&'a RejuvenatedCorpus>,
    bt: Option<&'a RejuvenatedCorpus>,
}

impl EvalContext<'_> {
    fn evaluate(
        &self,
        final_model: &Seq2SeqModel,
        ident: &Seq2SeqModel,
        ident_log: &TrainingLog,
        final_log: &TrainingLog,
    ) -> Result<PipelineReport> {
        let cfg = self.cfg;
        let refs: Vec<Vec<String>> = self.test.iter().map(|p| p.tgt.clone()).collect();
        let final_hyps = translate(final_model, self.test, &cfg.eval_decode)?;
        let mut final_metrics = MetricsReport {
            bleu: Some(bleu(&final_hyps, &refs)?),
            ..Default::default()
        };
        let analysis = &cfg.analysis;
        let gsnr_sample = || {
            let ids: Vec<u64> = self.train.ids().into_iter().take(analysis.gsnr_sample.max(2)).collect();
            self.train.subset(&ids)
        };
        let mut baseline = None;
        if cfg.direction == Direction::Forward {
            let base_hyps = translate(ident, self.test, &cfg.eval_decode)?;
            let mut b = MetricsReport {
                bleu: Some(bleu(&base_hyps, &refs)?),
                ..Default::default()
            };
            if analysis.enabled {
                final_metrics.bootstrap_p = Some(paired_bootstrap(
                    &base_hyps,
                    &final_hyps,
                    &refs,
                    analysis.bootstrap_resamples,
                    derive_seed(cfg.seed, "bootstrap"),
                )?);
                b.margin = Some(margin(ident, self.train)?);
                b.gsnr = Some(gsnr(ident, &gsnr_sample())?);
            }
            baseline = Some(b);
        }
        let mut inactive_m = MetricsReport::default();
        let mut active_m = MetricsReport::default();
        let mut rej_ft = None;
        let mut rej_bt = None;
        if analysis.enabled {
            final_metrics.margin = Some(margin(final_model, self.train)?);
            final_metrics.gsnr = Some(gsnr(final_model, &gsnr_sample())?);
            let align = train_ibm1(self.train, analysis.ibm1_iters)?;
            let vocab = build_vocab(self.train, Side::Target, usize::MAX, 1)?;
            let props = |c: &ParallelCorpus| -> Result<MetricsReport> {
                Ok(MetricsReport {
                    frequency_rank: Some(frequency_rank(c, &vocab)?),
                    coverage: Some(coverage(c, &align)?),
                    uncertainty: Some(uncertainty(c, &align)?),
                    ..Default::default()
                })
            };
            if !self.inactive.is_empty() {
                inactive_m = props(self.inactive)?;
            }
            active_m = props(self.active)?;
            if let Some(s) = self.ft.filter(|s| !s.is_empty()) {
                rej_ft = Some(props(&s.to_corpus())?);
            }
            if let Some(s) = self.bt.filter(|s| !s.is_empty()) {
                rej_bt = Some(props(&s.to_corpus())?);
            }
        }
        let means = self.partition.mean_scores(self.scores);
        let tagged = self.train.iter().all(|p| p.meta.contains_key(META_GOLD_CLASS));
        let hard = if tagged {
            Some(crate::analysis::attribute_ratio_per_bin(
                self.partition,
                self.train,
                META_GOLD_CLASS,
                "hard",
            )?)
        } else {
            None
        };
        if let Some(h) = &hard {
            final_metrics.attribute_ratio_per_bin = h.clone();
        }
        let bins = self
            .partition
            .bins
            .iter()
            .enumerate()
            .map(|(i, ids)| BinRow {
                bin: i + 1,
                size: ids.len(),
                mean_score: means[i],
                hard_ratio: hard.as_ref().map(|h| h[i]),
            })
            .collect();
        Ok(PipelineReport {
            train_pairs: self.train.len(),
            inactive_pairs: self.inactive.len(),
            final_train_pairs: self.final_train.len(),
            final_metrics,
            baseline,
            inactive: inactive_m,
            active: active_m,
            rejuvenated_ft: rej_ft,
            rejuvenated_bt: rej_bt,
            identify_loss_tail_std: tail_std(&ident_log.losses()),
            final_loss_tail_std: tail_std(&final_log.losses()),
            bins,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
}

/// Flattens every numeric leaf of the report into `a.b.c → value`; array
/// elements use their index as the path segment.
pub fn flatten_report(report: &PipelineReport) -> BTreeMap<String, f64> {
    fn walk(prefix: &str, v: &serde_json::Value, out: &mut BTreeMap<String, f64>) {
        let join = |k: &str| {
            if prefix.is_empty() {
                k.to_string()
            } else {
                format!("{prefix}.{k}")
            }
        };
        match v {
            serde_json::Value::Object(m) => m.iter().for_each(|(k, x)| walk(&join(k), x, out)),
            serde_json::Value::Array(a) => a
                .iter()
                .enumerate()
                .for_each(|(i, x)| walk(&join(&i.to_string()), x, out)),
            serde_json::Value::Number(n) => {
                out.insert(prefix.to_string(), n.as_f64().expect("finite"));
            }
            _ => {}
        }
    }
    let mut out = BTreeMap::new();
    walk("", &serde_json::to_value(report).expect("serializable"), &mut out);
    out
}

pub fn read_report_csv(path: impl AsRef<Path>) -> Result<BTreeMap<String, f64>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).at(path)?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let parse_err = || Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: "expected key,value".into(),
        };
        let (k, v) = line.split_once(',').ok_or_else(parse_err)?;
        out.insert(k.to_string(), v.parse().map_err(|_| parse_err())?);
    }
    Ok(out)
}

fn emit_report_files(report: &PipelineReport, dir: &Path, format: ReportFormat) -> Result<Vec<PathBuf>> {
    match format {
        ReportFormat::Json => {
            let p = dir.join("report.json");
            std::fs::write(&p, serde_json::to_string_pretty(report)? + "\n").at(&p)?;
            Ok(vec![p])
        }
        ReportFormat::Csv => {
            let p = dir.join("report.csv");
            let mut text = String::from("key,value\n");
            for (k, v) in flatten_report(report) {
                text.push_str(&format!("{k},{v:?}\n"));
            }
            std::fs::write(&p, text).at(&p)?;
            let b = dir.join("bins.csv");
            let mut text = String::from("bin,size,mean_score,hard_ratio\n");
            for row in &report.bins {
                let hr = row.hard_ratio.map(|h| format!("{h:?}")).unwrap_or_default();
                text.push_str(&format!("{},{},{:?},{hr}\n", row.bin, row.size, row.mean_score));
            }
            std::fs::write(&b, text).at(&b)?;
            Ok(vec![p, b])
        }
    }
}

/// Writes the report of a completed run to `dir` in the requested format.
pub fn emit_report(manifest: &RunManifest, format: ReportFormat, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let report = manifest
        .report
        .as_ref()
        .ok_or_else(|| Error::Precondition("manifest has no report; the run is incomplete".into()))?;
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).at(dir)?;
    emit_report_files(report, dir, format)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantAxis {
    Seed,
    Capacity,
    Architecture,
}

impl std::str::FromStr for VariantAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::Config(format!("unknown variant axis {s:?}")))
    }
}

/// Per-bin agreement of identification models that differ along one axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub axis: VariantAxis,
    pub values: Vec<String>,
    /// `rows[b][v]`: overlap of bin `b + 1` between variant `v` and variant 0.
    pub rows: Vec<Vec<f64>>,
    /// Intersection of all variants, per bin.
    pub all: Vec<f64>,
    /// Mean pairwise overlap, per bin.
    pub pairwise: Vec<f64>,
    #[serde(skip)]
    pub partitions: Vec<BinPartition>,
}

impl OverlapReport {
    pub fn to_csv(&self) -> String {
        let mut out = format!("bin,{},all,pairwise\n", self.values.join(","));
        for (b, row) in self.rows.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
            out.push_str(&format!(
                "{},{},{:.6},{:.6}\n",
                b + 1,
                cells.join(","),
                self.all[b],
                self.pairwise[b]
            ));
        }
        out
    }
}

/// Applies one axis value to an identification stage.
pub fn apply_variant(stage: &StageConfig, axis: VariantAxis, value: &str) -> Result<StageConfig> {
    let mut s = stage.clone();
    let bad = || Error::Config(format!("invalid {axis:?} value {value:?}"));
    match axis {
        VariantAxis::Seed => {
            let seed: u64 = value.parse().map_err(|_| bad())?;
            s.model.seed = seed;
            s.train.seed = seed;
        }
        VariantAxis::Capacity => s.model.hidden_dim = value.parse().map_err(|_| bad())?,
        VariantAxis::Architecture => {
            s.model.cell = match value {
                "lstm" => CellKind::Lstm,
                "gru" => CellKind::Gru,
                _ => return Err(bad()),
            }
        }
    }
    Ok(s)
}

/// Trains one identifier per axis value on the configured training data and
/// compares their bin partitions. Seeds other than the varied one come from
/// the identification role.
pub fn run_variants(base: &PipelineConfig, axis: VariantAxis, values: &[String]) -> Result<OverlapReport> {
    if values.len() < 2 {
        return Err(Error::Precondition(
            "variant comparison needs at least two values".into(),
        ));
    }
    let data = materialize(&base.data)?;
    let stage = base.seeded_stage(ROLE_IDENTIFY);
    let mut partitions = Vec::with_capacity(values.len());
    for v in values {
        let s = apply_variant(&stage, axis, v)?;
        let init = Seq2SeqModel::init_for_corpus(&s.model, &data.train)?;
        let (model, _) = train(&init, &data.train, &data.valid, &s.train)?;
        partitions.push(rank_and_bin(&score_corpus(&model, &data.train)?, base.bins)?);
    }
    overlap_table(axis, values, partitions)
}

pub fn overlap_table(axis: VariantAxis, values: &[String], partitions: Vec<BinPartition>) -> Result<OverlapReport> {
    let nb = partitions[0].num_bins();
    let mut rows = Vec::with_capacity(nb);
    let mut all = Vec::with_capacity(nb);
    let mut pairwise = Vec::with_capacity(nb);
    for b in 1..=nb {
        rows.push(
            partitions
                .iter()
                .map(|p| overlap_ratio(&[partitions[0].clone(), p.clone()], b))
                .collect::<Result<Vec<f64>>>()?,
        );
        all.push(overlap_ratio(&partitions, b)?);
        pairwise.push(overlap_ratio_pairwise(&partitions, b)?);
    }
    Ok(OverlapReport {
        axis,
        values: values.to_vec(),
        rows,
        all,
        pairwise,
        partitions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(dir: &Path) -> PipelineConfig {
        let stage = StageConfig {
            model: ModelConfig {
                emb_dim: 8,
                hidden_dim: 12,
                ..Default::default()
            },
            train: TrainConfig {
                lr: 0.02,
                max_steps: 30,
                batch_size: 16,
                eval_interval: 15,
                valid_bleu_sample: 10,
                ..Default::default()
            },
        };
        PipelineConfig {
            data: DataSource::Synthetic {
                spec: SyntheticSpec {
                    num_pairs: 240,
                    vocab_size: 12,
                    rare_vocab_size: 12,
                    hard_fraction: 0.3,
                    min_len: 2,
                    max_len: 5,
                    seed: 5,
                    ..Default::default()
                },
                fractions: (0.75, 0.125, 0.125),
                split_seed: 1,
                clean_eval: true,
            },
            identify: stage.clone(),
            rejuvenate: stage.clone(),
            final_stage: stage,
            decode: DecodeConfig::beam(2),
            analysis: AnalysisConfig {
                gsnr_sample: 16,
                bootstrap_resamples: 50,
                ..Default::default()
            },
            out_dir: dir.to_path_buf(),
            ..Default::default()
        }
    }

    #[test]
    fn derived_seeds_are_distinct_and_stable() {
        let roles = [ROLE_IDENTIFY, ROLE_FORWARD, ROLE_REVERSE, ROLE_FINAL];
        let seeds: std::collections::BTreeSet<u64> = roles.iter().map(|r| derive_seed(1, r)).collect();
        assert_eq!(seeds.len(), 4);
        assert_eq!(derive_seed(1, ROLE_FINAL), derive_seed(1, ROLE_FINAL));
        assert_ne!(derive_seed(1, ROLE_FINAL), derive_seed(2, ROLE_FINAL));
    }

    #[test]
    fn config_validation() {
        let mut c = PipelineConfig::default();
        c.validate().unwrap();
        c.ratio = 100.0;
        assert!(c.validate().is_err());
        let c = PipelineConfig {
            speedup: true,
            strategy: Strategy::Bt,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = PipelineConfig {
            speedup: true,
            strategy: Strategy::Bt,
            direction: Direction::Reverse,
            ..Default::default()
        };
        c.validate().unwrap();
    }

    #[test]
    fn trained_role_counts() {
        let c = |strategy, speedup| PipelineConfig {
            strategy,
            speedup,
            ..Default::default()
        };
        assert_eq!(c(Strategy::Ft, false).trained_roles().len(), 3);
        assert_eq!(c(Strategy::Ft, true).trained_roles().len(), 2);
        assert_eq!(c(Strategy::RemoveOnly, false).trained_roles().len(), 2);
        assert_eq!(c(Strategy::Both, false).trained_roles().len(), 4);
    }

    #[test]
    fn config_json_round_trip_and_defaults() {
        let c = PipelineConfig::default();
        let text = serde_json::to_string(&c).unwrap();
        let back: PipelineConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
        let partial: PipelineConfig = serde_json::from_str(r#"{"ratio": 20, "strategy": "remove-only"}"#).unwrap();
        assert_eq!(partial.ratio, 20.0);
        assert_eq!(partial.bins, 10);
        assert_eq!(partial.strategy, Strategy::RemoveOnly);
    }

    #[test]
    fn tail_std_cases() {
        assert_eq!(tail_std(&[]), 0.0);
        assert_eq!(tail_std(&[5.0; 10]), 0.0);
        // last 3 of 10: 1, 2, 3
        let v = [9.0, 9.0, 9.0, 9.0, 9.0, 9.0, 9.0, 1.0, 2.0, 3.0];
        assert!((tail_std(&v) - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn pipeline_runs_resumes_and_reports() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config(dir.path());
        let m = run_pipeline(&cfg).unwrap();
        m.verify(dir.path()).unwrap();
        let report = m.report.clone().unwrap();
        assert_eq!(report.final_train_pairs, report.train_pairs);
        assert_eq!(m.trained_models.len(), 3);
        assert!(report.bins.windows(2).all(|w| w[0].mean_score <= w[1].mean_score));
        assert!(report.final_metrics.in_range());

        let again = run_pipeline(&cfg).unwrap();
        assert!(again.phases.iter().all(|p| p.skipped), "{:?}", again.phases);
        assert_eq!(again.checkpoints, m.checkpoints);

        // CSV and JSON agree on every shared field.
        let csv = read_report_csv(dir.path().join("report/report.csv")).unwrap();
        assert_eq!(csv, flatten_report(&report));

        let curve = std::fs::read_to_string(dir.path().join("final/final.curve.csv")).unwrap();
        let log = load_log(&dir.path().join("final"), ROLE_FINAL).unwrap();
        assert_eq!(curve.lines().count() - 1, log.evals.len());
    }

    #[test]
    fn remove_only_and_speedup_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig {
            strategy: Strategy::RemoveOnly,
            analysis: AnalysisConfig {
                enabled: false,
                ..Default::default()
            },
            ..small_config(dir.path())
        };
        let m = run_pipeline(&cfg).unwrap();
        let r = m.report.unwrap();
        assert_eq!(r.final_train_pairs, r.train_pairs - r.train_pairs / 10);
        assert_eq!(m.trained_models.len(), 2);

        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig {
            speedup: true,
            direction: Direction::Reverse,
            strategy: Strategy::Bt,
            ..small_config(dir.path())
        };
        let m = run_pipeline(&cfg).unwrap();
        assert_eq!(
            m.trained_models,
            vec![ROLE_IDENTIFY.to_string(), ROLE_FINAL.to_string()]
        );
        let r = m.report.unwrap();
        assert!(r.baseline.is_none());
        assert_eq!(r.final_train_pairs, r.train_pairs);
        // The final model still translates forward.
        let final_model = load_checkpoint(dir.path().join("final/final.ckpt")).unwrap();
        assert!(final_model.src_vocab.tokens().iter().any(|t| t.starts_with('s')));
    }

    #[test]
    fn failure_is_recorded_with_phase_name() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_config(dir.path());
        cfg.final_stage.train.lr = 1e6;
        cfg.final_stage.train.clip = 1e9;
        let err = run_pipeline(&cfg);
        if let Err(Error::Phase { phase, .. }) = &err {
            let m = RunManifest::load(dir.path().join("manifest.json")).unwrap();
            let rec = m.phase(phase).unwrap();
            assert_eq!(rec.status, PhaseStatus::Failed);
            assert!(rec.error.is_some());
        }
    }

    #[test]
    fn emit_report_requires_complete_manifest() {
        let m = RunManifest {
            config: PipelineConfig::default(),
            seeds: BTreeMap::new(),
            trained_models: vec![],
            phases: vec![],
            checkpoints: BTreeMap::new(),
            report: None,
        };
        assert!(emit_report(&m, ReportFormat::Json, std::env::temp_dir()).is_err());
    }

    #[test]
    fn identical_variants_overlap_fully() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_config(dir.path());
        cfg.identify.train.max_steps = 10;
        let values = vec!["7".to_string(), "7".to_string()];
        let r = run_variants(&cfg, VariantAxis::Seed, &values).unwrap();
        assert_eq!(r.rows.len(), cfg.bins);
        assert!(r.rows.iter().all(|row| row.len() == 2 && row.iter().all(|&v| v == 1.0)));
        assert!(r.all.iter().all(|&v| v == 1.0));
        assert_eq!(r.to_csv().lines().count(), cfg.bins + 1);
    }
}
