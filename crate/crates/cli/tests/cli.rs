use std::path::Path;
use std::process::{Command, Output};

use rejuv_core::pipeline::{DataSource, PipelineConfig};
use rejuv_core::SyntheticSpec;

fn rejuv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rejuv"))
        .args(args)
        .output()
        .expect("spawn rejuv")
}

fn ok(args: &[&str]) -> serde_json::Value {
    let out = rejuv(args);
    assert!(
        out.status.success(),
        "rejuv {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap_or(serde_json::Value::Null)
}

fn error_line(out: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let lines: Vec<&str> = stderr.lines().collect();
    assert_eq!(lines.len(), 1, "expected one stderr line, got {stderr}");
    serde_json::from_str(lines[0]).expect("stderr is JSON")
}

fn small_config(dir: &Path) -> std::path::PathBuf {
    let mut cfg = PipelineConfig {
        data: DataSource::Synthetic {
            spec: SyntheticSpec {
                num_pairs: 300,
                vocab_size: 12,
                rare_vocab_size: 12,
                hard_fraction: 0.3,
                min_len: 2,
                max_len: 5,
                seed: 3,
                ..Default::default()
            },
            fractions: (0.8, 0.1, 0.1),
            split_seed: 2,
            clean_eval: true,
        },
        out_dir: dir.join("run"),
        ..Default::default()
    };
    for s in [&mut cfg.identify, &mut cfg.rejuvenate, &mut cfg.final_stage] {
        s.model.hidden_dim = 12;
        s.model.emb_dim = 8;
        s.train.max_steps = 20;
        s.train.eval_interval = 10;
        s.train.valid_bleu_sample = 5;
        s.train.lr = 0.02;
    }
    cfg.analysis.gsnr_sample = 8;
    cfg.analysis.bootstrap_resamples = 20;
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn stepwise_commands_compose_into_a_run() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cfg = small_config(d);
    let c = s(&cfg);
    let data = d.join("data");
    let sizes = ok(&["gen", "--config", c, "--out-dir", s(&data)]);
    assert_eq!(sizes["train"], 240);
    let f = |name: &str| data.join(name).to_str().unwrap().to_string();
    let model = d.join("m.ckpt");
    ok(&[
        "train",
        "--config",
        c,
        "--src",
        &f("train.src"),
        "--tgt",
        &f("train.tgt"),
        "--valid-src",
        &f("valid.src"),
        "--valid-tgt",
        &f("valid.tgt"),
        "--out",
        s(&model),
        "--steps",
        "15",
    ]);
    assert!(d.join("m.curve.csv").exists());
    let scores = d.join("scores.tsv");
    let scored = ok(&[
        "score",
        "--model",
        s(&model),
        "--src",
        &f("train.src"),
        "--tgt",
        &f("train.tgt"),
        "--meta",
        &f("train.meta"),
        "--out",
        s(&scores),
    ]);
    assert_eq!(scored["scored"], 240);
    let bins = ok(&[
        "bin",
        "--scores",
        s(&scores),
        "--bins",
        "4",
        "--out",
        s(&d.join("part.tsv")),
    ]);
    assert_eq!(bins.as_array().unwrap().len(), 4);
    let split = d.join("split.tsv");
    let counts = ok(&[
        "split",
        "--config",
        c,
        "--scores",
        s(&scores),
        "--ratio",
        "25",
        "--out",
        s(&split),
    ]);
    assert_eq!(counts["inactive"], 60);
    let rej = d.join("rej");
    let made = ok(&[
        "rejuvenate",
        "--model",
        s(&model),
        "--src",
        &f("train.src"),
        "--tgt",
        &f("train.tgt"),
        "--meta",
        &f("train.meta"),
        "--split",
        s(&split),
        "--out-dir",
        s(&rej),
        "--beam",
        "2",
    ]);
    assert_eq!(made["rejuvenated"], 60);
    let composed = ok(&[
        "compose",
        "--src",
        &f("train.src"),
        "--tgt",
        &f("train.tgt"),
        "--meta",
        &f("train.meta"),
        "--split",
        s(&split),
        "--rejuvenated",
        s(&rej),
        "--strategy",
        "ft",
        "--out",
        s(&d.join("final")),
    ]);
    assert_eq!(composed["pairs"], 240);
    let eval = ok(&[
        "evaluate",
        "--model",
        s(&model),
        "--src",
        &f("test.src"),
        "--tgt",
        &f("test.tgt"),
        "--baseline",
        s(&model),
        "--resamples",
        "10",
    ]);
    assert_eq!(eval["bootstrap_p"], 1.0);
    assert_eq!(eval["bleu"], eval["baseline_bleu"]);
    let props = ok(&[
        "analyze",
        "--src",
        &f("train.src"),
        "--tgt",
        &f("train.tgt"),
        "--meta",
        &f("train.meta"),
        "--split",
        s(&split),
        "--model",
        s(&model),
        "--gsnr-sample",
        "8",
    ]);
    for key in ["all", "inactive", "active"] {
        assert!(props[key]["coverage"].as_f64().unwrap() <= 1.0);
    }
    assert!(props["model"]["gsnr"].as_f64().unwrap() >= 0.0);
    let table = rejuv(&[
        "overlap",
        "--partitions",
        s(&d.join("part.tsv")),
        s(&d.join("part.tsv")),
    ]);
    let text = String::from_utf8(table.stdout).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text
        .lines()
        .nth(1)
        .unwrap()
        .ends_with("1.000000,1.000000,1.000000,1.000000"));
}

#[test]
fn pipeline_flags_override_config_and_resume() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("p");
    let rep = tmp.path().join("rep");
    let args = [
        "pipeline",
        "--config",
        s(&cfg),
        "--out-dir",
        s(&out),
        "--ratio",
        "20",
        "--strategy",
        "remove-only",
        "--report-format",
        "csv",
        "--report-dir",
        s(&rep),
    ];
    let first = ok(&args);
    assert_eq!(first["final_train_pairs"], 240 - 48);
    assert_eq!(first["trained_models"].as_array().unwrap().len(), 2);
    assert!(tmp.path().join("rep/report.csv").exists());
    let second = ok(&args);
    assert_eq!(second["skipped_phases"].as_array().unwrap().len(), 8);
    assert_eq!(first["checkpoints"], second["checkpoints"]);
}

#[test]
fn failures_print_one_json_line() {
    let out = rejuv(&[
        "score",
        "--model",
        "/nonexistent.ckpt",
        "--src",
        "a",
        "--tgt",
        "b",
        "--out",
        "c",
    ]);
    assert!(!out.status.success());
    let err = error_line(&out);
    assert_eq!(err["error"]["kind"], "io");

    let out = rejuv(&["split", "--scores", "x", "--out", "y", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_line(&out)["error"]["kind"], "usage");

    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    std::fs::write(&cfg, r#"{"ratio": 150}"#).unwrap();
    let out = rejuv(&["pipeline", "--config", s(&cfg), "--out-dir", s(tmp.path())]);
    assert_eq!(error_line(&out)["error"]["kind"], "config");
}

#[test]
fn help_goes_to_stdout() {
    let out = rejuv(&["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for cmd in [
        "gen",
        "train",
        "score",
        "bin",
        "split",
        "rejuvenate",
        "compose",
        "evaluate",
        "analyze",
        "overlap",
        "pipeline",
    ] {
        assert!(text.contains(cmd), "help lacks {cmd}");
    }
}
