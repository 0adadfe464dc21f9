use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SPEC: &str = r#"
target_domain_seed = 2
n_train = 12
n_dev = 4
n_test = 4
n_adapt_text = 20

[task]
vocab_size = 6
feature_dim = 3
dup_min = 1
dup_max = 2
noise_sigma = 0.3
domain_seed = 1
bigram_temperature = 1.0
acoustic_seed = 7
pair_separation = 0.6
min_len = 2
max_len = 4
"#;

fn ftt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ftt"))
        .args(args)
        .env("FT_THREADS", "2")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = ftt(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn full_pipeline_runs_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let spec = root.join("spec.toml");
    fs::write(&spec, SPEC).unwrap();
    let data = root.join("data");
    ok(&["gen-data", "--spec", s(&spec), "--out", s(&data)]);
    for f in ["source_train.feats", "target_test.txt", "adapt_text.txt", "vocab.json", "data_config.toml"] {
        assert!(data.join(f).exists(), "{f}");
    }
    assert_eq!(manifest(&data)["command"]["gen-data"]["spec"], s(&spec));

    let train_args = |out: &Path| {
        vec![
            "train".to_string(),
            "--model".into(),
            "factorized".into(),
            "--data".into(),
            s(&data).into(),
            "--epochs".into(),
            "2".into(),
            "--batch-size".into(),
            "4".into(),
            "--out".into(),
            s(out).into(),
        ]
    };
    let fact = root.join("fact");
    let a: Vec<String> = train_args(&fact);
    ok(&a.iter().map(String::as_str).collect::<Vec<_>>());
    let m = manifest(&fact);
    assert_eq!(m["command"]["train"]["model"], "factorized");
    assert_eq!(m["command"]["train"]["lambda"], 0.5);
    assert_eq!(fs::read_to_string(fact.join("metrics.jsonl")).unwrap().lines().count(), 2);

    let again = root.join("fact2");
    let a: Vec<String> = train_args(&again);
    ok(&a.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(fs::read(fact.join("model.ckpt")).unwrap(), fs::read(again.join("model.ckpt")).unwrap());
    assert_eq!(fs::read(fact.join("metrics.jsonl")).unwrap(), fs::read(again.join("metrics.jsonl")).unwrap());

    let lm = root.join("lm");
    ok(&["train", "--model", "lm", "--data", s(&data), "--epochs", "1", "--out", s(&lm)]);
    let std_dir = root.join("std");
    ok(&["train", "--model", "standard", "--data", s(&data), "--epochs", "1", "--out", s(&std_dir)]);

    let adapt = root.join("adapt");
    ok(&[
        "adapt",
        "--checkpoint",
        s(&fact.join("model.ckpt")),
        "--text",
        s(&data.join("adapt_text.txt")),
        "--sweeps",
        "2",
        "--eval-text",
        s(&data.join("target_dev.txt")),
        "--eval-feats",
        s(&data.join("target_dev.feats")),
        "--out",
        s(&adapt),
    ]);
    for f in ["sweep_1.ckpt", "sweep_2.ckpt", "adapted.ckpt", "report.txt"] {
        assert!(adapt.join(f).exists(), "{f}");
    }
    assert_eq!(fs::read_to_string(adapt.join("metrics.jsonl")).unwrap().lines().count(), 3);
    assert_eq!(fs::read_to_string(adapt.join("report.txt")).unwrap().lines().count(), 5);

    let dec = root.join("dec");
    ok(&[
        "eval",
        "--checkpoint",
        s(&adapt.join("adapted.ckpt")),
        "--feats",
        s(&data.join("target_test.feats")),
        "--beam",
        "3",
        "--fusion-weight",
        "0.3",
        "--fusion-lm",
        s(&lm.join("model.ckpt")),
        "--out",
        s(&dec),
    ]);
    let hyps = fs::read_to_string(dec.join("hyps.jsonl")).unwrap();
    assert_eq!(hyps.lines().count(), 4);
    for line in hyps.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["utt_id"].is_string());
        let sum = v["breakdown"]["am"].as_f64().unwrap() + 0.3 * v["breakdown"]["lm"].as_f64().unwrap();
        assert!((sum - v["score"].as_f64().unwrap()).abs() < 1e-9);
    }
    let wer: serde_json::Value = serde_json::from_str(&fs::read_to_string(dec.join("wer.json")).unwrap()).unwrap();
    assert!(wer["wer"].as_f64().unwrap() >= 0.0);

    let plain = root.join("plain");
    ok(&[
        "decode",
        "--checkpoint",
        s(&std_dir.join("model.ckpt")),
        "--feats",
        s(&data.join("source_test.feats")),
        "--out",
        s(&plain),
    ]);
    assert_eq!(fs::read_to_string(plain.join("hyps.jsonl")).unwrap().lines().count(), 4);

    let ppl = root.join("ppl");
    let stdout = ok(&[
        "ppl",
        "--checkpoint",
        s(&lm.join("model.ckpt")),
        "--text",
        s(&data.join("target_test.txt")),
        "--out",
        s(&ppl),
    ]);
    assert!(stdout.starts_with("PPL "));

    let sweep = root.join("sweep");
    ok(&[
        "sweep-lambda",
        "--data",
        s(&data),
        "--values",
        "0,0.5",
        "--epochs",
        "1",
        "--out",
        s(&sweep),
    ]);
    assert_eq!(fs::read_to_string(sweep.join("report.jsonl")).unwrap().lines().count(), 2);
    assert!(sweep.join("lambda_0.5").join("model.ckpt").exists());
}

#[test]
fn bad_invocations_fail_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ftt(&["train", "--bogus", "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    let out = ftt(&["decode", "--checkpoint", "/nonexistent.ckpt", "--feats", "/x", "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}
