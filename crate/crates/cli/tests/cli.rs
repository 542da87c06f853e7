use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const SMALL: &str = r#"{
  "schema_version": 1,
  "tagger": {"hidden": 12, "epochs": 4},
  "classifier": {"hidden": 12, "attention": 8, "epochs": 4},
  "baseline": {"epochs": 100},
  "synthetic": {"reports": 240}
}"#;

fn hicd(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hicd"))
        .args(args)
        .current_dir(dir)
        .env_remove("HICD_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = hicd(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn lines(path: &Path) -> Vec<Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

/// Small corpus, embeddings and trained tagger and classifier.
struct Trained {
    dir: TempDir,
}

impl Trained {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        let d = dir.path();
        fs::write(d.join("small.json"), SMALL).unwrap();
        ok(d, &["gen-synthetic", "--config", "small.json", "--out", "corpus.jsonl"]);
        for level in ["tagger", "classifier"] {
            ok(
                d,
                &[
                    "train", level, "--corpus", "corpus.jsonl", "--config", "small.json",
                    "--embeddings", "corpus.vec", "--out", &format!("{level}.ckpt"),
                ],
            );
        }
        Trained { dir }
    }

    fn path(&self) -> &Path {
        self.dir.path()
    }
}

#[test]
fn gen_synthetic_default_and_deterministic() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let stdout = ok(d, &["gen-synthetic", "--out", "a.jsonl"]);
    assert!(stdout.contains("wrote 2800 reports"), "{stdout}");
    assert_eq!(lines(&d.join("a.jsonl")).len(), 2800);
    ok(d, &["gen-synthetic", "--out", "b.jsonl"]);
    assert_eq!(fs::read(d.join("a.jsonl")).unwrap(), fs::read(d.join("b.jsonl")).unwrap());
    assert_eq!(fs::read(d.join("a.vec")).unwrap(), fs::read(d.join("b.vec")).unwrap());
    let config: Value = serde_json::from_str(&fs::read_to_string(d.join("a.jsonl.config.json")).unwrap()).unwrap();
    assert_eq!(config["schema_version"], 1);
    assert_eq!(config["synthetic"]["reports"], 2800);
}

#[test]
fn out_dir_from_environment() {
    let dir = TempDir::new().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_hicd"))
        .args(["gen-synthetic", "--reports", "5"])
        .current_dir(dir.path())
        .env("HICD_OUT_DIR", dir.path().join("outputs"))
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(lines(&dir.path().join("outputs/corpus.jsonl")).len(), 5);
}

#[test]
fn trigger_collision_exits_2() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    fs::write(
        d.join("c.json"),
        r#"{"schema_version": 1, "synthetic": {"labels": 2, "triggers": [["aa bb"], ["aa bb"]]}}"#,
    )
    .unwrap();
    let out = hicd(d, &["gen-synthetic", "--config", "c.json", "--out", "x.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("trigger collision"));
    assert!(!d.join("x.jsonl").exists());
}

#[test]
fn invalid_config_exits_2() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    fs::write(d.join("bad.json"), r#"{"schema_version": 1, "split": [0.5, 0.5, 0.5]}"#).unwrap();
    let out = hicd(d, &["gen-synthetic", "--config", "bad.json"]);
    assert_eq!(out.status.code(), Some(2));
    let out = hicd(d, &["train", "tagger"]);
    assert_eq!(out.status.code(), Some(2), "missing required flag is a usage error");
}

#[test]
fn predict_explain_and_evaluate() {
    let t = Trained::new();
    let d = t.path();
    let corpus = lines(&d.join("corpus.jsonl"));

    ok(
        d,
        &[
            "predict", "--corpus", "corpus.jsonl", "--tagger", "tagger.ckpt", "--classifier",
            "classifier.ckpt", "--embeddings", "corpus.vec", "--out", "pred.jsonl", "--explain", "html",
        ],
    );
    let preds = lines(&d.join("pred.jsonl"));
    assert_eq!(preds.len(), corpus.len());
    for p in &preds {
        let codes = p["codes"].as_array().unwrap();
        assert!(!codes.is_empty(), "{p}");
        let evidence: BTreeSet<&str> = p["evidence"]
            .as_array()
            .unwrap()
            .iter()
            .map(|e| e["code"].as_str().unwrap())
            .collect();
        let codes: BTreeSet<&str> = codes.iter().map(|c| c.as_str().unwrap()).collect();
        assert_eq!(codes, evidence);
        if p["fallback"] == true {
            assert_eq!(p["evidence"].as_array().unwrap().len(), 1);
        }
    }
    let html: Vec<PathBuf> = fs::read_dir(d.join("html"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "html"))
        .collect();
    assert_eq!(html.len(), corpus.len());

    let stdout = ok(
        d,
        &["evaluate", "--predictions", "pred.jsonl", "--gold", "corpus.jsonl", "--mode", "multilabel", "--out", "m.json"],
    );
    assert!(stdout.contains("subset accuracy"));
    let m: Value = serde_json::from_str(&fs::read_to_string(d.join("m.json")).unwrap()).unwrap();
    for key in ["subset_accuracy", "micro", "instance"] {
        assert!(m["metrics"].get(key).is_some(), "{key} missing");
    }
}

#[test]
fn checkpoint_kind_mismatch_exits_2() {
    let t = Trained::new();
    let out = hicd(
        t.path(),
        &[
            "predict", "--corpus", "corpus.jsonl", "--tagger", "classifier.ckpt", "--classifier",
            "classifier.ckpt", "--embeddings", "corpus.vec",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("expected a tagger checkpoint"));
}

#[test]
fn training_is_reproducible() {
    let t = Trained::new();
    let d = t.path();
    ok(
        d,
        &[
            "train", "tagger", "--corpus", "corpus.jsonl", "--config", "small.json", "--embeddings",
            "corpus.vec", "--out", "again.ckpt",
        ],
    );
    assert_eq!(fs::read(d.join("tagger.ckpt")).unwrap(), fs::read(d.join("again.ckpt")).unwrap());
    assert_eq!(
        fs::read(d.join("tagger.ckpt.metrics.json")).unwrap(),
        fs::read(d.join("again.ckpt.metrics.json")).unwrap()
    );
}

#[test]
fn missing_annotations_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let mut text = String::new();
    for i in 0..30 {
        text.push_str(&format!(
            "{{\"schema_version\":1,\"id\":\"r{i}\",\"text\":\"Some words here.\",\"r4v\":\"\",\"annotations\":[],\"codes\":[\"A{}\"]}}\n",
            i % 2
        ));
    }
    fs::write(d.join("c.jsonl"), text).unwrap();
    for level in ["tagger", "classifier"] {
        let out = hicd(d, &["train", level, "--corpus", "c.jsonl", "--seed", "1"]);
        assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stderr).contains("data error"));
    }
}

/// Writes a corpus and matching predictions for metric checks.
fn toy_eval(d: &Path, rows: &[(&str, &[&str], &[&str])]) {
    let mut corpus = String::new();
    let mut preds = String::new();
    for (id, gold, pred) in rows {
        corpus.push_str(&format!(
            "{{\"schema_version\":1,\"id\":\"{id}\",\"text\":\"x.\",\"r4v\":\"\",\"annotations\":[],\"codes\":{}}}\n",
            serde_json::to_string(gold).unwrap()
        ));
        preds.push_str(&format!(
            "{{\"schema_version\":1,\"report_id\":\"{id}\",\"codes\":{},\"evidence\":[],\"fallback\":false}}\n",
            serde_json::to_string(pred).unwrap()
        ));
    }
    fs::write(d.join("gold.jsonl"), corpus).unwrap();
    fs::write(d.join("pred.jsonl"), preds).unwrap();
}

fn evaluate(d: &Path) -> Value {
    ok(
        d,
        &["evaluate", "--predictions", "pred.jsonl", "--gold", "gold.jsonl", "--mode", "multilabel", "--out", "m.json"],
    );
    serde_json::from_str::<Value>(&fs::read_to_string(d.join("m.json")).unwrap()).unwrap()["metrics"].clone()
}

#[test]
fn perfect_predictions_score_one() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    toy_eval(d, &[("a", &["X"], &["X"]), ("b", &["X", "Y"], &["X", "Y"]), ("c", &["Z"], &["Z"])]);
    let m = evaluate(d);
    assert_eq!(m["subset_accuracy"], 1.0);
    for avg in ["micro", "macro", "weighted", "instance", "instance_per_sample"] {
        for k in ["precision", "recall", "f1"] {
            assert_eq!(m[avg][k], 1.0, "{avg}.{k}");
        }
    }
}

#[test]
fn evaluate_matches_hand_computation() {
    // gold/pred pairs chosen so every averaging mode differs
    let rows: &[(&str, &[&str], &[&str])] = &[
        ("a", &["X"], &["X", "Y"]),
        ("b", &["X", "Y"], &["Y"]),
        ("c", &["Z"], &["X"]),
        ("d", &["Y", "Z"], &["Y", "Z"]),
    ];
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    toy_eval(d, rows);
    let m = evaluate(d);

    // per-label counts: X tp1 fp1 fn1, Y tp2 fp1 fn0, Z tp1 fp0 fn1
    let (tp, fp, fn_) = (4.0, 2.0, 2.0);
    let f1 = |p: f64, r: f64| if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    let micro_p = tp / (tp + fp);
    let micro_r = tp / (tp + fn_);
    let per = [(0.5, 0.5, 2.0), (2.0 / 3.0, 1.0, 2.0), (1.0, 0.5, 2.0)];
    let macro_p = per.iter().map(|x| x.0).sum::<f64>() / 3.0;
    let macro_r = per.iter().map(|x| x.1).sum::<f64>() / 3.0;
    let macro_f = per.iter().map(|x| f1(x.0, x.1)).sum::<f64>() / 3.0;
    let close = |v: &Value, want: f64| (v.as_f64().unwrap() - want).abs() < 1e-12;
    assert!(close(&m["subset_accuracy"], 0.25));
    assert!(close(&m["micro"]["precision"], micro_p));
    assert!(close(&m["micro"]["recall"], micro_r));
    assert!(close(&m["micro"]["f1"], f1(micro_p, micro_r)));
    assert!(close(&m["macro"]["precision"], macro_p));
    assert!(close(&m["macro"]["recall"], macro_r));
    assert!(close(&m["macro"]["f1"], macro_f));
    // equal supports, so support weighting equals the plain mean
    assert!(close(&m["weighted"]["f1"], macro_f));
    // per-sample: a (1/2, 1), b (1, 1/2), c (0, 0), d (1, 1)
    let ps: [(f64, f64); 4] = [(0.5, 1.0), (1.0, 0.5), (0.0, 0.0), (1.0, 1.0)];
    let want_f = ps.iter().map(|(p, r)| f1(*p, *r)).sum::<f64>() / 4.0;
    assert!(close(&m["instance_per_sample"]["f1"], want_f));
}

#[test]
fn evaluate_id_mismatch_exits_1() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    toy_eval(d, &[("a", &["X"], &["X"])]);
    fs::write(
        d.join("gold.jsonl"),
        fs::read_to_string(d.join("gold.jsonl")).unwrap()
            + "{\"schema_version\":1,\"id\":\"missing-one\",\"text\":\"x.\",\"r4v\":\"\",\"annotations\":[],\"codes\":[\"X\"]}\n",
    )
    .unwrap();
    let out = hicd(d, &["evaluate", "--predictions", "pred.jsonl", "--gold", "gold.jsonl", "--mode", "multilabel"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing-one"));
}

#[test]
fn selftest_passes_and_names_injected_faults() {
    let dir = TempDir::new().unwrap();
    let started = std::time::Instant::now();
    let stdout = ok(dir.path(), &["selftest"]);
    assert!(started.elapsed().as_secs() < 60);
    assert!(stdout.contains("selftest passed"));
    assert!(!stdout.contains("FAIL"));

    let expected: BTreeMap<&str, &str> = [
        ("tagger-backward", "FAIL gradient/tagger"),
        ("attention-backward", "FAIL gradient/classifier/supervised+r4v"),
        ("micro-f1", "FAIL metric/micro"),
    ]
    .into();
    for (fault, line) in expected {
        let out = hicd(dir.path(), &["selftest", "--seeds", "5", "--fault", fault]);
        assert_eq!(out.status.code(), Some(1), "{fault}");
        let stdout = String::from_utf8_lossy(&out.stdout);
        assert!(stdout.contains(line), "{fault}: {stdout}");
    }
}
