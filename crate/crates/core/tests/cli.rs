//! End-to-end runs of the `txn-nowcast` binary on tiny generated datasets.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;
use sha2::{Digest, Sha256};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_txn-nowcast"));
    c.env_remove("TXN_NOWCAST_SEED");
    c
}

/// Runs the binary; returns the exit code and stderr.
fn run(args: &[&str]) -> (i32, String) {
    let out = bin().args(args).output().expect("binary runs");
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn ok(args: &[&str]) {
    let (code, err) = run(args);
    assert_eq!(code, 0, "{args:?} failed: {err}");
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn sha(p: &Path) -> String {
    Sha256::digest(fs::read(p).unwrap()).iter().map(|b| format!("{b:02x}")).collect()
}

/// Small dataset under `dir/data`; returns the `--set` pairs that load it.
fn small_dataset(dir: &Path, task: &str, days: usize) -> Vec<String> {
    let out = dir.join("data");
    ok(&[
        "generate",
        "--set",
        "run.seed=11",
        "--set",
        &format!("gen.task={task}"),
        "--set",
        &format!("gen.days={days}"),
        "--set",
        "gen.txns_min=60",
        "--set",
        "gen.txns_max=90",
        "--out",
        s(&out),
    ]);
    vec![
        format!("data.dataset={}", out.join("dataset.csv").display()),
        format!("data.vocab={}", out.join("vocab.csv").display()),
    ]
}

fn with_sets<'a>(cmd: &'a str, sets: &'a [String], out: &'a Path) -> Vec<&'a str> {
    let mut v = vec![cmd];
    for x in sets {
        v.push("--set");
        v.push(x);
    }
    v.push("--out");
    v.push(s(out));
    v
}

// ---- schema oracle: the subset of JSON Schema used by the shipped schema ----

fn schema_errors(schema: &Value, v: &Value, at: &str, errs: &mut Vec<String>) {
    if let Some(t) = schema.get("type").and_then(Value::as_str) {
        let fits = match t {
            "object" => v.is_object(),
            "array" => v.is_array(),
            "string" => v.is_string(),
            "number" => v.is_number(),
            "integer" => v.is_u64() || v.is_i64(),
            _ => false,
        };
        if !fits {
            errs.push(format!("{at}: expected {t}, got {v}"));
            return;
        }
    }
    if let Some(options) = schema.get("enum").and_then(Value::as_array) {
        if !options.contains(v) {
            errs.push(format!("{at}: {v} not in enum"));
        }
    }
    if let (Some(p), Some(text)) = (schema.get("pattern").and_then(Value::as_str), v.as_str()) {
        if !regex::Regex::new(p).unwrap().is_match(text) {
            errs.push(format!("{at}: `{text}` does not match {p}"));
        }
    }
    if let (Some(min), Some(x)) = (schema.get("minimum").and_then(Value::as_f64), v.as_f64()) {
        if x < min {
            errs.push(format!("{at}: {x} below {min}"));
        }
    }
    if let Some(obj) = v.as_object() {
        for key in schema.get("required").and_then(Value::as_array).into_iter().flatten() {
            if !obj.contains_key(key.as_str().unwrap()) {
                errs.push(format!("{at}: missing {key}"));
            }
        }
        let props = schema.get("properties").and_then(Value::as_object);
        for (k, child) in obj {
            match props.and_then(|p| p.get(k)) {
                Some(sub) => schema_errors(sub, child, &format!("{at}.{k}"), errs),
                None if schema.get("additionalProperties") == Some(&Value::Bool(false)) => {
                    errs.push(format!("{at}: unexpected key {k}"))
                }
                None => {}
            }
        }
    }
    if let (Some(items), Some(arr)) = (schema.get("items"), v.as_array()) {
        for (i, child) in arr.iter().enumerate() {
            schema_errors(items, child, &format!("{at}[{i}]"), errs);
        }
    }
}

fn assert_valid_report(path: &Path) {
    let schema = read_json(&Path::new(env!("CARGO_MANIFEST_DIR")).join("docs/metrics_report.schema.json"));
    let mut errs = Vec::new();
    schema_errors(&schema, &read_json(path), "$", &mut errs);
    assert!(errs.is_empty(), "{}: {errs:?}", path.display());
}

#[test]
fn schema_oracle_rejects_bad_reports() {
    let schema = read_json(&Path::new(env!("CARGO_MANIFEST_DIR")).join("docs/metrics_report.schema.json"));
    let check = |v: Value| {
        let mut errs = Vec::new();
        schema_errors(&schema, &v, "$", &mut errs);
        errs.len()
    };
    let digest = "0".repeat(64);
    assert_eq!(check(serde_json::json!({"metric": "r2", "value": 0.1, "config_digest": digest})), 0);
    assert_eq!(check(serde_json::json!({"metric": "auc", "value": 0.1, "config_digest": digest})), 1);
    assert_eq!(check(serde_json::json!({"metric": "r2", "value": "x", "config_digest": "abc"})), 2);
    assert_eq!(check(serde_json::json!({"metric": "r2", "config_digest": digest, "extra": 1})), 2);
}

// ---- commands ----

#[test]
fn generate_fourteen_days_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("gen.conf");
    fs::write(&cfg, "# two weeks\nrun.seed = 4\ngen.days = 14\ngen.txns_min = 30\ngen.txns_max = 40\n").unwrap();
    let out = dir.path().join("a");
    ok(&["generate", "--config", s(&cfg), "--out", s(&out)]);

    let mut rdr = csv::Reader::from_path(out.join("dataset.csv")).unwrap();
    let days: BTreeSet<String> = rdr.records().map(|r| r.unwrap()[0].to_string()).collect();
    assert_eq!(days.len(), 14);

    let m = read_json(&out.join("manifest.json"));
    assert_eq!(m["command"], "generate");
    assert_eq!(m["seed"], 4);
    assert_eq!(m["config"]["gen.days"], "14");
    let listed: Vec<&str> = m["artifacts"].as_array().unwrap().iter().map(|a| a["path"].as_str().unwrap()).collect();
    assert_eq!(listed, ["dataset.csv", "vocab.csv", "truth.csv"]);
    for a in m["artifacts"].as_array().unwrap() {
        assert_eq!(a["sha256"].as_str().unwrap(), sha(&out.join(a["path"].as_str().unwrap())));
    }

    let again = dir.path().join("b");
    ok(&["generate", "--config", s(&cfg), "--out", s(&again)]);
    for f in listed {
        assert_eq!(fs::read(out.join(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let (code, err) = run(&["generate", "--set", "gen.days=14", "--out", s(&out)]);
    assert_eq!(code, 2);
    assert!(err.contains("run.seed"), "{err}");

    let (code, err) = run(&["generate", "--set", "run.seed=1", "--set", "gen.dayz=14", "--out", s(&out)]);
    assert_eq!(code, 2);
    assert!(err.contains("gen.dayz"), "{err}");

    assert_eq!(run(&["generate", "--set", "run.seed=1", "--set", "gen.days=abc", "--out", s(&out)]).0, 2);
    assert_eq!(run(&["generate", "--set", "run.seed=1"]).0, 2);
    assert_eq!(run(&["nonsense"]).0, 2);
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let status = bin()
        .env("TXN_NOWCAST_SEED", "9")
        .args(["generate", "--set", "gen.days=7", "--set", "gen.txns_min=20", "--set", "gen.txns_max=30", "--out", s(&out)])
        .status()
        .unwrap();
    assert!(status.success());
    let m = read_json(&out.join("manifest.json"));
    assert_eq!(m["config"]["run.seed"], "9");
}

#[test]
fn featurize_writes_one_row_per_day() {
    let dir = tempfile::tempdir().unwrap();
    let sets = small_dataset(dir.path(), "dayofweek", 14);
    let out = dir.path().join("f");
    ok(&with_sets("featurize", &sets, &out));
    let text = fs::read_to_string(out.join("features.csv")).unwrap();
    assert_eq!(text.lines().count(), 15);
}

#[test]
fn zero_epochs_is_a_valid_noop() {
    let dir = tempfile::tempdir().unwrap();
    let mut sets = small_dataset(dir.path(), "dayofweek", 21);
    sets.extend(["run.seed=2", "train.epochs=0", "train.n=20", "train.inference_samples=2"].map(String::from));
    let out = dir.path().join("t");
    ok(&with_sets("train", &sets, &out));
    assert!(out.join("checkpoint/params.bin").exists());
    assert_eq!(fs::read_to_string(out.join("history.csv")).unwrap().lines().count(), 1);
    assert_valid_report(&out.join("metrics.json"));
}

#[test]
fn train_and_evaluate_reports_match_schema() {
    let dir = tempfile::tempdir().unwrap();
    for (task, metric) in [("dayofweek", "accuracy"), ("defaultrate", "r2")] {
        let base = dir.path().join(task);
        let data = small_dataset(&base, task, 30);
        let mut sets = data.clone();
        sets.extend(["run.seed=3", "train.epochs=2", "train.n=20", "train.eval_every=1", "w2v.epochs=1"].map(String::from));
        for model in ["cnn", "baseline", "word2vec"] {
            let mut s2 = sets.clone();
            s2.push(format!("train.model={model}"));
            let t = base.join(model);
            ok(&with_sets("train", &s2, &t));
            assert_valid_report(&t.join("metrics.json"));

            let mut e = data.clone();
            e.extend(["run.seed=3".to_string(), format!("eval.checkpoint={}", t.display()), "eval.samples=2".into()]);
            let ev = base.join(format!("eval-{model}"));
            ok(&with_sets("evaluate", &e, &ev));
            assert_valid_report(&ev.join("metrics.json"));
            let report = read_json(&ev.join("metrics.json"));
            assert_eq!(report["metric"], metric);
            assert!(report["value"].is_number());
        }
    }
}

#[test]
fn task_and_checkpoint_mismatches_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let dow = small_dataset(&dir.path().join("d"), "dayofweek", 21);
    let rate = small_dataset(&dir.path().join("r"), "defaultrate", 21);

    let mut sets = dow.clone();
    sets.extend(["run.seed=1", "train.loss=mse"].map(String::from));
    assert_eq!(run(&with_sets("train", &sets, &dir.path().join("bad"))).0, 3);

    let mut sets = dow.clone();
    sets.extend(["run.seed=1", "train.epochs=1", "train.n=20"].map(String::from));
    let ckpt = dir.path().join("cls");
    ok(&with_sets("train", &sets, &ckpt));

    let mut e = rate.clone();
    e.extend(["run.seed=1".to_string(), format!("eval.checkpoint={}", ckpt.display())]);
    let (code, err) = run(&with_sets("evaluate", &e, &dir.path().join("ev")));
    assert_eq!(code, 3, "{err}");

    let mut e = dow.clone();
    e.extend(["run.seed=1".to_string(), format!("eval.checkpoint={}", dir.path().join("nowhere").display())]);
    assert_eq!(run(&with_sets("evaluate", &e, &dir.path().join("ev2"))).0, 3);
}

#[test]
fn non_finite_loss_exits_4_and_keeps_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut sets = small_dataset(dir.path(), "defaultrate", 21);
    sets.extend(["run.seed=1", "train.epochs=3", "train.n=20", "train.lr=1e300"].map(String::from));
    let out = dir.path().join("t");
    assert_eq!(run(&with_sets("train", &sets, &out)).0, 4);
    assert!(out.join("checkpoint/params.bin").exists());
    let m = read_json(&out.join("manifest.json"));
    assert!(m["error"].as_str().unwrap().contains("non-finite"));
}

#[test]
fn inputs_are_not_modified() {
    let dir = tempfile::tempdir().unwrap();
    let mut sets = small_dataset(dir.path(), "dayofweek", 14);
    let data = dir.path().join("data");
    let before: Vec<String> = ["dataset.csv", "vocab.csv"].iter().map(|f| sha(&data.join(f))).collect();
    sets.extend(["run.seed=1", "train.epochs=1", "train.n=20", "train.model=baseline"].map(String::from));
    ok(&with_sets("train", &sets, &dir.path().join("t")));
    let after: Vec<String> = ["dataset.csv", "vocab.csv"].iter().map(|f| sha(&data.join(f))).collect();
    assert_eq!(before, after);
}

#[test]
fn grid_runs_each_point_in_its_own_directory() {
    let dir = tempfile::tempdir().unwrap();
    let mut sets = small_dataset(dir.path(), "dayofweek", 14);
    sets.extend(["run.seed=1", "train.epochs=1", "train.inference_samples=2"].map(String::from));
    let out = dir.path().join("g");
    let mut args = with_sets("train", &sets, &out);
    args.extend(["--grid", "train.n=10..30:10", "--jobs", "2"]);
    ok(&args);
    for n in [10, 20, 30] {
        assert!(out.join(format!("train.n={n}/metrics.json")).exists());
    }
    let m = read_json(&out.join("manifest.json"));
    assert_eq!(m["grid"][0], "train.n=10..30:10");
}

#[test]
fn stability_with_two_runs_gives_one_pair() {
    let dir = tempfile::tempdir().unwrap();
    let mut sets = small_dataset(dir.path(), "dayofweek", 21);
    sets.extend(
        ["run.seed=1", "train.epochs=1", "train.n=20", "stability.runs=2", "stability.k=3", "eval.samples=2"]
            .map(String::from),
    );
    let out = dir.path().join("st");
    ok(&with_sets("stability", &sets, &out));
    let pairs = fs::read_to_string(out.join("ami_pairs.csv")).unwrap();
    assert_eq!(pairs.lines().count(), 2);
    assert_eq!(fs::read_to_string(out.join("ami_matrix.csv")).unwrap().lines().count(), 3);
    let rep = read_json(&out.join("stability.json"));
    assert_eq!(rep["pairs"], 1);
    assert!(rep["mean_ami"].is_number());
}

#[test]
fn tsne_on_seven_classes_uses_seven_colours() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("emb.csv");
    let mut text = String::from("day_index,label,e0,e1,e2\n");
    for i in 0..70 {
        let c = i % 7;
        let jitter = (i as f64 * 0.37).sin() * 0.3;
        text += &format!("{i},{c},{},{},{}\n", c as f64 * 3.0 + jitter, (c % 3) as f64 + jitter, jitter);
    }
    fs::write(&input, text).unwrap();
    let out = dir.path().join("ts");
    ok(&[
        "tsne",
        "--set",
        "run.seed=1",
        "--set",
        &format!("tsne.input={}", input.display()),
        "--set",
        "tsne.perplexity=10",
        "--set",
        "tsne.iterations=300",
        "--out",
        s(&out),
    ]);
    let svg = fs::read_to_string(out.join("tsne.svg")).unwrap();
    let re = regex::Regex::new(r##"fill="(#[0-9a-fA-F]{6})""##).unwrap();
    let colours: BTreeSet<&str> = re.captures_iter(&svg).map(|c| c.get(1).unwrap().as_str()).collect();
    assert_eq!(colours.len(), 7, "{colours:?}");
    assert_eq!(fs::read_to_string(out.join("tsne.csv")).unwrap().lines().count(), 71);
}

#[test]
fn embed_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path(), "dayofweek", 14);
    let mut sets = data.clone();
    sets.extend(["run.seed=5", "train.epochs=1", "train.n=20", "train.inference_samples=2"].map(String::from));
    let t = dir.path().join("t");
    ok(&with_sets("train", &sets, &t));

    let mut e = data.clone();
    e.extend(["run.seed=5".to_string(), format!("eval.checkpoint={}", t.display()), "eval.samples=2".into()]);
    let em = dir.path().join("em");
    ok(&with_sets("embed", &e, &em));
    let text = fs::read_to_string(em.join("embeddings.csv")).unwrap();
    assert_eq!(text.lines().count(), 15);
    assert!(text.starts_with("day_index,label,e0,"));

    let rp = dir.path().join("rp");
    ok(&["report", "--set", &format!("report.runs={}", t.display()), "--out", s(&rp)]);
    let rows = read_json(&rp.join("report.json"));
    assert_eq!(rows[0]["metric"], "accuracy");
    assert!(fs::read_to_string(rp.join("report.md")).unwrap().contains("| t | accuracy |"));
}

#[test]
fn replay_needs_a_readable_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let missing: PathBuf = dir.path().join("none.json");
    assert_ne!(run(&["replay", s(&missing), "--out", s(&dir.path().join("o"))]).0, 0);
}
