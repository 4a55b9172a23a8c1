use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn relabel<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relabel"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn check(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Toy corpus plus a small trained Bi-GRU under `root`.
fn toy_run(root: &Path, extra: &[&str]) -> Output {
    let data = root.join("toy");
    check(&relabel(&["toy", "--n-train", "80", "--n-val", "30", "--out", p(&data)]));
    let file = |f: &str| data.join(f).to_str().unwrap().to_string();
    let mut args: Vec<String> = ["train", "--model", "bigru", "--head", "per-label"].map(String::from).to_vec();
    args.extend(["--data".into(), file("train.jsonl"), "--val".into(), file("val.jsonl")]);
    args.extend(["--schema".into(), file("schema.json")]);
    args.extend(["--hidden", "16", "--embed-dim", "8", "--epochs", "3", "--lr", "0.01"].map(String::from));
    args.extend(extra.iter().map(|a| a.to_string()));
    relabel(&args)
}

#[test]
fn train_writes_checkpoint_history_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run1");
    check(&toy_run(dir.path(), &["--seed", "1", "--out", p(&out)]));
    for f in ["model.ckpt", "history.csv", "manifest.json", "vocab.txt", "model.json", "schema.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let history = fs::read_to_string(out.join("history.csv")).unwrap();
    assert_eq!(history.lines().next().unwrap(), "epoch,train_loss,val_micro_f1,val_macro_f1");
    assert_eq!(history.lines().count(), 4);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 1);
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 5);
    let m = relabel::manifest::RunManifest::load(&out).unwrap();
    assert!(m.verify_outputs(&out).unwrap().is_empty());
}

#[test]
fn same_seed_gives_identical_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    check(&toy_run(dir.path(), &["--seed", "4", "--out", p(&a)]));
    check(&toy_run(dir.path(), &["--seed", "4", "--out", p(&b)]));
    assert_eq!(fs::read(a.join("model.ckpt")).unwrap(), fs::read(b.join("model.ckpt")).unwrap());
    assert_eq!(fs::read(a.join("history.csv")).unwrap(), fs::read(b.join("history.csv")).unwrap());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    let missing_schema = relabel(&[
        "train", "--data", "x.jsonl", "--schema", "/nonexistent/labels.json", "--out", p(&out),
    ]);
    assert_eq!(missing_schema.status.code(), Some(2));
    assert!(!out.exists());
    assert_eq!(relabel(&["train", "--bogus"]).status.code(), Some(1));
    assert_eq!(relabel(&["train", "--model", "lstm", "--out", p(&out)]).status.code(), Some(1));
    let mean_attention = relabel(&["train", "--model", "mean", "--head", "per-label", "--synth", "only", "--out", p(&out)]);
    assert_eq!(mean_attention.status.code(), Some(1));
    assert!(!out.exists());
    assert_eq!(relabel(&["--help"]).status.code(), Some(0));
}

#[test]
fn eval_reports_and_schema_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    check(&toy_run(dir.path(), &["--out", p(&run)]));
    let report = dir.path().join("eval");
    let data = dir.path().join("toy/val.jsonl");
    check(&relabel(&["eval", "--checkpoint", p(&run), "--data", p(&data), "--out", p(&report)]));
    let summary = fs::read_to_string(report.join("summary.txt")).unwrap();
    assert!(summary.contains("micro") && summary.contains("macro"));
    let per_label = fs::read_to_string(report.join("per_label.csv")).unwrap();
    assert_eq!(per_label.lines().count(), 16);
    assert!(report.join("errors.csv").exists());

    let small = dir.path().join("small.json");
    fs::write(&small, r#"[{"id":"fracture","display_name":"Fracture","category":"finding"}]"#).unwrap();
    let other = dir.path().join("other.jsonl");
    fs::write(&other, "{\"report_id\":\"r\",\"text\":\"no fracture\",\"labels\":{\"fracture\":\"negative\"}}\n").unwrap();
    let bad = relabel(&["eval", "--checkpoint", p(&run), "--data", p(&other), "--schema", p(&small), "--out", p(&dir.path().join("x"))]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("15 labels but the schema has 1"));
    assert!(!dir.path().join("x").exists());
}

#[test]
fn seeds_aggregate_mean_and_std() {
    let dir = tempfile::tempdir().unwrap();
    let runs = dir.path().join("runs");
    check(&toy_run(dir.path(), &["--seeds", "1..2", "--out", p(&runs)]));
    assert!(runs.join("seed-1/model.ckpt").exists() && runs.join("seed-2/model.ckpt").exists());
    let report = dir.path().join("agg");
    let data = dir.path().join("toy/val.jsonl");
    check(&relabel(&["eval", "--checkpoint", p(&runs), "--seeds", "1..2", "--data", p(&data), "--out", p(&report)]));
    let header = fs::read_to_string(report.join("per_label.csv")).unwrap();
    assert!(header.starts_with("label,f1_all_mean,f1_all_std"));
    assert!(fs::read_to_string(report.join("summary.txt")).unwrap().starts_with("runs: 2"));
    assert!(report.join("seed-2/summary.txt").exists());
}

#[test]
fn memorised_synthetic_set_scores_high() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    check(&relabel(&[
        "train", "--synth", "only", "--hidden", "64", "--embed-dim", "32", "--lr", "0.01", "--target-f1", "0.99",
        "--seed", "1", "--out", p(&run),
    ]));
    let synth = dir.path().join("synth");
    check(&relabel(&["synth", "--out", p(&synth)]));
    assert_eq!(fs::read_to_string(synth.join("synthetic.jsonl")).unwrap().lines().count(), 180);
    let report = dir.path().join("eval");
    check(&relabel(&["eval", "--checkpoint", p(&run), "--data", p(&synth.join("synthetic.jsonl")), "--out", p(&report)]));
    let summary = fs::read_to_string(report.join("summary.txt")).unwrap();
    let micro_all: f64 = summary
        .lines()
        .find(|l| l.starts_with("micro"))
        .unwrap()
        .split_whitespace()
        .nth(1)
        .unwrap()
        .parse()
        .unwrap();
    assert!(micro_all >= 0.99, "{summary}");
}

#[test]
fn attention_and_label_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    check(&toy_run(dir.path(), &["--out", p(&run)]));
    let input = dir.path().join("sentences.txt");
    fs::write(&input, "There is no haemorrhage and possible fracture.\n\nAtrophy is present.\n").unwrap();
    let att = dir.path().join("att");
    let first = relabel(&["attention", "--checkpoint", p(&run), "--input", p(&input), "--show", "--out", p(&att)]);
    check(&first);
    let csv_text = fs::read_to_string(att.join("attention.csv")).unwrap();
    let mut reader = csv::Reader::from_reader(csv_text.as_bytes());
    let mut sums = std::collections::BTreeMap::<(String, String), f64>::new();
    for rec in reader.records() {
        let rec = rec.unwrap();
        *sums.entry((rec[0].to_string(), rec[1].to_string())).or_default() += rec[4].parse::<f64>().unwrap();
    }
    assert_eq!(sums.len(), 2 * 15);
    assert!(sums.values().all(|s| (s - 1.0).abs() < 1e-6));
    let att2 = dir.path().join("att2");
    check(&relabel(&["attention", "--checkpoint", p(&run), "--input", p(&input), "--out", p(&att2)]));
    assert_eq!(csv_text, fs::read_to_string(att2.join("attention.csv")).unwrap());

    let labels = dir.path().join("labels");
    check(&relabel(&["label", "--checkpoint", p(&run), "--input", p(&input), "--out", p(&labels)]));
    let text = fs::read_to_string(labels.join("labels.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.contains("report-3"));
}

#[test]
fn pooled_checkpoint_has_no_attention() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    check(&relabel(&[
        "train", "--model", "mean", "--synth", "only", "--embed-dim", "8", "--epochs", "1", "--out", p(&run),
    ]));
    let input = dir.path().join("s.txt");
    fs::write(&input, "no fracture\n").unwrap();
    let out = relabel(&["attention", "--checkpoint", p(&run), "--input", p(&input), "--out", p(&dir.path().join("a"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("pooled"));
}

#[test]
fn pretrain_then_train_with_embeddings() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("toy");
    check(&relabel(&["toy", "--n-train", "60", "--n-val", "20", "--out", p(&data)]));
    let emb = dir.path().join("emb");
    check(&relabel(&[
        "pretrain", "--input", p(&data.join("train.jsonl")), "--dim", "12", "--epochs", "1", "--min-count", "1",
        "--out", p(&emb),
    ]));
    let vectors = fs::read_to_string(emb.join("embeddings.txt")).unwrap();
    assert!(vectors.lines().next().unwrap().ends_with(" 12"));
    let run = dir.path().join("run");
    check(&relabel(&[
        "train", "--data", p(&data.join("train.jsonl")), "--schema", p(&data.join("schema.json")), "--embeddings",
        p(&emb.join("embeddings.txt")), "--hidden", "8", "--epochs", "1", "--out", p(&run),
    ]));
    let config: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("model.json")).unwrap()).unwrap();
    assert_eq!(config["encoder"]["embed_dim"], 12);
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("train.toml");
    fs::write(&cfg, "model = \"caml\"\nhead = \"single\"\nhidden = 8\nembed_dim = 8\ncnn_maps = 6\nmax_epochs = 4\n").unwrap();
    let run = dir.path().join("run");
    check(&relabel(&["train", "--config", p(&cfg), "--synth", "only", "--epochs", "2", "--out", p(&run)]));
    assert_eq!(fs::read_to_string(run.join("history.csv")).unwrap().lines().count(), 3);
    let config: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("model.json")).unwrap()).unwrap();
    assert_eq!(config["head"], "single");
    assert_eq!(config["encoder"]["cnn_maps"], 6);
}

#[test]
fn two_keywords_two_attention_rows() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("toy");
    check(&relabel(&["toy", "--keep-rare", "--out", p(&data)]));
    let run = dir.path().join("run");
    check(&relabel(&[
        "train", "--data", p(&data.join("train.jsonl")), "--val", p(&data.join("val.jsonl")), "--schema",
        p(&data.join("schema.json")), "--hidden", "32", "--embed-dim", "16", "--lr", "0.005", "--epochs", "30",
        "--seed", "1", "--out", p(&run),
    ]));
    let input = dir.path().join("s.txt");
    fs::write(&input, "There is no haemorrhage and possible fracture in the left frontal lobe.\n").unwrap();
    let att = dir.path().join("att");
    check(&relabel(&["attention", "--checkpoint", p(&run), "--input", p(&input), "--out", p(&att)]));
    let text = fs::read_to_string(att.join("attention.csv")).unwrap();
    let mut best = std::collections::BTreeMap::<String, (f64, String)>::new();
    for rec in csv::Reader::from_reader(text.as_bytes()).records() {
        let rec = rec.unwrap();
        let w: f64 = rec[4].parse().unwrap();
        let e = best.entry(rec[1].to_string()).or_insert((-1.0, String::new()));
        if w > e.0 {
            *e = (w, rec[3].to_string());
        }
    }
    assert_eq!(best["haemorrhage"].1, "haemorrhage");
    assert_eq!(best["fracture"].1, "fracture");
    assert!(best["haemorrhage"].0 > 0.5 && best["fracture"].0 > 0.5);
}
