use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use ctxlm::checkpoint::Checkpoint;
use ctxlm::corpus::EOS_ID;
use ctxlm::eval::{beam_search, ModelScorer};

const BIN: &str = env!("CARGO_BIN_EXE_ctxlm");

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout_ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Trains a small model once; returns its output directory.
fn trained() -> &'static Path {
    static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        stdout_ok(&["build-vocab", "--train", data("smoke.tsv").to_str().unwrap(), "--out", out,
            "--set", r#"context_names=["topic","mood"]"#]);
        stdout_ok(&[
            "train",
            "--train", data("smoke.tsv").to_str().unwrap(),
            "--heldout", data("smoke_heldout.tsv").to_str().unwrap(),
            "--tables", out,
            "--out", out,
            "--seed", "5",
            "--set", r#"context_names=["topic","mood"]"#,
            "--set", "context_embed_dims=[3,2]",
            "--set", "embed_dim=8",
            "--set", "lstm_dim=12",
            "--set", "context_dim=4",
            "--set", "batch_size=20",
            "--set", "max_epochs=2",
            "--set", "learning_rate=0.01",
            "--set", "bloom_bits=4096",
            "--set", "hash_size=101",
            "--set", "additive=true",
            "--set", "multiplicative=true",
            "--set", "lowrank=true",
            "--set", "hash=true",
        ]);
        dir
    })
    .path()
}

fn checkpoint() -> String {
    trained().join("best.ckpt").to_str().unwrap().to_string()
}

#[test]
fn training_writes_checkpoint_and_metrics() {
    let dir = trained();
    let metrics = std::fs::read_to_string(dir.join("metrics.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = metrics.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    assert!(lines.iter().all(|m| m["heldout_ppl"].as_f64().unwrap().is_finite()));
    let ckpt = Checkpoint::load(dir.join("best.ckpt")).unwrap();
    assert_eq!(ckpt.registry.len(), 2);
    assert!(ckpt.model.hash.is_some());
}

#[test]
fn ppl_is_reproducible() {
    let ckpt = checkpoint();
    let eval = data("smoke_heldout.tsv");
    let args = ["ppl", "--model", &ckpt, "--eval", eval.to_str().unwrap()];
    let first = stdout_ok(&args);
    assert_eq!(first, stdout_ok(&args));
    let ppl: f64 = first.trim().parse().unwrap();
    assert!(ppl > 1.0 && ppl.is_finite());
}

#[test]
fn unknown_flag_gives_one_line_diagnostic() {
    let out = run(&["ppl", "--bogus-flag", "1"]);
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.contains("--bogus-flag"));
    assert!(out.stdout.is_empty());
}

#[test]
fn generate_matches_library_beam_search() {
    let ckpt_path = checkpoint();
    let ckpt = Checkpoint::load(&ckpt_path).unwrap();
    let topic = ckpt.registry.variables[ckpt.registry.variable_index("topic").unwrap()].get("food").unwrap();
    let mood = ckpt.registry.variables[ckpt.registry.variable_index("mood").unwrap()].get("pos").unwrap();
    let mut ids = vec![0; 2];
    ids[ckpt.registry.variable_index("topic").unwrap()] = topic;
    ids[ckpt.registry.variable_index("mood").unwrap()] = mood;
    let hyp = beam_search(&ModelScorer::new(&ckpt.model, &ids).unwrap(), 4, 12);
    let words: Vec<&str> = hyp.tokens.iter().filter(|&&t| t != EOS_ID).map(|&t| ckpt.vocab.token(t)).collect();

    let out = stdout_ok(&[
        "generate", "--model", &ckpt_path, "--context", "topic=food", "--context", "mood=pos", "--beam", "4",
        "--max-len", "12",
    ]);
    let (text, log_prob) = out.trim_end().split_once('\t').unwrap();
    assert_eq!(text, words.join(" "));
    assert!((log_prob.parse::<f64>().unwrap() - hyp.log_prob).abs() < 1e-6);
}

#[test]
fn generate_requires_every_variable() {
    let out = run(&["generate", "--model", &checkpoint(), "--context", "topic=food"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("mood"));
}

#[test]
fn classify_reports_summary() {
    let out = stdout_ok(&[
        "classify", "--model", &checkpoint(), "--eval", data("smoke_heldout.tsv").to_str().unwrap(),
        "--variable", "topic",
    ]);
    let lines: Vec<&str> = out.lines().collect();
    assert!(lines[0].starts_with("index\tgold\tpredicted"));
    assert_eq!(lines.len(), 40 + 2);
    let summary: serde_json::Value = serde_json::from_str(lines.last().unwrap()).unwrap();
    for key in ["accuracy", "macro_f1", "average_auc"] {
        let v = summary[key].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&v), "{key} = {v}");
    }
}

#[test]
fn neighbors_are_ranked() {
    let out = stdout_ok(&["neighbors", "--model", &checkpoint(), "--variable", "topic", "--value", "food", "--top", "2"]);
    let rows: Vec<Vec<&str>> = out.lines().map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][0], "1");
    assert!(rows.iter().all(|r| r[1] != "food"));
    let d: Vec<f64> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    assert!(d[0] <= d[1]);
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.ckpt");
    let mut bytes = std::fs::read(trained().join("best.ckpt")).unwrap();
    bytes.truncate(bytes.len() / 2);
    std::fs::write(&bad, bytes).unwrap();
    let out = run(&["ppl", "--model", bad.to_str().unwrap(), "--eval", data("smoke_heldout.tsv").to_str().unwrap()]);
    assert!(!out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stderr).trim_end().lines().count(), 1);
}
