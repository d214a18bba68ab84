use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use defx::parse_corpus;
use tempfile::TempDir;

const SMALL: &[&str] = &["--word-dim", "12", "--pos-dim", "6", "--h-dim", "12", "--g-dim", "12"];

fn defx(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_defx")).args(args).output().unwrap()
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Temp dir holding a synthetic corpus of `n` sentences.
fn workspace(n: usize) -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.tsv");
    let out = defx(&["synth", "--seed", "3", "--count", &n.to_string(), "--out", s(&corpus)]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    (dir, corpus)
}

fn train(dir: &Path, corpus: &Path, name: &str, extra: &[&str]) -> (Output, PathBuf, PathBuf) {
    let ckpt = dir.join(format!("{name}.ckpt"));
    let log = dir.join(format!("{name}.log"));
    let mut args = vec!["train", "--train-path", s(corpus), "--checkpoint-path", s(&ckpt), "--log-path", s(&log)];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    (defx(&args), ckpt, log)
}

#[test]
fn synth_output_parses() {
    let (_dir, corpus) = workspace(12);
    let parsed = parse_corpus(&std::fs::read_to_string(corpus).unwrap()).unwrap();
    assert_eq!(parsed.len(), 12);
    assert!(parsed.iter().any(|s| s.sent_label == Some(true)));
    assert!(parsed.iter().any(|s| s.sent_label == Some(false)));
}

#[test]
fn training_is_reproducible() {
    let (dir, corpus) = workspace(8);
    let (a, ckpt_a, log_a) = train(dir.path(), &corpus, "a", &["--epochs", "3", "--seed", "9"]);
    let (b, ckpt_b, log_b) = train(dir.path(), &corpus, "b", &["--epochs", "3", "--seed", "9"]);
    assert!(a.status.success() && b.status.success(), "{}", text(&a.stderr));
    assert!(text(&a.stdout).contains("seed 9"));
    assert_eq!(std::fs::read(&ckpt_a).unwrap(), std::fs::read(&ckpt_b).unwrap());
    assert_eq!(std::fs::read(&log_a).unwrap(), std::fs::read(&log_b).unwrap());
}

#[test]
fn eta_zero_equals_zero_component_weights() {
    let (dir, corpus) = workspace(6);
    let (_, _, eta) = train(dir.path(), &corpus, "eta", &["--epochs", "2", "--eta", "0"]);
    let (_, _, abc) = train(dir.path(), &corpus, "abc", &["--epochs", "2", "--a", "0", "--b", "0", "--c", "0"]);
    assert_eq!(std::fs::read(eta).unwrap(), std::fs::read(abc).unwrap());
}

#[test]
fn config_file_and_flag_precedence() {
    let (dir, corpus) = workspace(6);
    let cfg = dir.path().join("run.cfg");
    let ckpt = dir.path().join("m.ckpt");
    std::fs::write(
        &cfg,
        format!(
            "# small run\ntrain_path = {}\ncheckpoint_path = {}\nepochs = 5\nseed = 2\nword_dim = 8\npos_dim = 4\nh_dim = 8\ng_dim = 8\n",
            s(&corpus),
            s(&ckpt)
        ),
    )
    .unwrap();
    let log = dir.path().join("m.log");
    let out = defx(&["train", "--config", s(&cfg), "--epochs", "1", "--log_path", s(&log)]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert_eq!(std::fs::read_to_string(log).unwrap().lines().count(), 1);
    assert!(text(&out.stdout).contains("seed 2"));
}

#[test]
fn missing_key_and_bad_config_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = defx(&["train", "--checkpoint-path", s(&dir.path().join("x.ckpt"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("train_path"), "{}", text(&out.stderr));

    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "seed = 1\nlerning_rate = 0.1\n").unwrap();
    let out = defx(&["train", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("lerning_rate"));

    let out = defx(&["train", "--train-path", "/nonexistent/corpus.tsv", "--checkpoint-path", "x"]);
    assert_eq!(out.status.code(), Some(2));

    let out = defx(&["eval", "--checkpoint-path", s(&cfg), "--test-path", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2), "corrupt checkpoint: {}", text(&out.stderr));

    let out = defx(&["train", "--seed", "many"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_and_tag_round_trip() {
    let (dir, corpus) = workspace(6);
    let (out, ckpt, _) = train(dir.path(), &corpus, "m", &["--epochs", "2", "--seed", "4"]);
    assert!(out.status.success(), "{}", text(&out.stderr));

    let json = dir.path().join("eval.json");
    let out = defx(&["eval", "--checkpoint-path", s(&ckpt), "--test-path", s(&corpus), "--out", s(&json)]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("seed 4"));
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
    assert_eq!(doc["seed"], 4);

    let tagged = dir.path().join("tagged.tsv");
    let out = defx(&["tag", "--checkpoint-path", s(&ckpt), "--test-path", s(&corpus), "--out", s(&tagged)]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let tagged_text = std::fs::read_to_string(&tagged).unwrap();
    let parsed = parse_corpus(&tagged_text).unwrap();
    let original = parse_corpus(&std::fs::read_to_string(&corpus).unwrap()).unwrap();
    assert_eq!(parsed.len(), original.len());
    for (p, o) in parsed.iter().zip(&original) {
        assert!(p.predicted);
        assert_eq!(p.tokens, o.tokens);
        assert_eq!(p.heads, o.heads);
        assert_eq!(p.gold_tags.as_ref().map(Vec::len), Some(o.len()));
    }
}

#[test]
fn kfold_reports_every_fold() {
    let (dir, corpus) = workspace(10);
    let mut args = vec!["eval", "--train-path", s(&corpus), "--kfold", "10", "--epochs", "1"];
    args.extend_from_slice(SMALL);
    let json = dir.path().join("kfold.json");
    args.extend_from_slice(&["--out", s(&json)]);
    let out = defx(&args);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let stdout = text(&out.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("fold ")).count(), 10);
    assert!(stdout.contains("mean over 10 folds"));
    assert!(std::fs::metadata(json).unwrap().len() > 0);
}

#[test]
fn verify_passes_and_detects_fault() {
    let out = defx(&["verify"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stdout));
    assert!(!text(&out.stdout).contains("FAIL"));

    let out = defx(&["verify", "--inject-fault", "transposed-transitions"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stdout).contains("FAIL"));
}
