//! Black-box tests of the `trgan` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn trgan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trgan")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn synth(dir: &Path, labeled: usize, unlabeled: usize, extra: &[&str]) {
    let mut args = vec![
        "synth-data",
        "--out",
        dir.to_str().unwrap(),
        "--labeled",
    ];
    let (l, u) = (labeled.to_string(), unlabeled.to_string());
    args.extend([l.as_str(), "--unlabeled", u.as_str(), "--validation", "20", "--doc-len", "6", "--sigma", "0.1", "--seed", "3"]);
    args.extend(extra);
    let o = trgan(&args);
    assert!(o.status.success(), "{}", stderr(&o));
}

/// A tiny synthetic run directory with a config capped at `epochs`.
fn tiny_run(dir: &Path, epochs: usize) -> std::path::PathBuf {
    synth(dir, 24, 24, &[]);
    let cfg = dir.join("train.cfg");
    let mut text = fs::read_to_string(&cfg).unwrap();
    text.push_str(&format!(
        "epochs = {epochs}\nhidden_size = 8\nnoise_dim = 4\nchannels = 4\nn_blocks = 1\nbatch_labeled = 8\nbatch_unlabeled = 8\nbatch_generated = 8\n"
    ));
    fs::write(&cfg, text).unwrap();
    cfg
}

#[test]
fn one_epoch_writes_one_csv_row_and_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_run(dir.path(), 1);
    let o = trgan(&["train", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).is_empty());
    let run = dir.path().join("run");
    let csv = fs::read_to_string(run.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "epoch,d_loss,g_loss,train_mae,val_mae,val_rmse");
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("1,") && !lines[1].ends_with(','));
    for f in ["best.ckpt", "final.ckpt", "manifest.txt"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let manifest = fs::read_to_string(run.join("manifest.txt")).unwrap();
    assert!(manifest.contains("seed = 3"));
}

#[test]
fn rerun_gives_identical_csv_and_eval_matches_last_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_run(dir.path(), 2);
    let run = dir.path().join("run");
    assert!(trgan(&["train", "--config", cfg.to_str().unwrap()]).status.success());
    let first = fs::read(run.join("metrics.csv")).unwrap();
    assert!(trgan(&["train", "--config", cfg.to_str().unwrap()]).status.success());
    assert_eq!(first, fs::read(run.join("metrics.csv")).unwrap());

    let csv = String::from_utf8(first).unwrap();
    let last: Vec<f64> = csv.lines().last().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    let o = trgan(&[
        "eval",
        "--checkpoint",
        run.join("final.ckpt").to_str().unwrap(),
        "--corpus",
        dir.path().join("validation.tsv").to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("mae,rmse"));
    let vals: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert!(vals.iter().all(|v| v.split('.').nth(1).unwrap().len() == 6));
    assert!((vals[0].parse::<f64>().unwrap() - last[4]).abs() <= 5e-7);
    assert!((vals[1].parse::<f64>().unwrap() - last[5]).abs() <= 5e-7);
}

#[test]
fn missing_embeddings_path_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_run(dir.path(), 1);
    fs::remove_file(dir.path().join("embeddings.txt")).unwrap();
    let o = trgan(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("embeddings.txt"));
    assert!(stdout(&o).is_empty());
}

#[test]
fn unknown_config_key_names_key_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_run(dir.path(), 1);
    let mut text = fs::read_to_string(&cfg).unwrap();
    text.push_str("learnin_rate = 0.1\n");
    fs::write(&cfg, &text).unwrap();
    let o = trgan(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("learnin_rate"), "{err}");
    assert!(err.contains(&format!(":{}:", text.lines().count())), "{err}");
}

#[test]
fn eval_rejects_bad_checkpoint_and_unlabeled_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_run(dir.path(), 1);
    assert!(trgan(&["train", "--config", cfg.to_str().unwrap()]).status.success());
    let ckpt = dir.path().join("run/final.ckpt");

    let mut bytes = fs::read(&ckpt).unwrap();
    bytes[0] ^= 0xFF;
    let bad = dir.path().join("bad.ckpt");
    fs::write(&bad, &bytes).unwrap();
    let val = dir.path().join("validation.tsv");
    let o = trgan(&["eval", "--checkpoint", bad.to_str().unwrap(), "--corpus", val.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("magic"));
    assert!(stdout(&o).is_empty());

    let unl = dir.path().join("unl.tsv");
    fs::write(&unl, "1.5\tone two\n\tthree four\n").unwrap();
    let o = trgan(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--corpus", unl.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unlabeled"));
}

#[test]
fn generate_contract() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_run(dir.path(), 1);
    assert!(trgan(&["train", "--config", cfg.to_str().unwrap()]).status.success());
    let ckpt = dir.path().join("run/final.ckpt");
    let ck = ckpt.to_str().unwrap();
    let none = trgan(&["generate", "--checkpoint", ck, "--n", "0", "--seed", "1"]);
    assert!(none.status.success());
    assert!(stdout(&none).is_empty());
    let a = trgan(&["generate", "--checkpoint", ck, "--n", "5", "--seed", "9"]);
    let b = trgan(&["generate", "--checkpoint", ck, "--n", "5", "--seed", "9"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let out = stdout(&a);
    assert_eq!(out.lines().count(), 5);
    for line in out.lines() {
        assert_eq!(line.matches('\t').count(), 1, "{line:?}");
        line.split('\t').next().unwrap().parse::<f64>().unwrap();
    }
}

#[test]
fn gradcheck_reports_every_layer_and_catches_faults() {
    let o = trgan(&["gradcheck"]);
    assert!(o.status.success(), "{}", stdout(&o));
    let out = stdout(&o);
    let names: Vec<&str> = out.lines().skip(1).map(|l| l.split_whitespace().next().unwrap()).collect();
    let mut unique = names.clone();
    unique.sort();
    unique.dedup();
    assert_eq!(unique.len(), names.len());
    for layer in ["tanh", "lstm", "conv1d", "batch_norm", "residual_block", "discriminator_adv_head", "discriminator_reg_head", "end_to_end"] {
        assert!(names.contains(&layer), "{layer}");
    }

    let bad = trgan(&["gradcheck", "--inject-fault", "tanh"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(stderr(&bad).contains("tanh"));
}

#[test]
fn synth_labels_round_trip_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 30, 10, &[]);
    let corpus = trgan::data::load_corpus(&dir.path().join("train.tsv")).unwrap();
    let expected = trgan::data::synth_corpus(&trgan::data::SynthSpec::new(30, 10, 20, 6, 0.1, 3)).unwrap();
    assert_eq!(corpus.labeled.len(), 30);
    assert_eq!(corpus.unlabeled.len(), 10);
    for (a, b) in corpus.labeled.iter().zip(&expected.split.labeled) {
        assert_eq!(a.label.unwrap().to_bits(), b.label.unwrap().to_bits());
        assert_eq!(a.tokens, b.tokens);
    }
}

#[test]
fn baseline_on_planted_linear_data_and_ignores_unlabeled() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = trgan(&[
        "synth-data", "--out", d.to_str().unwrap(), "--labeled", "60", "--unlabeled", "40", "--validation", "30",
        "--doc-len", "6", "--sigma", "0", "--seed", "2", "--linear-labels",
    ]);
    assert!(o.status.success());
    let run = |train: &Path| {
        trgan(&[
            "baseline",
            "--embeddings", d.join("embeddings.txt").to_str().unwrap(),
            "--train", train.to_str().unwrap(),
            "--test", d.join("validation.tsv").to_str().unwrap(),
            "--alpha", "1e-10",
        ])
    };
    let mixed = run(&d.join("train.tsv"));
    assert!(mixed.status.success(), "{}", stderr(&mixed));
    let out = stdout(&mixed);
    let mae: f64 = out.lines().nth(1).unwrap().split(',').next().unwrap().parse().unwrap();
    assert!(mae < 1e-6, "{out}");

    let labeled_only: String = fs::read_to_string(d.join("train.tsv"))
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('\t'))
        .map(|l| format!("{l}\n"))
        .collect();
    let lo = d.join("labeled.tsv");
    fs::write(&lo, labeled_only).unwrap();
    assert_eq!(run(&lo).stdout, mixed.stdout);
}

#[test]
fn usage_errors_exit_one_on_stderr() {
    for args in [
        &["bogus"][..],
        &["eval", "--checkpoint", "x"],
        &["generate", "--checkpoint", "x", "--n", "-3", "--seed", "1"],
        &["synth-data", "--out", "/tmp/x", "--labeled", "a", "--unlabeled", "1", "--validation", "1", "--doc-len", "3", "--sigma", "0", "--seed", "1"],
    ] {
        let o = trgan(args);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        assert!(stdout(&o).is_empty());
        assert!(!stderr(&o).is_empty());
    }
    let missing = trgan(&["eval", "--checkpoint", "/nonexistent.ckpt", "--corpus", "/nonexistent.tsv"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(stderr(&missing).contains("/nonexistent.ckpt"));
    let help = trgan(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    assert!(stdout(&help).contains("gradcheck"));
}
