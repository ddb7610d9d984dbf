use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bgm-han"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    let out = bin().args(args).current_dir(dir).output().unwrap();
    out
}

fn ok(args: &[&str], dir: &Path) -> String {
    let out = run(args, dir);
    let stdout = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(
        out.status.success(),
        "{args:?} failed\nstdout:\n{stdout}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    stdout
}

const SMALL: &[&str] = &["--n", "80", "--set", "model.sentences=2", "--set", "model.words=6", "--target-size", "150"];

fn with(base: &[&'static str], extra: &[&'static str]) -> Vec<&'static str> {
    base.iter().chain(SMALL).chain(extra).copied().collect()
}

#[test]
fn help_for_every_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let top = ok(&["--help"], dir.path());
    for sub in ["gen-data", "tokenize", "train", "eval", "ablate", "report"] {
        assert!(top.contains(sub), "{top}");
        let text = ok(&[sub, "--help"], dir.path());
        for flag in ["--config", "--seed", "--out", "--profile", "--set"] {
            assert!(text.contains(flag), "{sub} help lacks {flag}");
        }
    }
}

#[test]
fn generate_tokenize_train_eval_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let msg = ok(&with(&["gen-data", "--out", "data.jsonl", "--seed", "3"], &[]), d);
    assert!(msg.contains("wrote 80 profiles"), "{msg}");
    assert_eq!(std::fs::read_to_string(d.join("data.jsonl")).unwrap().lines().count(), 80);

    ok(&with(&["tokenize", "--data", "data.jsonl", "--out", "vocab.txt"], &[]), d);
    assert!(d.join("vocab.txt").exists());

    let train = ok(
        &with(&["train", "--data", "data.jsonl", "--vocab", "vocab.txt", "--out", "run", "--epochs", "3"], &[]),
        d,
    );
    assert!(train.contains("epoch   3"), "{train}");
    for f in ["checkpoint.json", "history.jsonl", "config.toml", "metrics.json"] {
        assert!(d.join("run").join(f).exists(), "{f}");
    }

    let eval = ok(
        &with(&["eval", "--checkpoint", "run/checkpoint.json", "--data", "data.jsonl", "--baseline", "--out", "eval.json"], &[]),
        d,
    );
    assert!(eval.contains("macro"), "{eval}");
    assert!(eval.contains("TF-IDF"), "{eval}");
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("eval.json")).unwrap()).unwrap();
    assert!(json["model"]["f1"].is_number());

    // The saved config reproduces the run's settings on its own.
    ok(&["eval", "--checkpoint", "run/checkpoint.json", "--data", "data.jsonl", "--config", "run/config.toml"], d);

    let report = ok(&["report", "run/history.jsonl"], d);
    for title in ["train loss", "validation accuracy", "learning rate"] {
        assert!(report.contains(title), "{report}");
    }
}

#[test]
fn eval_refuses_a_checkpoint_from_another_config() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&with(&["train", "--out", "run", "--epochs", "1"], &[]), d);
    let out = run(
        &with(&["eval", "--checkpoint", "run/checkpoint.json"], &["--set", "model.heads=2"]),
        d,
    );
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("config hash"), "{err}");
}

#[test]
fn bad_override_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["gen-data", "--set", "data.signal_strength=2"], dir.path());
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("data.signal_strength"), "{err}");
    let out = run(&["gen-data", "--set", "model.colour=red"], dir.path());
    assert!(!out.status.success());
}
