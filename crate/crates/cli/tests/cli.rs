use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "d_embed = 8\nd_lstm = 8\nd_tree = 8\nd_leaf = 4\nepochs = 3\nlearning_rate = 0.005\ntrain_ratio = 0.6\nval_ratio = 0.2\ntest_ratio = 0.2\nks = [3]\n";

fn treeman(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_treeman"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn metric(text: &str, name: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{name}=")))
        .unwrap_or_else(|| panic!("{name} missing from {text}"))
        .parse()
        .unwrap()
}

#[test]
fn generate_train_eval() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fs::write(root.join("small.toml"), SMALL).unwrap();

    let gen = stdout(&treeman(root, &["generate", "--preset", "memorize", "--n-docs", "30", "--seed", "3"]));
    assert!(gen.contains("30 admissions"));
    for f in ["notes.jsonl", "labels.jsonl", "timeseries.jsonl", "events.jsonl", "singletons.jsonl"] {
        assert!(root.join("data").join(f).is_file(), "{f}");
    }

    let train = stdout(&treeman(root, &["--config", "small.toml", "--seed", "3", "train"]));
    let run = root.join("runs/seed-3");
    for f in ["checkpoint.json", "ensemble.json", "metrics.json", "metrics.txt", "train_log.csv", "config.toml"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let f1 = metric(&train, "micro_f1");
    assert!((0.0..=1.0).contains(&f1));

    let eval = stdout(&treeman(root, &["eval", "--run", "runs/seed-3", "--split", "test"]));
    assert_eq!(metric(&eval, "micro_f1"), f1);
    assert_eq!(metric(&eval, "p@3"), metric(&train, "p@3"));
}

#[test]
fn errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();

    let out = treeman(root, &["generate"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--seed"));

    let out = treeman(root, &["--seed", "1", "train"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    fs::write(root.join("bad.toml"), "d_leaf = 4\nno_such_key = 1\n").unwrap();
    let out = treeman(root, &["--config", "bad.toml", "--seed", "1", "train"]);
    assert!(!out.status.success());

    let out = treeman(root, &["sweep", "width", "1"]);
    assert!(!out.status.success());
}
