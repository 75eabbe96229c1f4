use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
[task]
vocab = 3
thought_len = 2
dim = 6

[data]
train_count = 120
test_count = 60

[train]
rollout_batch = 32
train_batch = 16

[eval]
seeds = [0, 1]

[verify]
gradient_models = 10
weight_inputs = 500
mc_draws = 2000
"#;

fn dwrl(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dwrl"));
    cmd.args(args).env_remove("DWRL_SEED").env_remove("DWRL_THREADS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn unknown_method_is_a_usage_error_listing_methods() {
    let out = dwrl(&["train", "--method", "ppo", "--data", "nowhere"], &[]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    for m in ["dwrl", "bt", "grpo-pair", "grpo-point", "no-misalign", "prefilled"] {
        assert!(err.contains(m), "{err}");
    }
}

#[test]
fn missing_files_and_bad_configs_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dwrl(&["train", "--method", "bt", "--data", p(&dir.path().join("absent.jsonl"))], &[]);
    assert_eq!(out.status.code(), Some(3));
    let out = dwrl(&["--config", p(&dir.path().join("absent.toml")), "verify"], &[]);
    assert_eq!(out.status.code(), Some(3));

    let cfg = write_config(dir.path(), "[train]\nepochs = \"two\"\n");
    assert_eq!(dwrl(&["--config", &cfg, "verify"], &[]).status.code(), Some(4));

    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, "{\"format\": \"something-else\"}\n").unwrap();
    assert_eq!(dwrl(&["train", "--method", "bt", "--data", p(&bad)], &[]).status.code(), Some(4));
}

#[test]
fn verify_passes_on_small_config_and_fails_with_impossible_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dwrl(&["--config", &cfg, "verify", "--out", p(&dir.path().join("v"))], &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(dir.path().join("v/verify.json").exists());
    assert!(dir.path().join("v/manifest.json").exists());

    let strict = write_config(dir.path(), &format!("{SMALL}fd_tolerance = 1e-30\n"));
    let out = dwrl(&["--config", &strict, "verify"], &[]);
    assert_eq!(out.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL gradient-identity"));
}

#[test]
fn train_eval_pipeline_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = write_config(root, SMALL);
    let data = root.join("data");
    assert!(dwrl(&["--config", &cfg, "gen-data", "--out", p(&data)], &[]).status.success());
    assert!(data.join("manifest.json").exists());

    let run_a = root.join("a");
    let run_b = root.join("b");
    let run_c = root.join("c");
    let a = dwrl(&["--config", &cfg, "--seed", "9", "train", "--method", "dwrl", "--data", p(&data), "--out", p(&run_a)], &[]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let b = dwrl(
        &["--config", &cfg, "train", "--method", "dwrl", "--data", p(&data), "--out", p(&run_b)],
        &[("DWRL_SEED", "9"), ("DWRL_THREADS", "1")],
    );
    assert!(b.status.success());
    let c = dwrl(&["--config", &cfg, "--seed", "10", "train", "--method", "dwrl", "--data", p(&data), "--out", p(&run_c)], &[]);
    assert!(c.status.success());

    let history = |d: &Path| fs::read(d.join("history.csv")).unwrap();
    assert_eq!(history(&run_a), history(&run_b));
    assert_ne!(history(&run_a), history(&run_c));
    assert_eq!(fs::read(run_a.join("model.json")).unwrap(), fs::read(run_b.join("model.json")).unwrap());

    let eval = dwrl(&["eval", "--model", p(&run_a.join("model.json")), "--data", p(&data), "--out", p(&root.join("e"))], &[]);
    assert!(eval.status.success());
    let table = String::from_utf8_lossy(&eval.stdout);
    assert!(table.starts_with("method,seed,raw_accuracy,accuracy,n_test\ndwrl,9,"), "{table}");
    assert!(root.join("e/manifest.json").exists());
}

#[test]
fn ablate_tables_are_byte_identical_across_runs_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let one = dir.path().join("one");
    let two = dir.path().join("two");
    let a = dwrl(&["--config", &cfg, "--threads", "1", "ablate", "--out", p(&one)], &[]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let b = dwrl(&["--config", &cfg, "--threads", "3", "ablate", "--out", p(&two)], &[]);
    assert!(b.status.success());
    let t1 = fs::read_to_string(one.join("results.csv")).unwrap();
    assert_eq!(t1, fs::read_to_string(two.join("results.csv")).unwrap());
    // 6 methods x 2 seeds, 6 medians, header
    assert_eq!(t1.lines().count(), 1 + 12 + 6);
    for line in t1.lines().skip(1) {
        let acc: f64 = line.split(',').nth(3).unwrap().parse().unwrap();
        assert!((0.5..=1.0).contains(&acc), "{line}");
    }
}
