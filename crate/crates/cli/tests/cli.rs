use std::path::Path;
use std::process::{Command, Output};

fn esfw(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_esfw"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn gen(dir: &Path, pairs: &str, test_pairs: &str) {
    let out = esfw(&[
        "gen-data", "--kind", "sphere,gaussian-clusters", "--n", "16", "--pairs", pairs, "--test-pairs", test_pairs,
        "--out", dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(esfw(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(esfw(&["gen-data"]).status.code(), Some(1));
    assert_eq!(esfw(&["gradcheck", "--k", "0"]).status.code(), Some(1));
    assert_eq!(esfw(&["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nothing");
    let out = esfw(&["train", "--data", missing.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
}

#[test]
fn gen_data_writes_every_pair_and_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "3", "2");
    let bins = std::fs::read_dir(dir.path())
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "bin"))
        .count();
    assert_eq!(bins, 5);
    assert!(dir.path().join("manifest.txt").exists());
}

#[test]
fn train_eval_match_and_plot_chain_together() {
    let dir = tempfile::tempdir().unwrap();
    let (data, run) = (dir.path().join("data"), dir.path().join("run"));
    gen(&data, "4", "2");
    let (data_s, run_s) = (data.to_str().unwrap(), run.to_str().unwrap());
    let common = ["--k", "4", "--layers", "2", "--dg", "4", "--df", "8", "--batch", "2"];
    let mut args = vec!["train", "--data", data_s, "--out", run_s, "--epochs", "2"];
    args.extend(common);
    let out = esfw(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let log = std::fs::read_to_string(run.join("train.log")).unwrap();
    assert!(log.lines().any(|l| l == "epoch,loss,corr@0"));
    assert!(log.lines().any(|l| l.starts_with("2,")));

    let eval_dir = dir.path().join("eval");
    let out = esfw(&["eval", "--checkpoint", run_s, "--data", data_s, "--out", eval_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(eval_dir.join("curves.csv")).unwrap();
    assert!(csv.starts_with("radius,method,corr\n"));
    assert_eq!(csv.lines().count(), 1 + 5 * 7);

    let pair = data.join("pair_00000.bin");
    let out = esfw(&["match", "--checkpoint", run_s, "--pair", pair.to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().filter(|l| l.split(',').count() == 3).count(), 16);

    let svg = dir.path().join("c.svg");
    let out = esfw(&["plot", "--csv", eval_dir.join("curves.csv").to_str().unwrap(), "--out", svg.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(std::fs::read_to_string(svg).unwrap().starts_with("<svg"));
}
