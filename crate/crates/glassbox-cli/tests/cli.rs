//! End-to-end checks through the installed binary: file handoff between
//! subcommands, determinism of emitted CSVs, and error surfacing.

use std::path::Path;
use std::process::{Command, Output};

const QUICK: &[&str] = &[
    "--set", "instances=90",
    "--set", "vocab=36",
    "--set", "dim=6",
    "--set", "epochs=8",
    "--set", "hidden=6",
    "--set", "sample=12",
    "--set", "csa_grid=0.25,0.5",
    "--set", "era_grid=1,2",
    "--set", "mma_grid=1,2",
    "--set", "smoothgrad_samples=5",
    "--set", "itergrad_steps=8",
    "--set", "integrad_points=5",
    "--set", "rounds=1",
    "--set", "epochs_per_round=1",
];

fn glassbox(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_glassbox"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str]) {
    let out = glassbox(args);
    assert!(
        out.status.success(),
        "command {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
}

fn quick_args<'a>(sub: &'a str, out_dir: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut args = vec![sub, "--out", out_dir];
    args.extend_from_slice(QUICK);
    args.extend_from_slice(extra);
    args
}

#[test]
fn subcommands_hand_artifacts_to_each_other() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path().to_str().unwrap().to_string();
    let synth_dir = format!("{base}/synth");
    let train_dir = format!("{base}/train");
    let eval_dir = format!("{base}/eval");
    let int_dir = format!("{base}/interpret");
    let corpus = format!("{synth_dir}/corpus.jsonl");
    let embeddings = format!("{synth_dir}/embeddings.txt");
    let model = format!("{train_dir}/model.json");

    run_ok(&quick_args("synth", &synth_dir, &[]));
    assert!(Path::new(&corpus).exists());

    run_ok(&quick_args(
        "train",
        &train_dir,
        &["--corpus", &corpus, "--embeddings", &embeddings],
    ));
    assert!(Path::new(&model).exists());

    run_ok(&quick_args(
        "evaluate",
        &eval_dir,
        &[
            "--corpus", &corpus,
            "--embeddings", &embeddings,
            "--model", &model,
            "--metric", "era",
            "--methods", "inpgrad,integrad",
        ],
    ));
    let curves = std::fs::read_to_string(format!("{eval_dir}/curves.csv")).unwrap();
    assert!(curves.starts_with("method,metric,budget,mean_drop,std_drop,n,n_excluded"));
    assert!(curves.contains("inpgrad,era"));
    assert!(!curves.contains("csa"));

    run_ok(&quick_args(
        "interpret",
        &int_dir,
        &[
            "--corpus", &corpus,
            "--embeddings", &embeddings,
            "--model", &model,
            "--method", "itergrad",
        ],
    ));
    let lines = std::fs::read_to_string(format!("{int_dir}/attributions.jsonl")).unwrap();
    assert!(lines.lines().count() > 0);
    assert!(lines.lines().all(|l| l.contains("\"method\":\"itergrad\"")));
}

#[test]
fn cross_eval_reruns_are_bitwise_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run_ok(&quick_args("cross-eval", a.to_str().unwrap(), &[]));
    run_ok(&quick_args("cross-eval", b.to_str().unwrap(), &[]));
    assert_eq!(
        std::fs::read(a.join("curves.csv")).unwrap(),
        std::fs::read(b.join("curves.csv")).unwrap()
    );
}

#[test]
fn align_reruns_are_bitwise_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run_ok(&quick_args("align", a.to_str().unwrap(), &[]));
    run_ok(&quick_args("align", b.to_str().unwrap(), &[]));
    assert_eq!(
        std::fs::read(a.join("alignment.csv")).unwrap(),
        std::fs::read(b.join("alignment.csv")).unwrap()
    );
}

#[test]
fn masking_metric_on_bag_fails_before_compute() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("x");
    let mut args = quick_args("cross-eval", out_dir.to_str().unwrap(), &[]);
    args.extend_from_slice(&["--set", "arch=bag"]);
    let out = glassbox(&args);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("attention"), "stderr was: {stderr}");
    assert!(!out_dir.exists(), "failed validation must not leave artifacts");
}

#[test]
fn missing_rationale_is_a_stage_tagged_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("x");
    let args = quick_args(
        "align",
        out_dir.to_str().unwrap(),
        &["--rationale", "/nonexistent/marks.json"],
    );
    let out = glassbox(&args);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("align"), "stderr was: {stderr}");
    assert!(stderr.contains("/nonexistent/marks.json"), "stderr was: {stderr}");
}

#[test]
fn unknown_config_key_is_rejected() {
    let out = glassbox(&["synth", "--set", "no_such_key=1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_key"));
}
