use std::path::Path;
use std::process::{Command, Output};

fn sxnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sxnet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Metrics lines with the wall-clock field removed.
fn metrics(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(" wall_ms=").next().unwrap().to_string())
        .collect()
}

const SMALL: &[&str] = &[
    "--maps",
    "8",
    "--train-len",
    "8",
    "--batch",
    "4",
    "--eval-interval",
    "5",
    "--eval-samples",
    "8",
    "--eval-lengths",
    "8,16",
];

fn train(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--out", out.to_str().unwrap()];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    sxnet(&args)
}

#[test]
fn route_verifies_permutation() {
    let o = sxnet(&["route", "--perm", "2,0,3,1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(
        text.lines().filter(|l| l.chars().all(|c| c == '0' || c == '1')).count(),
        3
    );
    assert!(text.contains("verified: 4 wires, 3 stages"));
}

#[test]
fn route_rejects_non_permutation() {
    for perm in ["0,0,1,2", "0,1,2", "0,x,1,2"] {
        let o = sxnet(&["route", "--perm", perm]);
        assert_eq!(o.status.code(), Some(2), "{perm}");
        assert!(stderr(&o).contains("not a permutation"), "{perm}: {}", stderr(&o));
    }
}

#[test]
fn route_random_batch() {
    let o = sxnet(&["route", "--random", "5", "50"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("verified 50/50 random permutations on 32 wires"));
}

#[test]
fn usage_errors_exit_two() {
    let o = sxnet(&["train"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("usage: sxnet train --task"));

    let o = sxnet(&["train", "--task", "rev", "--set", "width=3"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("width"));

    let o = sxnet(&["train", "--task", "rev", "--maps", "7"]);
    assert_eq!(o.status.code(), Some(2));

    let o = sxnet(&["train", "--task", "reverse"]);
    assert_eq!(o.status.code(), Some(2));

    let o = sxnet(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));

    let o = sxnet(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn divergence_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let o = train(
        dir.path(),
        &["--task", "rev", "--steps", "10", "--lr", "1e30", "--set", "clip=off"],
    );
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("diverged"));
}

#[test]
fn train_writes_outputs_and_config_reloads() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let o = train(&a, &["--task", "sort", "--steps", "10", "--seed", "4"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stderr(&o).contains("config task = sort"));
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("step=")).count(), 2);
    for f in ["config.txt", "metrics.txt", "checkpoint.sxnc"] {
        assert!(a.join(f).exists(), "{f}");
    }

    // The written config reproduces the run.
    let b = dir.path().join("b");
    let cfg = a.join("config.txt");
    let o = sxnet(&["train", "--config", cfg.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(metrics(&a.join("metrics.txt")), metrics(&b.join("metrics.txt")));
    assert_eq!(
        std::fs::read(a.join("checkpoint.sxnc")).unwrap(),
        std::fs::read(b.join("checkpoint.sxnc")).unwrap()
    );
}

#[test]
fn zero_steps_writes_checkpoint_only() {
    let dir = tempfile::tempdir().unwrap();
    let o = train(dir.path(), &["--task", "rev", "--steps", "0"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(dir.path().join("checkpoint.sxnc").exists());
    assert!(!stdout(&o).contains("step="));
    assert!(metrics(&dir.path().join("metrics.txt")).is_empty());
}

#[test]
fn interrupted_run_resumes_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let (full, split) = (dir.path().join("full"), dir.path().join("split"));
    let args = ["--task", "rev", "--steps", "20", "--threads", "1"];
    assert_eq!(train(&full, &args).status.code(), Some(0));
    let mut halted = args.to_vec();
    halted.extend(["--set", "halt_after=10"]);
    assert_eq!(train(&split, &halted).status.code(), Some(0));
    assert_eq!(metrics(&split.join("metrics.txt")).len(), 2);
    let mut resumed = args.to_vec();
    resumed.push("--resume");
    let o = train(&split, &resumed);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(metrics(&full.join("metrics.txt")), metrics(&split.join("metrics.txt")));
    assert_eq!(
        std::fs::read(full.join("checkpoint.sxnc")).unwrap(),
        std::fs::read(split.join("checkpoint.sxnc")).unwrap()
    );
}

#[test]
fn resume_without_checkpoint_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = train(dir.path(), &["--task", "rev", "--steps", "5", "--resume"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn eval_reports_table_and_records() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        train(dir.path(), &["--task", "dup", "--steps", "5"]).status.code(),
        Some(0)
    );
    let out = dir.path().to_str().unwrap();
    let o = sxnet(&["eval", "--out", out, "--samples", "4"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let header = text.lines().next().unwrap();
    for col in ["length", "x_train", "accuracy", "sequence_acc", "samples"] {
        assert!(header.contains(col), "{header}");
    }
    let records: Vec<&str> = text.lines().filter(|l| l.starts_with("eval ")).collect();
    let lengths: Vec<&str> = records
        .iter()
        .map(|l| l.split_whitespace().find_map(|f| f.strip_prefix("length=")).unwrap())
        .collect();
    assert_eq!(lengths, ["8", "16", "32", "64"]);

    let o = sxnet(&["eval", "--out", out, "--lengths", "32", "--samples", "2"]);
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("eval ")).count(), 1);
}

#[test]
fn eval_rejects_mismatches() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        train(dir.path(), &["--task", "dup", "--steps", "0"]).status.code(),
        Some(0)
    );
    let out = dir.path().to_str().unwrap();
    for extra in [
        ["--maps", "16"],
        ["--task", "rev"],
        ["--dtype", "f64"],
        ["--lengths", "12"],
    ] {
        let mut args = vec!["eval", "--out", out];
        args.extend_from_slice(&extra);
        let o = sxnet(&args);
        assert_eq!(o.status.code(), Some(2), "{extra:?}: {}", stderr(&o));
    }
    let missing = dir.path().join("none.sxnc");
    let o = sxnet(&["eval", "--checkpoint", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let garbage = dir.path().join("garbage.sxnc");
    std::fs::write(&garbage, b"not a checkpoint").unwrap();
    let o = sxnet(&["eval", "--checkpoint", garbage.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gradcheck_passes_and_catches_corruption() {
    let o = sxnet(&["gradcheck"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("gradcheck passed"));

    let o = sxnet(&["gradcheck", "--corrupt", "tanh"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("gradcheck FAILED tanh"), "{err}");
    assert_eq!(err.matches("FAILED").count(), 1);

    let o = sxnet(&["gradcheck", "--corrupt", "nothing"]);
    assert_eq!(o.status.code(), Some(2));

    let o = sxnet(&["gradcheck", "--list"]);
    assert!(stdout(&o).lines().any(|l| l == "model/k3_m4_b1"));
}

#[test]
fn gradcheck_f32_warns() {
    let o = sxnet(&["gradcheck", "--dtype", "f32"]);
    assert!(stderr(&o).contains("relaxed tolerance"));
}

#[test]
fn bench_prints_rows_and_slope() {
    let o = sxnet(&[
        "bench",
        "--maps",
        "8",
        "--lengths",
        "16,32,64,128",
        "--reps",
        "2",
        "--warmup",
        "1",
        "--attention",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("slope shuffle_exchange="));
    assert!(text.contains("slope attention="));
}
