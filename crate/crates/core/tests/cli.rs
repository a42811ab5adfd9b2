use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SIM: [&str; 9] = [
    "--sim-m",
    "30",
    "--sim-n",
    "20",
    "--sim-exposures-per-user",
    "5",
    "--sim-test-exposures-per-user",
    "4",
    "--synthetic",
];
const SMALL: [&str; 9] = [
    "--embed-dim",
    "4",
    "--batch-size",
    "32",
    "--max-epochs",
    "3",
    "--patience",
    "2",
    "--allow-off-grid",
];

fn ccl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ccl"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = ccl(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn with<'a>(head: &[&'a str], tail: &[&'a str]) -> Vec<&'a str> {
    head.iter().chain(tail).copied().collect()
}

fn train_args<'a>(command: &'a str, out: &'a str, seeds: &'a str) -> Vec<&'a str> {
    let mut args = vec![command];
    args.extend(SIM);
    args.extend(SMALL);
    args.extend(["--lambda", "1", "--seeds", seeds, "--out", out]);
    args
}

#[test]
fn train_writes_tables_checkpoints_and_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let stdout = ok(&train_args("train", out, "0,1")).stdout;
    assert!(String::from_utf8_lossy(&stdout).contains("ccl-cf"));
    for name in [
        "results.tsv",
        "results.txt",
        "config.txt",
        "ccl-cf/seed-0.ckpt",
        "ccl-cf/seed-1.log",
    ] {
        assert!(dir.path().join(name).is_file(), "{name}");
    }
    let tsv = fs::read_to_string(dir.path().join("results.tsv")).unwrap();
    assert_eq!(tsv.lines().count(), 1 + 2 + 2);
}

#[test]
fn ablate_and_sweep_emit_every_arm() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("ablate");
    let s = dir.path().join("sweep");
    ok(&train_args("ablate", a.to_str().unwrap(), "0"));
    ok(&train_args("sweep-samplers", s.to_str().unwrap(), "0"));
    let arms = |p: &Path| -> Vec<String> {
        fs::read_to_string(p.join("results.tsv"))
            .unwrap()
            .lines()
            .skip(1)
            .filter(|l| l.split('\t').nth(1) == Some("0"))
            .map(|l| l.split('\t').next().unwrap().to_string())
            .collect()
    };
    assert_eq!(arms(&a), ["rec+ccl", "rec"]);
    assert_eq!(arms(&s), ["cf", "ps", "pop", "no-ssl"]);
}

#[test]
fn simulate_evaluate_and_export_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&with(&["simulate"], &SIM[..8])
        .into_iter()
        .chain(["--out", data.to_str().unwrap()])
        .collect::<Vec<_>>());
    for name in ["train.txt", "test.txt", "truth.txt", "propensity.txt"] {
        assert!(data.join(name).is_file(), "{name}");
    }
    let train_path = data.join("train.txt");
    let test_path = data.join("test.txt");
    let triples = [
        "--train-path",
        train_path.to_str().unwrap(),
        "--test-path",
        test_path.to_str().unwrap(),
        "--users",
        "30",
        "--items",
        "20",
    ];

    let run = dir.path().join("run");
    let mut args = vec!["train"];
    args.extend(&triples);
    args.extend(SMALL);
    args.extend([
        "--lambda",
        "0",
        "--seeds",
        "0",
        "--out",
        run.to_str().unwrap(),
    ]);
    ok(&args);
    let ckpt = run.join("base/seed-0.ckpt");
    assert!(ckpt.is_file());

    let eval_dir = dir.path().join("eval");
    let mut args = vec!["evaluate"];
    args.extend(&triples);
    args.extend([
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--out",
        eval_dir.to_str().unwrap(),
    ]);
    ok(&args);
    // evaluating the saved checkpoint reproduces the training-time metrics
    let metrics = |p: &Path| -> Vec<String> {
        let text = fs::read_to_string(p.join("results.tsv")).unwrap();
        text.lines()
            .nth(1)
            .unwrap()
            .split('\t')
            .skip(2)
            .map(String::from)
            .collect()
    };
    assert_eq!(metrics(&eval_dir), metrics(&run));

    let emb = dir.path().join("emb.tsv");
    let mut args = vec!["export-embeddings"];
    args.extend(&triples);
    args.extend([
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--user",
        "3",
        "--out",
        emb.to_str().unwrap(),
    ]);
    ok(&args);
    assert_eq!(
        fs::read_to_string(&emb).unwrap().lines().count(),
        1 + 1 + 2 * 20
    );

    let mut args = vec!["export-embeddings"];
    args.extend(&triples);
    args.extend([
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--user",
        "30",
        "--out",
        emb.to_str().unwrap(),
    ]);
    assert_eq!(ccl(&args).status.code(), Some(5));
}

#[test]
fn prepare_writes_estimated_tables() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["prepare"];
    args.extend(SIM);
    args.extend(["--out", dir.path().to_str().unwrap()]);
    let stdout = String::from_utf8(ok(&args).stdout).unwrap();
    assert!(stdout.contains("users = 30"));
    for name in ["popularity.tsv", "propensity.txt", "summary.txt"] {
        assert!(dir.path().join(name).is_file(), "{name}");
    }
}

#[test]
fn failures_map_to_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();

    let mut bad_key = train_args("train", out, "0");
    bad_key.extend(["--set", "no_such_key=1"]);
    assert_eq!(ccl(&bad_key).status.code(), Some(2));

    let mut off_grid = vec!["train"];
    off_grid.extend(SIM);
    off_grid.extend(["--embed-dim", "5", "--out", out]);
    let failed = ccl(&off_grid);
    assert_eq!(failed.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&failed.stderr).contains("embed_dim"));

    let missing = [
        "train",
        "--coat-dir",
        "/nonexistent/coat",
        "--seeds",
        "0",
        "--out",
        out,
    ];
    assert_eq!(ccl(&missing).status.code(), Some(3));

    let mut diverge = vec!["train"];
    diverge.extend(SIM);
    diverge.extend([
        "--allow-off-grid",
        "--embed-dim",
        "4",
        "--learning-rate",
        "1e300",
    ]);
    diverge.extend([
        "--max-epochs",
        "50",
        "--patience",
        "50",
        "--seeds",
        "0",
        "--out",
        out,
    ]);
    assert_eq!(ccl(&diverge).status.code(), Some(4));
}
