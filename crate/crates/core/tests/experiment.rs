use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use ccl_core::dataset::DatasetBundle;
use ccl_core::experiment::{
    export_embeddings, item_tags, run_arms, run_experiment, sampler_arms, Arm, DatasetSource,
    ExperimentSpec, ItemTag,
};
use ccl_core::simulator::{generate, SimConfig};
use ccl_core::trainer::{prepare_tables, run_ablation, run_sampler_sweep, train, TrainConfig};
use ccl_core::ErrorKind;

fn sim() -> SimConfig {
    SimConfig {
        m: 40,
        n: 24,
        exposures_per_user: 6,
        test_exposures_per_user: 4,
        ..SimConfig::default()
    }
}

fn config() -> TrainConfig {
    TrainConfig {
        embed_dim: 4,
        batch_size: 64,
        max_epochs: 4,
        patience: 2,
        allow_off_grid: true,
        ..TrainConfig::default()
    }
}

fn spec(seeds: Vec<u64>, out: &Path) -> ExperimentSpec {
    ExperimentSpec::new(
        DatasetSource::Synthetic(sim()),
        config(),
        seeds,
        out.to_path_buf(),
    )
}

fn bundle() -> DatasetBundle {
    generate(&SimConfig { seed: 11, ..sim() }).unwrap().bundle
}

type Row = (String, String, Vec<f64>);

fn parse_tsv(text: &str) -> (Vec<String>, Vec<Row>) {
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .unwrap()
        .split('\t')
        .map(String::from)
        .collect();
    let rows = lines
        .map(|line| {
            let mut cells = line.split('\t');
            let arm = cells.next().unwrap().to_string();
            let seed = cells.next().unwrap().to_string();
            (arm, seed, cells.map(|c| c.parse().unwrap()).collect())
        })
        .collect();
    (header, rows)
}

#[test]
fn single_seed_mean_equals_its_row() {
    let table = run_experiment(&spec(vec![3], Path::new(""))).unwrap();
    let (mean, std) = table.aggregate("ccl-cf").unwrap();
    let row: Vec<f64> = table.runs[0]
        .report
        .columns()
        .into_iter()
        .map(|(_, v)| v)
        .collect();
    assert_eq!(mean, row);
    assert!(std.iter().all(|s| *s == 0.0));
}

#[test]
fn ten_seeds_give_ten_rows_plus_mean_and_std() {
    let dir = tempfile::tempdir().unwrap();
    let table = run_experiment(&spec((0..10).collect(), dir.path())).unwrap();
    assert_eq!(table.runs.len(), 10);
    let (header, rows) = parse_tsv(&fs::read_to_string(dir.path().join("results.tsv")).unwrap());
    assert_eq!(&header[..2], ["arm", "seed"]);
    assert_eq!(rows.len(), 12);
    let seeds: Vec<&str> = rows.iter().map(|(_, s, _)| s.as_str()).collect();
    let expected: Vec<String> = (0..10)
        .map(|s: u64| s.to_string())
        .chain(["mean".into(), "std".into()])
        .collect();
    assert_eq!(seeds, expected);

    // aggregates recomputed from the written per-seed rows
    let per_seed: Vec<&Vec<f64>> = rows[..10].iter().map(|(_, _, v)| v).collect();
    for c in 0..header.len() - 2 {
        let values: Vec<f64> = per_seed.iter().map(|r| r[c]).collect();
        let mean = values.iter().sum::<f64>() / 10.0;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 9.0;
        assert!((rows[10].2[c] - mean).abs() <= 1e-12, "{}", header[c + 2]);
        assert!(
            (rows[11].2[c] - var.sqrt()).abs() <= 1e-12,
            "{}",
            header[c + 2]
        );
    }
    for seed in 0..10 {
        assert!(dir
            .path()
            .join(format!("ccl-cf/seed-{seed}.ckpt"))
            .is_file());
        assert!(dir.path().join(format!("ccl-cf/seed-{seed}.log")).is_file());
    }
    assert!(dir.path().join("results.txt").is_file());
}

#[test]
fn rerun_writes_identical_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_experiment(&spec(vec![0, 1], a.path())).unwrap();
    run_experiment(&spec(vec![0, 1], b.path())).unwrap();
    for name in [
        "results.tsv",
        "results.txt",
        "config.txt",
        "ccl-cf/seed-1.ckpt",
        "ccl-cf/seed-1.log",
    ] {
        let x = fs::read(a.path().join(name)).unwrap();
        let y = fs::read(b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name}");
    }
    // same spec into the same directory overwrites with identical bytes
    run_experiment(&spec(vec![0, 1], a.path())).unwrap();
    assert_eq!(
        fs::read(a.path().join("results.tsv")).unwrap(),
        fs::read(b.path().join("results.tsv")).unwrap()
    );
}

#[test]
fn config_snapshot_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let original = spec(vec![4], dir.path());
    let first = run_experiment(&original).unwrap();
    let snapshot = fs::read_to_string(dir.path().join("config.txt")).unwrap();
    let spec_part = snapshot.split("\n[arm").next().unwrap();
    let restored = ExperimentSpec::from_kv(spec_part, "".into()).unwrap();
    assert_eq!(restored.config, original.config);
    assert_eq!(restored.dataset, original.dataset);
    let second = run_experiment(&restored).unwrap();
    assert_eq!(first.to_tsv(), second.to_tsv());
}

#[test]
fn empty_seed_list_is_rejected() {
    let err = run_experiment(&spec(vec![], Path::new(""))).unwrap_err();
    assert_eq!(err.kind(), ErrorKind::Config);
}

#[test]
fn missing_data_is_a_data_error() {
    let spec = ExperimentSpec::new(
        DatasetSource::Coat {
            dir: "/nonexistent/coat".into(),
            threshold: 3,
        },
        config(),
        vec![0],
        "".into(),
    );
    assert_eq!(run_experiment(&spec).unwrap_err().kind(), ErrorKind::Data);
}

#[test]
fn ablation_with_zero_lambda_in_both_arms_gives_identical_rows() {
    let bundle = bundle();
    let cfg = TrainConfig {
        lambda: 0.0,
        ..config()
    };
    let table = run_ablation(&bundle, &cfg, &[0, 1]).unwrap();
    assert_eq!(table.arms(), ["rec+ccl", "rec"]);
    let a: Vec<_> = table
        .runs_of("rec+ccl")
        .map(|r| r.report.columns())
        .collect();
    let b: Vec<_> = table.runs_of("rec").map(|r| r.report.columns()).collect();
    assert_eq!(a, b);
}

#[test]
fn ablation_reports_every_metric_for_both_arms() {
    let table = run_ablation(&bundle(), &config(), &[0]).unwrap();
    let columns = table.columns();
    for name in [
        "mae",
        "auc",
        "ndcg@5",
        "ndcg@10",
        "recall@5",
        "mrr",
        "gini",
        "global_utility",
    ] {
        assert!(columns.iter().any(|c| c == name), "{name}");
    }
    assert_eq!(table.runs.len(), 2);
}

#[test]
fn single_seed_sampler_sweep_emits_four_rows() {
    let table = run_sampler_sweep(&bundle(), &config(), &[0]).unwrap();
    assert_eq!(table.runs.len(), 4);
    assert_eq!(table.arms(), ["cf", "ps", "pop", "no-ssl"]);
    let text = table.to_text();
    assert!(text.lines().next().unwrap().contains("ndcg@5"));
    assert!(text.lines().next().unwrap().contains("recall@5"));
}

#[test]
fn run_arms_writes_one_directory_per_arm() {
    let dir = tempfile::tempdir().unwrap();
    let arms = sampler_arms(&config());
    run_arms(&spec(vec![0], dir.path()), &arms).unwrap();
    for arm in &arms {
        assert!(
            dir.path().join(&arm.name).join("seed-0.ckpt").is_file(),
            "{}",
            arm.name
        );
    }
    let snapshot = fs::read_to_string(dir.path().join("config.txt")).unwrap();
    assert_eq!(snapshot.matches("[arm ").count(), 4);
}

#[test]
fn run_arms_rejects_invalid_arm_configuration() {
    let bad = Arm::new(
        "bad",
        TrainConfig {
            embed_dim: 3,
            ..TrainConfig::default()
        },
    );
    let err = run_arms(&spec(vec![0], Path::new("")), &[bad]).unwrap_err();
    assert_eq!(err.kind(), ErrorKind::Config);
}

fn trained(bundle: &DatasetBundle) -> ccl_core::model::ModelParams {
    let cfg = config();
    let tables = prepare_tables(bundle, &cfg).unwrap();
    train(bundle, &cfg, &tables).unwrap().params
}

#[test]
fn export_tags_partition_items_and_repeat_identically() {
    let bundle = bundle();
    let params = trained(&bundle);
    let dir = tempfile::tempdir().unwrap();
    for user in [0, 17, 39] {
        let tags = item_tags(&bundle, user).unwrap();
        assert_eq!(tags.len(), bundle.n);
        let train: BTreeSet<usize> = bundle
            .exposure
            .exposed_items(user)
            .iter()
            .copied()
            .collect();
        let test: BTreeSet<usize> = bundle
            .test
            .iter()
            .filter(|r| r.user == user)
            .map(|r| r.item)
            .collect();
        for (item, tag) in tags.iter().enumerate() {
            let expected = if train.contains(&item) {
                ItemTag::Train
            } else if test.contains(&item) {
                ItemTag::Test
            } else {
                ItemTag::Unexposed
            };
            assert_eq!(*tag, expected);
        }

        let a = dir.path().join(format!("a{user}.tsv"));
        let b = dir.path().join(format!("b{user}.tsv"));
        export_embeddings(&params, &bundle, user, &a).unwrap();
        export_embeddings(&params, &bundle, user, &b).unwrap();
        let text = fs::read_to_string(&a).unwrap();
        assert_eq!(text, fs::read_to_string(&b).unwrap());

        let lines: Vec<&str> = text.lines().skip(1).collect();
        assert_eq!(lines.len(), 1 + 2 * bundle.n);
        assert_eq!(lines.iter().filter(|l| l.starts_with("user\t")).count(), 1);
        let item_rows: Vec<&str> = lines
            .iter()
            .copied()
            .filter(|l| l.starts_with("item\t"))
            .collect();
        assert_eq!(item_rows.len(), bundle.n);
        let count = |tag: &str| {
            item_rows
                .iter()
                .filter(|l| l.split('\t').nth(2) == Some(tag))
                .count()
        };
        assert_eq!(count("train"), train.len());
        assert_eq!(count("test"), test.difference(&train).count());
        assert_eq!(
            count("train") + count("test") + count("unexposed"),
            bundle.n
        );
        let pair_width = lines
            .iter()
            .find(|l| l.starts_with("pair\t"))
            .map(|l| l.split('\t').count() - 4)
            .unwrap();
        assert_eq!(pair_width, 2 * params.dim());
    }
}

#[test]
fn export_rejects_out_of_range_user() {
    let bundle = bundle();
    let params = trained(&bundle);
    let dir = tempfile::tempdir().unwrap();
    let err = export_embeddings(&params, &bundle, bundle.m, &dir.path().join("x.tsv")).unwrap_err();
    assert_eq!(err.kind(), ErrorKind::InvalidInput);
}
