//! Multi-seed runs, result tables and embedding export.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::ccl::SamplerKind;
use crate::dataset::{load_coat_with_threshold, load_triples, DatasetBundle, TripleOptions};
use crate::error::{Error, Result};
use crate::exposure::PropensityTable;
use crate::metrics::{evaluate, EvalCutoffs, MetricsReport};
use crate::model::ModelParams;
use crate::simulator::{self, SimConfig};
use crate::trainer::{self, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Coat {
        dir: PathBuf,
        threshold: u8,
    },
    Triples {
        train: PathBuf,
        test: PathBuf,
        users: usize,
        items: usize,
        options: TripleOptions,
    },
    /// Regenerated for every run seed, with the simulator seed set to the run seed.
    Synthetic(SimConfig),
}

/// A loaded dataset, plus true propensities when it was simulated.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub bundle: DatasetBundle,
    pub oracle: Option<PropensityTable>,
}

impl DatasetSource {
    pub fn load(&self, seed: u64, propensity_floor: f64) -> Result<LoadedData> {
        match self {
            DatasetSource::Coat { dir, threshold } => Ok(LoadedData {
                bundle: load_coat_with_threshold(dir, *threshold)?,
                oracle: None,
            }),
            DatasetSource::Triples {
                train,
                test,
                users,
                items,
                options,
            } => Ok(LoadedData {
                bundle: load_triples(train, test, *users, *items, *options)?,
                oracle: None,
            }),
            DatasetSource::Synthetic(cfg) => {
                let sim = simulator::generate(&SimConfig { seed, ..*cfg })?;
                let oracle = sim.oracle_propensity(propensity_floor)?;
                Ok(LoadedData {
                    bundle: sim.bundle,
                    oracle: Some(oracle),
                })
            }
        }
    }

    /// Whether the data is identical for every seed.
    pub fn is_fixed(&self) -> bool {
        !matches!(self, DatasetSource::Synthetic(_))
    }

    fn to_kv(&self) -> String {
        match self {
            DatasetSource::Coat { dir, threshold } => format!(
                "dataset = coat\ncoat_dir = {}\nthreshold = {threshold}\n",
                dir.display()
            ),
            DatasetSource::Triples {
                train,
                test,
                users,
                items,
                options,
            } => format!(
                "dataset = triples\ntrain_path = {}\ntest_path = {}\nusers = {users}\nitems = {items}\n\
                 one_based = {}\nthreshold = {}\n",
                train.display(),
                test.display(),
                options.one_based,
                options.threshold
            ),
            DatasetSource::Synthetic(cfg) => {
                let mut out = String::from("dataset = synthetic\n");
                for line in cfg.to_kv().lines().filter(|l| !l.starts_with("seed ")) {
                    let _ = writeln!(out, "sim_{line}");
                }
                out
            }
        }
    }
}

/// One method configuration within an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Arm {
    pub name: String,
    pub config: TrainConfig,
}

impl Arm {
    pub fn new(name: impl Into<String>, config: TrainConfig) -> Self {
        Self {
            name: name.into(),
            config,
        }
    }
}

/// Default arm label for a configuration, e.g. `ccl-cf` or `base`.
pub fn arm_name(config: &TrainConfig) -> String {
    let base = if config.lambda == 0.0 {
        "base".to_string()
    } else {
        format!("ccl-{}", config.sampler)
    };
    match config.rec_objective {
        trainer::RecObjective::Plain => base,
        other => format!("{base}-{}", other.as_str()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub dataset: DatasetSource,
    pub config: TrainConfig,
    pub seeds: Vec<u64>,
    pub output: PathBuf,
    pub cutoffs: EvalCutoffs,
}

const DATASET_KEYS: [&str; 9] = [
    "dataset",
    "coat_dir",
    "threshold",
    "train_path",
    "test_path",
    "users",
    "items",
    "one_based",
    "seeds",
];

impl ExperimentSpec {
    pub fn new(
        dataset: DatasetSource,
        config: TrainConfig,
        seeds: Vec<u64>,
        output: PathBuf,
    ) -> Self {
        Self {
            dataset,
            config,
            seeds,
            output,
            cutoffs: EvalCutoffs::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        self.config.validate()
    }

    /// Resolved configuration snapshot; [`ExperimentSpec::from_kv`] reads it back.
    pub fn to_kv(&self) -> String {
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        format!(
            "{}seeds = {}\n{}",
            self.dataset.to_kv(),
            seeds.join(","),
            self.config.to_kv()
        )
    }

    pub fn from_kv(text: &str, output: PathBuf) -> Result<Self> {
        let mut fields = std::collections::HashMap::new();
        let mut sim = SimConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", idx + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if let Some(sim_key) = key.strip_prefix("sim_") {
                sim.set(sim_key, value)?;
            } else if DATASET_KEYS.contains(&key) {
                fields.insert(key.to_string(), value.to_string());
            }
        }
        let mut foreign: Vec<&str> = DATASET_KEYS.to_vec();
        let sim_keys: Vec<String> = text
            .lines()
            .filter_map(|l| l.split_once('='))
            .map(|(k, _)| k.trim().to_string())
            .filter(|k| k.starts_with("sim_"))
            .collect();
        foreign.extend(sim_keys.iter().map(String::as_str));
        let mut config = TrainConfig::default();
        config.apply_kv(text, &foreign)?;

        let get = |key: &str| {
            fields
                .get(key)
                .map(String::as_str)
                .ok_or_else(|| Error::Config(format!("missing key {key}")))
        };
        let parse_num = |key: &str| -> Result<usize> {
            get(key)?
                .parse()
                .map_err(|_| Error::Config(format!("cannot parse {key}")))
        };
        let threshold = match fields.get("threshold") {
            Some(t) => t
                .parse()
                .map_err(|_| Error::Config(format!("cannot parse threshold = {t:?}")))?,
            None => crate::dataset::DEFAULT_THRESHOLD,
        };
        let dataset = match get("dataset")? {
            "coat" => DatasetSource::Coat {
                dir: get("coat_dir")?.into(),
                threshold,
            },
            "triples" => DatasetSource::Triples {
                train: get("train_path")?.into(),
                test: get("test_path")?.into(),
                users: parse_num("users")?,
                items: parse_num("items")?,
                options: TripleOptions {
                    one_based: fields.get("one_based").is_some_and(|v| v == "true"),
                    threshold,
                },
            },
            "synthetic" => DatasetSource::Synthetic(sim),
            other => return Err(Error::Config(format!("unknown dataset {other:?}"))),
        };
        let seeds = parse_seeds(get("seeds")?)?;
        Ok(Self::new(dataset, config, seeds, output))
    }
}

/// Parses `0,1,2` or a range `0..10` (end exclusive).
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let bad = || Error::Config(format!("cannot parse seed list {text:?}"));
    if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        return Ok((a..b).collect());
    }
    text.split(',')
        .map(|s| s.trim().parse().map_err(|_| bad()))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub arm: String,
    pub seed: u64,
    pub report: MetricsReport,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

/// Per-seed metric rows grouped by arm, plus mean and standard deviation rows.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultsTable {
    pub runs: Vec<RunResult>,
}

impl ResultsTable {
    pub fn columns(&self) -> Vec<String> {
        self.runs
            .first()
            .map(|r| {
                r.report
                    .columns()
                    .into_iter()
                    .map(|(name, _)| name)
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Arms in first-appearance order.
    pub fn arms(&self) -> Vec<String> {
        let mut arms: Vec<String> = Vec::new();
        for r in &self.runs {
            if !arms.contains(&r.arm) {
                arms.push(r.arm.clone());
            }
        }
        arms
    }

    pub fn runs_of<'a>(&'a self, arm: &'a str) -> impl Iterator<Item = &'a RunResult> + 'a {
        self.runs.iter().filter(move |r| r.arm == arm)
    }

    /// Column-wise mean and sample standard deviation (0 for a single seed).
    pub fn aggregate(&self, arm: &str) -> Option<(Vec<f64>, Vec<f64>)> {
        let rows: Vec<Vec<f64>> = self
            .runs_of(arm)
            .map(|r| r.report.columns().into_iter().map(|(_, v)| v).collect())
            .collect();
        let first = rows.first()?;
        let count = rows.len() as f64;
        let mut mean = vec![0.0; first.len()];
        for row in &rows {
            mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let std = if rows.len() < 2 {
            vec![0.0; first.len()]
        } else {
            (0..first.len())
                .map(|c| {
                    let ss: f64 = rows.iter().map(|r| (r[c] - mean[c]).powi(2)).sum();
                    (ss / (count - 1.0)).sqrt()
                })
                .collect()
        };
        Some((mean, std))
    }

    /// Mean of one named column for an arm.
    pub fn mean(&self, arm: &str, column: &str) -> Option<f64> {
        let idx = self.columns().iter().position(|c| c == column)?;
        self.aggregate(arm).map(|(mean, _)| mean[idx])
    }

    fn body_rows(&self) -> Vec<(String, String, Vec<f64>)> {
        let mut rows = Vec::new();
        for arm in self.arms() {
            for r in self.runs_of(&arm) {
                let values = r.report.columns().into_iter().map(|(_, v)| v).collect();
                rows.push((arm.clone(), r.seed.to_string(), values));
            }
            if let Some((mean, std)) = self.aggregate(&arm) {
                rows.push((arm.clone(), "mean".into(), mean));
                rows.push((arm.clone(), "std".into(), std));
            }
        }
        rows
    }

    /// Tab-separated, full precision.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("arm\tseed\t{}\n", self.columns().join("\t"));
        for (arm, seed, values) in self.body_rows() {
            let values: Vec<String> = values.iter().map(f64::to_string).collect();
            let _ = writeln!(out, "{arm}\t{seed}\t{}", values.join("\t"));
        }
        out
    }

    /// Column-aligned, six decimals.
    pub fn to_text(&self) -> String {
        let mut header = vec!["arm".to_string(), "seed".to_string()];
        header.extend(self.columns());
        let mut table = vec![header];
        for (arm, seed, values) in self.body_rows() {
            let mut row = vec![arm, seed];
            row.extend(values.iter().map(|v| format!("{v:.6}")));
            table.push(row);
        }
        let widths: Vec<usize> = (0..table[0].len())
            .map(|c| table.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in &table {
            let cells: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (cell, w))| {
                    if c < 2 {
                        format!("{cell:<w$}")
                    } else {
                        format!("{cell:>w$}")
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_file(&dir.join("results.tsv"), &self.to_tsv())?;
        write_file(&dir.join("results.txt"), &self.to_text())
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Trains and evaluates one arm on one seed.
pub fn run_single(
    data: &LoadedData,
    config: &TrainConfig,
    seed: u64,
    cutoffs: &EvalCutoffs,
) -> Result<(ModelParams, trainer::TrainReport, MetricsReport)> {
    let config = TrainConfig {
        seed,
        ..config.clone()
    };
    let tables = trainer::prepare_tables_with_oracle(&data.bundle, &config, data.oracle.as_ref())?;
    let outcome = trainer::train(&data.bundle, &config, &tables)?;
    let report = evaluate(&outcome.params, &data.bundle, cutoffs)?;
    if report.zero_relevant_users > 0 {
        log::warn!(
            "seed {seed}: {} of {} users have no relevant test item (scored 0)",
            report.zero_relevant_users,
            report.users_evaluated
        );
    }
    Ok((outcome.params, outcome.report, report))
}

/// Runs every arm on every seed of `spec` (its own `config` is ignored), writing
/// checkpoints, logs and tables under `spec.output` when it is non-empty.
pub fn run_arms(spec: &ExperimentSpec, arms: &[Arm]) -> Result<ResultsTable> {
    if spec.seeds.is_empty() {
        return Err(Error::Config("seed list is empty".into()));
    }
    for arm in arms {
        arm.config.validate()?;
    }
    let persist = !spec.output.as_os_str().is_empty();
    if persist {
        create_dir(&spec.output)?;
        let mut snapshot = spec.to_kv();
        for arm in arms {
            let _ = writeln!(snapshot, "\n[arm {}]", arm.name);
            snapshot.push_str(&arm.config.to_kv());
        }
        write_file(&spec.output.join("config.txt"), &snapshot)?;
    }
    let floor = arms
        .first()
        .map_or(spec.config.propensity_floor, |a| a.config.propensity_floor);
    let mut fixed: Option<LoadedData> = None;
    let mut table = ResultsTable::default();
    for &seed in &spec.seeds {
        let per_seed;
        let data = if spec.dataset.is_fixed() {
            if fixed.is_none() {
                fixed = Some(spec.dataset.load(seed, floor)?);
            }
            fixed.as_ref().expect("loaded above")
        } else {
            per_seed = spec.dataset.load(seed, floor)?;
            &per_seed
        };
        for arm in arms {
            let (params, train_report, report) =
                run_single(data, &arm.config, seed, &spec.cutoffs)?;
            log::info!(
                "{} seed {seed}: auc {:.4}, best epoch {}",
                arm.name,
                report.auc,
                train_report.best_epoch
            );
            if persist {
                let dir = spec.output.join(&arm.name);
                create_dir(&dir)?;
                params.save(&dir.join(format!("seed-{seed}.ckpt")))?;
                train_report.write_log(&dir.join(format!("seed-{seed}.log")))?;
            }
            table.runs.push(RunResult {
                arm: arm.name.clone(),
                seed,
                report,
                best_epoch: train_report.best_epoch,
                epochs_run: train_report.epochs_run(),
            });
        }
    }
    if persist {
        table.write(&spec.output)?;
    }
    Ok(table)
}

/// Runs arms on already loaded data without writing anything.
pub fn compare_arms(
    data: &LoadedData,
    arms: &[Arm],
    seeds: &[u64],
    cutoffs: &EvalCutoffs,
) -> Result<ResultsTable> {
    let mut table = ResultsTable::default();
    for &seed in seeds {
        for arm in arms {
            let (_, train_report, report) = run_single(data, &arm.config, seed, cutoffs)?;
            table.runs.push(RunResult {
                arm: arm.name.clone(),
                seed,
                report,
                best_epoch: train_report.best_epoch,
                epochs_run: train_report.epochs_run(),
            });
        }
    }
    Ok(table)
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<ResultsTable> {
    spec.validate()?;
    run_arms(
        spec,
        &[Arm::new(arm_name(&spec.config), spec.config.clone())],
    )
}

/// The configured model against the same model with `lambda = 0`.
pub fn ablation_arms(config: &TrainConfig) -> Vec<Arm> {
    vec![
        Arm::new("rec+ccl", config.clone()),
        Arm::new(
            "rec",
            TrainConfig {
                lambda: 0.0,
                ..config.clone()
            },
        ),
    ]
}

/// One arm per positive sampler plus a `no-ssl` arm with `lambda = 0`.
pub fn sampler_arms(config: &TrainConfig) -> Vec<Arm> {
    let mut arms: Vec<Arm> = SamplerKind::ALL
        .iter()
        .map(|&sampler| {
            Arm::new(
                sampler.as_str(),
                TrainConfig {
                    sampler,
                    ..config.clone()
                },
            )
        })
        .collect();
    arms.push(Arm::new(
        "no-ssl",
        TrainConfig {
            lambda: 0.0,
            ..config.clone()
        },
    ));
    arms
}

/// Item tags for the embedding export.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ItemTag {
    Unexposed,
    /// In the user's training interactions.
    Train,
    /// In the user's test set and not in training.
    Test,
}

impl ItemTag {
    pub fn as_str(self) -> &'static str {
        match self {
            ItemTag::Unexposed => "unexposed",
            ItemTag::Train => "train",
            ItemTag::Test => "test",
        }
    }
}

/// Tag of every item for one user; training takes precedence over test.
pub fn item_tags(bundle: &DatasetBundle, user: usize) -> Result<Vec<ItemTag>> {
    if user >= bundle.m {
        return Err(Error::OutOfRange {
            what: "user",
            index: user,
            len: bundle.m,
        });
    }
    let mut tags = vec![ItemTag::Unexposed; bundle.n];
    for r in bundle.test.iter().filter(|r| r.user == user) {
        tags[r.item] = ItemTag::Test;
    }
    for &item in bundle.exposure.exposed_items(user) {
        tags[item] = ItemTag::Train;
    }
    Ok(tags)
}

/// Writes one user's embedding, every item embedding and the user's pair
/// representations as tab-separated rows `kind id tag exposed values...`.
pub fn export_embeddings(
    params: &ModelParams,
    bundle: &DatasetBundle,
    user: usize,
    out_path: &Path,
) -> Result<()> {
    let tags = item_tags(bundle, user)?;
    if params.shape().users != bundle.m || params.shape().items != bundle.n {
        return Err(Error::Shape(format!(
            "checkpoint is {}x{}, dataset is {}x{}",
            params.shape().users,
            params.shape().items,
            bundle.m,
            bundle.n
        )));
    }
    let fmt = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join("\t");
    let mut out = String::from("kind\tid\ttag\texposed\tvalues\n");
    let _ = writeln!(
        out,
        "user\t{user}\tuser\t-\t{}",
        fmt(params.user_embedding(user))
    );
    for (item, tag) in tags.iter().enumerate() {
        let exposed = u8::from(bundle.exposure.is_exposed(user, item));
        let _ = writeln!(
            out,
            "item\t{item}\t{}\t{exposed}\t{}",
            tag.as_str(),
            fmt(params.item_embedding(item))
        );
    }
    let items: Vec<usize> = (0..bundle.n).collect();
    let pairs = params.pair_representations(&vec![user; bundle.n], &items)?;
    let width = 2 * params.dim();
    for (item, tag) in tags.iter().enumerate() {
        let exposed = u8::from(bundle.exposure.is_exposed(user, item));
        let _ = writeln!(
            out,
            "pair\t{item}\t{}\t{exposed}\t{}",
            tag.as_str(),
            fmt(&pairs[item * width..(item + 1) * width])
        );
    }
    write_file(out_path, &out)
}
