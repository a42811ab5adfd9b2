use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ccl_core::dataset::{TripleOptions, DEFAULT_THRESHOLD};
use ccl_core::experiment::{
    ablation_arms, export_embeddings, parse_seeds, run_arms, run_experiment, sampler_arms,
    DatasetSource, ExperimentSpec, ResultsTable, RunResult,
};
use ccl_core::exposure::estimate_popularity;
use ccl_core::metrics::{evaluate, EvalCutoffs};
use ccl_core::model::ModelParams;
use ccl_core::simulator::{self, SimConfig};
use ccl_core::trainer::{self, TrainConfig};
use ccl_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "ccl",
    version,
    about = "Contrastive counterfactual learning for recommendation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a dataset, report its shape and write propensity and popularity tables.
    Prepare {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one configuration on every seed and evaluate on the test split.
    Train(RunArgs),
    /// Evaluate a saved checkpoint on the test split.
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Writes results.tsv and results.txt here instead of printing.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the configured model with its lambda = 0 counterpart.
    Ablate(RunArgs),
    /// Compare the cf, ps and pop samplers and the no-ssl baseline.
    SweepSamplers(RunArgs),
    /// Generate a synthetic exposure-bias dataset with ground truth.
    Simulate {
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long, default_value_t = ccl_core::exposure::DEFAULT_PROPENSITY_FLOOR)]
        propensity_floor: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export one user's embedding with tagged item and pair representations.
    ExportEmbeddings {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        user: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Directory with Coat's train.ascii and test.ascii.
    #[arg(long, conflicts_with_all = ["train_path", "synthetic"])]
    coat_dir: Option<PathBuf>,
    /// Triple file with training ratings (needs --test-path, --users, --items).
    #[arg(long, requires_all = ["test_path", "users", "items"])]
    train_path: Option<PathBuf>,
    #[arg(long)]
    test_path: Option<PathBuf>,
    #[arg(long)]
    users: Option<usize>,
    #[arg(long)]
    items: Option<usize>,
    /// Triple ids start at 1.
    #[arg(long)]
    one_based: bool,
    /// Ratings at or above this value are positive.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: u8,
    /// Use simulated data (regenerated per seed).
    #[arg(long)]
    synthetic: bool,
    #[command(flatten)]
    sim: SimArgs,
}

#[derive(Args, Clone)]
struct SimArgs {
    #[arg(long = "sim-m")]
    m: Option<usize>,
    #[arg(long = "sim-n")]
    n: Option<usize>,
    #[arg(long = "sim-latent-dim")]
    latent_dim: Option<usize>,
    #[arg(long = "sim-exposure-skew")]
    exposure_skew: Option<f64>,
    #[arg(long = "sim-exposures-per-user")]
    exposures_per_user: Option<usize>,
    #[arg(long = "sim-confounder-outcome-weight")]
    confounder_outcome_weight: Option<f64>,
    #[arg(long = "sim-test-exposures-per-user")]
    test_exposures_per_user: Option<usize>,
    /// Simulator seed for single-bundle commands; experiments use each run seed.
    #[arg(long = "sim-seed", default_value_t = 0)]
    seed: u64,
}

impl SimArgs {
    fn config(&self) -> SimConfig {
        let d = SimConfig::default();
        SimConfig {
            m: self.m.unwrap_or(d.m),
            n: self.n.unwrap_or(d.n),
            latent_dim: self.latent_dim.unwrap_or(d.latent_dim),
            exposure_skew: self.exposure_skew.unwrap_or(d.exposure_skew),
            exposures_per_user: self.exposures_per_user.unwrap_or(d.exposures_per_user),
            confounder_outcome_weight: self
                .confounder_outcome_weight
                .unwrap_or(d.confounder_outcome_weight),
            test_exposures_per_user: self
                .test_exposures_per_user
                .unwrap_or(d.test_exposures_per_user),
            seed: self.seed,
        }
    }
}

impl DataArgs {
    fn source(&self) -> Result<DatasetSource> {
        if let Some(dir) = &self.coat_dir {
            return Ok(DatasetSource::Coat {
                dir: dir.clone(),
                threshold: self.threshold,
            });
        }
        if let (Some(train), Some(test), Some(users), Some(items)) =
            (&self.train_path, &self.test_path, self.users, self.items)
        {
            return Ok(DatasetSource::Triples {
                train: train.clone(),
                test: test.clone(),
                users,
                items,
                options: TripleOptions {
                    one_based: self.one_based,
                    threshold: self.threshold,
                },
            });
        }
        if self.synthetic {
            return Ok(DatasetSource::Synthetic(self.sim.config()));
        }
        Err(Error::Config(
            "no dataset: pass --coat-dir, --train-path/--test-path/--users/--items or --synthetic"
                .into(),
        ))
    }
}

/// Every flag maps onto the configuration key of the same name.
#[derive(Args, Clone)]
struct TrainArgs {
    /// Flat `key = value` configuration file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    tau: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    embed_dim: Option<String>,
    #[arg(long)]
    hidden_layers: Option<String>,
    #[arg(long)]
    learning_rate: Option<String>,
    #[arg(long)]
    weight_decay: Option<String>,
    #[arg(long)]
    max_epochs: Option<String>,
    #[arg(long)]
    patience: Option<String>,
    /// log or focal(GAMMA)
    #[arg(long)]
    loss_kind: Option<String>,
    /// cf, ps or pop
    #[arg(long)]
    sampler: Option<String>,
    /// plain, ips or snips
    #[arg(long)]
    rec_objective: Option<String>,
    /// auto, naive_bayes, logistic, popularity, oracle or file:PATH
    #[arg(long)]
    propensity_source: Option<String>,
    #[arg(long)]
    allow_off_grid: bool,
}

impl TrainArgs {
    fn config(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                TrainConfig::from_kv(&text)?
            }
            None => TrainConfig::default(),
        };
        let flags = [
            ("lambda", &self.lambda),
            ("tau", &self.tau),
            ("batch_size", &self.batch_size),
            ("embed_dim", &self.embed_dim),
            ("hidden_layers", &self.hidden_layers),
            ("learning_rate", &self.learning_rate),
            ("weight_decay", &self.weight_decay),
            ("max_epochs", &self.max_epochs),
            ("patience", &self.patience),
            ("loss_kind", &self.loss_kind),
            ("sampler", &self.sampler),
            ("rec_objective", &self.rec_objective),
            ("propensity_source", &self.propensity_source),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        if self.allow_off_grid {
            cfg.allow_off_grid = true;
        }
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    train: TrainArgs,
    /// Comma list (0,1,2) or half-open range (0..10).
    #[arg(long, default_value = "0..10")]
    seeds: String,
    #[arg(long)]
    out: PathBuf,
}

impl RunArgs {
    fn spec(&self) -> Result<ExperimentSpec> {
        let spec = ExperimentSpec::new(
            self.data.source()?,
            self.train.config()?,
            parse_seeds(&self.seeds)?,
            self.out.clone(),
        );
        spec.validate()?;
        Ok(spec)
    }
}

fn load_fixed(data: &DataArgs) -> Result<ccl_core::dataset::DatasetBundle> {
    let source = data.source()?;
    Ok(source
        .load(data.sim.seed, ccl_core::exposure::DEFAULT_PROPENSITY_FLOOR)?
        .bundle)
}

fn summarize(table: &ResultsTable) {
    print!("{}", table.to_text());
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare { data, train, out } => {
            let config = train.config()?;
            let bundle = load_fixed(&data)?;
            fs::create_dir_all(&out)
                .map_err(|e| Error::Config(format!("{}: {e}", out.display())))?;
            let mut summary = String::new();
            let _ = writeln!(summary, "users = {}", bundle.m);
            let _ = writeln!(summary, "items = {}", bundle.n);
            let _ = writeln!(summary, "train_rows = {}", bundle.train.len());
            let _ = writeln!(summary, "test_rows = {}", bundle.test.len());
            let _ = writeln!(
                summary,
                "train_duplicates = {}",
                bundle.warnings.train_duplicates
            );
            let _ = writeln!(
                summary,
                "test_duplicates = {}",
                bundle.warnings.test_duplicates
            );
            let popularity = estimate_popularity(&bundle)?;
            let pop_text: String = popularity
                .values()
                .iter()
                .enumerate()
                .map(|(i, v)| format!("{i}\t{v}\n"))
                .collect();
            let pop_path = out.join("popularity.tsv");
            fs::write(&pop_path, pop_text)
                .map_err(|e| Error::Config(format!("{}: {e}", pop_path.display())))?;
            let propensity = trainer::estimate_propensity(&bundle, &config, Some(&popularity))?;
            propensity.write(&out.join("propensity.txt"))?;
            let _ = writeln!(summary, "propensity = {}", propensity.kind_name());
            print!("{summary}");
            let path = out.join("summary.txt");
            fs::write(&path, summary)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        }
        Command::Train(args) => summarize(&run_experiment(&args.spec()?)?),
        Command::Ablate(args) => {
            let spec = args.spec()?;
            summarize(&run_arms(&spec, &ablation_arms(&spec.config))?);
        }
        Command::SweepSamplers(args) => {
            let spec = args.spec()?;
            summarize(&run_arms(&spec, &sampler_arms(&spec.config))?);
        }
        Command::Evaluate {
            data,
            checkpoint,
            out,
        } => {
            let bundle = load_fixed(&data)?;
            let params = ModelParams::load(&checkpoint)?;
            let report = evaluate(&params, &bundle, &EvalCutoffs::default())?;
            let table = ResultsTable {
                runs: vec![RunResult {
                    arm: checkpoint
                        .file_stem()
                        .map_or("model".into(), |s| s.to_string_lossy().into_owned()),
                    seed: 0,
                    report,
                    best_epoch: 0,
                    epochs_run: 0,
                }],
            };
            match out {
                Some(dir) => {
                    fs::create_dir_all(&dir)
                        .map_err(|e| Error::Config(format!("{}: {e}", dir.display())))?;
                    table.write(&dir)?;
                }
                None => summarize(&table),
            }
        }
        Command::Simulate {
            sim,
            propensity_floor,
            out,
        } => {
            let generated = simulator::generate(&sim.config())?;
            generated.write(&out, propensity_floor)?;
            println!(
                "wrote {} train and {} test rows to {}",
                generated.bundle.train.len(),
                generated.bundle.test.len(),
                out.display()
            );
        }
        Command::ExportEmbeddings {
            data,
            checkpoint,
            user,
            out,
        } => {
            let bundle = load_fixed(&data)?;
            let params = ModelParams::load(&checkpoint)?;
            export_embeddings(&params, &bundle, user, &out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.kind().exit_code() as u8)
        }
    }
}
