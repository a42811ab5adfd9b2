//! Joint training of the rating loss and the contrastive loss:
//! `L = L_rec + lambda * L_ccl`, one Adam step per mini-batch, early stopping on
//! the validation objective.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ccl::{self, PositiveSampler, SamplerKind, Similarity};
use crate::dataset::{holdout_split, DatasetBundle, InteractionTable};
use crate::error::{Error, Result};
use crate::experiment::{ablation_arms, compare_arms, sampler_arms, Arm, LoadedData, ResultsTable};
use crate::exposure::{
    estimate_popularity, estimate_propensity_lr, estimate_propensity_nb, LogisticHyper,
    PopularityTable, PropensityTable, DEFAULT_PROPENSITY_FLOOR,
};
use crate::metrics::EvalCutoffs;
use crate::model::{
    self, adam_step, AdamConfig, AdamState, Gradients, LossKind, ModelParams, ModelShape,
};

pub const EMBED_DIM_GRID: [usize; 5] = [4, 8, 16, 32, 64];
pub const BATCH_SIZE_GRID: [usize; 4] = [512, 1024, 2048, 4096];
pub const HIDDEN_LAYERS_GRID: [usize; 3] = [1, 2, 3];
pub const LAMBDA_RANGE: (f64, f64) = (0.5, 1.5);
pub const TAU_RANGE: (f64, f64) = (0.1, 1.5);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecObjective {
    /// Unweighted mean over observed pairs.
    Plain,
    Ips,
    Snips,
}

impl RecObjective {
    pub fn as_str(self) -> &'static str {
        match self {
            RecObjective::Plain => "plain",
            RecObjective::Ips => "ips",
            RecObjective::Snips => "snips",
        }
    }
}

impl FromStr for RecObjective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(RecObjective::Plain),
            "ips" => Ok(RecObjective::Ips),
            "snips" => Ok(RecObjective::Snips),
            other => Err(Error::Config(format!(
                "unknown rec_objective {other:?} (expected plain, ips or snips)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PropensitySource {
    /// Logistic regression when user and item features exist, naive Bayes otherwise.
    Auto,
    NaiveBayes,
    Logistic,
    Popularity,
    File(PathBuf),
    /// True propensities; only simulated data carries them.
    Oracle,
}

impl PropensitySource {
    pub fn to_config_string(&self) -> String {
        match self {
            PropensitySource::Auto => "auto".into(),
            PropensitySource::NaiveBayes => "naive_bayes".into(),
            PropensitySource::Logistic => "logistic".into(),
            PropensitySource::Popularity => "popularity".into(),
            PropensitySource::File(p) => format!("file:{}", p.display()),
            PropensitySource::Oracle => "oracle".into(),
        }
    }
}

impl FromStr for PropensitySource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(PropensitySource::Auto),
            "naive_bayes" | "nb" => Ok(PropensitySource::NaiveBayes),
            "logistic" | "lr" => Ok(PropensitySource::Logistic),
            "popularity" => Ok(PropensitySource::Popularity),
            "oracle" => Ok(PropensitySource::Oracle),
            other => match other.strip_prefix("file:") {
                Some(path) if !path.is_empty() => Ok(PropensitySource::File(path.into())),
                _ => Err(Error::Config(format!(
                    "unknown propensity_source {other:?}"
                ))),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    /// Both losses every step.
    Joint,
    /// `pretrain_epochs` of contrastive loss only, then the rating loss alone.
    Pretrain,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lambda: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub embed_dim: usize,
    pub hidden_layers: usize,
    /// 0 means `2 * embed_dim`.
    pub hidden_width: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub loss_kind: LossKind,
    pub sampler: SamplerKind,
    pub rec_objective: RecObjective,
    pub propensity_source: PropensitySource,
    pub propensity_floor: f64,
    /// Share of the test table used as the MCAR sample for naive Bayes propensities.
    pub mcar_fraction: f64,
    pub validation_fraction: f64,
    pub mode: TrainMode,
    pub pretrain_epochs: usize,
    pub similarity: Similarity,
    /// Lifts the hyperparameter grid checks.
    pub allow_off_grid: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            tau: 0.5,
            batch_size: 512,
            embed_dim: 16,
            hidden_layers: 1,
            hidden_width: 0,
            learning_rate: 1e-2,
            weight_decay: 1e-4,
            max_epochs: 500,
            patience: 5,
            seed: 0,
            loss_kind: LossKind::Log,
            sampler: SamplerKind::RandomCounterfactual,
            rec_objective: RecObjective::Plain,
            propensity_source: PropensitySource::Auto,
            propensity_floor: DEFAULT_PROPENSITY_FLOOR,
            mcar_fraction: 0.05,
            validation_fraction: 0.1,
            mode: TrainMode::Joint,
            pretrain_epochs: 10,
            similarity: Similarity::Dot,
            allow_off_grid: false,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse {key} = {value:?}")))
}

fn parse_loss_kind(value: &str) -> Result<LossKind> {
    if value == "log" {
        return Ok(LossKind::Log);
    }
    if value == "focal" {
        return Ok(LossKind::Focal { gamma: 2.0 });
    }
    value
        .strip_prefix("focal(")
        .and_then(|rest| rest.strip_suffix(')'))
        .and_then(|g| g.trim().parse::<f64>().ok())
        .filter(|g| *g >= 0.0)
        .map(|gamma| LossKind::Focal { gamma })
        .ok_or_else(|| Error::Config(format!("unknown loss_kind {value:?}")))
}

fn loss_kind_string(kind: LossKind) -> String {
    match kind {
        LossKind::Log => "log".into(),
        LossKind::Focal { gamma } => format!("focal({gamma})"),
    }
}

impl TrainConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "lambda" => self.lambda = parse_value(key, value)?,
            "tau" => self.tau = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "embed_dim" => self.embed_dim = parse_value(key, value)?,
            "hidden_layers" => self.hidden_layers = parse_value(key, value)?,
            "hidden_width" => self.hidden_width = parse_value(key, value)?,
            "learning_rate" => self.learning_rate = parse_value(key, value)?,
            "weight_decay" => self.weight_decay = parse_value(key, value)?,
            "max_epochs" => self.max_epochs = parse_value(key, value)?,
            "patience" => self.patience = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "loss_kind" => self.loss_kind = parse_loss_kind(value)?,
            "sampler" => self.sampler = value.parse()?,
            "rec_objective" => self.rec_objective = value.parse()?,
            "propensity_source" => self.propensity_source = value.parse()?,
            "propensity_floor" => self.propensity_floor = parse_value(key, value)?,
            "mcar_fraction" => self.mcar_fraction = parse_value(key, value)?,
            "validation_fraction" => self.validation_fraction = parse_value(key, value)?,
            "mode" => {
                self.mode = match value {
                    "joint" => TrainMode::Joint,
                    "pretrain" => TrainMode::Pretrain,
                    other => return Err(Error::Config(format!("unknown mode {other:?}"))),
                }
            }
            "pretrain_epochs" => self.pretrain_epochs = parse_value(key, value)?,
            "similarity" => {
                self.similarity = match value {
                    "dot" => Similarity::Dot,
                    "cosine" => Similarity::Cosine,
                    other => return Err(Error::Config(format!("unknown similarity {other:?}"))),
                }
            }
            "allow_off_grid" => self.allow_off_grid = parse_value(key, value)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment. Unknown keys are errors.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_kv(text, &[])?;
        Ok(cfg)
    }

    /// Applies `key = value` lines, skipping keys listed in `foreign`.
    pub fn apply_kv(&mut self, text: &str, foreign: &[&str]) -> Result<()> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", idx + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if foreign.contains(&key) {
                continue;
            }
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let mode = match self.mode {
            TrainMode::Joint => "joint",
            TrainMode::Pretrain => "pretrain",
        };
        let similarity = match self.similarity {
            Similarity::Dot => "dot",
            Similarity::Cosine => "cosine",
        };
        let entries: [(&str, String); 22] = [
            ("lambda", self.lambda.to_string()),
            ("tau", self.tau.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("hidden_layers", self.hidden_layers.to_string()),
            ("hidden_width", self.hidden_width.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("max_epochs", self.max_epochs.to_string()),
            ("patience", self.patience.to_string()),
            ("seed", self.seed.to_string()),
            ("loss_kind", loss_kind_string(self.loss_kind)),
            ("sampler", self.sampler.to_string()),
            ("rec_objective", self.rec_objective.as_str().to_string()),
            (
                "propensity_source",
                self.propensity_source.to_config_string(),
            ),
            ("propensity_floor", self.propensity_floor.to_string()),
            ("mcar_fraction", self.mcar_fraction.to_string()),
            ("validation_fraction", self.validation_fraction.to_string()),
            ("mode", mode.to_string()),
            ("pretrain_epochs", self.pretrain_epochs.to_string()),
            ("similarity", similarity.to_string()),
            ("allow_off_grid", self.allow_off_grid.to_string()),
        ];
        for (k, v) in &entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.tau > 0.0) {
            return fail(format!("tau must be > 0, got {}", self.tau));
        }
        if !(self.lambda >= 0.0) {
            return fail(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if self.batch_size == 0 || self.embed_dim == 0 || self.max_epochs == 0 {
            return fail("batch_size, embed_dim and max_epochs must be positive".into());
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return fail("learning_rate must be > 0 and weight_decay >= 0".into());
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return fail(format!(
                "validation_fraction {} outside [0, 1)",
                self.validation_fraction
            ));
        }
        if !(self.mcar_fraction > 0.0 && self.mcar_fraction < 1.0) {
            return fail(format!(
                "mcar_fraction {} outside (0, 1)",
                self.mcar_fraction
            ));
        }
        if !(self.propensity_floor > 0.0 && self.propensity_floor < 1.0) {
            return fail(format!(
                "propensity_floor {} outside (0, 1)",
                self.propensity_floor
            ));
        }
        if self.allow_off_grid {
            return Ok(());
        }
        if !EMBED_DIM_GRID.contains(&self.embed_dim) {
            return fail(format!(
                "embed_dim {} not in {EMBED_DIM_GRID:?}",
                self.embed_dim
            ));
        }
        if !BATCH_SIZE_GRID.contains(&self.batch_size) {
            return fail(format!(
                "batch_size {} not in {BATCH_SIZE_GRID:?}",
                self.batch_size
            ));
        }
        if !HIDDEN_LAYERS_GRID.contains(&self.hidden_layers) {
            return fail(format!(
                "hidden_layers {} not in {HIDDEN_LAYERS_GRID:?}",
                self.hidden_layers
            ));
        }
        // lambda = 0 switches the contrastive term off and is always allowed
        if self.lambda != 0.0 && !(LAMBDA_RANGE.0..=LAMBDA_RANGE.1).contains(&self.lambda) {
            return fail(format!("lambda {} outside {LAMBDA_RANGE:?}", self.lambda));
        }
        if !(TAU_RANGE.0..=TAU_RANGE.1).contains(&self.tau) {
            return fail(format!("tau {} outside {TAU_RANGE:?}", self.tau));
        }
        Ok(())
    }

    pub fn model_shape(&self, bundle: &DatasetBundle) -> ModelShape {
        let width = if self.hidden_width == 0 {
            2 * self.embed_dim
        } else {
            self.hidden_width
        };
        ModelShape::new(
            bundle.m,
            bundle.n,
            self.embed_dim,
            self.hidden_layers,
            width,
        )
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }

    fn ccl_active(&self) -> bool {
        self.lambda > 0.0
    }

    pub fn needs_propensity(&self) -> bool {
        (self.ccl_active() && self.sampler == SamplerKind::PropensityDifference)
            || self.rec_objective != RecObjective::Plain
    }

    pub fn needs_popularity(&self) -> bool {
        self.ccl_active() && self.sampler == SamplerKind::PopularityDifference
    }
}

/// Precomputed exposure tables a run may read from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AuxTables {
    pub propensity: Option<PropensityTable>,
    pub popularity: Option<PopularityTable>,
}

/// Estimates whichever tables `config` needs.
pub fn prepare_tables(bundle: &DatasetBundle, config: &TrainConfig) -> Result<AuxTables> {
    prepare_tables_with_oracle(bundle, config, None)
}

/// Like [`prepare_tables`], resolving `propensity_source = oracle` to `oracle`.
pub fn prepare_tables_with_oracle(
    bundle: &DatasetBundle,
    config: &TrainConfig,
    oracle: Option<&PropensityTable>,
) -> Result<AuxTables> {
    let mut tables = AuxTables::default();
    let popularity_needed = config.needs_popularity()
        || (config.needs_propensity() && config.propensity_source == PropensitySource::Popularity);
    if popularity_needed {
        tables.popularity = Some(estimate_popularity(bundle)?);
    }
    if config.needs_propensity() {
        tables.propensity = Some(match (&config.propensity_source, oracle) {
            (PropensitySource::Oracle, Some(table)) => table.clone(),
            _ => estimate_propensity(bundle, config, tables.popularity.as_ref())?,
        });
    }
    Ok(tables)
}

pub fn estimate_propensity(
    bundle: &DatasetBundle,
    config: &TrainConfig,
    popularity: Option<&PopularityTable>,
) -> Result<PropensityTable> {
    let floor = config.propensity_floor;
    let source = match &config.propensity_source {
        PropensitySource::Auto
            if bundle.user_features.is_some() && bundle.item_features.is_some() =>
        {
            PropensitySource::Logistic
        }
        PropensitySource::Auto => PropensitySource::NaiveBayes,
        other => other.clone(),
    };
    match source {
        PropensitySource::Logistic => {
            let hyper = LogisticHyper {
                seed: config.seed,
                floor,
                ..LogisticHyper::default()
            };
            estimate_propensity_lr(&bundle.exposure, bundle, &hyper)
        }
        PropensitySource::NaiveBayes => {
            let (_, mcar) = holdout_split(&bundle.test, config.mcar_fraction, config.seed)?;
            estimate_propensity_nb(&bundle.train, &mcar, floor)
        }
        PropensitySource::Popularity => {
            let owned;
            let pop = match popularity {
                Some(p) => p,
                None => {
                    owned = estimate_popularity(bundle)?;
                    &owned
                }
            };
            PropensityTable::from_popularity(bundle.m, pop, floor)
        }
        PropensitySource::File(path) => {
            let table = PropensityTable::read(&path)?;
            if table.num_users() != bundle.m || table.num_items() != bundle.n {
                return Err(Error::Config(format!(
                    "propensity file {} is {}x{}, dataset is {}x{}",
                    path.display(),
                    table.num_users(),
                    table.num_items(),
                    bundle.m,
                    bundle.n
                )));
            }
            Ok(table)
        }
        PropensitySource::Oracle => Err(Error::Config(
            "oracle propensities are only available for simulated data".into(),
        )),
        PropensitySource::Auto => unreachable!("resolved above"),
    }
}

/// Rating-loss weights `w_k` so that `sum_k w_k * loss_k` is the configured estimator.
pub fn rec_weights(
    objective: RecObjective,
    rows: &[crate::dataset::Interaction],
    propensity: Option<&PropensityTable>,
) -> Result<Vec<f64>> {
    if objective == RecObjective::Plain {
        return Ok(model::uniform_weights(rows.len()));
    }
    let table = propensity
        .ok_or_else(|| Error::Config(format!("{} needs propensities", objective.as_str())))?;
    let p: Vec<f64> = rows.iter().map(|r| table.get(r.user, r.item)).collect();
    match objective {
        RecObjective::Ips => model::ips_weights(&p),
        RecObjective::Snips => model::snips_weights(&p),
        RecObjective::Plain => unreachable!(),
    }
}

/// Inputs of one objective evaluation.
#[derive(Debug, Clone)]
pub struct ObjectiveBatch<'a> {
    pub users: &'a [usize],
    pub items: &'a [usize],
    pub labels: &'a [u8],
    pub rec_weights: &'a [f64],
    /// Positive item per row; `None` disables the contrastive term.
    pub positives: Option<&'a [usize]>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveSettings {
    pub loss: LossKind,
    pub lambda: f64,
    pub tau: f64,
    pub similarity: Similarity,
    pub include_rec: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ObjectiveTerms {
    pub rec: f64,
    pub ccl: f64,
    pub total: f64,
}

/// Evaluates `L_rec + lambda * L_ccl` on a batch and optionally its gradient.
pub fn objective(
    params: &ModelParams,
    batch: &ObjectiveBatch<'_>,
    settings: &ObjectiveSettings,
    want_grad: bool,
) -> Result<(ObjectiveTerms, Option<Gradients>)> {
    let mut grads = want_grad.then(|| Gradients::zeros_like(params));
    let mut terms = ObjectiveTerms::default();

    if settings.include_rec {
        let pred = model::forward(params, batch.users, batch.items)?;
        terms.rec =
            model::weighted_loss(settings.loss, &pred.logits, batch.labels, batch.rec_weights);
        if let Some(g) = grads.as_mut() {
            let rec_grad = model::backward(
                params,
                &pred,
                batch.labels,
                settings.loss,
                batch.rec_weights,
            )?;
            g.values
                .iter_mut()
                .zip(&rec_grad.values)
                .for_each(|(a, b)| *a += b);
        }
    }

    if let Some(positives) = batch.positives {
        let views = ccl::views_from_positives(
            params,
            batch.users,
            batch.items,
            positives,
            settings.tau,
            settings.similarity,
        );
        let (loss, view_grad) = ccl::ccl_loss_and_grad(&views, want_grad)?;
        terms.ccl = loss;
        if let (Some(g), Some(mut vg)) = (grads.as_mut(), view_grad) {
            vg.iter_mut().for_each(|v| *v *= settings.lambda);
            let (users, items) = ccl::view_ids(&views);
            params.scatter_pair_gradients(g, &users, &items, &vg);
        }
    }

    terms.total = terms.rec + settings.lambda * terms.ccl;
    Ok((terms, grads))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchRecord {
    pub epoch: usize,
    pub batch: usize,
    pub rec: f64,
    pub ccl: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub rec: f64,
    pub ccl: f64,
    pub total: f64,
    pub validation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub batches: Vec<BatchRecord>,
    /// 1-based epoch whose parameters were returned.
    pub best_epoch: usize,
    pub best_validation: f64,
    pub sampler_calls: u64,
    pub lambda: f64,
    /// Not part of the written log.
    pub wall_clock: Duration,
}

impl TrainReport {
    pub fn epochs_run(&self) -> usize {
        self.epochs.len()
    }

    /// Line-oriented log; contains no timing so identical runs give identical bytes.
    pub fn to_log(&self) -> String {
        let mut out = String::new();
        for b in &self.batches {
            let _ = writeln!(
                out,
                "batch epoch={} batch={} rec={} ccl={} total={}",
                b.epoch, b.batch, b.rec, b.ccl, b.total
            );
        }
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "epoch epoch={} rec={} ccl={} total={} validation={}",
                e.epoch, e.rec, e.ccl, e.total, e.validation
            );
        }
        let _ = writeln!(
            out,
            "summary epochs_run={} best_epoch={} best_validation={} sampler_calls={} lambda={}",
            self.epochs_run(),
            self.best_epoch,
            self.best_validation,
            self.sampler_calls,
            self.lambda
        );
        out
    }

    pub fn write_log(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_log()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub report: TrainReport,
}

const SHUFFLE_STREAM: u64 = 1;
const SAMPLER_STREAM: u64 = 2;
const VALIDATION_STREAM: u64 = 3;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

struct Split {
    users: Vec<usize>,
    items: Vec<usize>,
    labels: Vec<u8>,
    rows: Vec<crate::dataset::Interaction>,
}

impl Split {
    fn new(table: &InteractionTable) -> Self {
        Self {
            users: table.iter().map(|r| r.user).collect(),
            items: table.iter().map(|r| r.item).collect(),
            labels: table.labels(),
            rows: table.rows().to_vec(),
        }
    }

    fn len(&self) -> usize {
        self.rows.len()
    }

    fn gather(&self, idx: &[usize]) -> Split {
        Split {
            users: idx.iter().map(|&k| self.users[k]).collect(),
            items: idx.iter().map(|&k| self.items[k]).collect(),
            labels: idx.iter().map(|&k| self.labels[k]).collect(),
            rows: idx.iter().map(|&k| self.rows[k]).collect(),
        }
    }
}

/// Which terms are active in a given epoch.
fn phase(config: &TrainConfig, epoch: usize) -> (bool, bool) {
    match config.mode {
        TrainMode::Joint => (true, config.ccl_active()),
        TrainMode::Pretrain if config.ccl_active() && epoch <= config.pretrain_epochs => {
            (false, true)
        }
        TrainMode::Pretrain => (true, false),
    }
}

fn in_pretraining(config: &TrainConfig, epoch: usize) -> bool {
    let (rec, _) = phase(config, epoch);
    !rec
}

/// Trains from a fresh seeded initialization. Single-threaded and bit-reproducible.
pub fn train(
    bundle: &DatasetBundle,
    config: &TrainConfig,
    tables: &AuxTables,
) -> Result<TrainOutcome> {
    config.validate()?;
    if bundle.train.is_empty() {
        return Err(Error::InvalidInput("empty training table".into()));
    }
    let started = Instant::now();
    let (fit_table, val_table) = match &bundle.validation {
        Some(v) => (bundle.train.clone(), v.clone()),
        None if config.validation_fraction > 0.0 => {
            holdout_split(&bundle.train, config.validation_fraction, config.seed)?
        }
        None => (
            bundle.train.clone(),
            InteractionTable::empty(bundle.m, bundle.n, bundle.train.threshold()),
        ),
    };
    let fit = Split::new(&fit_table);
    let val = Split::new(&val_table);

    let mut sampler = PositiveSampler::new(
        config.sampler,
        bundle,
        tables.propensity.as_ref(),
        tables.popularity.as_ref(),
    );
    if !config.ccl_active() {
        // never invoked; only needs to exist
        sampler = PositiveSampler::new(SamplerKind::RandomCounterfactual, bundle, None, None);
    }
    let mut sampler = sampler?;
    if config.rec_objective != RecObjective::Plain && tables.propensity.is_none() {
        return Err(Error::Config(format!(
            "rec_objective {} needs a propensity table",
            config.rec_objective.as_str()
        )));
    }

    let mut params = ModelParams::init(config.model_shape(bundle), config.seed)?;
    let mut adam = AdamState::new(&params);
    let adam_cfg = config.adam();
    let mut shuffle_rng = stream_rng(config.seed, SHUFFLE_STREAM);
    let mut sampler_rng = stream_rng(config.seed, SAMPLER_STREAM);

    let mut order: Vec<usize> = (0..fit.len()).collect();
    let mut batches = Vec::new();
    let mut epochs = Vec::new();
    let mut best: Option<(usize, f64, ModelParams)> = None;
    let mut since_best = 0;

    for epoch in 1..=config.max_epochs {
        let (use_rec, use_ccl) = phase(config, epoch);
        let settings = ObjectiveSettings {
            loss: config.loss_kind,
            lambda: if use_ccl { config.lambda } else { 0.0 },
            tau: config.tau,
            similarity: config.similarity,
            include_rec: use_rec,
        };
        order.shuffle(&mut shuffle_rng);
        let (mut sum_rec, mut sum_ccl, mut sum_total) = (0.0, 0.0, 0.0);
        let mut count = 0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let part = fit.gather(chunk);
            let weights =
                rec_weights(config.rec_objective, &part.rows, tables.propensity.as_ref())?;
            let positives = if use_ccl {
                Some(
                    part.users
                        .iter()
                        .zip(&part.items)
                        .map(|(&u, &i)| sampler.sample(u, i, &mut sampler_rng))
                        .collect::<Result<Vec<_>>>()?,
                )
            } else {
                None
            };
            let inputs = ObjectiveBatch {
                users: &part.users,
                items: &part.items,
                labels: &part.labels,
                rec_weights: &weights,
                positives: positives.as_deref(),
            };
            let (terms, grads) = objective(&params, &inputs, &settings, true)?;
            for (term, value) in [
                ("L_rec", terms.rec),
                ("L_ccl", terms.ccl),
                ("total loss", terms.total),
            ] {
                if !value.is_finite() {
                    return Err(Error::NonFinite {
                        epoch,
                        batch: b,
                        term,
                    });
                }
            }
            let grads = grads.expect("gradient requested");
            if !grads.is_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    batch: b,
                    term: "gradient",
                });
            }
            adam_step(&mut params, &grads, &mut adam, &adam_cfg);
            batches.push(BatchRecord {
                epoch,
                batch: b,
                rec: terms.rec,
                ccl: terms.ccl,
                total: terms.total,
            });
            sum_rec += terms.rec;
            sum_ccl += terms.ccl;
            sum_total += terms.total;
            count += 1;
        }
        let count = count as f64;

        let validation = if val.len() > 0 {
            validation_objective(&params, &val, config, tables, &settings, &mut sampler)?
        } else {
            sum_total / count
        };
        if !validation.is_finite() {
            return Err(Error::NonFinite {
                epoch,
                batch: 0,
                term: "validation loss",
            });
        }
        epochs.push(EpochRecord {
            epoch,
            rec: sum_rec / count,
            ccl: sum_ccl / count,
            total: sum_total / count,
            validation,
        });
        log::debug!(
            "epoch {epoch}: train {:.6} validation {validation:.6}",
            sum_total / count
        );

        if in_pretraining(config, epoch) {
            continue;
        }
        match &best {
            Some((_, b, _)) if validation >= *b => {
                since_best += 1;
                if since_best >= config.patience {
                    break;
                }
            }
            _ => {
                best = Some((epoch, validation, params.clone()));
                since_best = 0;
            }
        }
    }

    let (best_epoch, best_validation, params) = match best {
        Some(b) => b,
        // only reachable when every epoch was pretraining
        None => (
            epochs.len(),
            epochs.last().map_or(f64::NAN, |e| e.validation),
            params,
        ),
    };
    Ok(TrainOutcome {
        params,
        report: TrainReport {
            epochs,
            batches,
            best_epoch,
            best_validation,
            sampler_calls: sampler.calls(),
            lambda: config.lambda,
            wall_clock: started.elapsed(),
        },
    })
}

/// Validation objective with the epoch's active terms. The contrastive part uses a
/// fixed sampler stream and fixed batch order so epochs are comparable.
fn validation_objective(
    params: &ModelParams,
    val: &Split,
    config: &TrainConfig,
    tables: &AuxTables,
    settings: &ObjectiveSettings,
    sampler: &mut PositiveSampler<'_>,
) -> Result<f64> {
    let mut rec = 0.0;
    if settings.include_rec {
        let weights = rec_weights(config.rec_objective, &val.rows, tables.propensity.as_ref())?;
        let pred = model::forward(params, &val.users, &val.items)?;
        rec = model::weighted_loss(settings.loss, &pred.logits, &val.labels, &weights);
    }
    if settings.lambda == 0.0 {
        return Ok(rec);
    }
    let mut rng = stream_rng(config.seed, VALIDATION_STREAM);
    let idx: Vec<usize> = (0..val.len()).collect();
    let mut ccl_sum = 0.0;
    let mut chunks = 0;
    for chunk in idx.chunks(config.batch_size) {
        let part = val.gather(chunk);
        let positives = part
            .users
            .iter()
            .zip(&part.items)
            .map(|(&u, &i)| sampler.sample(u, i, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let inputs = ObjectiveBatch {
            users: &part.users,
            items: &part.items,
            labels: &part.labels,
            rec_weights: &[],
            positives: Some(&positives),
        };
        let ccl_only = ObjectiveSettings {
            include_rec: false,
            ..*settings
        };
        ccl_sum += objective(params, &inputs, &ccl_only, false)?.0.ccl;
        chunks += 1;
    }
    Ok(rec + settings.lambda * ccl_sum / chunks as f64)
}

fn compare(bundle: &DatasetBundle, arms: &[Arm], seeds: &[u64]) -> Result<ResultsTable> {
    let data = LoadedData {
        bundle: bundle.clone(),
        oracle: None,
    };
    compare_arms(&data, arms, seeds, &EvalCutoffs::default())
}

/// Trains `config` and its `lambda = 0` counterpart on shared seeds.
pub fn run_ablation(
    bundle: &DatasetBundle,
    config: &TrainConfig,
    seeds: &[u64],
) -> Result<ResultsTable> {
    compare(bundle, &ablation_arms(config), seeds)
}

/// Trains one arm per sampler plus `no-ssl` on shared seeds.
pub fn run_sampler_sweep(
    bundle: &DatasetBundle,
    config: &TrainConfig,
    seeds: &[u64],
) -> Result<ResultsTable> {
    compare(bundle, &sampler_arms(config), seeds)
}
