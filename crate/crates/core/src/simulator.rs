//! Synthetic exposure-bias data with known ground truth.
//!
//! A per-item confounder `z_i` raises both the chance that an item is shown and the
//! chance that it is liked. Training exposure follows `exp(beta * z_i)`; the test
//! split is exposed uniformly at random.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::dataset::{DatasetBundle, InteractionTable, DEFAULT_THRESHOLD, MAX_RATING};
use crate::error::{Error, Result};
use crate::exposure::{join_floats, sigmoid, PropensityTable};

/// Draws used to estimate marginal inclusion probabilities.
pub const INCLUSION_DRAWS: usize = 10_000;

const LATENT_STREAM: u64 = 1;
const LABEL_STREAM: u64 = 2;
const EXPOSURE_STREAM: u64 = 3;
const INCLUSION_STREAM: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub m: usize,
    pub n: usize,
    pub latent_dim: usize,
    /// Strength of the confounder's pull on exposure; 0 gives uniform exposure.
    pub exposure_skew: f64,
    pub exposures_per_user: usize,
    /// Strength of the confounder's effect on preference.
    pub confounder_outcome_weight: f64,
    pub test_exposures_per_user: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            m: 500,
            n: 100,
            latent_dim: 8,
            exposure_skew: 3.0,
            exposures_per_user: 20,
            confounder_outcome_weight: 1.0,
            test_exposures_per_user: 10,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 || self.latent_dim == 0 {
            return Err(Error::Config("m, n and latent_dim must be positive".into()));
        }
        if self.exposures_per_user == 0 || self.test_exposures_per_user == 0 {
            return Err(Error::Config(
                "exposures_per_user and test_exposures_per_user must be positive".into(),
            ));
        }
        if self.exposures_per_user + self.test_exposures_per_user > self.n {
            return Err(Error::Config(format!(
                "{} train + {} test exposures per user exceed n = {}",
                self.exposures_per_user, self.test_exposures_per_user, self.n
            )));
        }
        if !(self.exposure_skew >= 0.0 && self.exposure_skew.is_finite()) {
            return Err(Error::Config(format!(
                "exposure_skew must be finite and >= 0, got {}",
                self.exposure_skew
            )));
        }
        if !self.confounder_outcome_weight.is_finite() {
            return Err(Error::Config(
                "confounder_outcome_weight must be finite".into(),
            ));
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("cannot parse {key} = {value:?}")))
        }
        match key {
            "m" => self.m = parse(key, value)?,
            "n" => self.n = parse(key, value)?,
            "latent_dim" => self.latent_dim = parse(key, value)?,
            "exposure_skew" => self.exposure_skew = parse(key, value)?,
            "exposures_per_user" => self.exposures_per_user = parse(key, value)?,
            "confounder_outcome_weight" => self.confounder_outcome_weight = parse(key, value)?,
            "test_exposures_per_user" => self.test_exposures_per_user = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown simulator key {other:?}"))),
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        format!(
            "m = {}\nn = {}\nlatent_dim = {}\nexposure_skew = {}\nexposures_per_user = {}\n\
             confounder_outcome_weight = {}\ntest_exposures_per_user = {}\nseed = {}\n",
            self.m,
            self.n,
            self.latent_dim,
            self.exposure_skew,
            self.exposures_per_user,
            self.confounder_outcome_weight,
            self.test_exposures_per_user,
            self.seed
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBundle {
    pub config: SimConfig,
    /// Row-major `m x n` true preference probabilities.
    pub preference: Vec<f64>,
    /// Row-major `m x n` Bernoulli draws from `preference`.
    pub labels: Vec<u8>,
    pub confounder: Vec<f64>,
    /// Per-draw softmax weight `exp(beta * z_i) / sum_j exp(beta * z_j)`.
    pub draw_weights: Vec<f64>,
    /// Monte Carlo estimate of `P(item in a user's training set)`.
    pub inclusion: Vec<f64>,
    pub bundle: DatasetBundle,
}

impl SyntheticBundle {
    pub fn preference(&self, user: usize, item: usize) -> f64 {
        self.preference[user * self.config.n + item]
    }

    /// True propensities for IPS: the marginal inclusion probabilities, identical
    /// for every user since exposure depends on the item only.
    pub fn oracle_propensity(&self, floor: f64) -> Result<PropensityTable> {
        PropensityTable::per_item(self.config.m, self.inclusion.clone(), floor)
    }

    /// Writes `train.txt`, `test.txt` (0-based triples), `truth.txt` and
    /// `propensity.txt` into `dir`.
    pub fn write(&self, dir: &Path, propensity_floor: f64) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.bundle.train.write_triples(&dir.join("train.txt"))?;
        self.bundle.test.write_triples(&dir.join("test.txt"))?;
        self.oracle_propensity(propensity_floor)?
            .write(&dir.join("propensity.txt"))?;
        let path = dir.join("truth.txt");
        fs::write(&path, self.truth_text()).map_err(|e| Error::io(&path, e))
    }

    fn truth_text(&self) -> String {
        let n = self.config.n;
        let mut out = String::new();
        for line in self.config.to_kv().lines() {
            let _ = writeln!(out, "# {line}");
        }
        let _ = writeln!(out, "confounder\t{}", join_floats(&self.confounder));
        let _ = writeln!(out, "draw_weight\t{}", join_floats(&self.draw_weights));
        let _ = writeln!(out, "inclusion\t{}", join_floats(&self.inclusion));
        for (u, row) in self.preference.chunks(n).enumerate() {
            let _ = writeln!(out, "preference {u}\t{}", join_floats(row));
        }
        out
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn weighted_without_replacement<R: Rng + ?Sized>(
    rng: &mut R,
    weights: &[f64],
    amount: usize,
) -> Result<Vec<usize>> {
    let mut picked = index::sample_weighted(rng, weights.len(), |i| weights[i], amount)
        .map_err(|e| Error::InvalidInput(format!("exposure sampling failed: {e}")))?
        .into_vec();
    picked.sort_unstable();
    Ok(picked)
}

pub fn generate(config: &SimConfig) -> Result<SyntheticBundle> {
    config.validate()?;
    let SimConfig {
        m, n, latent_dim, ..
    } = *config;

    // entries ~ N(0, L^{-1/2}) so that u . i has unit variance
    let scale = (latent_dim as f64).powf(-0.25);
    let latent = Normal::new(0.0, scale).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = stream(config.seed, LATENT_STREAM);
    let users: Vec<f64> = (0..m * latent_dim)
        .map(|_| latent.sample(&mut rng))
        .collect();
    let items: Vec<f64> = (0..n * latent_dim)
        .map(|_| latent.sample(&mut rng))
        .collect();
    let confounder: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();

    let mut preference = Vec::with_capacity(m * n);
    for u in 0..m {
        let pu = &users[u * latent_dim..(u + 1) * latent_dim];
        for (i, z) in confounder.iter().enumerate() {
            let qi = &items[i * latent_dim..(i + 1) * latent_dim];
            let dot: f64 = pu.iter().zip(qi).map(|(a, b)| a * b).sum();
            preference.push(sigmoid(dot + config.confounder_outcome_weight * z));
        }
    }
    let mut rng = stream(config.seed, LABEL_STREAM);
    let labels: Vec<u8> = preference
        .iter()
        .map(|&p| u8::from(rng.random_bool(p)))
        .collect();

    // shift by the max before exponentiating
    let z_max = confounder.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = confounder
        .iter()
        .map(|z| (config.exposure_skew * (z - z_max)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    let draw_weights: Vec<f64> = raw.iter().map(|w| w / total).collect();

    let rating = |u: usize, i: usize| {
        if labels[u * n + i] == 1 {
            MAX_RATING
        } else {
            1
        }
    };
    let mut rng = stream(config.seed, EXPOSURE_STREAM);
    let mut train = Vec::with_capacity(m * config.exposures_per_user);
    let mut test = Vec::with_capacity(m * config.test_exposures_per_user);
    let mut taken = vec![false; n];
    for u in 0..m {
        let exposed =
            weighted_without_replacement(&mut rng, &draw_weights, config.exposures_per_user)?;
        taken.iter_mut().for_each(|t| *t = false);
        for &i in &exposed {
            taken[i] = true;
            train.push((u, i, rating(u, i)));
        }
        let remaining: Vec<usize> = (0..n).filter(|&i| !taken[i]).collect();
        let mut chosen: Vec<usize> =
            index::sample(&mut rng, remaining.len(), config.test_exposures_per_user)
                .into_iter()
                .map(|k| remaining[k])
                .collect();
        chosen.sort_unstable();
        test.extend(chosen.into_iter().map(|i| (u, i, rating(u, i))));
    }

    let mut rng = stream(config.seed, INCLUSION_STREAM);
    let mut hits = vec![0usize; n];
    for _ in 0..INCLUSION_DRAWS {
        for i in weighted_without_replacement(&mut rng, &draw_weights, config.exposures_per_user)? {
            hits[i] += 1;
        }
    }
    let inclusion = hits
        .iter()
        .map(|&h| h as f64 / INCLUSION_DRAWS as f64)
        .collect();

    let train = InteractionTable::from_ratings(m, n, DEFAULT_THRESHOLD, train)?;
    let test = InteractionTable::from_ratings(m, n, DEFAULT_THRESHOLD, test)?;
    Ok(SyntheticBundle {
        config: *config,
        preference,
        labels,
        confounder,
        draw_weights,
        inclusion,
        bundle: DatasetBundle::new(train, test)?,
    })
}
