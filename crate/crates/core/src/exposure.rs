//! Exposure probabilities (propensity scores) and item popularity.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{DatasetBundle, ExposureMatrix, InteractionTable};
use crate::error::{Error, Result};

pub const DEFAULT_PROPENSITY_FLOOR: f64 = 0.05;
pub const DEFAULT_POPULARITY_FLOOR: f64 = 1e-3;

/// Square-root normalized interaction counts per item.
#[derive(Debug, Clone, PartialEq)]
pub struct PopularityTable {
    values: Vec<f64>,
    floor: f64,
}

impl PopularityTable {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn get(&self, item: usize) -> f64 {
        self.values[item]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `pop(i) = sqrt(count(i) / max_j count(j))`; items without interactions get `floor`.
pub fn popularity_from_counts(counts: &[usize], floor: f64) -> Result<PopularityTable> {
    let max = counts.iter().copied().max().unwrap_or(0);
    if max == 0 {
        return Err(Error::InvalidInput(
            "no interactions to estimate popularity from".into(),
        ));
    }
    let values = counts
        .iter()
        .map(|&c| {
            if c == 0 {
                floor
            } else {
                (c as f64 / max as f64).sqrt()
            }
        })
        .collect();
    Ok(PopularityTable { values, floor })
}

pub fn estimate_popularity(bundle: &DatasetBundle) -> Result<PopularityTable> {
    popularity_from_counts(&bundle.exposure.item_counts(), DEFAULT_POPULARITY_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
enum Values {
    /// Row-major `m x n`.
    Dense(Vec<f64>),
    /// Depends on the item only.
    PerItem(Vec<f64>),
    /// Naive Bayes: depends on the observed label only. Unobserved pairs use the
    /// marginal exposure rate.
    PerClass {
        negative: f64,
        positive: f64,
        unobserved: f64,
        labels: HashMap<(usize, usize), u8>,
    },
}

/// Estimated `P(O[u,i] = 1)`, always within `[floor, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PropensityTable {
    m: usize,
    n: usize,
    floor: f64,
    values: Values,
}

fn clip_value(v: f64, floor: f64) -> f64 {
    v.max(floor).min(1.0)
}

fn check_floor(floor: f64) -> Result<()> {
    if !(floor > 0.0 && floor < 1.0) {
        return Err(Error::InvalidInput(format!(
            "propensity floor {floor} outside (0, 1)"
        )));
    }
    Ok(())
}

impl PropensityTable {
    pub fn dense(m: usize, n: usize, values: Vec<f64>, floor: f64) -> Result<Self> {
        if values.len() != m * n {
            return Err(Error::Shape(format!(
                "{} propensities for a {m}x{n} table",
                values.len()
            )));
        }
        Self::build(m, n, floor, Values::Dense(values))
    }

    pub fn per_item(m: usize, values: Vec<f64>, floor: f64) -> Result<Self> {
        let n = values.len();
        Self::build(m, n, floor, Values::PerItem(values))
    }

    /// Uses item popularity as a stand-in propensity.
    pub fn from_popularity(m: usize, pop: &PopularityTable, floor: f64) -> Result<Self> {
        Self::per_item(m, pop.values().to_vec(), floor)
    }

    fn build(m: usize, n: usize, floor: f64, values: Values) -> Result<Self> {
        check_floor(floor)?;
        let mut table = Self {
            m,
            n,
            floor,
            values,
        };
        table.apply_floor(floor);
        Ok(table)
    }

    fn apply_floor(&mut self, floor: f64) {
        self.floor = floor;
        match &mut self.values {
            Values::Dense(v) | Values::PerItem(v) => {
                v.iter_mut().for_each(|x| *x = clip_value(*x, floor));
            }
            Values::PerClass {
                negative,
                positive,
                unobserved,
                ..
            } => {
                *negative = clip_value(*negative, floor);
                *positive = clip_value(*positive, floor);
                *unobserved = clip_value(*unobserved, floor);
            }
        }
    }

    pub fn num_users(&self) -> usize {
        self.m
    }

    pub fn num_items(&self) -> usize {
        self.n
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn kind_name(&self) -> &'static str {
        match self.values {
            Values::Dense(_) => "dense",
            Values::PerItem(_) => "per_item",
            Values::PerClass { .. } => "naive_bayes",
        }
    }

    #[inline]
    pub fn get(&self, user: usize, item: usize) -> f64 {
        match &self.values {
            Values::Dense(v) => v[user * self.n + item],
            Values::PerItem(v) => v[item],
            Values::PerClass {
                negative,
                positive,
                unobserved,
                labels,
            } => match labels.get(&(user, item)) {
                Some(1) => *positive,
                Some(_) => *negative,
                None => *unobserved,
            },
        }
    }

    pub fn row(&self, user: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.get(user, i)).collect()
    }

    /// The per-class values `(negative, positive, unobserved)` of a naive Bayes table.
    pub fn class_values(&self) -> Option<(f64, f64, f64)> {
        match &self.values {
            Values::PerClass {
                negative,
                positive,
                unobserved,
                ..
            } => Some((*negative, *positive, *unobserved)),
            _ => None,
        }
    }

    /// Writes a text file: one header line, then the stored values.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = format!(
            "# propensity kind={} m={} n={} floor={}\n",
            self.kind_name(),
            self.m,
            self.n,
            self.floor
        );
        match &self.values {
            Values::Dense(v) => {
                for row in v.chunks(self.n.max(1)) {
                    out.push_str(&join_floats(row));
                    out.push('\n');
                }
            }
            Values::PerItem(v) => {
                out.push_str(&join_floats(v));
                out.push('\n');
            }
            Values::PerClass {
                negative,
                positive,
                unobserved,
                labels,
            } => {
                let _ = writeln!(out, "{negative} {positive} {unobserved}");
                let mut pairs: Vec<_> = labels.iter().collect();
                pairs.sort();
                for ((u, i), y) in pairs {
                    let _ = writeln!(out, "{u} {i} {y}");
                }
            }
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::format(path, 1, "empty propensity file"))?;
        let fields = parse_header(path, header, "propensity")?;
        let get = |key: &str| {
            fields
                .get(key)
                .cloned()
                .ok_or_else(|| Error::format(path, 1, format!("header missing {key}")))
        };
        let kind = get("kind")?;
        let m: usize = parse_field(path, 1, &get("m")?)?;
        let n: usize = parse_field(path, 1, &get("n")?)?;
        let floor: f64 = parse_field(path, 1, &get("floor")?)?;
        let numbers = |lineno: usize, line: &str| -> Result<Vec<f64>> {
            line.split_whitespace()
                .map(|s| parse_field(path, lineno, s))
                .collect()
        };
        match kind.as_str() {
            "dense" | "per_item" => {
                let mut values = Vec::new();
                for (idx, line) in lines {
                    values.extend(numbers(idx + 1, line)?);
                }
                if kind == "dense" {
                    Self::dense(m, n, values, floor)
                } else if values.len() != n {
                    Err(Error::format(path, 0, format!("expected {n} values")))
                } else {
                    Self::per_item(m, values, floor)
                }
            }
            "naive_bayes" => {
                let (idx, first) = lines
                    .next()
                    .ok_or_else(|| Error::format(path, 2, "missing class values"))?;
                let cls = numbers(idx + 1, first)?;
                if cls.len() != 3 {
                    return Err(Error::format(path, idx + 1, "expected 3 class values"));
                }
                let mut labels = HashMap::new();
                for (idx, line) in lines {
                    let f: Vec<usize> = line
                        .split_whitespace()
                        .map(|s| parse_field(path, idx + 1, s))
                        .collect::<Result<_>>()?;
                    if f.len() != 3 || f[0] >= m || f[1] >= n {
                        return Err(Error::format(path, idx + 1, "bad labelled pair"));
                    }
                    labels.insert((f[0], f[1]), f[2] as u8);
                }
                Self::build(
                    m,
                    n,
                    floor,
                    Values::PerClass {
                        negative: cls[0],
                        positive: cls[1],
                        unobserved: cls[2],
                        labels,
                    },
                )
            }
            other => Err(Error::format(path, 1, format!("unknown kind {other:?}"))),
        }
    }
}

pub(crate) fn join_floats(values: &[f64]) -> String {
    values
        .iter()
        .map(f64::to_string)
        .collect::<Vec<_>>()
        .join(" ")
}

pub(crate) fn parse_header(path: &Path, line: &str, tag: &str) -> Result<HashMap<String, String>> {
    let mut parts = line.split_whitespace();
    if parts.next() != Some("#") || parts.next() != Some(tag) {
        return Err(Error::format(path, 1, format!("expected '# {tag}' header")));
    }
    Ok(parts
        .filter_map(|kv| kv.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect())
}

pub(crate) fn parse_field<T: std::str::FromStr>(path: &Path, line: usize, s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::format(path, line, format!("cannot parse {s:?}")))
}

/// Elementwise `min(max(p, floor), 1)`.
pub fn clip(table: &PropensityTable, floor: f64) -> Result<PropensityTable> {
    check_floor(floor)?;
    let mut out = table.clone();
    out.apply_floor(floor);
    Ok(out)
}

/// Bayes rule `P(O=1 | Y=y) = P(Y=y | O=1) P(O=1) / P(Y=y)`, unclipped.
pub fn naive_bayes_propensity(p_label_given_exposed: f64, p_exposed: f64, p_label: f64) -> f64 {
    p_label_given_exposed * p_exposed / p_label
}

/// Naive Bayes propensities from the biased training table and a small
/// uniformly exposed (MCAR) sample.
pub fn estimate_propensity_nb(
    train: &InteractionTable,
    mcar: &InteractionTable,
    floor: f64,
) -> Result<PropensityTable> {
    if train.is_empty() || mcar.is_empty() {
        return Err(Error::InvalidInput(
            "naive Bayes propensities need non-empty train and MCAR tables".into(),
        ));
    }
    let (m, n) = (train.num_users(), train.num_items());
    let positives = |t: &InteractionTable| t.iter().filter(|r| r.label == 1).count() as f64;
    let train_pos = positives(train) / train.len() as f64;
    let mcar_pos = positives(mcar) / mcar.len() as f64;
    if mcar_pos == 0.0 || mcar_pos == 1.0 {
        return Err(Error::InvalidInput(
            "MCAR sample must contain both label classes".into(),
        ));
    }
    let p_exposed = train.len() as f64 / (m * n) as f64;
    let positive = naive_bayes_propensity(train_pos, p_exposed, mcar_pos);
    let negative = naive_bayes_propensity(1.0 - train_pos, p_exposed, 1.0 - mcar_pos);
    let labels = train.iter().map(|r| ((r.user, r.item), r.label)).collect();
    PropensityTable::build(
        m,
        n,
        floor,
        Values::PerClass {
            negative,
            positive,
            unobserved: p_exposed,
            labels,
        },
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticHyper {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Sampled unexposed pairs per exposed pair.
    pub negative_ratio: f64,
    pub l2: f64,
    pub seed: u64,
    pub floor: f64,
}

impl Default for LogisticHyper {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            epochs: 300,
            negative_ratio: 1.0,
            l2: 1e-4,
            seed: 0,
            floor: DEFAULT_PROPENSITY_FLOOR,
        }
    }
}

/// `P(O=1 | x_u, x_i) = sigmoid(w . (x_u ++ x_i) + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticPropensityModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LogisticPropensityModel {
    fn logit(&self, xu: &[f64], xi: &[f64]) -> f64 {
        let (wu, wi) = self.weights.split_at(xu.len());
        self.bias + dot(wu, xu) + dot(wi, xi)
    }

    pub fn predict(&self, xu: &[f64], xi: &[f64]) -> f64 {
        sigmoid(self.logit(xu, xi))
    }

    pub fn table(&self, bundle: &DatasetBundle, floor: f64) -> Result<PropensityTable> {
        let (uf, itf) = features(bundle)?;
        if self.weights.len() != uf.dim() + itf.dim() {
            return Err(Error::Shape(format!(
                "{} weights for {} features",
                self.weights.len(),
                uf.dim() + itf.dim()
            )));
        }
        let mut values = Vec::with_capacity(bundle.m * bundle.n);
        for u in 0..bundle.m {
            for i in 0..bundle.n {
                values.push(self.predict(uf.row(u), itf.row(i)));
            }
        }
        PropensityTable::dense(bundle.m, bundle.n, values, floor)
    }
}

fn features(
    bundle: &DatasetBundle,
) -> Result<(&crate::dataset::FeatureTable, &crate::dataset::FeatureTable)> {
    match (&bundle.user_features, &bundle.item_features) {
        (Some(u), Some(i)) => Ok((u, i)),
        _ => Err(Error::InvalidInput(
            "logistic propensities need user and item features; use popularity or naive Bayes instead"
                .into(),
        )),
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Fits the logistic exposure model by full-batch gradient descent. Negatives are
/// unexposed pairs drawn uniformly; the intercept is shifted by the log sampling
/// rate so predictions estimate the population exposure rate.
pub fn fit_logistic_propensity(
    exposure: &ExposureMatrix,
    bundle: &DatasetBundle,
    hyper: &LogisticHyper,
) -> Result<LogisticPropensityModel> {
    let (uf, itf) = features(bundle)?;
    let (m, n) = (exposure.num_users(), exposure.num_items());
    let positives: Vec<(usize, usize)> = (0..m)
        .flat_map(|u| exposure.exposed_items(u).iter().map(move |&i| (u, i)))
        .collect();
    let total_negatives = m * n - positives.len();
    if positives.is_empty() || total_negatives == 0 {
        return Err(Error::InvalidInput(
            "logistic propensities need both exposed and unexposed pairs".into(),
        ));
    }
    let want = ((positives.len() as f64 * hyper.negative_ratio).round() as usize).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut negatives = Vec::with_capacity(want);
    while negatives.len() < want {
        let (u, i) = (rng.random_range(0..m), rng.random_range(0..n));
        if !exposure.is_exposed(u, i) {
            negatives.push((u, i));
        }
    }

    let dim = uf.dim() + itf.dim();
    let samples: Vec<(usize, usize, f64)> = positives
        .iter()
        .map(|&(u, i)| (u, i, 1.0))
        .chain(negatives.iter().map(|&(u, i)| (u, i, 0.0)))
        .collect();
    let mut model = LogisticPropensityModel {
        weights: vec![0.0; dim],
        bias: 0.0,
    };
    let scale = 1.0 / samples.len() as f64;
    let mut grad = vec![0.0; dim];
    for _ in 0..hyper.epochs {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut grad_bias = 0.0;
        for &(u, i, target) in &samples {
            let (xu, xi) = (uf.row(u), itf.row(i));
            let err = (model.predict(xu, xi) - target) * scale;
            grad_bias += err;
            let (gu, gi) = grad.split_at_mut(xu.len());
            gu.iter_mut().zip(xu).for_each(|(g, x)| *g += err * x);
            gi.iter_mut().zip(xi).for_each(|(g, x)| *g += err * x);
        }
        for (w, g) in model.weights.iter_mut().zip(&grad) {
            *w -= hyper.learning_rate * (g + hyper.l2 * *w);
        }
        model.bias -= hyper.learning_rate * grad_bias;
    }
    model.bias += (negatives.len() as f64 / total_negatives as f64).ln();
    Ok(model)
}

pub fn estimate_propensity_lr(
    exposure: &ExposureMatrix,
    bundle: &DatasetBundle,
    hyper: &LogisticHyper,
) -> Result<PropensityTable> {
    fit_logistic_propensity(exposure, bundle, hyper)?.table(bundle, hyper.floor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{EntityKind, FeatureTable};
    use approx::assert_abs_diff_eq;

    #[test]
    fn popularity_examples() {
        let p = popularity_from_counts(&[4, 2, 1], DEFAULT_POPULARITY_FLOOR).unwrap();
        assert_abs_diff_eq!(p.get(0), 1.0);
        assert_abs_diff_eq!(p.get(1), 0.5f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(p.get(1), std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-8);
        assert_abs_diff_eq!(p.get(2), 0.5);

        let p = popularity_from_counts(&[7, 7, 7], DEFAULT_POPULARITY_FLOOR).unwrap();
        assert_eq!(p.values(), &[1.0, 1.0, 1.0]);

        let p = popularity_from_counts(&[0, 5], 1e-3).unwrap();
        assert_eq!(p.values(), &[1e-3, 1.0]);

        assert!(popularity_from_counts(&[0, 0], 1e-3).is_err());
    }

    #[test]
    fn naive_bayes_rule() {
        assert_abs_diff_eq!(naive_bayes_propensity(0.8, 0.1, 0.5), 0.16, epsilon = 1e-15);
    }

    fn table_with(m: usize, n: usize, labels: &[u8]) -> InteractionTable {
        let ratings = labels
            .iter()
            .enumerate()
            .map(|(k, &y)| (k / n, k % n, if y == 1 { 5 } else { 1 }));
        InteractionTable::from_ratings(m, n, 3, ratings).unwrap()
    }

    #[test]
    fn naive_bayes_from_tables() {
        // 10 of 100 cells exposed, 8 positive; MCAR sample half positive.
        let train = table_with(10, 10, &[1, 1, 1, 1, 1, 1, 1, 1, 0, 0]);
        let mcar = table_with(10, 10, &[1, 0, 1, 0]);
        let t = estimate_propensity_nb(&train, &mcar, 0.01).unwrap();
        let (neg, pos, unobs) = t.class_values().unwrap();
        assert_abs_diff_eq!(pos, 0.16, epsilon = 1e-12);
        assert_abs_diff_eq!(neg, 0.04, epsilon = 1e-12);
        assert_abs_diff_eq!(unobs, 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(t.get(0, 0), 0.16, epsilon = 1e-12);
        assert_abs_diff_eq!(t.get(0, 9), 0.04, epsilon = 1e-12);
        assert_abs_diff_eq!(t.get(5, 5), 0.1, epsilon = 1e-12);
    }

    #[test]
    fn naive_bayes_independence_gives_constant() {
        let train = table_with(4, 5, &[1, 0, 1, 0]);
        let mcar = table_with(4, 5, &[0, 1, 1, 0, 1, 0]);
        let t = estimate_propensity_nb(&train, &mcar, 0.01).unwrap();
        let (neg, pos, unobs) = t.class_values().unwrap();
        assert_abs_diff_eq!(neg, 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(pos, 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(unobs, 0.2, epsilon = 1e-12);
    }

    #[test]
    fn naive_bayes_clips_and_rejects_single_class() {
        // P(Y=1|O=1)=1, P(O=1)=0.65, P(Y=1)=0.5 -> 1.3 -> 1.0
        let train = table_with(4, 5, &[1; 13]);
        let mcar = table_with(4, 5, &[1, 0]);
        let t = estimate_propensity_nb(&train, &mcar, 0.05).unwrap();
        assert_eq!(t.class_values().unwrap().1, 1.0);

        let mcar = table_with(4, 5, &[1, 1]);
        assert!(estimate_propensity_nb(&train, &mcar, 0.05).is_err());
    }

    #[test]
    fn clip_examples() {
        let t = PropensityTable::dense(1, 2, vec![0.5, 0.5], 0.01).unwrap();
        assert_eq!(clip(&t, 0.05).unwrap().row(0), vec![0.5, 0.5]);
        let t = PropensityTable::dense(1, 3, vec![0.001, 0.5, 1.2], 0.001).unwrap();
        assert_eq!(clip(&t, 0.05).unwrap().row(0), vec![0.05, 0.5, 1.0]);
        assert!(clip(&t, 0.0).is_err());
        assert!(clip(&t, 1.0).is_err());
    }

    fn toy_bundle() -> DatasetBundle {
        // exposure determined by item feature 0: item 0 exposed for every user.
        let train = InteractionTable::from_ratings(2, 2, 3, [(0, 0, 4), (1, 0, 2)]).unwrap();
        let test = InteractionTable::empty(2, 2, 3);
        let uf = FeatureTable::new(EntityKind::User, 1, vec![1.0, 0.0]).unwrap();
        let itf = FeatureTable::new(EntityKind::Item, 1, vec![1.0, 0.0]).unwrap();
        DatasetBundle::new(train, test)
            .unwrap()
            .with_features(Some(uf), Some(itf))
            .unwrap()
    }

    #[test]
    fn logistic_zero_model_is_sigmoid_bias() {
        let b = toy_bundle();
        let model = LogisticPropensityModel {
            weights: vec![0.0, 0.0],
            bias: -0.7,
        };
        let t = model.table(&b, 0.01).unwrap();
        for u in 0..2 {
            for i in 0..2 {
                assert_abs_diff_eq!(t.get(u, i), sigmoid(-0.7), epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn logistic_separable_toy() {
        let b = toy_bundle();
        let hyper = LogisticHyper {
            floor: 1e-6,
            ..Default::default()
        };
        let t = estimate_propensity_lr(&b.exposure, &b, &hyper).unwrap();
        for u in 0..2 {
            assert!(t.get(u, 0) > t.get(u, 1), "user {u}: {:?}", t.row(u));
        }
        let again = estimate_propensity_lr(&b.exposure, &b, &hyper).unwrap();
        assert_eq!(t, again);
    }

    #[test]
    fn logistic_requires_features() {
        let mut b = toy_bundle();
        b.item_features = None;
        let err = estimate_propensity_lr(&b.exposure, &b, &LogisticHyper::default()).unwrap_err();
        assert!(err.to_string().contains("popularity"));
    }

    #[test]
    fn table_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let dense = PropensityTable::dense(2, 2, vec![0.1, 0.2, 0.3, 1.0 / 3.0], 0.05).unwrap();
        let train = table_with(2, 2, &[1, 0]);
        let mcar = table_with(2, 2, &[1, 0, 0]);
        let nb = estimate_propensity_nb(&train, &mcar, 0.05).unwrap();
        let per_item = PropensityTable::per_item(3, vec![0.7, 0.01], 0.05).unwrap();
        for t in [dense, nb, per_item] {
            let p = dir.path().join("p.txt");
            t.write(&p).unwrap();
            assert_eq!(PropensityTable::read(&p).unwrap(), t);
        }
    }
}
