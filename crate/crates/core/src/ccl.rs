//! Contrastive counterfactual learning: positive samplers and the in-batch
//! contrastive loss over `2N` views.
//!
//! For a mini-batch of `N` observed pairs, row `2k` of the view matrix is the
//! anchor `g_u(u_k) ++ g_i(i_k)` and row `2k + 1` is its positive view
//! `g_u(u_k) ++ g_i(i'_k)`, where `i'_k` comes from one of the samplers below.
//! Every other row in the batch acts as a negative.

use std::fmt;
use std::str::FromStr;

use ndarray::{linalg::general_mat_mul, s, Array2, ArrayView2};
use rand::Rng;

use crate::dataset::DatasetBundle;
use crate::error::{Error, Result};
use crate::exposure::{PopularityTable, PropensityTable};
use crate::model::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SamplerKind {
    /// Uniform draw among the user's unexposed items.
    RandomCounterfactual,
    /// Item whose propensity differs most from the anchor's, same user.
    PropensityDifference,
    /// Item whose popularity differs most from the anchor item's.
    PopularityDifference,
}

impl SamplerKind {
    pub const ALL: [SamplerKind; 3] = [
        SamplerKind::RandomCounterfactual,
        SamplerKind::PropensityDifference,
        SamplerKind::PopularityDifference,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SamplerKind::RandomCounterfactual => "cf",
            SamplerKind::PropensityDifference => "ps",
            SamplerKind::PopularityDifference => "pop",
        }
    }
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cf" | "random_counterfactual" => Ok(SamplerKind::RandomCounterfactual),
            "ps" | "propensity_difference" => Ok(SamplerKind::PropensityDifference),
            "pop" | "popularity_difference" => Ok(SamplerKind::PopularityDifference),
            other => Err(Error::Config(format!(
                "unknown sampler {other:?} (expected cf, ps or pop)"
            ))),
        }
    }
}

fn need_two_items(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidInput(
            "positive sampling needs at least two items".into(),
        ));
    }
    Ok(())
}

/// Uniform draw from the items `user` was never exposed to. Users exposed to every
/// item fall back to a uniform draw over all items other than `item`.
pub fn sample_random_counterfactual<R: Rng + ?Sized>(
    bundle: &DatasetBundle,
    user: usize,
    item: usize,
    rng: &mut R,
) -> Result<usize> {
    need_two_items(bundle.n)?;
    if user >= bundle.m {
        return Err(Error::OutOfRange {
            what: "user",
            index: user,
            len: bundle.m,
        });
    }
    let exposed = bundle.exposure.exposed_items(user);
    let free = bundle.n - exposed.len();
    if free == 0 {
        let k = rng.random_range(0..bundle.n - 1);
        return Ok(if k >= item { k + 1 } else { k });
    }
    // k-th unexposed item: skip over the sorted exposed list
    let mut target = rng.random_range(0..free);
    for &e in exposed {
        if e <= target {
            target += 1;
        } else {
            break;
        }
    }
    Ok(target)
}

/// `argmax_{j != anchor} |values[j] - values[anchor]|`, lowest index on ties.
fn farthest_from(values: impl Iterator<Item = f64> + Clone, anchor: usize) -> usize {
    let reference = values.clone().nth(anchor).expect("anchor in range");
    let mut best = None::<(usize, f64)>;
    for (j, v) in values.enumerate() {
        if j == anchor {
            continue;
        }
        let gap = (v - reference).abs();
        if best.is_none_or(|(_, g)| gap > g) {
            best = Some((j, gap));
        }
    }
    best.expect("at least two items").0
}

pub fn sample_propensity_difference(
    propensities: &PropensityTable,
    user: usize,
    item: usize,
) -> Result<usize> {
    need_two_items(propensities.num_items())?;
    if user >= propensities.num_users() || item >= propensities.num_items() {
        return Err(Error::InvalidInput(format!(
            "pair ({user}, {item}) outside the propensity table"
        )));
    }
    let n = propensities.num_items();
    Ok(farthest_from(
        (0..n).map(|j| propensities.get(user, j)),
        item,
    ))
}

pub fn sample_popularity_difference(popularity: &PopularityTable, item: usize) -> Result<usize> {
    need_two_items(popularity.len())?;
    if item >= popularity.len() {
        return Err(Error::OutOfRange {
            what: "item",
            index: item,
            len: popularity.len(),
        });
    }
    Ok(farthest_from(popularity.values().iter().copied(), item))
}

/// A configured positive sampler with the tables it reads from. Counts its invocations.
pub struct PositiveSampler<'a> {
    kind: SamplerKind,
    bundle: &'a DatasetBundle,
    propensity: Option<&'a PropensityTable>,
    popularity: Option<&'a PopularityTable>,
    calls: u64,
}

impl<'a> PositiveSampler<'a> {
    pub fn new(
        kind: SamplerKind,
        bundle: &'a DatasetBundle,
        propensity: Option<&'a PropensityTable>,
        popularity: Option<&'a PopularityTable>,
    ) -> Result<Self> {
        match kind {
            SamplerKind::PropensityDifference if propensity.is_none() => {
                return Err(Error::Config("sampler ps needs a propensity table".into()))
            }
            SamplerKind::PopularityDifference if popularity.is_none() => {
                return Err(Error::Config("sampler pop needs a popularity table".into()))
            }
            _ => {}
        }
        Ok(Self {
            kind,
            bundle,
            propensity,
            popularity,
            calls: 0,
        })
    }

    pub fn kind(&self) -> SamplerKind {
        self.kind
    }

    pub fn calls(&self) -> u64 {
        self.calls
    }

    pub fn sample<R: Rng + ?Sized>(
        &mut self,
        user: usize,
        item: usize,
        rng: &mut R,
    ) -> Result<usize> {
        self.calls += 1;
        match self.kind {
            SamplerKind::RandomCounterfactual => {
                sample_random_counterfactual(self.bundle, user, item, rng)
            }
            SamplerKind::PropensityDifference => {
                sample_propensity_difference(self.propensity.expect("checked in new"), user, item)
            }
            SamplerKind::PopularityDifference => {
                sample_popularity_difference(self.popularity.expect("checked in new"), item)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Similarity {
    Dot,
    Cosine,
}

/// `2N` interleaved views: rows `2k` (anchor) and `2k + 1` (positive) form pair `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct CclBatch {
    /// Row-major `2N x width`.
    pub representations: Vec<f64>,
    pub width: usize,
    pub temperature: f64,
    pub similarity: Similarity,
    pub users: Vec<usize>,
    pub anchor_items: Vec<usize>,
    pub positive_items: Vec<usize>,
}

impl CclBatch {
    pub fn from_representations(representations: Vec<f64>, width: usize, temperature: f64) -> Self {
        Self {
            representations,
            width,
            temperature,
            similarity: Similarity::Dot,
            users: Vec::new(),
            anchor_items: Vec::new(),
            positive_items: Vec::new(),
        }
    }

    pub fn rows(&self) -> usize {
        self.representations
            .len()
            .checked_div(self.width)
            .unwrap_or(0)
    }

    pub fn row(&self, idx: usize) -> &[f64] {
        &self.representations[idx * self.width..(idx + 1) * self.width]
    }
}

/// Builds the anchor/positive views for a mini-batch of observed pairs.
pub fn build_views<R: Rng + ?Sized>(
    params: &ModelParams,
    users: &[usize],
    items: &[usize],
    sampler: &mut PositiveSampler<'_>,
    rng: &mut R,
    temperature: f64,
    similarity: Similarity,
) -> Result<CclBatch> {
    let positives = users
        .iter()
        .zip(items)
        .map(|(&u, &i)| sampler.sample(u, i, rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(views_from_positives(
        params,
        users,
        items,
        &positives,
        temperature,
        similarity,
    ))
}

/// Views for pairs whose positive items are already chosen.
pub fn views_from_positives(
    params: &ModelParams,
    users: &[usize],
    items: &[usize],
    positives: &[usize],
    temperature: f64,
    similarity: Similarity,
) -> CclBatch {
    let width = 2 * params.dim();
    let mut representations = Vec::with_capacity(users.len() * 2 * width);
    for ((&u, &i), &p) in users.iter().zip(items).zip(positives) {
        representations.extend_from_slice(params.user_embedding(u));
        representations.extend_from_slice(params.item_embedding(i));
        representations.extend_from_slice(params.user_embedding(u));
        representations.extend_from_slice(params.item_embedding(p));
    }
    CclBatch {
        representations,
        width,
        temperature,
        similarity,
        users: users.to_vec(),
        anchor_items: items.to_vec(),
        positive_items: positives.to_vec(),
    }
}

/// Users and items for each of the `2N` rows, in view order.
pub fn view_ids(batch: &CclBatch) -> (Vec<usize>, Vec<usize>) {
    let mut users = Vec::with_capacity(batch.users.len() * 2);
    let mut items = Vec::with_capacity(batch.users.len() * 2);
    for k in 0..batch.users.len() {
        users.extend([batch.users[k], batch.users[k]]);
        items.extend([batch.anchor_items[k], batch.positive_items[k]]);
    }
    (users, items)
}

pub fn ccl_loss(batch: &CclBatch) -> Result<f64> {
    Ok(ccl_loss_and_grad(batch, false)?.0)
}

const BLOCK_ROWS: usize = 256;
const NORM_EPS: f64 = 1e-12;

/// Contrastive loss `(1/2N) sum_a -log softmax_{m != a}(sim(a, m) / tau)[partner(a)]`
/// and, when requested, its gradient with respect to every representation row.
pub fn ccl_loss_and_grad(batch: &CclBatch, want_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
    if !(batch.temperature > 0.0) {
        return Err(Error::InvalidInput(format!(
            "temperature {} must be positive",
            batch.temperature
        )));
    }
    let rows = batch.rows();
    if rows < 2 || !rows.is_multiple_of(2) || rows * batch.width != batch.representations.len() {
        return Err(Error::Shape(format!(
            "{} values do not form an even number (>= 2) of rows of width {}",
            batch.representations.len(),
            batch.width
        )));
    }
    let width = batch.width;
    let raw = ArrayView2::from_shape((rows, width), &batch.representations)
        .map_err(|e| Error::Shape(e.to_string()))?;

    let (reps, norms) = match batch.similarity {
        Similarity::Dot => (raw.to_owned(), None),
        Similarity::Cosine => {
            let norms: Vec<f64> = raw
                .rows()
                .into_iter()
                .map(|r| r.dot(&r).sqrt().max(NORM_EPS))
                .collect();
            let mut unit = raw.to_owned();
            for (mut r, n) in unit.rows_mut().into_iter().zip(&norms) {
                r /= *n;
            }
            (unit, Some(norms))
        }
    };

    let inv_tau = 1.0 / batch.temperature;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| Array2::<f64>::zeros((rows, width)));
    let mut start = 0;
    while start < rows {
        let end = (start + BLOCK_ROWS).min(rows);
        let block = reps.slice(s![start..end, ..]);
        let mut logits = Array2::<f64>::zeros((end - start, rows));
        general_mat_mul(inv_tau, &block, &reps.t(), 0.0, &mut logits);

        // logits become softmax(m != a) minus the partner indicator
        for (local, mut row) in logits.rows_mut().into_iter().enumerate() {
            let a = start + local;
            let partner = a ^ 1;
            let max = row
                .iter()
                .enumerate()
                .filter(|&(m, _)| m != a)
                .map(|(_, &v)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            let partner_shifted = row[partner] - max;
            let mut denom = 0.0;
            for (m, v) in row.iter_mut().enumerate() {
                if m == a {
                    *v = 0.0;
                } else {
                    *v = (*v - max).exp();
                    denom += *v;
                }
            }
            // -log p(partner) = log(denom) - (s_partner - max)
            total += denom.ln() - partner_shifted;
            row.mapv_inplace(|v| v / denom);
            row[partner] -= 1.0;
        }

        if let Some(grad) = grad.as_mut() {
            // d l_a / d r_a = G[a, :] R / tau; d l_a / d r_m = G[a, m] r_a / tau
            let mut own = grad.slice_mut(s![start..end, ..]);
            general_mat_mul(1.0, &logits, &reps, 1.0, &mut own);
            general_mat_mul(1.0, &logits.t(), &block, 1.0, grad);
        }
        start = end;
    }

    let scale = 1.0 / rows as f64;
    let loss = total * scale;
    let grad = grad.map(|mut g| {
        g *= scale * inv_tau;
        if let Some(norms) = norms {
            for ((mut gr, ur), n) in g.rows_mut().into_iter().zip(reps.rows()).zip(&norms) {
                let radial = gr.dot(&ur);
                gr.zip_mut_with(&ur, |gv, &uv| *gv = (*gv - uv * radial) / n);
            }
        }
        g.into_raw_vec_and_offset().0
    });
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::InteractionTable;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct evaluation of the two-direction pair loss, independent of the blocked
    /// matrix implementation.
    fn brute_force(reps: &[Vec<f64>], tau: f64) -> f64 {
        let sim = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let term = |a: usize, b: usize| {
            let num = (sim(&reps[a], &reps[b]) / tau).exp();
            let den: f64 = (0..reps.len())
                .filter(|&m| m != a)
                .map(|m| (sim(&reps[a], &reps[m]) / tau).exp())
                .sum();
            -(num / den).ln()
        };
        let n = reps.len() / 2;
        (0..n)
            .map(|k| term(2 * k, 2 * k + 1) + term(2 * k + 1, 2 * k))
            .sum::<f64>()
            / (2 * n) as f64
    }

    fn batch_of(rows: &[Vec<f64>], tau: f64) -> CclBatch {
        CclBatch::from_representations(rows.concat(), rows[0].len(), tau)
    }

    #[test]
    fn single_pair_is_exactly_zero() {
        let b = batch_of(&[vec![0.3, -1.2], vec![2.0, 0.5]], 0.7);
        assert_eq!(ccl_loss(&b).unwrap(), 0.0);
    }

    #[test]
    fn hand_picked_two_pairs_match_brute_force() {
        let rows = vec![
            vec![1.0, 0.0],
            vec![0.8, 0.3],
            vec![-0.5, 1.0],
            vec![0.1, -0.9],
        ];
        let got = ccl_loss(&batch_of(&rows, 1.0)).unwrap();
        assert_abs_diff_eq!(got, brute_force(&rows, 1.0), epsilon = 1e-12);
    }

    #[test]
    fn separation_drives_loss_to_zero() {
        let mut last = f64::INFINITY;
        for scale in [1.0, 2.0, 4.0, 8.0] {
            let rows = vec![
                vec![scale, 0.0],
                vec![scale, 0.0],
                vec![0.0, scale],
                vec![0.0, scale],
            ];
            let loss = ccl_loss(&batch_of(&rows, 0.5)).unwrap();
            assert!(loss < last);
            last = loss;
        }
        assert!(last < 1e-10);
    }

    #[test]
    fn rejects_bad_batches() {
        let rows = vec![vec![1.0], vec![2.0]];
        assert!(ccl_loss(&batch_of(&rows, 0.0)).is_err());
        assert!(ccl_loss(&batch_of(&rows, -1.0)).is_err());
        assert!(ccl_loss(&batch_of(&[vec![1.0], vec![2.0], vec![3.0]], 1.0)).is_err());
    }

    #[test]
    fn blocked_path_matches_brute_force() {
        // more rows than one block
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rows: Vec<Vec<f64>> = (0..2 * 150)
            .map(|_| (0..3).map(|_| rng.random_range(-0.5..0.5)).collect())
            .collect();
        let got = ccl_loss(&batch_of(&rows, 0.3)).unwrap();
        assert_abs_diff_eq!(got, brute_force(&rows, 0.3), epsilon = 1e-10);
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn cosine_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let mut b = batch_of(&rows, 0.4);
        b.similarity = Similarity::Cosine;
        let (_, g) = ccl_loss_and_grad(&b, true).unwrap();
        let g = g.unwrap();
        let h = 1e-6;
        for k in 0..b.representations.len() {
            let mut plus = b.clone();
            plus.representations[k] += h;
            let mut minus = b.clone();
            minus.representations[k] -= h;
            let fd = (ccl_loss(&plus).unwrap() - ccl_loss(&minus).unwrap()) / (2.0 * h);
            assert_abs_diff_eq!(g[k], fd, epsilon = 1e-7);
        }
    }

    /// 5x5 toy matrix: u2 interacted with i1, i2, i3 and never saw i0 or i4.
    fn toy_bundle() -> DatasetBundle {
        let ratings = [
            (0, 0, 4),
            (0, 3, 2),
            (1, 1, 5),
            (2, 1, 4),
            (2, 2, 5),
            (2, 3, 1),
            (3, 2, 3),
            (3, 4, 2),
            (4, 0, 5),
        ];
        let train = InteractionTable::from_ratings(5, 5, 3, ratings).unwrap();
        DatasetBundle::new(train, InteractionTable::empty(5, 5, 3)).unwrap()
    }

    #[test]
    fn toy_counterfactual_draws_are_unexposed() {
        let b = toy_bundle();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..200 {
            let j = sample_random_counterfactual(&b, 2, 2, &mut rng).unwrap();
            assert!(!b.exposure.is_exposed(2, j));
            seen.insert(j);
        }
        assert_eq!(seen.into_iter().collect::<Vec<_>>(), vec![0, 4]);
    }

    #[test]
    fn toy_propensity_and_popularity_samplers() {
        // u2 propensities sorted: i4 lowest, i2 highest
        let mut values = vec![0.5; 25];
        values[2 * 5..3 * 5].copy_from_slice(&[0.3, 0.6, 0.8, 0.5, 0.1]);
        let props = PropensityTable::dense(5, 5, values, 0.01).unwrap();
        assert_eq!(sample_propensity_difference(&props, 2, 2).unwrap(), 4);

        let b = toy_bundle();
        // counts per item: [2, 2, 2, 2, 1]; i4 is the least popular
        let pop = crate::exposure::estimate_popularity(&b).unwrap();
        assert_eq!(sample_popularity_difference(&pop, 2).unwrap(), 4);
        let pop = crate::exposure::popularity_from_counts(&[3, 9, 1, 4, 2], 1e-3).unwrap();
        assert_eq!(sample_popularity_difference(&pop, 2).unwrap(), 1);
    }

    #[test]
    fn single_unexposed_item_always_drawn() {
        let train = InteractionTable::from_ratings(1, 3, 3, [(0, 0, 4), (0, 2, 1)]).unwrap();
        let b = DatasetBundle::new(train, InteractionTable::empty(1, 3, 3)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            assert_eq!(sample_random_counterfactual(&b, 0, 0, &mut rng).unwrap(), 1);
        }
    }

    #[test]
    fn counterfactual_draws_are_uniform() {
        // 4 unexposed out of 6
        let train = InteractionTable::from_ratings(1, 6, 3, [(0, 1, 4), (0, 4, 2)]).unwrap();
        let b = DatasetBundle::new(train, InteractionTable::empty(1, 6, 3)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut counts = [0usize; 6];
        for _ in 0..10_000 {
            counts[sample_random_counterfactual(&b, 0, 1, &mut rng).unwrap()] += 1;
        }
        assert_eq!(counts[1] + counts[4], 0);
        for i in [0, 2, 3, 5] {
            let f = counts[i] as f64 / 10_000.0;
            assert!((0.20..=0.30).contains(&f), "item {i}: {f}");
        }
    }

    #[test]
    fn fallback_when_everything_exposed() {
        let train =
            InteractionTable::from_ratings(1, 3, 3, [(0, 0, 4), (0, 1, 1), (0, 2, 5)]).unwrap();
        let b = DatasetBundle::new(train, InteractionTable::empty(1, 3, 3)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            assert_ne!(sample_random_counterfactual(&b, 0, 1, &mut rng).unwrap(), 1);
        }
        let single = InteractionTable::from_ratings(1, 1, 3, [(0, 0, 4)]).unwrap();
        let b = DatasetBundle::new(single, InteractionTable::empty(1, 1, 3)).unwrap();
        assert!(sample_random_counterfactual(&b, 0, 0, &mut rng).is_err());
    }

    #[test]
    fn argmax_examples_and_ties() {
        let p = PropensityTable::dense(1, 3, vec![0.9, 0.5, 0.2], 0.01).unwrap();
        assert_eq!(sample_propensity_difference(&p, 0, 1).unwrap(), 0);
        let p = PropensityTable::dense(1, 3, vec![0.9, 0.5, 0.1], 0.01).unwrap();
        assert_eq!(sample_propensity_difference(&p, 0, 1).unwrap(), 0);

        let pop = crate::exposure::popularity_from_counts(&[4, 2, 1], 1e-3).unwrap();
        assert_eq!(sample_popularity_difference(&pop, 1).unwrap(), 0);
        let flat = crate::exposure::popularity_from_counts(&[5, 5, 5], 1e-3).unwrap();
        assert_eq!(sample_popularity_difference(&flat, 0).unwrap(), 1);
        assert_eq!(sample_popularity_difference(&flat, 2).unwrap(), 0);
    }

    #[test]
    fn sampler_kind_strings() {
        for k in SamplerKind::ALL {
            assert_eq!(k.as_str().parse::<SamplerKind>().unwrap(), k);
        }
        assert!("nope".parse::<SamplerKind>().is_err());
    }

    #[test]
    fn views_interleave_anchor_and_positive() {
        let b = toy_bundle();
        let params = ModelParams::init(crate::model::ModelShape::new(5, 5, 3, 1, 6), 2).unwrap();
        let mut sampler =
            PositiveSampler::new(SamplerKind::RandomCounterfactual, &b, None, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let users = [2, 0, 3];
        let items = [2, 3, 4];
        let batch = build_views(
            &params,
            &users,
            &items,
            &mut sampler,
            &mut rng,
            0.5,
            Similarity::Dot,
        )
        .unwrap();
        assert_eq!(batch.rows(), 6);
        assert_eq!(sampler.calls(), 3);
        for k in 0..3 {
            let (a, p) = (batch.row(2 * k), batch.row(2 * k + 1));
            assert_eq!(&a[..3], &p[..3]);
            assert_eq!(&a[..3], params.user_embedding(users[k]));
            assert_eq!(&a[3..], params.item_embedding(items[k]));
            assert_eq!(&p[3..], params.item_embedding(batch.positive_items[k]));
            assert!(!b.exposure.is_exposed(users[k], batch.positive_items[k]));
        }
        assert!(PositiveSampler::new(SamplerKind::PropensityDifference, &b, None, None).is_err());
    }
}
