//! Evaluation on uniformly exposed test data.
//!
//! Ranking metrics are computed per user over that user's own test items (the
//! candidate set of an MNAR benchmark), then averaged over every user that has at
//! least one test item. Users without a relevant test item contribute 0 and are
//! counted in [`MetricsReport::zero_relevant_users`]. Score ties are broken by
//! ascending item index everywhere.

use crate::dataset::DatasetBundle;
use crate::error::{Error, Result};
use crate::model::ModelParams;

/// A user's candidate items ordered by descending score.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub user: usize,
    pub items: Vec<usize>,
    pub relevance: Vec<u8>,
}

impl RankedList {
    /// Sorts `(item, score, label)` triples by score desc, item asc.
    pub fn from_scores(user: usize, mut entries: Vec<(usize, f64, u8)>) -> Self {
        entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Self {
            user,
            items: entries.iter().map(|e| e.0).collect(),
            relevance: entries.iter().map(|e| e.2).collect(),
        }
    }

    pub fn num_relevant(&self) -> usize {
        self.relevance.iter().filter(|&&r| r > 0).count()
    }

    pub fn hits_at(&self, k: usize) -> usize {
        self.relevance.iter().take(k).filter(|&&r| r > 0).count()
    }
}

fn check_pairs(predictions: &[f64], labels: &[u8]) -> Result<()> {
    if predictions.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::UndefinedMetric("empty input".into()));
    }
    Ok(())
}

pub fn mae(predictions: &[f64], labels: &[u8]) -> Result<f64> {
    check_pairs(predictions, labels)?;
    let total: f64 = predictions
        .iter()
        .zip(labels)
        .map(|(&p, &l)| (p - f64::from(l)).abs())
        .sum();
    Ok(total / predictions.len() as f64)
}

/// Probability that a random positive outscores a random negative; ties count 1/2.
pub fn auc(predictions: &[f64], labels: &[u8]) -> Result<f64> {
    check_pairs(predictions, labels)?;
    let positives = labels.iter().filter(|&&l| l > 0).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedMetric(
            "AUC needs both positive and negative labels".into(),
        ));
    }
    let mut order: Vec<usize> = (0..predictions.len()).collect();
    order.sort_by(|&a, &b| predictions[a].total_cmp(&predictions[b]));
    // Mann-Whitney U with midranks for tied groups
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && predictions[order[end]] == predictions[order[start]] {
            end += 1;
        }
        let midrank = (start + end + 1) as f64 / 2.0;
        let pos_in_group = order[start..end].iter().filter(|&&i| labels[i] > 0).count();
        rank_sum += midrank * pos_in_group as f64;
        start = end;
    }
    let p = positives as f64;
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * negatives as f64))
}

pub fn ndcg_at_k(ranked: &RankedList, k: usize) -> f64 {
    let relevant = ranked.num_relevant();
    if relevant == 0 || k == 0 {
        return 0.0;
    }
    let discount = |rank: usize| 1.0 / ((rank + 1) as f64).log2();
    let dcg: f64 = ranked
        .relevance
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, &r)| r > 0)
        .map(|(idx, &r)| f64::from(r) * discount(idx + 1))
        .sum();
    let mut ideal: Vec<u8> = ranked.relevance.clone();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(idx, &r)| f64::from(r) * discount(idx + 1))
        .sum();
    dcg / idcg
}

pub fn recall_at_k(ranked: &RankedList, k: usize) -> f64 {
    let relevant = ranked.num_relevant();
    if relevant == 0 {
        return 0.0;
    }
    ranked.hits_at(k) as f64 / relevant as f64
}

/// `1 / rank` of the first relevant item, 0 if there is none.
pub fn reciprocal_rank(ranked: &RankedList) -> f64 {
    ranked
        .relevance
        .iter()
        .position(|&r| r > 0)
        .map_or(0.0, |idx| 1.0 / (idx + 1) as f64)
}

pub fn mrr(lists: &[RankedList]) -> f64 {
    if lists.is_empty() {
        return 0.0;
    }
    lists.iter().map(reciprocal_rank).sum::<f64>() / lists.len() as f64
}

/// Gini coefficient of per-item recommendation counts.
pub fn gini(counts: &[usize]) -> Result<f64> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::UndefinedMetric("Gini of all-zero counts".into()));
    }
    let mut sorted = counts.to_vec();
    sorted.sort_unstable();
    let n = sorted.len() as f64;
    let weighted: f64 = sorted
        .iter()
        .enumerate()
        .map(|(idx, &x)| (2.0 * (idx + 1) as f64 - n - 1.0) * x as f64)
        .sum();
    Ok(weighted / (n * total as f64))
}

/// Mean precision@k over the given users.
pub fn global_utility(lists: &[RankedList], k: usize) -> f64 {
    if lists.is_empty() || k == 0 {
        return 0.0;
    }
    let hits: usize = lists.iter().map(|l| l.hits_at(k)).sum();
    hits as f64 / (lists.len() * k) as f64
}

/// How often each of `n` items appears in the users' top-k.
pub fn top_k_counts(lists: &[RankedList], k: usize, n: usize) -> Vec<usize> {
    let mut counts = vec![0; n];
    for l in lists {
        for &i in l.items.iter().take(k) {
            counts[i] += 1;
        }
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalCutoffs {
    pub ndcg: Vec<usize>,
    pub recall: Vec<usize>,
    /// Top-k used for Gini and global utility.
    pub exposure: usize,
}

impl Default for EvalCutoffs {
    fn default() -> Self {
        Self {
            ndcg: vec![5, 10],
            recall: vec![1, 5],
            exposure: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub mae: f64,
    pub auc: f64,
    pub ndcg: Vec<(usize, f64)>,
    pub recall: Vec<(usize, f64)>,
    pub mrr: f64,
    pub gini: f64,
    pub global_utility: f64,
    pub users_evaluated: usize,
    pub zero_relevant_users: usize,
}

impl MetricsReport {
    /// `(column name, value)` in table order.
    pub fn columns(&self) -> Vec<(String, f64)> {
        let mut cols = vec![("mae".to_string(), self.mae), ("auc".to_string(), self.auc)];
        cols.extend(self.ndcg.iter().map(|(k, v)| (format!("ndcg@{k}"), *v)));
        cols.extend(self.recall.iter().map(|(k, v)| (format!("recall@{k}"), *v)));
        cols.push(("mrr".into(), self.mrr));
        cols.push(("gini".into(), self.gini));
        cols.push(("global_utility".into(), self.global_utility));
        cols
    }

    pub fn ndcg_at(&self, k: usize) -> Option<f64> {
        self.ndcg.iter().find(|(c, _)| *c == k).map(|(_, v)| *v)
    }

    pub fn recall_at(&self, k: usize) -> Option<f64> {
        self.recall.iter().find(|(c, _)| *c == k).map(|(_, v)| *v)
    }
}

/// Per-user ranked lists of each user's test items under the model.
pub fn ranked_test_lists(params: &ModelParams, bundle: &DatasetBundle) -> Result<Vec<RankedList>> {
    let groups = bundle.test.rows_by_user();
    let mut lists = Vec::new();
    for (user, rows) in groups.iter().enumerate() {
        if rows.is_empty() {
            continue;
        }
        let items: Vec<usize> = rows.iter().map(|&r| bundle.test.rows()[r].item).collect();
        let scores = params.predict(&vec![user; items.len()], &items)?;
        let entries = rows
            .iter()
            .zip(scores)
            .map(|(&r, s)| {
                let row = bundle.test.rows()[r];
                (row.item, s, row.label)
            })
            .collect();
        lists.push(RankedList::from_scores(user, entries));
    }
    Ok(lists)
}

pub fn evaluate(
    params: &ModelParams,
    bundle: &DatasetBundle,
    cutoffs: &EvalCutoffs,
) -> Result<MetricsReport> {
    if bundle.test.is_empty() {
        return Err(Error::InvalidInput("empty test table".into()));
    }
    let users: Vec<usize> = bundle.test.iter().map(|r| r.user).collect();
    let items: Vec<usize> = bundle.test.iter().map(|r| r.item).collect();
    let labels = bundle.test.labels();
    let predictions = params.predict(&users, &items)?;

    let lists = ranked_test_lists(params, bundle)?;
    let count = lists.len() as f64;
    let mean = |f: &dyn Fn(&RankedList) -> f64| lists.iter().map(f).sum::<f64>() / count;

    Ok(MetricsReport {
        mae: mae(&predictions, &labels)?,
        auc: auc(&predictions, &labels)?,
        ndcg: cutoffs
            .ndcg
            .iter()
            .map(|&k| (k, mean(&|l| ndcg_at_k(l, k))))
            .collect(),
        recall: cutoffs
            .recall
            .iter()
            .map(|&k| (k, mean(&|l| recall_at_k(l, k))))
            .collect(),
        mrr: mrr(&lists),
        gini: gini(&top_k_counts(&lists, cutoffs.exposure, bundle.n))?,
        global_utility: global_utility(&lists, cutoffs.exposure),
        users_evaluated: lists.len(),
        zero_relevant_users: lists.iter().filter(|l| l.num_relevant() == 0).count(),
    })
}
