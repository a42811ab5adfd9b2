//! Explicit-feedback data: loading, binarization, exposure tracking and splits.
//!
//! Two on-disk layouts are supported:
//!
//! * Coat layout: a directory with `train.ascii` and `test.ascii`, each a
//!   whitespace-separated integer matrix with one user per row (`0` means
//!   unobserved, `1..=5` is a rating), plus optional binary feature matrices
//!   `user_features.ascii` / `item_features.ascii` (either in the directory
//!   itself or in a `user_item_features/` subdirectory).
//! * Triple layout: one `user item rating` record per line, separated by a
//!   tab, comma or spaces.
//!
//! Internally every user and item is a dense 0-based index.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: u8 = 3;
pub const MAX_RATING: u8 = 5;

/// Maps a 1..=5 rating to a binary label.
pub fn binarize(rating: u8, threshold: u8) -> Result<u8> {
    if rating == 0 || rating > MAX_RATING {
        return Err(Error::InvalidInput(format!(
            "rating {rating} is not an observed rating in 1..={MAX_RATING}"
        )));
    }
    Ok(u8::from(rating >= threshold))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    pub rating: u8,
    pub label: u8,
}

/// Observed ratings of an `m x n` user-item matrix. Each pair occurs at most once.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionTable {
    m: usize,
    n: usize,
    threshold: u8,
    rows: Vec<Interaction>,
}

impl InteractionTable {
    /// Builds a table from `(user, item, rating)` records, rejecting duplicates.
    pub fn from_ratings(
        m: usize,
        n: usize,
        threshold: u8,
        ratings: impl IntoIterator<Item = (usize, usize, u8)>,
    ) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        let mut rows = Vec::new();
        for (user, item, rating) in ratings {
            check_index("user", user, m)?;
            check_index("item", item, n)?;
            if !seen.insert((user, item)) {
                return Err(Error::InvalidInput(format!(
                    "duplicate pair ({user}, {item})"
                )));
            }
            let label = binarize(rating, threshold)?;
            rows.push(Interaction {
                user,
                item,
                rating,
                label,
            });
        }
        Ok(Self {
            m,
            n,
            threshold,
            rows,
        })
    }

    pub fn empty(m: usize, n: usize, threshold: u8) -> Self {
        Self {
            m,
            n,
            threshold,
            rows: Vec::new(),
        }
    }

    fn from_rows_unchecked(m: usize, n: usize, threshold: u8, rows: Vec<Interaction>) -> Self {
        Self {
            m,
            n,
            threshold,
            rows,
        }
    }

    pub fn num_users(&self) -> usize {
        self.m
    }

    pub fn num_items(&self) -> usize {
        self.n
    }

    pub fn threshold(&self) -> u8 {
        self.threshold
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[Interaction] {
        &self.rows
    }

    pub fn iter(&self) -> impl Iterator<Item = &Interaction> {
        self.rows.iter()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.rows.iter().map(|r| r.label).collect()
    }

    /// Row indices grouped by user; users without rows get an empty list.
    pub fn rows_by_user(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.m];
        for (idx, r) in self.rows.iter().enumerate() {
            groups[r.user].push(idx);
        }
        groups
    }

    /// Dense `m x n` rating matrix with 0 for unobserved cells.
    pub fn to_matrix(&self) -> Vec<Vec<u8>> {
        let mut mat = vec![vec![0u8; self.n]; self.m];
        for r in &self.rows {
            mat[r.user][r.item] = r.rating;
        }
        mat
    }

    /// Serializes the table in Coat matrix layout.
    pub fn write_matrix(&self, path: &Path) -> Result<()> {
        let mut out = String::with_capacity(self.m * self.n * 2);
        for row in self.to_matrix() {
            let line: Vec<String> = row.iter().map(u8::to_string).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Serializes the table as `user\titem\trating` lines (0-based ids).
    pub fn write_triples(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for r in &self.rows {
            let _ = writeln!(out, "{}\t{}\t{}", r.user, r.item, r.rating);
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Binary exposure indicator `O[u, i]`, stored as a bitset plus per-user item lists.
#[derive(Debug, Clone, PartialEq)]
pub struct ExposureMatrix {
    m: usize,
    n: usize,
    bits: Vec<u64>,
    per_user: Vec<Vec<usize>>,
    count: usize,
}

impl ExposureMatrix {
    pub fn from_table(table: &InteractionTable) -> Self {
        Self::from_pairs(
            table.num_users(),
            table.num_items(),
            table.iter().map(|r| (r.user, r.item)),
        )
    }

    /// Pairs must be in range; duplicates are collapsed.
    pub fn from_pairs(m: usize, n: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut bits = vec![0u64; (m * n).div_ceil(64)];
        let mut per_user = vec![Vec::new(); m];
        let mut count = 0;
        for (u, i) in pairs {
            let bit = u * n + i;
            let (word, mask) = (bit / 64, 1u64 << (bit % 64));
            if bits[word] & mask == 0 {
                bits[word] |= mask;
                per_user[u].push(i);
                count += 1;
            }
        }
        for items in &mut per_user {
            items.sort_unstable();
        }
        Self {
            m,
            n,
            bits,
            per_user,
            count,
        }
    }

    pub fn num_users(&self) -> usize {
        self.m
    }

    pub fn num_items(&self) -> usize {
        self.n
    }

    /// Number of exposed pairs.
    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    #[inline]
    pub fn is_exposed(&self, user: usize, item: usize) -> bool {
        let bit = user * self.n + item;
        self.bits[bit / 64] & (1u64 << (bit % 64)) != 0
    }

    /// Sorted exposed items of `user`.
    pub fn exposed_items(&self, user: usize) -> &[usize] {
        &self.per_user[user]
    }

    /// Column sums of `O`.
    pub fn item_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n];
        for items in &self.per_user {
            for &i in items {
                counts[i] += 1;
            }
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntityKind {
    User,
    Item,
}

/// Dense per-entity feature vectors, one row per entity index.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    kind: EntityKind,
    dim: usize,
    values: Vec<f64>,
}

impl FeatureTable {
    pub fn new(kind: EntityKind, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || !values.len().is_multiple_of(dim) {
            return Err(Error::Shape(format!(
                "{} feature values do not fill rows of width {dim}",
                values.len()
            )));
        }
        Ok(Self { kind, dim, values })
    }

    pub fn kind(&self) -> EntityKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn row(&self, idx: usize) -> &[f64] {
        &self.values[idx * self.dim..(idx + 1) * self.dim]
    }
}

/// Records how external ids were mapped onto dense indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IdMapping {
    /// Coat matrices: row/column position is the id.
    Positional,
    /// Triple files: `internal = external - offset`.
    Offset(usize),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadWarnings {
    pub train_duplicates: usize,
    pub test_duplicates: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub m: usize,
    pub n: usize,
    pub train: InteractionTable,
    pub test: InteractionTable,
    pub validation: Option<InteractionTable>,
    /// Built from `train` only.
    pub exposure: ExposureMatrix,
    pub user_features: Option<FeatureTable>,
    pub item_features: Option<FeatureTable>,
    pub id_mapping: IdMapping,
    pub warnings: LoadWarnings,
}

impl DatasetBundle {
    pub fn new(train: InteractionTable, test: InteractionTable) -> Result<Self> {
        if train.num_users() != test.num_users() || train.num_items() != test.num_items() {
            return Err(Error::Shape(format!(
                "train is {}x{} but test is {}x{}",
                train.num_users(),
                train.num_items(),
                test.num_users(),
                test.num_items()
            )));
        }
        let exposure = ExposureMatrix::from_table(&train);
        Ok(Self {
            m: train.num_users(),
            n: train.num_items(),
            exposure,
            train,
            test,
            validation: None,
            user_features: None,
            item_features: None,
            id_mapping: IdMapping::Positional,
            warnings: LoadWarnings::default(),
        })
    }

    pub fn with_features(
        mut self,
        user_features: Option<FeatureTable>,
        item_features: Option<FeatureTable>,
    ) -> Result<Self> {
        if let Some(f) = &user_features {
            if f.len() != self.m {
                return Err(Error::Shape(format!(
                    "{} user feature rows for {} users",
                    f.len(),
                    self.m
                )));
            }
        }
        if let Some(f) = &item_features {
            if f.len() != self.n {
                return Err(Error::Shape(format!(
                    "{} item feature rows for {} items",
                    f.len(),
                    self.n
                )));
            }
        }
        self.user_features = user_features;
        self.item_features = item_features;
        Ok(self)
    }

    /// Sorted items the user was not exposed to in training.
    pub fn unexposed_items(&self, user: usize) -> Result<Vec<usize>> {
        check_index("user", user, self.m)?;
        let exposed = self.exposure.exposed_items(user);
        let mut out = Vec::with_capacity(self.n - exposed.len());
        let mut next = exposed.iter().peekable();
        for item in 0..self.n {
            if next.peek() == Some(&&item) {
                next.next();
            } else {
                out.push(item);
            }
        }
        Ok(out)
    }
}

pub fn unexposed_items(bundle: &DatasetBundle, user: usize) -> Result<Vec<usize>> {
    bundle.unexposed_items(user)
}

fn check_index(what: &'static str, index: usize, len: usize) -> Result<()> {
    if index >= len {
        return Err(Error::OutOfRange { what, index, len });
    }
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Parses a whitespace-separated integer matrix whose cells must lie in `0..=max`.
fn parse_int_matrix(path: &Path, max: u8) -> Result<Vec<Vec<u8>>> {
    let text = read_text(path)?;
    let mut rows: Vec<Vec<u8>> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for cell in line.split_whitespace() {
            let value: i64 = cell
                .parse()
                .map_err(|_| Error::format(path, lineno, format!("non-integer cell {cell:?}")))?;
            if !(0..=i64::from(max)).contains(&value) {
                return Err(Error::format(
                    path,
                    lineno,
                    format!("value {value} outside 0..={max}"),
                ));
            }
            row.push(value as u8);
        }
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::format(
                    path,
                    lineno,
                    format!("row has {} columns, expected {}", row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

fn matrix_to_table(
    path: &Path,
    mat: &[Vec<u8>],
    m: usize,
    n: usize,
    threshold: u8,
) -> Result<InteractionTable> {
    if mat.len() != m || mat.first().map_or(0, Vec::len) != n {
        return Err(Error::format(
            path,
            0,
            format!(
                "matrix is {}x{}, expected {m}x{n}",
                mat.len(),
                mat.first().map_or(0, Vec::len)
            ),
        ));
    }
    let mut rows = Vec::new();
    for (user, row) in mat.iter().enumerate() {
        for (item, &rating) in row.iter().enumerate() {
            if rating > 0 {
                rows.push(Interaction {
                    user,
                    item,
                    rating,
                    label: binarize(rating, threshold)?,
                });
            }
        }
    }
    Ok(InteractionTable::from_rows_unchecked(m, n, threshold, rows))
}

fn find_feature_file(dir: &Path, name: &str) -> Option<PathBuf> {
    [dir.join("user_item_features").join(name), dir.join(name)]
        .into_iter()
        .find(|p| p.is_file())
}

fn load_features(path: &Path, kind: EntityKind) -> Result<FeatureTable> {
    let mat = parse_int_matrix(path, 1)?;
    let dim = mat.first().map_or(0, Vec::len);
    if dim == 0 {
        return Err(Error::format(path, 0, "empty feature file"));
    }
    let values = mat.iter().flatten().map(|&v| f64::from(v)).collect();
    FeatureTable::new(kind, dim, values)
}

/// Loads a Coat-layout directory, binarizing at `threshold`.
pub fn load_coat(dir: &Path) -> Result<DatasetBundle> {
    load_coat_with_threshold(dir, DEFAULT_THRESHOLD)
}

pub fn load_coat_with_threshold(dir: &Path, threshold: u8) -> Result<DatasetBundle> {
    let train_path = dir.join("train.ascii");
    let test_path = dir.join("test.ascii");
    let train_mat = parse_int_matrix(&train_path, MAX_RATING)?;
    let test_mat = parse_int_matrix(&test_path, MAX_RATING)?;
    let m = train_mat.len();
    let n = train_mat.first().map_or(0, Vec::len);
    let train = matrix_to_table(&train_path, &train_mat, m, n, threshold)?;
    let test = matrix_to_table(&test_path, &test_mat, m, n, threshold)?;

    let user_features = find_feature_file(dir, "user_features.ascii")
        .map(|p| load_features(&p, EntityKind::User))
        .transpose()?;
    let item_features = find_feature_file(dir, "item_features.ascii")
        .map(|p| load_features(&p, EntityKind::Item))
        .transpose()?;

    DatasetBundle::new(train, test)?.with_features(user_features, item_features)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TripleOptions {
    pub one_based: bool,
    pub threshold: u8,
}

impl Default for TripleOptions {
    fn default() -> Self {
        Self {
            one_based: false,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

/// Parses a triple file. Duplicate pairs keep the last occurrence; the number of
/// overwritten lines is returned alongside the table.
pub fn parse_triples(
    path: &Path,
    m: usize,
    n: usize,
    opts: TripleOptions,
) -> Result<(InteractionTable, usize)> {
    let text = read_text(path)?;
    let offset = usize::from(opts.one_based);
    let mut index: HashMap<(usize, usize), usize> = HashMap::new();
    let mut rows: Vec<Interaction> = Vec::new();
    let mut duplicates = 0;

    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|f| !f.is_empty())
            .collect();
        if fields.len() != 3 {
            return Err(Error::format(
                path,
                lineno,
                format!("expected 3 fields, found {}", fields.len()),
            ));
        }
        let parse = |s: &str, what: &str| -> Result<usize> {
            s.parse::<usize>()
                .map_err(|_| Error::format(path, lineno, format!("unparsable {what} {s:?}")))
        };
        let raw_user = parse(fields[0], "user")?;
        let raw_item = parse(fields[1], "item")?;
        let rating = parse(fields[2], "rating")?;
        let user = raw_user
            .checked_sub(offset)
            .filter(|&u| u < m)
            .ok_or_else(|| {
                Error::format(path, lineno, format!("user id {raw_user} out of range"))
            })?;
        let item = raw_item
            .checked_sub(offset)
            .filter(|&i| i < n)
            .ok_or_else(|| {
                Error::format(path, lineno, format!("item id {raw_item} out of range"))
            })?;
        if !(1..=usize::from(MAX_RATING)).contains(&rating) {
            return Err(Error::format(
                path,
                lineno,
                format!("rating {rating} outside 1..={MAX_RATING}"),
            ));
        }
        let rating = rating as u8;
        let record = Interaction {
            user,
            item,
            rating,
            label: binarize(rating, opts.threshold)?,
        };
        match index.get(&(user, item)) {
            Some(&pos) => {
                rows[pos] = record;
                duplicates += 1;
            }
            None => {
                index.insert((user, item), rows.len());
                rows.push(record);
            }
        }
    }
    if duplicates > 0 {
        log::warn!(
            "{}: {duplicates} duplicate pairs, kept last",
            path.display()
        );
    }
    Ok((
        InteractionTable::from_rows_unchecked(m, n, opts.threshold, rows),
        duplicates,
    ))
}

/// Loads train/test triple files for an `m x n` universe.
pub fn load_triples(
    train_path: &Path,
    test_path: &Path,
    m: usize,
    n: usize,
    opts: TripleOptions,
) -> Result<DatasetBundle> {
    let (train, train_duplicates) = parse_triples(train_path, m, n, opts)?;
    let (test, test_duplicates) = parse_triples(test_path, m, n, opts)?;
    let mut bundle = DatasetBundle::new(train, test)?;
    bundle.id_mapping = IdMapping::Offset(usize::from(opts.one_based));
    bundle.warnings = LoadWarnings {
        train_duplicates,
        test_duplicates,
    };
    Ok(bundle)
}

/// User-stratified random holdout. Exactly `round(fraction * len)` rows go to the
/// second part; per-user quotas are allocated by largest remainder. Both parts keep
/// the input row order.
pub fn holdout_split(
    table: &InteractionTable,
    fraction: f64,
    seed: u64,
) -> Result<(InteractionTable, InteractionTable)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::InvalidInput(format!(
            "holdout fraction {fraction} outside [0, 1)"
        )));
    }
    let total = (fraction * table.len() as f64).round() as usize;
    let groups = table.rows_by_user();

    let mut quotas: Vec<usize> = Vec::with_capacity(groups.len());
    let mut remainders: Vec<(f64, usize)> = Vec::new();
    for (user, rows) in groups.iter().enumerate() {
        let exact = fraction * rows.len() as f64;
        quotas.push(exact.floor() as usize);
        if !rows.is_empty() {
            remainders.push((exact - exact.floor(), user));
        }
    }
    let mut assigned: usize = quotas.iter().sum();
    // largest remainder first, ties by user index
    remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, user) in remainders.iter().cycle().take(remainders.len() * 2) {
        if assigned >= total {
            break;
        }
        if quotas[user] < groups[user].len() {
            quotas[user] += 1;
            assigned += 1;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut held = vec![false; table.len()];
    for (user, rows) in groups.iter().enumerate() {
        let mut rows = rows.clone();
        rows.shuffle(&mut rng);
        for &r in rows.iter().take(quotas[user]) {
            held[r] = true;
        }
    }

    let (mut keep, mut hold) = (Vec::new(), Vec::new());
    for (row, is_held) in table.rows.iter().zip(held) {
        if is_held {
            hold.push(*row);
        } else {
            keep.push(*row);
        }
    }
    let (m, n, t) = (table.m, table.n, table.threshold);
    Ok((
        InteractionTable::from_rows_unchecked(m, n, t, keep),
        InteractionTable::from_rows_unchecked(m, n, t, hold),
    ))
}
