//! Subject-disjoint stratified splitting and k-fold construction.
//!
//! Counts are apportioned with the largest-remainder method twice: once for
//! the partition sizes, then per class with the leftover units placed where
//! the partition is still short of its size. This keeps every per-class count
//! within one subject of its exact share while hitting the partition sizes
//! exactly.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use super::{Label, ManifestEntry, MultiRecord};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};

/// Anything that belongs to one subject with one label.
pub trait Subjected {
    fn subject(&self) -> &str;
    fn class(&self) -> Label;
}

impl Subjected for ManifestEntry {
    fn subject(&self) -> &str {
        &self.subject_id
    }
    fn class(&self) -> Label {
        self.label
    }
}

impl Subjected for MultiRecord {
    fn subject(&self) -> &str {
        &self.subject_id
    }
    fn class(&self) -> Label {
        self.label
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

/// Largest-remainder apportionment of `total` units by `weights`. Ties go to
/// the lower index.
pub fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let wsum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| total as f64 * w / wsum).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Per-class, per-partition counts whose column sums equal the apportioned
/// partition sizes.
fn apportion_classes(class_sizes: &[usize], weights: &[f64]) -> Vec<Vec<usize>> {
    let wsum: f64 = weights.iter().sum();
    let total: usize = class_sizes.iter().sum();
    let sizes = apportion(total, weights);
    let parts = weights.len();
    let mut counts = vec![vec![0usize; parts]; class_sizes.len()];
    let mut rems = vec![vec![0f64; parts]; class_sizes.len()];
    let mut leftover = vec![0usize; class_sizes.len()];
    for (c, &n) in class_sizes.iter().enumerate() {
        for j in 0..parts {
            let q = n as f64 * weights[j] / wsum;
            counts[c][j] = q.floor() as usize;
            rems[c][j] = q - q.floor();
        }
        leftover[c] = n - counts[c].iter().sum::<usize>();
    }
    let mut deficit: Vec<usize> = (0..parts)
        .map(|j| sizes[j] - counts.iter().map(|row| row[j]).sum::<usize>())
        .collect();
    let mut class_order: Vec<usize> = (0..class_sizes.len()).collect();
    class_order.sort_by(|&a, &b| leftover[b].cmp(&leftover[a]).then(a.cmp(&b)));
    for c in class_order {
        let mut cols: Vec<usize> = (0..parts).collect();
        cols.sort_by(|&a, &b| {
            let da = deficit[a].min(1);
            let db = deficit[b].min(1);
            db.cmp(&da)
                .then(deficit[b].cmp(&deficit[a]))
                .then(rems[c][b].partial_cmp(&rems[c][a]).unwrap())
                .then(a.cmp(&b))
        });
        for &j in cols.iter().take(leftover[c]) {
            counts[c][j] += 1;
            deficit[j] = deficit[j].saturating_sub(1);
        }
    }
    counts
}

/// Group items by subject (sorted by id) and check labels are consistent.
fn group_subjects<T: Subjected + Clone>(items: &[T]) -> Result<BTreeMap<String, (Label, Vec<T>)>> {
    let mut groups: BTreeMap<String, (Label, Vec<T>)> = BTreeMap::new();
    for it in items {
        let g = groups
            .entry(it.subject().to_string())
            .or_insert_with(|| (it.class(), Vec::new()));
        if g.0 != it.class() {
            return Err(Error::Validation(format!(
                "subject {} carries both labels",
                it.subject()
            )));
        }
        g.1.push(it.clone());
    }
    Ok(groups)
}

/// Subject ids per class, shuffled deterministically.
fn shuffled_classes<T>(
    groups: &BTreeMap<String, (Label, Vec<T>)>,
    seed: u64,
    purpose: &str,
) -> Vec<Vec<String>> {
    Label::ALL
        .iter()
        .map(|label| {
            let mut ids: Vec<String> = groups
                .iter()
                .filter(|(_, (l, _))| l == label)
                .map(|(id, _)| id.clone())
                .collect();
            let mut rng = seeded(derive_seed(seed, &[purpose, &format!("{label:?}")]));
            ids.shuffle(&mut rng);
            ids
        })
        .collect()
}

fn distribute<T: Subjected + Clone>(
    items: &[T],
    weights: &[f64],
    seed: u64,
    purpose: &str,
) -> Result<Vec<Vec<T>>> {
    let groups = group_subjects(items)?;
    let classes = shuffled_classes(&groups, seed, purpose);
    let sizes: Vec<usize> = classes.iter().map(|c| c.len()).collect();
    let counts = apportion_classes(&sizes, weights);
    let mut parts: Vec<Vec<String>> = vec![Vec::new(); weights.len()];
    for (c, ids) in classes.iter().enumerate() {
        let mut it = ids.iter();
        for (j, part) in parts.iter_mut().enumerate() {
            for _ in 0..counts[c][j] {
                part.push(it.next().expect("counts sum to class size").clone());
            }
        }
    }
    Ok(parts
        .into_iter()
        .map(|mut ids| {
            ids.sort();
            ids.iter()
                .flat_map(|id| groups[id].1.iter().cloned())
                .collect()
        })
        .collect())
}

/// Subject-disjoint train/validation/test split, stratified by label.
pub fn stratified_split<T: Subjected + Clone>(
    items: &[T],
    ratios: SplitRatios,
    seed: u64,
) -> Result<Partition<T>> {
    let w = [ratios.train, ratios.val, ratios.test];
    if w.iter().any(|r| !(0.0..=1.0).contains(r)) || ((w.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
        return Err(Error::Argument(format!(
            "split ratios must be in [0,1] and sum to 1, got {w:?}"
        )));
    }
    let groups = group_subjects(items)?;
    for label in Label::ALL {
        let n = groups.values().filter(|(l, _)| *l == label).count();
        if n < 3 {
            return Err(Error::Stratification(format!(
                "class {label:?} has {n} subjects, need at least 3"
            )));
        }
    }
    let mut parts = distribute(items, &w, seed, "split")?.into_iter();
    Ok(Partition {
        train: parts.next().unwrap(),
        val: parts.next().unwrap(),
        test: parts.next().unwrap(),
    })
}

/// Split into `k` subject-disjoint folds, stratified by label.
pub fn stratified_kfold<T: Subjected + Clone>(items: &[T], k: usize, seed: u64) -> Result<Vec<Vec<T>>> {
    if k < 2 {
        return Err(Error::Argument(format!("k must be at least 2, got {k}")));
    }
    let groups = group_subjects(items)?;
    for label in Label::ALL {
        let n = groups.values().filter(|(l, _)| *l == label).count();
        if n < k {
            return Err(Error::Stratification(format!(
                "class {label:?} has {n} subjects, fewer than k={k}"
            )));
        }
    }
    distribute(items, &vec![1.0; k], seed, "kfold")
}

/// Which folds play which role in rotation `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldRoles {
    pub test: usize,
    pub val: usize,
    pub train: Vec<usize>,
}

/// Rotation `i` of `k`: fold `i` tests, fold `(i+1) mod k` validates, the rest
/// train.
pub fn fold_roles(k: usize, i: usize) -> FoldRoles {
    let test = i % k;
    let val = (i + 1) % k;
    FoldRoles {
        test,
        val,
        train: (0..k).filter(|&j| j != test && j != val).collect(),
    }
}
