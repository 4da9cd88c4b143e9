//! Gradient-boosted regression trees over feature-distance vectors, with
//! cross-validation, importance measures and source-language ranking.

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;
use crate::typology::{
    raw_feature_distances, FeatureInventory, Imputation, TypologyError, WalsProfile,
};

#[derive(Debug, Error)]
pub enum RegressError {
    #[error("need at least {needed} rows, got {found}")]
    TooFew { needed: usize, found: usize },
    #[error("{rows} rows but {targets} targets")]
    Shape { rows: usize, targets: usize },
    #[error("row has {found} features, model expects {expected}")]
    FeatureCount { expected: usize, found: usize },
    #[error("non-finite value in row {row}")]
    NonFinite { row: usize },
    #[error("target has zero variance")]
    ZeroVariance,
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Typology(#[from] TypologyError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        /// Reduction in residual sum of squares achieved by this split.
        gain: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub root: Node,
}

impl RegressionTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut node = &self.root;
        loop {
            match node {
                Node::Leaf { value } => return *value,
                Node::Split { feature, threshold, left, right, .. } => {
                    node = if x[*feature] <= *threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(n: &Node) -> usize {
            match n {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(left).max(go(right)),
            }
        }
        go(&self.root)
    }

    /// Calls `f(feature, gain)` for every split.
    pub fn for_each_split(&self, mut f: impl FnMut(usize, f64)) {
        let mut stack = vec![&self.root];
        while let Some(n) = stack.pop() {
            if let Node::Split { feature, gain, left, right, .. } = n {
                f(*feature, *gain);
                stack.push(left);
                stack.push(right);
            }
        }
    }

    pub fn uses_feature(&self, feature: usize) -> bool {
        let mut used = false;
        self.for_each_split(|f, _| used |= f == feature);
        used
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbdtConfig {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        Self { n_estimators: 100, max_depth: 3, learning_rate: 0.1, min_samples_leaf: 1 }
    }
}

impl GbdtConfig {
    pub fn validate(&self) -> Result<(), RegressError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(RegressError::Config(format!("learning_rate {}", self.learning_rate)));
        }
        if self.min_samples_leaf == 0 {
            return Err(RegressError::Config("min_samples_leaf must be at least 1".into()));
        }
        Ok(())
    }
}

/// Anything that maps a feature-distance row to a predicted distance.
pub trait Predictor {
    fn predict(&self, x: &[f64]) -> Result<f64, RegressError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub init_value: f64,
    pub learning_rate: f64,
    pub trees: Vec<RegressionTree>,
    pub feature_ids: Vec<String>,
    /// How missing feature distances are filled before prediction.
    pub imputation: Option<Imputation>,
    /// Training mean squared error after each stage, starting with the constant model.
    pub train_mse: Vec<f64>,
    pub config: GbdtConfig,
}

impl GbdtModel {
    pub fn n_features(&self) -> usize {
        self.feature_ids.len()
    }

    /// Prediction from raw per-feature distances, imputing missing entries.
    pub fn predict_raw(&self, raw: &[Option<f64>]) -> Result<f64, RegressError> {
        let row: Vec<f64> = match &self.imputation {
            Some(imp) => {
                let inv = FeatureInventory::new(self.feature_ids.clone())?;
                imp.apply(&inv, raw)?.distances
            }
            None => raw.iter().map(|v| v.unwrap_or(f64::NAN)).collect(),
        };
        self.predict(&row)
    }

    fn predict_unchecked(&self, x: &[f64]) -> f64 {
        self.init_value + self.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }
}

impl Predictor for GbdtModel {
    fn predict(&self, x: &[f64]) -> Result<f64, RegressError> {
        if x.len() != self.n_features() {
            return Err(RegressError::FeatureCount { expected: self.n_features(), found: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(RegressError::NonFinite { row: 0 });
        }
        Ok(self.predict_unchecked(x))
    }
}

fn check_xy(x: &[Vec<f64>], y: &[f64], min_rows: usize) -> Result<usize, RegressError> {
    if x.len() != y.len() {
        return Err(RegressError::Shape { rows: x.len(), targets: y.len() });
    }
    if x.len() < min_rows {
        return Err(RegressError::TooFew { needed: min_rows, found: x.len() });
    }
    let d = x[0].len();
    for (i, row) in x.iter().enumerate() {
        if row.len() != d {
            return Err(RegressError::FeatureCount { expected: d, found: row.len() });
        }
        if row.iter().any(|v| !v.is_finite()) || !y[i].is_finite() {
            return Err(RegressError::NonFinite { row: i });
        }
    }
    Ok(d)
}

fn mse(y: &[f64], pred: &[f64]) -> f64 {
    y.iter().zip(pred).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64
}

/// Feature columns sorted once per fit; `order[f][k]` is the row holding the
/// k-th smallest value of feature `f`, `values[f][k]` that value.
struct SortedColumns {
    order: Vec<Vec<u32>>,
    values: Vec<Vec<f64>>,
    raw: Vec<Vec<f64>>,
}

impl SortedColumns {
    fn new(x: &[Vec<f64>], d: usize) -> Self {
        let mut order = Vec::with_capacity(d);
        let mut values = Vec::with_capacity(d);
        for f in 0..d {
            let mut o: Vec<u32> = (0..x.len() as u32).collect();
            o.sort_by(|&i, &j| x[i as usize][f].total_cmp(&x[j as usize][f]).then(i.cmp(&j)));
            values.push(o.iter().map(|&i| x[i as usize][f]).collect());
            order.push(o);
        }
        let raw = (0..d).map(|f| x.iter().map(|r| r[f]).collect()).collect();
        Self { order, values, raw }
    }
}

enum Slot {
    Leaf(f64),
    Split { feature: usize, threshold: f64, gain: f64, left: usize, right: usize },
}

#[derive(Clone)]
struct Open {
    slot: usize,
    sum: f64,
    count: usize,
    best: Option<(usize, f64, f64)>,
    left_sum: f64,
    left_count: usize,
    prev: f64,
}

const CLOSED: u32 = u32::MAX;

/// Grows one tree level by level. Every open node scans the presorted
/// columns once per level; a later candidate must beat the incumbent by a
/// relative margin, so near-ties go to the lowest feature, then the lowest
/// threshold. Returns the tree and each row's leaf value.
fn grow_tree(
    cols: &SortedColumns,
    residual: &[f64],
    max_depth: usize,
    min_leaf: usize,
) -> (RegressionTree, Vec<f64>) {
    let n = residual.len();
    let recip: Vec<f64> = (0..=n).map(|k| 1.0 / k.max(1) as f64).collect();
    let mut slots: Vec<Slot> = vec![Slot::Leaf(0.0)];
    let mut node_of = vec![0u32; n];
    let mut leaf_of = vec![0usize; n];
    let total: f64 = residual.iter().sum();
    let fresh = |slot, sum, count| Open {
        slot,
        sum,
        count,
        best: None,
        left_sum: 0.0,
        left_count: 0,
        prev: f64::NEG_INFINITY,
    };
    let mut open = vec![fresh(0, total, n)];
    for depth in 0..=max_depth {
        for o in &open {
            slots[o.slot] = Slot::Leaf(o.sum / o.count as f64);
        }
        let can_split: Vec<bool> = open.iter().map(|o| depth < max_depth && o.count >= 2 * min_leaf).collect();
        if !can_split.iter().any(|&c| c) {
            for (i, &k) in node_of.iter().enumerate() {
                if k != CLOSED {
                    leaf_of[i] = open[k as usize].slot;
                }
            }
            break;
        }
        for (f, (order, values)) in cols.order.iter().zip(&cols.values).enumerate() {
            for o in open.iter_mut() {
                o.left_sum = 0.0;
                o.left_count = 0;
            }
            for (&row, &v) in order.iter().zip(values) {
                let k = node_of[row as usize];
                if k == CLOSED || !can_split[k as usize] {
                    continue;
                }
                let o = &mut open[k as usize];
                if o.left_count >= min_leaf && o.count - o.left_count >= min_leaf && v > o.prev {
                    let right_sum = o.sum - o.left_sum;
                    let gain = o.left_sum * o.left_sum * recip[o.left_count]
                        + right_sum * right_sum * recip[o.count - o.left_count]
                        - o.sum * o.sum * recip[o.count];
                    let better = match o.best {
                        None => true,
                        Some((_, _, g)) => gain > g + 1e-12 * g.abs(),
                    };
                    if better {
                        let mid = o.prev + (v - o.prev) / 2.0;
                        o.best = Some((f, if mid < v { mid } else { o.prev }, gain));
                    }
                }
                o.left_sum += residual[row as usize];
                o.left_count += 1;
                o.prev = v;
            }
        }
        // node sums of squares, to reject splits that only remove rounding noise
        let mut sse = vec![0.0; open.len()];
        for (i, &k) in node_of.iter().enumerate() {
            if k != CLOSED {
                let o = &open[k as usize];
                sse[k as usize] += (residual[i] - o.sum / o.count as f64).powi(2);
            }
        }
        let mut next = Vec::new();
        let mut remap = vec![(CLOSED, CLOSED, 0usize, 0.0); open.len()];
        for (k, o) in open.iter().enumerate() {
            let Some((feature, threshold, gain)) = o.best.filter(|b| b.2 > 1e-12 * (1.0 + sse[k])) else {
                continue;
            };
            let (left, right) = (slots.len(), slots.len() + 1);
            slots.push(Slot::Leaf(0.0));
            slots.push(Slot::Leaf(0.0));
            slots[o.slot] = Slot::Split { feature, threshold, gain, left, right };
            remap[k] = (next.len() as u32, next.len() as u32 + 1, feature, threshold);
            next.push(fresh(left, 0.0, 0));
            next.push(fresh(right, 0.0, 0));
        }
        for i in 0..n {
            let k = node_of[i];
            if k == CLOSED {
                continue;
            }
            let (l, r, feature, threshold) = remap[k as usize];
            if l == CLOSED {
                leaf_of[i] = open[k as usize].slot;
                node_of[i] = CLOSED;
                continue;
            }
            let c = if cols_value(cols, feature, i) <= threshold { l } else { r };
            node_of[i] = c;
            next[c as usize].sum += residual[i];
            next[c as usize].count += 1;
        }
        if next.is_empty() {
            break;
        }
        open = next;
    }
    let leaf_values = leaf_of
        .iter()
        .map(|&s| match slots[s] {
            Slot::Leaf(v) => v,
            Slot::Split { .. } => unreachable!("row routed to an internal node"),
        })
        .collect();
    (RegressionTree { root: to_node(&slots, 0) }, leaf_values)
}

fn cols_value(cols: &SortedColumns, feature: usize, row: usize) -> f64 {
    cols.raw[feature][row]
}

fn to_node(slots: &[Slot], at: usize) -> Node {
    match slots[at] {
        Slot::Leaf(value) => Node::Leaf { value },
        Slot::Split { feature, threshold, gain, left, right } => Node::Split {
            feature,
            threshold,
            gain,
            left: Box::new(to_node(slots, left)),
            right: Box::new(to_node(slots, right)),
        },
    }
}

/// Least-squares boosting with depth-limited trees and exact split search.
pub fn fit_gbdt(
    x: &[Vec<f64>],
    y: &[f64],
    feature_ids: Vec<String>,
    imputation: Option<Imputation>,
    cfg: &GbdtConfig,
) -> Result<GbdtModel, RegressError> {
    cfg.validate()?;
    let d = check_xy(x, y, 2)?;
    if feature_ids.len() != d {
        return Err(RegressError::FeatureCount { expected: feature_ids.len(), found: d });
    }
    let n = x.len();
    let init_value = y.iter().sum::<f64>() / n as f64;
    let mut pred = vec![init_value; n];
    let mut train_mse = vec![mse(y, &pred)];
    let cols = SortedColumns::new(x, d);
    let mut trees = Vec::with_capacity(cfg.n_estimators);
    let mut residual = vec![0.0; n];
    for _ in 0..cfg.n_estimators {
        for i in 0..n {
            residual[i] = y[i] - pred[i];
        }
        let (tree, leaf) = grow_tree(&cols, &residual, cfg.max_depth, cfg.min_samples_leaf);
        for i in 0..n {
            pred[i] += cfg.learning_rate * leaf[i];
        }
        train_mse.push(mse(y, &pred));
        trees.push(tree);
    }
    Ok(GbdtModel {
        init_value,
        learning_rate: cfg.learning_rate,
        trees,
        feature_ids,
        imputation,
        train_mse,
        config: *cfg,
    })
}

/// Coefficient of determination; `None` when the targets have zero variance.
pub fn r2_score(y: &[f64], pred: &[f64]) -> Option<f64> {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if sst == 0.0 {
        return None;
    }
    let sse: f64 = y.iter().zip(pred).map(|(a, b)| (a - b).powi(2)).sum();
    Some(1.0 - sse / sst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    /// `None` for folds whose held-out targets are constant.
    pub r2_per_fold: Vec<Option<f64>>,
    /// Mean over the folds where R² is defined.
    pub r2_mean: Option<f64>,
    pub fold_sizes: Vec<usize>,
}

fn mean_defined(v: &[Option<f64>]) -> Option<f64> {
    let d: Vec<f64> = v.iter().flatten().copied().collect();
    (!d.is_empty()).then(|| d.iter().sum::<f64>() / d.len() as f64)
}

fn held_out_r2(
    x: &[Vec<f64>],
    y: &[f64],
    test: &[usize],
    cfg: &GbdtConfig,
) -> Result<Option<f64>, RegressError> {
    let mut is_test = vec![false; x.len()];
    for &i in test {
        is_test[i] = true;
    }
    let train: Vec<usize> = (0..x.len()).filter(|&i| !is_test[i]).collect();
    let xt: Vec<Vec<f64>> = train.iter().map(|&i| x[i].clone()).collect();
    let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
    let ids = (0..x[0].len()).map(|f| f.to_string()).collect();
    let model = fit_gbdt(&xt, &yt, ids, None, cfg)?;
    let pred: Vec<f64> = test.iter().map(|&i| model.predict_unchecked(&x[i])).collect();
    let gold: Vec<f64> = test.iter().map(|&i| y[i]).collect();
    Ok(r2_score(&gold, &pred))
}

/// Shuffled k-fold cross-validation; the shuffle comes from the `cv` substream of `seed`.
pub fn cross_validate(
    x: &[Vec<f64>],
    y: &[f64],
    cfg: &GbdtConfig,
    k: usize,
    seed: u64,
) -> Result<CvReport, RegressError> {
    if k < 2 {
        return Err(RegressError::Config(format!("k = {k}")));
    }
    check_xy(x, y, k.max(2))?;
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.shuffle(&mut rng::substream(seed, "cv"));
    let n = idx.len();
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = n / k + usize::from(f < n % k);
        folds.push(idx[start..start + size].to_vec());
        start += size;
    }
    let r2_per_fold = folds
        .par_iter()
        .map(|test| held_out_r2(x, y, test, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CvReport {
        r2_mean: mean_defined(&r2_per_fold),
        fold_sizes: folds.iter().map(Vec::len).collect(),
        r2_per_fold,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageFold {
    pub language: String,
    pub test_pairs: usize,
    pub r2: Option<f64>,
}

/// Holds out every pair touching one language at a time.
pub fn leave_one_language_out(
    x: &[Vec<f64>],
    y: &[f64],
    pairs: &[(String, String)],
    cfg: &GbdtConfig,
) -> Result<Vec<LanguageFold>, RegressError> {
    check_xy(x, y, 2)?;
    if pairs.len() != x.len() {
        return Err(RegressError::Shape { rows: x.len(), targets: pairs.len() });
    }
    let mut langs: Vec<&str> = pairs.iter().flat_map(|(a, b)| [a.as_str(), b.as_str()]).collect();
    langs.sort_unstable();
    langs.dedup();
    langs
        .par_iter()
        .map(|&lang| {
            let test: Vec<usize> =
                (0..pairs.len()).filter(|&i| pairs[i].0 == lang || pairs[i].1 == lang).collect();
            let r2 = if test.len() + 2 > x.len() { None } else { held_out_r2(x, y, &test, cfg)? };
            Ok(LanguageFold { language: lang.to_owned(), test_pairs: test.len(), r2 })
        })
        .collect()
}

/// Total split gain per feature, normalized to sum to 1 (all zeros without splits).
pub fn impurity_importance(m: &GbdtModel) -> Vec<f64> {
    let mut imp = vec![0.0; m.n_features()];
    for t in &m.trees {
        t.for_each_split(|f, g| imp[f] += g);
    }
    let total: f64 = imp.iter().sum();
    if total > 0.0 {
        for v in &mut imp {
            *v /= total;
        }
    }
    imp
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationImportance {
    pub baseline_r2: f64,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub repeats: usize,
}

/// Mean drop in R² when one column is shuffled, over `repeats` shuffles.
///
/// Shuffle `r` of feature `f` draws from an own substream, so results do not
/// depend on thread scheduling. Features no tree splits on score exactly 0.
pub fn permutation_importance(
    m: &GbdtModel,
    x: &[Vec<f64>],
    y: &[f64],
    repeats: usize,
    seed: u64,
) -> Result<PermutationImportance, RegressError> {
    let d = check_xy(x, y, 2)?;
    if d != m.n_features() {
        return Err(RegressError::FeatureCount { expected: m.n_features(), found: d });
    }
    if repeats == 0 {
        return Err(RegressError::Config("repeats must be at least 1".into()));
    }
    let n = x.len();
    // per-row contribution of each tree, so a permuted column only re-evaluates trees that use it
    let per_tree: Vec<Vec<f64>> =
        m.trees.iter().map(|t| x.iter().map(|row| t.predict(row)).collect()).collect();
    let base_pred: Vec<f64> = (0..n)
        .map(|i| m.init_value + m.learning_rate * per_tree.iter().map(|c| c[i]).sum::<f64>())
        .collect();
    let baseline_r2 = r2_score(y, &base_pred).ok_or(RegressError::ZeroVariance)?;

    let stats: Vec<(f64, f64)> = (0..d)
        .into_par_iter()
        .map(|f| {
            let users: Vec<usize> = (0..m.trees.len()).filter(|&t| m.trees[t].uses_feature(f)).collect();
            if users.is_empty() {
                return (0.0, 0.0);
            }
            let drops: Vec<f64> = (0..repeats)
                .map(|r| {
                    let mut perm: Vec<usize> = (0..n).collect();
                    perm.shuffle(&mut rng::indexed_substream(seed, &format!("permutation/{f}"), r as u64));
                    let mut row = vec![0.0; d];
                    let pred: Vec<f64> = (0..n)
                        .map(|i| {
                            row.copy_from_slice(&x[i]);
                            row[f] = x[perm[i]][f];
                            let mut p = base_pred[i];
                            for &t in &users {
                                p += m.learning_rate * (m.trees[t].predict(&row) - per_tree[t][i]);
                            }
                            p
                        })
                        .collect();
                    baseline_r2 - r2_score(y, &pred).unwrap_or(f64::NAN)
                })
                .collect();
            let mean = drops.iter().sum::<f64>() / repeats as f64;
            let var = drops.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / repeats as f64;
            (mean, var.sqrt())
        })
        .collect();
    Ok(PermutationImportance {
        baseline_r2,
        mean: stats.iter().map(|s| s.0).collect(),
        std: stats.iter().map(|s| s.1).collect(),
        repeats,
    })
}

/// Feature indices sorted by descending score, ties by index.
pub fn rank_features(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedSource {
    pub rank: usize,
    pub language: String,
    pub predicted_distance: f64,
}

/// Candidates ordered by predicted distance to the target, ascending; equal
/// predictions fall back to the language code.
pub fn select_source<P: Predictor + ?Sized>(
    model: &P,
    inventory: &FeatureInventory,
    imputation: &Imputation,
    target: &WalsProfile,
    candidates: &[WalsProfile],
) -> Result<Vec<RankedSource>, RegressError> {
    if candidates.is_empty() {
        return Err(RegressError::TooFew { needed: 1, found: 0 });
    }
    let mut scored = candidates
        .iter()
        .map(|c| {
            let raw = raw_feature_distances(c, target, inventory)?;
            let v = imputation.apply(inventory, &raw)?;
            Ok((c.language.clone(), model.predict(&v.distances)?))
        })
        .collect::<Result<Vec<_>, RegressError>>()?;
    scored.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal).then_with(|| a.0.cmp(&b.0)));
    Ok(scored
        .into_iter()
        .enumerate()
        .map(|(i, (language, predicted_distance))| RankedSource { rank: i + 1, language, predicted_distance })
        .collect())
}
