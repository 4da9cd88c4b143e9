//! Optimal transport dataset distance between two labeled datasets.
//!
//! Each sample is a pair `z = (x, y)` of a feature vector and a label. The ground
//! metric combines the Euclidean feature distance with a p-Wasserstein distance
//! between the label-conditional feature distributions:
//!
//! ```text
//! d_Z(z, z')^p = |x - x'|^p + W_p(P(x|y), P'(x|y'))^p
//! ```
//!
//! and the dataset distance is the optimal transport cost under `d_Z` between
//! the two empirical distributions (uniform weights), solved with entropic
//! regularization by a log-domain Sinkhorn iteration.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::embedstore::LabeledDataset;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OtddError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("cost matrix {rows}x{cols} does not match marginals of length {a} and {b}")]
    ShapeMismatch { rows: usize, cols: usize, a: usize, b: usize },
    #[error("cost entry ({0}, {1}) is negative or non-finite")]
    InvalidCost(usize, usize),
    #[error("marginal is not a probability vector (sum = {0})")]
    NotNormalized(f64),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("non-finite Sinkhorn potentials after {0} iterations; try a larger eps")]
    Numerical(usize),
    #[error("empty dataset or label class: {0}")]
    Empty(String),
}

/// Dense row-major nonnegative cost matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self, OtddError> {
        if values.len() != rows * cols {
            return Err(OtddError::ShapeMismatch { rows, cols, a: values.len(), b: 0 });
        }
        if let Some(k) = values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(OtddError::InvalidCost(k / cols.max(1), k % cols.max(1)));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, OtddError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(OtddError::Config("ragged cost rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn transpose(&self) -> Self {
        let mut values = vec![0.0; self.values.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                values[j * self.rows + i] = self.values[i * self.cols + j];
            }
        }
        Self { rows: self.cols, cols: self.rows, values }
    }

    pub fn median(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        let mut v = self.values.clone();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    }
}

fn check_dims<T: AsRef<[f64]>>(xa: &[T], xb: &[T]) -> Result<usize, OtddError> {
    let dim = xa.first().or(xb.first()).map_or(0, |v| v.as_ref().len());
    for v in xa.iter().chain(xb) {
        if v.as_ref().len() != dim {
            return Err(OtddError::DimMismatch(dim, v.as_ref().len()));
        }
    }
    Ok(dim)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Pairwise Euclidean distances (or their squares).
pub fn euclidean_cost<T: AsRef<[f64]> + Sync>(
    xa: &[T],
    xb: &[T],
    squared: bool,
) -> Result<CostMatrix, OtddError> {
    check_dims(xa, xb)?;
    let cols = xb.len();
    let mut values = vec![0.0; xa.len() * cols];
    if cols > 0 {
        values.par_chunks_mut(cols).zip(xa.par_iter()).for_each(|(row, x)| {
            for (c, y) in row.iter_mut().zip(xb) {
                let d2 = sq_dist(x.as_ref(), y.as_ref());
                *c = if squared { d2 } else { d2.sqrt() };
            }
        });
    }
    Ok(CostMatrix { rows: xa.len(), cols, values })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornConfig {
    pub eps: f64,
    pub max_iter: usize,
    pub marginal_tol: f64,
    /// Rows per work unit in the column reductions; fixed so results do not depend on thread count.
    pub block_size: usize,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self { eps: 0.1, max_iter: 10_000, marginal_tol: 1e-6, block_size: 256 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
    pub row_marginal: Vec<f64>,
    pub col_marginal: Vec<f64>,
}

impl Coupling {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.values.chunks(self.cols.max(1)).map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.cols];
        for r in self.values.chunks(self.cols.max(1)) {
            for (acc, v) in s.iter_mut().zip(r) {
                *acc += v;
            }
        }
        s
    }
}

/// Outcome of a Sinkhorn solve without the materialized plan.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SinkhornStats {
    /// Linear transport cost `<pi, C>`.
    pub cost: f64,
    /// Entropic objective `<pi, C> + eps * sum pi (log pi - 1) + eps`, i.e. `<pi,C> - eps*H(pi)` at
    /// exact marginals.
    pub regularized_cost: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Largest absolute row-marginal violation at exit.
    pub marginal_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornSolution {
    pub coupling: Coupling,
    pub stats: SinkhornStats,
}

struct Potentials {
    f: Vec<f64>,
    g: Vec<f64>,
    stats: SinkhornStats,
}

fn check_marginal(m: &[f64]) -> Result<(), OtddError> {
    let s: f64 = m.iter().sum();
    if m.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || (s - 1.0).abs() > 1e-9 {
        return Err(OtddError::NotNormalized(s));
    }
    Ok(())
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || !max.is_finite() {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Problems below this many cells run single-threaded; thread dispatch would dominate.
const PARALLEL_CELLS: usize = 1 << 16;

/// `(0..n).map(f)`, in parallel when asked. Output order is the same either way.
fn map_indices<T: Send>(n: usize, parallel: bool, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    if parallel {
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}

/// `out_j = LSE_i (f_i - C_ij) / eps` computed with row-major streaming over fixed row blocks.
fn column_lse(c: &CostMatrix, f: &[f64], eps: f64, block: usize, parallel: bool) -> Vec<f64> {
    let m = c.cols;
    let block = block.max(1);
    let n_blocks = c.rows.div_ceil(block);
    let partial: Vec<(Vec<f64>, Vec<f64>)> = map_indices(n_blocks, parallel, |blk| {
        let rows = blk * block..((blk + 1) * block).min(c.rows);
        let mut mx = vec![f64::NEG_INFINITY; m];
        for i in rows.clone().filter(|&i| f[i] != f64::NEG_INFINITY) {
            for (slot, &cij) in mx.iter_mut().zip(c.row(i)) {
                *slot = slot.max((f[i] - cij) / eps);
            }
        }
        let mut s = vec![0.0; m];
        for i in rows.filter(|&i| f[i] != f64::NEG_INFINITY) {
            for ((acc, &cij), &mj) in s.iter_mut().zip(c.row(i)).zip(&mx) {
                *acc += ((f[i] - cij) / eps - mj).exp();
            }
        }
        (mx, s)
    });

    let mut mx = vec![f64::NEG_INFINITY; m];
    let mut s = vec![0.0; m];
    for (pm, ps) in partial {
        for j in 0..m {
            if pm[j] == f64::NEG_INFINITY {
                continue;
            }
            if pm[j] > mx[j] {
                s[j] = s[j] * (mx[j] - pm[j]).exp() + ps[j];
                mx[j] = pm[j];
            } else {
                s[j] += ps[j] * (pm[j] - mx[j]).exp();
            }
        }
    }
    mx.iter().zip(&s).map(|(&m, &s)| if m == f64::NEG_INFINITY { m } else { m + s.ln() }).collect()
}

/// Iterations spent at each intermediate eps of the annealing schedule.
const ANNEAL_ITERS: usize = 20;

/// Scalings are folded back into the potentials once one drifts past `exp(ABSORB)`.
const ABSORB: f64 = 50.0;

/// `exp((f_i + g_j - C_ij) / eps)`, row-major. Entries are at most 1 right after a log-domain sweep.
fn build_kernel(c: &CostMatrix, f: &[f64], g: &[f64], eps: f64, parallel: bool) -> Vec<f64> {
    let mut k = vec![0.0; c.rows * c.cols];
    let fill = |(i, out): (usize, &mut [f64])| {
        if f[i] == f64::NEG_INFINITY {
            return;
        }
        for ((o, &cij), &gj) in out.iter_mut().zip(c.row(i)).zip(g) {
            if gj != f64::NEG_INFINITY {
                *o = ((f[i] + gj - cij) / eps).exp();
            }
        }
    };
    if c.cols == 0 {
        return k;
    }
    if parallel {
        k.par_chunks_mut(c.cols).enumerate().for_each(fill);
    } else {
        k.chunks_mut(c.cols).enumerate().for_each(fill);
    }
    k
}

/// `K v`, one dot product per row.
fn kernel_rows(k: &[f64], cols: usize, v: &[f64], parallel: bool) -> Vec<f64> {
    let rows = k.len().checked_div(cols).unwrap_or(0);
    map_indices(rows, parallel, |i| k[i * cols..(i + 1) * cols].iter().zip(v).map(|(a, b)| a * b).sum())
}

/// `K^T u`, accumulated over fixed row blocks and combined in block order.
fn kernel_cols(k: &[f64], cols: usize, u: &[f64], block: usize, parallel: bool) -> Vec<f64> {
    let rows = u.len();
    let block = block.max(1);
    let partial: Vec<Vec<f64>> = map_indices(rows.div_ceil(block), parallel, |blk| {
        let mut acc = vec![0.0; cols];
        for i in blk * block..((blk + 1) * block).min(rows) {
            if u[i] == 0.0 {
                continue;
            }
            for (a, &kij) in acc.iter_mut().zip(&k[i * cols..(i + 1) * cols]) {
                *a += kij * u[i];
            }
        }
        acc
    });
    let mut out = vec![0.0; cols];
    for p in partial {
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
    out
}

fn solve(c: &CostMatrix, a: &[f64], b: &[f64], cfg: &SinkhornConfig) -> Result<Potentials, OtddError> {
    if c.rows != a.len() || c.cols != b.len() {
        return Err(OtddError::ShapeMismatch { rows: c.rows, cols: c.cols, a: a.len(), b: b.len() });
    }
    if !(cfg.eps > 0.0 && cfg.eps.is_finite()) {
        return Err(OtddError::Config(format!("eps must be positive, got {}", cfg.eps)));
    }
    check_marginal(a)?;
    check_marginal(b)?;
    let parallel = c.rows * c.cols >= PARALLEL_CELLS;
    let log_a: Vec<f64> = a.iter().map(|v| v.ln()).collect();
    let log_b: Vec<f64> = b.iter().map(|v| v.ln()).collect();
    let mut f = vec![0.0; a.len()];
    let mut g = vec![0.0; b.len()];

    let sweep = |f: &mut Vec<f64>, g: &mut Vec<f64>, eps: f64| {
        *f = map_indices(c.rows, parallel, |i| {
            if log_a[i] == f64::NEG_INFINITY {
                return f64::NEG_INFINITY;
            }
            let row = c.row(i);
            eps * log_a[i] - eps * log_sum_exp(g.iter().zip(row).map(|(gj, cij)| (gj - cij) / eps))
        });
        let lse = column_lse(c, f, eps, cfg.block_size, parallel);
        for ((gj, lb), l) in g.iter_mut().zip(&log_b).zip(&lse) {
            *gj = if *lb == f64::NEG_INFINITY { f64::NEG_INFINITY } else { eps * lb - eps * l };
        }
    };
    let finite = |f: &[f64], g: &[f64]| !f.iter().chain(g).any(|v| v.is_nan() || *v == f64::INFINITY);
    let absorb = |pot: &mut [f64], scale: &[f64], eps: f64| {
        for (p, s) in pot.iter_mut().zip(scale) {
            if *p != f64::NEG_INFINITY {
                *p += eps * s.ln();
            }
        }
    };

    // One stage: an exact log-domain sweep, then scaling iterations on the kernel
    // with the potentials absorbed. Returns (converged, last row-marginal error).
    let run_stage = |f: &mut Vec<f64>,
                     g: &mut Vec<f64>,
                     iterations: &mut usize,
                     eps: f64,
                     budget: usize,
                     tol: Option<f64>| {
        let mut err = f64::INFINITY;
        'rebuild: while *iterations < budget {
            *iterations += 1;
            sweep(f, g, eps);
            if !finite(f, g) {
                return Err(OtddError::Numerical(*iterations));
            }
            let k = build_kernel(c, f, g, eps, parallel);
            let mut u = vec![1.0; a.len()];
            let mut v = vec![1.0; b.len()];
            loop {
                let kv = kernel_rows(&k, c.cols, &v, parallel);
                // columns are exact after the last update, so only rows can be off
                err = u.iter().zip(&kv).zip(a).map(|((ui, kvi), ai)| (ui * kvi - ai).abs()).fold(0.0, f64::max);
                if tol.is_some_and(|t| err <= t) || *iterations >= budget {
                    absorb(f, &u, eps);
                    absorb(g, &v, eps);
                    return Ok((tol.is_some_and(|t| err <= t), err));
                }
                if kv.iter().zip(a).any(|(kvi, ai)| *ai > 0.0 && !(*kvi > 0.0)) {
                    absorb(f, &u, eps);
                    absorb(g, &v, eps);
                    continue 'rebuild;
                }
                *iterations += 1;
                for ((ui, kvi), ai) in u.iter_mut().zip(&kv).zip(a) {
                    *ui = if *ai > 0.0 { ai / kvi } else { 0.0 };
                }
                let ktu = kernel_cols(&k, c.cols, &u, cfg.block_size, parallel);
                let degenerate = ktu.iter().zip(b).any(|(s, bj)| *bj > 0.0 && !(*s > 0.0));
                for ((vj, s), bj) in v.iter_mut().zip(&ktu).zip(b) {
                    *vj = if *bj > 0.0 && *s > 0.0 { bj / s } else if *bj > 0.0 { *vj } else { 0.0 };
                }
                let drift = u.iter().chain(&v).any(|s| *s != 0.0 && s.ln().abs() > ABSORB);
                if degenerate || drift {
                    absorb(f, &u, eps);
                    absorb(g, &v, eps);
                    if !finite(f, g) {
                        return Err(OtddError::Numerical(*iterations));
                    }
                    continue 'rebuild;
                }
            }
        }
        Ok((false, err))
    };

    // Warm start by annealing eps down from the cost scale; the fixed point at the
    // target eps does not depend on the starting potentials.
    let mut iterations = 0;
    let scale = c.values.iter().copied().fold(0.0, f64::max);
    let mut stage_eps = scale;
    while stage_eps > 2.0 * cfg.eps {
        let budget = (iterations + ANNEAL_ITERS).min(cfg.max_iter / 2);
        if iterations < budget {
            run_stage(&mut f, &mut g, &mut iterations, stage_eps, budget, None)?;
        }
        stage_eps /= 2.0;
    }

    let eps = cfg.eps;
    let (converged, marginal_error) = run_stage(&mut f, &mut g, &mut iterations, eps, cfg.max_iter.max(1), Some(cfg.marginal_tol))?;
    if !finite(&f, &g) {
        return Err(OtddError::Numerical(iterations));
    }

    let (cost, plan_entropy_term) = map_indices(c.rows, parallel, |i| {
        let mut lin = 0.0;
        let mut ent = 0.0;
        if f[i] == f64::NEG_INFINITY {
            return (0.0, 0.0);
        }
        for (cij, gj) in c.row(i).iter().zip(&g) {
            let log_p = (f[i] + gj - cij) / eps;
            let p = log_p.exp();
            if p > 0.0 {
                lin += p * cij;
                ent += p * (log_p - 1.0);
            }
        }
        (lin, ent)
    })
    .into_iter()
    .fold((0.0, 0.0), |acc, v| (acc.0 + v.0, acc.1 + v.1));
    let stats = SinkhornStats {
        cost,
        regularized_cost: cost + eps * plan_entropy_term + eps,
        converged,
        iterations,
        marginal_error,
    };
    Ok(Potentials { f, g, stats })
}

/// Entropic optimal transport between marginals `a` and `b` under cost `c`.
///
/// Returns the plan and `<plan, c>`. A run that hits `max_iter` is returned with
/// `converged == false`.
pub fn sinkhorn(
    c: &CostMatrix,
    a: &[f64],
    b: &[f64],
    cfg: &SinkhornConfig,
) -> Result<SinkhornSolution, OtddError> {
    let Potentials { f, g, stats } = solve(c, a, b, cfg)?;
    let mut values = vec![0.0; c.rows * c.cols];
    for i in 0..c.rows {
        for j in 0..c.cols {
            let v = ((f[i] + g[j] - c.get(i, j)) / cfg.eps).exp();
            values[i * c.cols + j] = if v.is_finite() { v } else { 0.0 };
        }
    }
    Ok(SinkhornSolution {
        coupling: Coupling {
            rows: c.rows,
            cols: c.cols,
            values,
            row_marginal: a.to_vec(),
            col_marginal: b.to_vec(),
        },
        stats,
    })
}

/// Transport cost only; avoids allocating the plan.
pub fn sinkhorn_cost(
    c: &CostMatrix,
    a: &[f64],
    b: &[f64],
    cfg: &SinkhornConfig,
) -> Result<SinkhornStats, OtddError> {
    solve(c, a, b, cfg).map(|p| p.stats)
}

pub fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelMode {
    EmpiricalSinkhorn,
    GaussianBures,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostMode {
    /// Solve on `d_Z^p` and return the p-th root (a true p-Wasserstein distance).
    Squared,
    /// Solve directly on `d_Z`.
    Plain,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OtddConfig {
    pub p: f64,
    pub eps: f64,
    pub max_iter: usize,
    pub marginal_tol: f64,
    pub label_mode: LabelMode,
    pub cost_mode: CostMode,
    /// Ridge added to class covariances in Gaussian-Bures mode.
    pub covariance_reg: f64,
    pub block_size: usize,
}

impl Default for OtddConfig {
    fn default() -> Self {
        Self {
            p: 2.0,
            eps: 0.1,
            max_iter: 10_000,
            marginal_tol: 1e-6,
            label_mode: LabelMode::EmpiricalSinkhorn,
            cost_mode: CostMode::Squared,
            covariance_reg: 1e-6,
            block_size: 256,
        }
    }
}

impl OtddConfig {
    pub fn sinkhorn(&self) -> SinkhornConfig {
        SinkhornConfig {
            eps: self.eps,
            max_iter: self.max_iter,
            marginal_tol: self.marginal_tol,
            block_size: self.block_size,
        }
    }

    fn validate(&self) -> Result<(), OtddError> {
        if !(self.p >= 1.0 && self.p.is_finite()) {
            return Err(OtddError::Config(format!("p must be >= 1, got {}", self.p)));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(OtddError::Config(format!("eps must be > 0, got {}", self.eps)));
        }
        if self.label_mode == LabelMode::GaussianBures && self.p != 2.0 {
            return Err(OtddError::Config("gaussian-bures label mode requires p = 2".into()));
        }
        Ok(())
    }
}

/// W_p between every label class of `a` (rows) and of `b` (columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelDistances {
    pub labels_a: Vec<String>,
    pub labels_b: Vec<String>,
    /// Row-major, `labels_a.len() x labels_b.len()`.
    pub values: Vec<Vec<f64>>,
    #[serde(skip)]
    pub converged: bool,
}

impl LabelDistances {
    pub fn get(&self, la: &str, lb: &str) -> Option<f64> {
        let i = self.labels_a.iter().position(|l| l == la)?;
        let j = self.labels_b.iter().position(|l| l == lb)?;
        Some(self.values[i][j])
    }

    pub fn transpose(&self) -> Self {
        let values = (0..self.labels_b.len())
            .map(|j| self.values.iter().map(|row| row[j]).collect())
            .collect();
        Self {
            labels_a: self.labels_b.clone(),
            labels_b: self.labels_a.clone(),
            values,
            converged: self.converged,
        }
    }
}

fn classes(ds: &LabeledDataset) -> BTreeMap<&str, Vec<&[f64]>> {
    let mut m: BTreeMap<&str, Vec<&[f64]>> = BTreeMap::new();
    for it in &ds.items {
        m.entry(it.label.as_str()).or_default().push(&it.features);
    }
    m
}

struct Gaussian {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    sqrt_cov: DMatrix<f64>,
    trace: f64,
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

fn gaussian(points: &[&[f64]], reg: f64) -> Gaussian {
    let d = points[0].len();
    let n = points.len() as f64;
    let mut mean = DVector::zeros(d);
    for p in points {
        mean += DVector::from_column_slice(p);
    }
    mean /= n;
    let mut cov = DMatrix::zeros(d, d);
    for p in points {
        let c = DVector::from_column_slice(p) - &mean;
        cov += &c * c.transpose();
    }
    cov /= n;
    for i in 0..d {
        cov[(i, i)] += reg;
    }
    let sqrt_cov = psd_sqrt(&cov);
    let trace = cov.trace();
    Gaussian { mean, cov, sqrt_cov, trace }
}

/// 2-Wasserstein distance between two Gaussians (Bures metric on the covariances).
fn bures_w2(a: &Gaussian, b: &Gaussian) -> f64 {
    let mean_term = (&a.mean - &b.mean).norm_squared();
    let cross = &a.sqrt_cov * &b.cov * &a.sqrt_cov;
    let cross = (&cross + cross.transpose()) * 0.5;
    let eig = SymmetricEigen::new(cross);
    let tr_sqrt: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum();
    (mean_term + a.trace + b.trace - 2.0 * tr_sqrt).max(0.0).sqrt()
}

/// Label-to-label p-Wasserstein distances between the class-conditional distributions.
pub fn label_distance_matrix(
    a: &LabeledDataset,
    b: &LabeledDataset,
    cfg: &OtddConfig,
) -> Result<LabelDistances, OtddError> {
    cfg.validate()?;
    if a.dim != b.dim && !a.is_empty() && !b.is_empty() {
        return Err(OtddError::DimMismatch(a.dim, b.dim));
    }
    let ca = classes(a);
    let cb = classes(b);
    if let Some(l) = a.label_set.iter().find(|l| !ca.contains_key(l.as_str())) {
        return Err(OtddError::Empty(format!("label {l:?} has no samples in {}", a.language)));
    }
    if let Some(l) = b.label_set.iter().find(|l| !cb.contains_key(l.as_str())) {
        return Err(OtddError::Empty(format!("label {l:?} has no samples in {}", b.language)));
    }
    let labels_a: Vec<String> = ca.keys().map(|s| s.to_string()).collect();
    let labels_b: Vec<String> = cb.keys().map(|s| s.to_string()).collect();
    let pa: Vec<&Vec<&[f64]>> = ca.values().collect();
    let pb: Vec<&Vec<&[f64]>> = cb.values().collect();
    let pairs: Vec<(usize, usize)> =
        (0..pa.len()).flat_map(|i| (0..pb.len()).map(move |j| (i, j))).collect();

    let results: Vec<(f64, bool)> = match cfg.label_mode {
        LabelMode::EmpiricalSinkhorn => {
            let scfg = cfg.sinkhorn();
            pairs
                .par_iter()
                .map(|&(i, j)| -> Result<(f64, bool), OtddError> {
                    let (xs, ys) = (pa[i], pb[j]);
                    let mut c = euclidean_cost(xs, ys, true)?;
                    if cfg.p != 2.0 {
                        for v in &mut c.values {
                            *v = v.powf(cfg.p / 2.0);
                        }
                    }
                    let s = sinkhorn_cost(&c, &uniform(xs.len()), &uniform(ys.len()), &scfg)?;
                    Ok((s.cost.max(0.0).powf(1.0 / cfg.p), s.converged))
                })
                .collect::<Result<_, _>>()?
        }
        LabelMode::GaussianBures => {
            let ga: Vec<Gaussian> = pa.par_iter().map(|p| gaussian(p, cfg.covariance_reg)).collect();
            let gb: Vec<Gaussian> = pb.par_iter().map(|p| gaussian(p, cfg.covariance_reg)).collect();
            pairs.par_iter().map(|&(i, j)| (bures_w2(&ga[i], &gb[j]), true)).collect()
        }
    };

    let converged = results.iter().all(|r| r.1);
    let values = results.chunks(labels_b.len().max(1)).map(|r| r.iter().map(|v| v.0).collect()).collect();
    Ok(LabelDistances { labels_a, labels_b, values, converged })
}

/// Ground cost `d_Z^p` (squared mode) or `d_Z` (plain mode) between all sample pairs.
pub fn ground_cost(
    a: &LabeledDataset,
    b: &LabeledDataset,
    labels: &LabelDistances,
    cfg: &OtddConfig,
) -> Result<CostMatrix, OtddError> {
    let xa: Vec<&[f64]> = a.items.iter().map(|r| r.features.as_slice()).collect();
    let xb: Vec<&[f64]> = b.items.iter().map(|r| r.features.as_slice()).collect();
    check_dims(&xa, &xb)?;
    let index = |names: &[String], l: &str| names.iter().position(|n| n == l);
    let ya = a
        .items
        .iter()
        .map(|r| index(&labels.labels_a, &r.label).ok_or_else(|| OtddError::Empty(r.label.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    let yb = b
        .items
        .iter()
        .map(|r| index(&labels.labels_b, &r.label).ok_or_else(|| OtddError::Empty(r.label.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    let label_pow: Vec<Vec<f64>> =
        labels.values.iter().map(|r| r.iter().map(|w| w.powf(cfg.p)).collect()).collect();
    let cols = xb.len();
    let p = cfg.p;
    let mut values = vec![0.0; xa.len() * cols];
    if cols > 0 {
        values
            .par_chunks_mut(cols * cfg.block_size.max(1))
            .enumerate()
            .for_each(|(blk, chunk)| {
                for (r, row) in chunk.chunks_mut(cols).enumerate() {
                    let i = blk * cfg.block_size.max(1) + r;
                    for (j, slot) in row.iter_mut().enumerate() {
                        let d2 = sq_dist(xa[i], xb[j]);
                        let feat = if p == 2.0 { d2 } else { d2.sqrt().powf(p) };
                        let z = feat + label_pow[ya[i]][yb[j]];
                        *slot = match cfg.cost_mode {
                            CostMode::Squared => z,
                            CostMode::Plain => z.powf(1.0 / p),
                        };
                    }
                }
            });
    }
    CostMatrix::new(xa.len(), cols, values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OtddResult {
    pub language_a: String,
    pub language_b: String,
    pub model_id: String,
    pub layer: u8,
    pub distance: f64,
    pub converged: bool,
    pub iterations: usize,
    pub samples_a: usize,
    pub samples_b: usize,
    pub config: OtddConfig,
    pub label_matrix: LabelDistances,
}

/// Key that orders a pair of datasets independently of label names, so that
/// `d(A, B)` and `d(B, A)` solve the same oriented problem.
fn orientation_key(ds: &LabeledDataset) -> (usize, Vec<u8>) {
    let mut h = Sha256::new();
    let mut first_seen: BTreeMap<&str, u32> = BTreeMap::new();
    for it in &ds.items {
        let next = first_seen.len() as u32;
        let code = *first_seen.entry(it.label.as_str()).or_insert(next);
        h.update(code.to_le_bytes());
        for v in &it.features {
            h.update(v.to_le_bytes());
        }
    }
    (ds.items.len(), h.finalize().to_vec())
}

/// Optimal transport dataset distance with uniform weights over samples.
pub fn dataset_distance(
    a: &LabeledDataset,
    b: &LabeledDataset,
    cfg: &OtddConfig,
) -> Result<OtddResult, OtddError> {
    cfg.validate()?;
    if a.is_empty() || b.is_empty() {
        return Err(OtddError::Empty(format!("{} / {}", a.language, b.language)));
    }
    if a.dim != b.dim {
        return Err(OtddError::DimMismatch(a.dim, b.dim));
    }
    let swap = orientation_key(a) > orientation_key(b);
    let (first, second) = if swap { (b, a) } else { (a, b) };

    let labels = label_distance_matrix(first, second, cfg)?;
    let cost = ground_cost(first, second, &labels, cfg)?;
    let stats = sinkhorn_cost(&cost, &uniform(first.len()), &uniform(second.len()), &cfg.sinkhorn())?;
    let distance = match cfg.cost_mode {
        CostMode::Squared => stats.cost.max(0.0).powf(1.0 / cfg.p),
        CostMode::Plain => stats.cost,
    };
    Ok(OtddResult {
        language_a: a.language.clone(),
        language_b: b.language.clone(),
        model_id: a.model_id.clone(),
        layer: a.layer,
        distance,
        converged: stats.converged && labels.converged,
        iterations: stats.iterations,
        samples_a: a.len(),
        samples_b: b.len(),
        config: *cfg,
        label_matrix: if swap { labels.transpose() } else { labels },
    })
}
