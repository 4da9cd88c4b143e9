//! Rank correlation, transfer-drop tables, ranking quality, hierarchical
//! clustering and PCA over language-indexed tables.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{Read, Write};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("inputs have lengths {a} and {b}")]
    Length { a: usize, b: usize },
    #[error("need at least {needed} observations, got {found}")]
    TooFew { needed: usize, found: usize },
    #[error("ranks have zero variance")]
    ZeroVariance,
    #[error("matrix not symmetric at ({a}, {b})")]
    Asymmetric { a: String, b: String },
    #[error("negative value at ({row}, {col})")]
    Negative { row: String, col: String },
    #[error("missing value at ({row}, {col})")]
    MissingCell { row: String, col: String },
    #[error("unknown language {0:?}")]
    UnknownLanguage(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Average ranks (1-based); tied values share the mean of their positions.
pub fn mid_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub rho: f64,
    /// Two-sided, from the t approximation with n - 2 degrees of freedom.
    pub p_value: f64,
    pub n: usize,
}

/// Spearman's rho as the Pearson correlation of mid-ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Correlation, AnalysisError> {
    if x.len() != y.len() {
        return Err(AnalysisError::Length { a: x.len(), b: y.len() });
    }
    if x.len() < 3 {
        return Err(AnalysisError::TooFew { needed: 3, found: x.len() });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(AnalysisError::Invalid("non-finite value".into()));
    }
    let n = x.len();
    let (rx, ry) = (mid_ranks(x), mid_ranks(y));
    let untied = |r: &[f64]| r.iter().all(|v| v.fract() == 0.0) && {
        let mut s = r.to_vec();
        s.sort_by(f64::total_cmp);
        s.windows(2).all(|w| w[0] != w[1])
    };
    let rho = if untied(&rx) && untied(&ry) {
        // integer arithmetic, so identical and reversed rankings give exactly +-1
        let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b) * (a - b)).sum();
        let nf = n as f64;
        1.0 - 6.0 * d2 / (nf * (nf * nf - 1.0))
    } else {
        pearson(&rx, &ry).ok_or(AnalysisError::ZeroVariance)?
    };
    let dof = (n - 2) as f64;
    let p_value = if rho.abs() >= 1.0 {
        0.0
    } else {
        let t = rho * (dof / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, dof).expect("positive degrees of freedom");
        (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
    };
    Ok(Correlation { rho, p_value, n })
}

pub const MAX_EXACT_N: usize = 10;

/// Two-sided permutation p-value of Spearman's rho, enumerating every
/// reordering of `y`. Only for `n <= MAX_EXACT_N`.
pub fn spearman_exact_p(x: &[f64], y: &[f64]) -> Result<f64, AnalysisError> {
    let observed = spearman(x, y)?.rho;
    if x.len() > MAX_EXACT_N {
        return Err(AnalysisError::Invalid(format!("exact p needs n <= {MAX_EXACT_N}")));
    }
    let rx = mid_ranks(x);
    let mut ry = mid_ranks(y);
    let (mut hits, mut total) = (0u64, 0u64);
    let mut c = vec![0usize; ry.len()];
    let mut visit = |ry: &[f64]| {
        total += 1;
        if pearson(&rx, ry).is_some_and(|r| r.abs() >= observed.abs() - 1e-12) {
            hits += 1;
        }
    };
    // Heap's algorithm
    visit(&ry);
    let mut i = 0;
    while i < ry.len() {
        if c[i] < i {
            if i % 2 == 0 {
                ry.swap(0, i);
            } else {
                ry.swap(c[i], i);
            }
            visit(&ry);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(hits as f64 / total as f64)
}

/// NDCG over the first `k` entries of `predicted`, with gains taken from
/// `relevance`. The ideal ordering sorts the predicted candidates by relevance.
/// Returns 1 when the ideal DCG is 0.
pub fn ndcg_at_k(
    predicted: &[String],
    relevance: &HashMap<String, f64>,
    k: usize,
) -> Result<f64, AnalysisError> {
    if k == 0 {
        return Err(AnalysisError::Invalid("k must be at least 1".into()));
    }
    let gains = predicted
        .iter()
        .map(|c| match relevance.get(c) {
            None => Err(AnalysisError::UnknownLanguage(c.clone())),
            Some(&r) if !(r >= 0.0 && r.is_finite()) => {
                Err(AnalysisError::Invalid(format!("relevance of {c} is {r}")))
            }
            Some(&r) => Ok(r),
        })
        .collect::<Result<Vec<f64>, _>>()?;
    let dcg = |g: &[f64]| -> f64 {
        g.iter().take(k).enumerate().map(|(i, r)| r / ((i + 2) as f64).log2()).sum()
    };
    let mut ideal = gains.clone();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let best = dcg(&ideal);
    if best == 0.0 {
        return Ok(1.0);
    }
    Ok(dcg(&gains) / best)
}

/// Subtracts the smallest value so every relevance is nonnegative.
pub fn min_shift(relevance: &HashMap<String, f64>) -> HashMap<String, f64> {
    let min = relevance.values().copied().fold(f64::INFINITY, f64::min);
    relevance.iter().map(|(k, v)| (k.clone(), v - min)).collect()
}

/// Rows × columns of optional values keyed by language code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageTable {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
}

impl LanguageTable {
    pub fn new(rows: Vec<String>, cols: Vec<String>, values: Vec<Vec<Option<f64>>>) -> Result<Self, AnalysisError> {
        if values.len() != rows.len() || values.iter().any(|r| r.len() != cols.len()) {
            return Err(AnalysisError::Invalid("table shape does not match its labels".into()));
        }
        for names in [&rows, &cols] {
            let mut seen = std::collections::HashSet::new();
            if let Some(d) = names.iter().find(|n| !seen.insert(n.as_str())) {
                return Err(AnalysisError::Invalid(format!("duplicate language {d:?}")));
            }
        }
        Ok(Self { rows, cols, values })
    }

    fn row_index(&self, lang: &str) -> Option<usize> {
        self.rows.iter().position(|r| r == lang)
    }

    fn col_index(&self, lang: &str) -> Option<usize> {
        self.cols.iter().position(|c| c == lang)
    }

    pub fn get(&self, row: &str, col: &str) -> Option<f64> {
        self.values[self.row_index(row)?][self.col_index(col)?]
    }

    /// First header cell is a free-form corner label; empty or `NA` cells are missing.
    pub fn read_csv<R: Read>(input: R) -> Result<Self, AnalysisError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let cols: Vec<String> = rdr.headers()?.iter().skip(1).map(str::to_owned).collect();
        let mut rows = Vec::new();
        let mut values = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            if rec.len() != cols.len() + 1 {
                return Err(AnalysisError::Invalid(format!("line {line}: expected {} cells", cols.len() + 1)));
            }
            rows.push(rec[0].to_owned());
            values.push(
                rec.iter()
                    .skip(1)
                    .map(|c| match c {
                        "" | "NA" => Ok(None),
                        s => s
                            .parse::<f64>()
                            .ok()
                            .filter(|v| v.is_finite())
                            .map(Some)
                            .ok_or_else(|| AnalysisError::Invalid(format!("line {line}: bad number {s:?}"))),
                    })
                    .collect::<Result<Vec<_>, _>>()?,
            );
        }
        Self::new(rows, cols, values)
    }

    pub fn write_csv<W: Write>(&self, w: W, corner: &str) -> Result<(), AnalysisError> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec![corner.to_owned()];
        header.extend(self.cols.iter().cloned());
        wtr.write_record(&header)?;
        for (name, row) in self.rows.iter().zip(&self.values) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(|v| v.map_or(String::new(), |v| v.to_string())));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatrixMeta {
    pub measure: String,
    pub model_id: Option<String>,
    pub layer: Option<u8>,
    pub config: serde_json::Value,
}

/// Symmetric, nonnegative, complete language × language table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    pub languages: Vec<String>,
    pub values: Vec<Vec<f64>>,
    pub meta: MatrixMeta,
}

pub const SYMMETRY_TOL: f64 = 1e-9;

impl DistanceMatrix {
    pub fn new(languages: Vec<String>, values: Vec<Vec<f64>>, meta: MatrixMeta) -> Result<Self, AnalysisError> {
        let n = languages.len();
        // shape and duplicate-name checks
        LanguageTable::new(
            languages.clone(),
            languages.clone(),
            values.iter().map(|r| r.iter().map(|&v| Some(v)).collect()).collect(),
        )?;
        for i in 0..n {
            for j in 0..n {
                let v = values[i][j];
                if !v.is_finite() || v < 0.0 {
                    return Err(AnalysisError::Negative { row: languages[i].clone(), col: languages[j].clone() });
                }
                if (v - values[j][i]).abs() > SYMMETRY_TOL * v.abs().max(1.0) {
                    return Err(AnalysisError::Asymmetric { a: languages[i].clone(), b: languages[j].clone() });
                }
            }
        }
        Ok(Self { languages, values, meta })
    }

    /// Fills the upper triangle from `f` and mirrors it; the diagonal comes from `diag`.
    pub fn from_pairs(
        languages: Vec<String>,
        meta: MatrixMeta,
        diag: f64,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self, AnalysisError> {
        let n = languages.len();
        let mut values = vec![vec![diag; n]; n];
        #[allow(clippy::needless_range_loop)]
        for i in 0..n {
            for j in i + 1..n {
                let v = f(i, j);
                values[i][j] = v;
                values[j][i] = v;
            }
        }
        Self::new(languages, values, meta)
    }

    pub fn from_table(t: &LanguageTable, meta: MatrixMeta) -> Result<Self, AnalysisError> {
        if t.rows != t.cols {
            return Err(AnalysisError::Invalid("distance table needs identical row and column order".into()));
        }
        let mut values = Vec::with_capacity(t.rows.len());
        for (i, row) in t.values.iter().enumerate() {
            values.push(
                row.iter()
                    .enumerate()
                    .map(|(j, v)| v.ok_or_else(|| AnalysisError::MissingCell { row: t.rows[i].clone(), col: t.cols[j].clone() }))
                    .collect::<Result<Vec<_>, _>>()?,
            );
        }
        Self::new(t.rows.clone(), values, meta)
    }

    pub fn to_table(&self) -> LanguageTable {
        LanguageTable {
            rows: self.languages.clone(),
            cols: self.languages.clone(),
            values: self.values.iter().map(|r| r.iter().map(|&v| Some(v)).collect()).collect(),
        }
    }

    pub fn index(&self, lang: &str) -> Option<usize> {
        self.languages.iter().position(|l| l == lang)
    }

    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        Some(self.values[self.index(a)?][self.index(b)?])
    }

    /// Unordered pairs `(i, j)` with `i < j`, in row-major order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.languages.len();
        (0..n).flat_map(move |i| (i + 1..n).map(move |j| (i, j)))
    }
}

/// `drop[s][t] = LAS[s][s] - LAS[s][t]` for every cell of the table.
pub fn las_drop(t: &LanguageTable) -> Result<LanguageTable, AnalysisError> {
    let mut values = Vec::with_capacity(t.rows.len());
    for (i, src) in t.rows.iter().enumerate() {
        let missing = |col: &str| AnalysisError::MissingCell { row: src.clone(), col: col.to_owned() };
        let own = t.get(src, src).ok_or_else(|| missing(src))?;
        let row = t.values[i]
            .iter()
            .zip(&t.cols)
            .map(|(v, tgt)| {
                let v = v.ok_or_else(|| missing(tgt))?;
                if !(0.0..=100.0).contains(&v) {
                    return Err(AnalysisError::Invalid(format!("LAS {v} for ({src}, {tgt}) outside [0, 100]")));
                }
                Ok(Some(if tgt == src { 0.0 } else { own - v }))
            })
            .collect::<Result<Vec<_>, _>>()?;
        values.push(row);
    }
    LanguageTable::new(t.rows.clone(), t.cols.clone(), values)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Linkage {
    Single,
    Complete,
    #[default]
    Average,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    /// Cluster ids: `0..n` are leaves, `n + i` is the cluster formed by merge `i`.
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterTree {
    pub leaves: Vec<String>,
    pub merges: Vec<Merge>,
    pub linkage: Linkage,
}

impl ClusterTree {
    /// Leaf names under a cluster id, sorted.
    pub fn members(&self, id: usize) -> Vec<String> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(c) = stack.pop() {
            if c < self.leaves.len() {
                out.push(self.leaves[c].clone());
            } else {
                let m = &self.merges[c - self.leaves.len()];
                stack.push(m.left);
                stack.push(m.right);
            }
        }
        out.sort();
        out
    }

    fn height(&self, id: usize) -> f64 {
        if id < self.leaves.len() {
            0.0
        } else {
            self.merges[id - self.leaves.len()].height
        }
    }

    /// Newick text with branch lengths equal to height differences.
    pub fn newick(&self) -> String {
        fn quote(name: &str) -> String {
            if name.chars().any(|c| "()[]:;,' \t".contains(c)) {
                format!("'{}'", name.replace('\'', "''"))
            } else {
                name.to_owned()
            }
        }
        fn go(t: &ClusterTree, id: usize, out: &mut String) {
            if id < t.leaves.len() {
                out.push_str(&quote(&t.leaves[id]));
                return;
            }
            let m = &t.merges[id - t.leaves.len()];
            out.push('(');
            go(t, m.left, out);
            let _ = write!(out, ":{}", m.height - t.height(m.left));
            out.push(',');
            go(t, m.right, out);
            let _ = write!(out, ":{}", m.height - t.height(m.right));
            out.push(')');
        }
        let mut out = String::new();
        match self.merges.len() {
            0 => out.push_str(&self.leaves.first().map(|l| quote(l)).unwrap_or_default()),
            n => go(self, self.leaves.len() + n - 1, &mut out),
        }
        out.push(';');
        out
    }
}

/// Agglomerative clustering. Among candidate pairs at the minimal linkage
/// distance (within 1e-12 relative), the pair whose smallest member names are
/// lexicographically first is merged; the left child is the one with the
/// smaller name.
pub fn agglomerative_cluster(d: &DistanceMatrix, linkage: Linkage) -> Result<ClusterTree, AnalysisError> {
    let n = d.languages.len();
    if n < 2 {
        return Err(AnalysisError::TooFew { needed: 2, found: n });
    }
    // active clusters: (id, leaf indices sorted by name)
    let mut active: Vec<(usize, Vec<usize>)> = (0..n).map(|i| (i, vec![i])).collect();
    let name = |c: &[usize]| d.languages[c[0]].as_str();
    let link = |a: &[usize], b: &[usize]| -> f64 {
        let it = a.iter().flat_map(|&i| b.iter().map(move |&j| d.values[i][j]));
        match linkage {
            Linkage::Single => it.fold(f64::INFINITY, f64::min),
            Linkage::Complete => it.fold(f64::NEG_INFINITY, f64::max),
            Linkage::Average => it.sum::<f64>() / (a.len() * b.len()) as f64,
        }
    };
    let mut merges = Vec::with_capacity(n - 1);
    while active.len() > 1 {
        let mut cands = Vec::new();
        for x in 0..active.len() {
            for y in x + 1..active.len() {
                cands.push((x, y, link(&active[x].1, &active[y].1)));
            }
        }
        let min = cands.iter().map(|c| c.2).fold(f64::INFINITY, f64::min);
        let key = |&(x, y, _): &(usize, usize, f64)| {
            let (a, b) = (name(&active[x].1), name(&active[y].1));
            if a <= b { (a, b) } else { (b, a) }
        };
        let &(x, y, height) = cands
            .iter()
            .filter(|c| c.2 <= min + 1e-12 * min.abs().max(1.0))
            .min_by(|p, q| key(p).cmp(&key(q)))
            .expect("at least one candidate pair");
        let (x, y) = if name(&active[x].1) <= name(&active[y].1) { (x, y) } else { (y, x) };
        let (id_l, id_r) = (active[x].0, active[y].0);
        let mut members = active[x].1.clone();
        members.extend(active[y].1.iter().copied());
        members.sort_by(|&i, &j| d.languages[i].cmp(&d.languages[j]));
        merges.push(Merge { left: id_l, right: id_r, height, size: members.len() });
        let (hi, lo) = (x.max(y), x.min(y));
        active.remove(hi);
        active.remove(lo);
        active.push((n + merges.len() - 1, members));
    }
    Ok(ClusterTree { leaves: d.languages.clone(), merges, linkage })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `dims` unit-length principal axes, by descending variance.
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
}

impl Pca {
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| c.iter().zip(x).zip(&self.mean).map(|((c, x), m)| c * (x - m)).sum())
            .collect()
    }

    pub fn inverse(&self, z: &[f64]) -> Vec<f64> {
        let mut x = self.mean.clone();
        for (c, &w) in self.components.iter().zip(z) {
            for (xi, ci) in x.iter_mut().zip(c) {
                *xi += w * ci;
            }
        }
        x
    }
}

pub const DEFAULT_PCA_DIMS: usize = 37;

/// Principal components of `x` (sample covariance). Each axis is signed so
/// that its largest-magnitude coordinate is positive.
pub fn pca_fit(x: &[Vec<f64>], dims: usize) -> Result<Pca, AnalysisError> {
    if x.len() < 2 {
        return Err(AnalysisError::TooFew { needed: 2, found: x.len() });
    }
    let d = x[0].len();
    if x.iter().any(|r| r.len() != d) {
        return Err(AnalysisError::Invalid("rows differ in length".into()));
    }
    if dims == 0 || dims > d {
        return Err(AnalysisError::Invalid(format!("dims {dims} for {d}-dimensional data")));
    }
    let n = x.len() as f64;
    let mean: Vec<f64> = (0..d).map(|k| x.iter().map(|r| r[k]).sum::<f64>() / n).collect();
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for r in x {
        for a in 0..d {
            let da = r[a] - mean[a];
            for b in a..d {
                cov[(a, b)] += da * (r[b] - mean[b]);
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            let v = cov[(a, b)] / (n - 1.0);
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut components = Vec::with_capacity(dims);
    let mut explained_variance = Vec::with_capacity(dims);
    for &k in order.iter().take(dims) {
        let mut c: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        let lead = c.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        if lead < 0.0 {
            c.iter_mut().for_each(|v| *v = -*v);
        }
        components.push(c);
        explained_variance.push(eig.eigenvalues[k].max(0.0));
    }
    Ok(Pca { mean, components, explained_variance })
}

/// Fits a PCA and returns it with the projected rows.
pub fn pca_project(x: &[Vec<f64>], dims: usize) -> Result<(Pca, Vec<Vec<f64>>), AnalysisError> {
    let pca = pca_fit(x, dims)?;
    let z = x.iter().map(|r| pca.project(r)).collect();
    Ok((pca, z))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "language")]
pub enum PairSelection {
    /// Unordered pairs of shared languages.
    UpperTriangle,
    /// Every ordered pair of distinct shared languages.
    OffDiagonal,
    /// One shared row against every other shared column.
    Row(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRow {
    pub a: String,
    pub b: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub correlation: Correlation,
    pub rows: Vec<PairRow>,
}

/// Spearman correlation between two tables over the cells both define.
pub fn compare_measures(
    a: &LanguageTable,
    b: &LanguageTable,
    selection: &PairSelection,
) -> Result<Comparison, AnalysisError> {
    let shared = |xs: &[String], ys: &[String]| -> Vec<String> {
        let mut v: Vec<String> = xs.iter().filter(|l| ys.contains(l)).cloned().collect();
        v.sort();
        v
    };
    let rows_common = shared(&a.rows, &b.rows);
    let cols_common = shared(&a.cols, &b.cols);
    let mut cells: Vec<(String, String)> = Vec::new();
    match selection {
        PairSelection::UpperTriangle => {
            let langs = shared(&rows_common, &cols_common);
            for (i, p) in langs.iter().enumerate() {
                for q in &langs[i + 1..] {
                    cells.push((p.clone(), q.clone()));
                }
            }
        }
        PairSelection::OffDiagonal => {
            for p in &rows_common {
                for q in cols_common.iter().filter(|q| *q != p) {
                    cells.push((p.clone(), q.clone()));
                }
            }
        }
        PairSelection::Row(lang) => {
            if !rows_common.contains(lang) {
                return Err(AnalysisError::UnknownLanguage(lang.clone()));
            }
            for q in cols_common.iter().filter(|q| *q != lang) {
                cells.push((lang.clone(), q.clone()));
            }
        }
    }
    let rows: Vec<PairRow> = cells
        .into_iter()
        .filter_map(|(p, q)| {
            // a missing upper cell may still be present in the lower triangle
            let look = |t: &LanguageTable| {
                t.get(&p, &q).or_else(|| matches!(selection, PairSelection::UpperTriangle).then(|| t.get(&q, &p)).flatten())
            };
            Some(PairRow { x: look(a)?, y: look(b)?, a: p, b: q })
        })
        .collect();
    if rows.len() < 3 {
        return Err(AnalysisError::TooFew { needed: 3, found: rows.len() });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.x).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.y).collect();
    Ok(Comparison { correlation: spearman(&xs, &ys)?, rows })
}

pub fn write_scatter<W: Write>(w: W, rows: &[PairRow]) -> Result<(), AnalysisError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["x", "y", "pair"])?;
    for r in rows {
        wtr.write_record([r.x.to_string(), r.y.to_string(), format!("{}-{}", r.a, r.b)])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn spearman_identity_and_reversal() {
        let x = [1.0, 5.0, 2.0, 8.0, 3.0];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_eq!(spearman(&x, &x).unwrap().rho, 1.0);
        assert_eq!(spearman(&x, &neg).unwrap().rho, -1.0);
        assert!(matches!(spearman(&[1.0, 1.0, 1.0], &x[..3]), Err(AnalysisError::ZeroVariance)));
        assert!(matches!(spearman(&x[..2], &x[..2]), Err(AnalysisError::TooFew { .. })));
    }

    #[test]
    fn mid_ranks_share_ties() {
        assert_eq!(mid_ranks(&[1.0, 2.0, 2.0, 4.0]), vec![1.0, 2.5, 2.5, 4.0]);
        assert_eq!(mid_ranks(&[3.0, 3.0, 3.0]), vec![2.0; 3]);
    }

    #[test]
    fn exact_p_for_perfect_order_of_five() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        // only the identity and the reversal reach |rho| = 1
        assert!((spearman_exact_p(&x, &x).unwrap() - 2.0 / 120.0).abs() < 1e-15);
    }

    #[test]
    fn ndcg_examples() {
        let rel: HashMap<String, f64> = [("a", 3.0), ("b", 2.0), ("c", 1.0)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        assert_eq!(ndcg_at_k(&names(&["a", "b", "c"]), &rel, 3).unwrap(), 1.0);
        let worst = ndcg_at_k(&names(&["c", "b", "a"]), &rel, 3).unwrap();
        assert!((worst - 0.7900).abs() < 1e-4, "{worst}");
        let flat: HashMap<String, f64> = rel.keys().map(|k| (k.clone(), 2.0)).collect();
        assert_eq!(ndcg_at_k(&names(&["c", "a", "b"]), &flat, 3).unwrap(), 1.0);
        let neg: HashMap<String, f64> = [("a".to_string(), -1.0)].into_iter().collect();
        assert!(ndcg_at_k(&names(&["a"]), &neg, 3).is_err());
        assert!(ndcg_at_k(&names(&["z"]), &rel, 3).is_err());
    }

    #[test]
    fn drop_table() {
        let t = LanguageTable::new(
            names(&["en", "de"]),
            names(&["en", "de"]),
            vec![vec![Some(90.0), Some(75.0)], vec![Some(70.0), Some(85.0)]],
        )
        .unwrap();
        let d = las_drop(&t).unwrap();
        assert_eq!(d.get("en", "de"), Some(15.0));
        assert_eq!(d.get("de", "en"), Some(15.0));
        assert_eq!(d.get("en", "en"), Some(0.0));
        let gap = LanguageTable { values: vec![vec![Some(90.0), None], vec![Some(70.0), Some(85.0)]], ..t };
        assert!(matches!(las_drop(&gap), Err(AnalysisError::MissingCell { .. })));
    }

    fn planted() -> DistanceMatrix {
        let l = names(&["A", "B", "C", "D"]);
        let v = vec![
            vec![0.0, 0.1, 10.0, 10.0],
            vec![0.1, 0.0, 10.0, 10.0],
            vec![10.0, 10.0, 0.0, 0.2],
            vec![10.0, 10.0, 0.2, 0.0],
        ];
        DistanceMatrix::new(l, v, MatrixMeta::default()).unwrap()
    }

    #[test]
    fn planted_clusters_merge_first() {
        for linkage in [Linkage::Single, Linkage::Complete, Linkage::Average] {
            let t = agglomerative_cluster(&planted(), linkage).unwrap();
            assert_eq!(t.members(4), names(&["A", "B"]));
            assert_eq!(t.members(5), names(&["C", "D"]));
            assert_eq!(t.merges[2].height, 10.0);
            assert!(t.merges.windows(2).all(|w| w[0].height <= w[1].height));
        }
        let t = agglomerative_cluster(&planted(), Linkage::Average).unwrap();
        assert_eq!(t.newick(), "((A:0.1,B:0.1):9.9,(C:0.2,D:0.2):9.8);");
    }

    #[test]
    fn asymmetric_input_is_rejected() {
        let v = vec![vec![0.0, 1.0], vec![1.5, 0.0]];
        assert!(matches!(
            DistanceMatrix::new(names(&["a", "b"]), v, MatrixMeta::default()),
            Err(AnalysisError::Asymmetric { .. })
        ));
    }

    #[test]
    fn pca_recovers_a_line() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| {
            let t = i as f64 * 0.3 - 1.0;
            vec![1.0 + 2.0 * t, -t, 0.5 + 3.0 * t]
        }).collect();
        let (pca, z) = pca_project(&x, 1).unwrap();
        for (row, zi) in x.iter().zip(&z) {
            let back = pca.inverse(zi);
            for (a, b) in row.iter().zip(&back) {
                assert!((a - b).abs() <= 1e-9);
            }
        }
        let full = pca_fit(&x, 3).unwrap();
        assert!(full.explained_variance.windows(2).all(|w| w[0] >= w[1]));
        assert!(pca_fit(&x, 4).is_err());
    }

    #[test]
    fn table_csv_round_trip() {
        let text = "language,en,de\nen,0,0.5\nde,0.5,\n";
        let t = LanguageTable::read_csv(text.as_bytes()).unwrap();
        assert_eq!(t.get("de", "de"), None);
        let mut out = Vec::new();
        t.write_csv(&mut out, "language").unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), text);
    }

    #[test]
    fn comparing_a_table_with_itself() {
        let d = planted();
        let t = d.to_table();
        let c = compare_measures(&t, &t, &PairSelection::UpperTriangle).unwrap();
        assert_eq!(c.rows.len(), 6);
        assert_eq!(c.correlation.rho, 1.0);
        let row = compare_measures(&t, &t, &PairSelection::Row("A".into())).unwrap();
        assert_eq!(row.rows.len(), 3);
        assert!(compare_measures(&t, &t, &PairSelection::Row("Q".into())).is_err());
    }
}
