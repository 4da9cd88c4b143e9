//! Linear (multinomial logistic) probe recovering relation labels from relation vectors.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::embedstore::LabeledDataset;
use crate::rng;

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("need at least two labels, found {0}")]
    Degenerate(usize),
    #[error("dataset is empty")]
    Empty,
    #[error("label {0:?} is not known to the model")]
    UnseenLabel(String),
    #[error("model dim {model} but data dim {data}")]
    DimMismatch { model: usize, data: usize },
    #[error("config: {0}")]
    Config(String),
}

/// Default regularization strengths swept per language and layer.
pub const DEFAULT_STRENGTHS: [f64; 8] = [1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeSchedule {
    pub max_epochs: usize,
    /// Epochs without a dev-loss improvement of at least `tol` before stopping.
    pub patience: usize,
    pub tol: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Step `t` (1-based) uses `learning_rate / t^power_t`.
    pub power_t: f64,
    pub dev_fraction: f64,
    pub seed: u64,
}

impl Default for ProbeSchedule {
    fn default() -> Self {
        Self {
            max_epochs: 10_000,
            patience: 5,
            tol: 1e-4,
            batch_size: 32,
            learning_rate: 0.01,
            power_t: 0.25,
            dev_fraction: 0.1,
            seed: 0,
        }
    }
}

impl ProbeSchedule {
    fn validate(&self) -> Result<(), ProbeError> {
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(ProbeError::Config("batch_size and max_epochs must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.dev_fraction) {
            return Err(ProbeError::Config("learning_rate > 0 and dev_fraction in [0, 1) required".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel {
    pub labels: Vec<String>,
    pub dim: usize,
    /// Row-major `labels.len() x dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub l2_strength: f64,
    pub epochs_run: usize,
    pub best_dev_loss: f64,
}

impl ProbeModel {
    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        self.bias
            .iter()
            .enumerate()
            .map(|(k, b)| b + self.weights[k * self.dim..(k + 1) * self.dim].iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    /// Index of the highest score; ties go to the lower index.
    pub fn predict_index(&self, x: &[f64]) -> usize {
        argmax(&self.scores(x))
    }

    pub fn predict(&self, x: &[f64]) -> &str {
        &self.labels[self.predict_index(x)]
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in v.iter().enumerate() {
        if s > v[best] {
            best = i;
        }
    }
    best
}

/// Softmax in place, shifted by the max for stability; returns log-sum-exp.
fn softmax(scores: &mut [f64]) -> f64 {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for s in scores.iter_mut() {
        *s = (*s - m).exp();
        z += *s;
    }
    for s in scores.iter_mut() {
        *s /= z;
    }
    m + z.ln()
}

struct Encoded {
    x: Vec<Vec<f64>>,
    y: Vec<usize>,
}

fn encode(ds: &LabeledDataset, labels: &[String]) -> Result<Encoded, ProbeError> {
    let index: HashMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let mut x = Vec::with_capacity(ds.len());
    let mut y = Vec::with_capacity(ds.len());
    for it in &ds.items {
        let k = *index.get(it.label.as_str()).ok_or_else(|| ProbeError::UnseenLabel(it.label.clone()))?;
        x.push(it.features.clone());
        y.push(k);
    }
    Ok(Encoded { x, y })
}

/// Mean cross-entropy plus `l2 / 2 * |W|^2`.
fn loss(m: &ProbeModel, x: &[Vec<f64>], y: &[usize], rows: &[usize]) -> f64 {
    let ce: f64 = rows
        .iter()
        .map(|&i| {
            let mut s = m.scores(&x[i]);
            let raw = s[y[i]];
            softmax(&mut s) - raw
        })
        .sum::<f64>()
        / rows.len().max(1) as f64;
    ce + 0.5 * m.l2_strength * m.weights.iter().map(|w| w * w).sum::<f64>()
}

/// Stratified dev split: `round(fraction * count)` rows per label, leaving at
/// least one training row per label.
fn split_dev(y: &[usize], n_labels: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut by_label = vec![Vec::new(); n_labels];
    for (i, &k) in y.iter().enumerate() {
        by_label[k].push(i);
    }
    let mut rng = rng::substream(seed, "probe-dev");
    let (mut train, mut dev) = (Vec::new(), Vec::new());
    for mut rows in by_label {
        rows.shuffle(&mut rng);
        let take = ((rows.len() as f64 * fraction).round() as usize).min(rows.len().saturating_sub(1));
        dev.extend_from_slice(&rows[..take]);
        train.extend_from_slice(&rows[take..]);
    }
    train.sort_unstable();
    dev.sort_unstable();
    (train, dev)
}

/// Minibatch SGD on the regularized multinomial logistic loss, keeping the
/// parameters with the best dev loss seen. Without dev rows the training loss
/// drives early stopping.
pub fn train_probe(train: &LabeledDataset, l2: f64, sched: &ProbeSchedule) -> Result<ProbeModel, ProbeError> {
    sched.validate()?;
    if !(l2 >= 0.0) {
        return Err(ProbeError::Config(format!("l2 strength {l2}")));
    }
    if train.is_empty() {
        return Err(ProbeError::Empty);
    }
    let labels: Vec<String> = train.label_set.iter().cloned().collect();
    if labels.len() < 2 {
        return Err(ProbeError::Degenerate(labels.len()));
    }
    let data = encode(train, &labels)?;
    let (k, d) = (labels.len(), train.dim);
    let (fit_rows, dev_rows) = split_dev(&data.y, k, sched.dev_fraction, sched.seed);
    let monitor = if dev_rows.is_empty() { &fit_rows } else { &dev_rows };

    let mut m = ProbeModel {
        labels,
        dim: d,
        weights: vec![0.0; k * d],
        bias: vec![0.0; k],
        l2_strength: l2,
        epochs_run: 0,
        best_dev_loss: f64::INFINITY,
    };
    let mut best = m.clone();
    best.best_dev_loss = loss(&m, &data.x, &data.y, monitor);
    let mut stale = 0;
    let mut step = 0u64;
    let mut grad_w = vec![0.0; k * d];
    let mut grad_b = vec![0.0; k];
    let mut order = fit_rows.clone();
    for epoch in 0..sched.max_epochs {
        order.copy_from_slice(&fit_rows);
        order.shuffle(&mut rng::indexed_substream(sched.seed, "probe-epoch", epoch as u64));
        for batch in order.chunks(sched.batch_size) {
            step += 1;
            let lr = sched.learning_rate / (step as f64).powf(sched.power_t);
            grad_w.iter_mut().for_each(|g| *g = 0.0);
            grad_b.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                let x = &data.x[i];
                let mut p = m.scores(x);
                softmax(&mut p);
                p[data.y[i]] -= 1.0;
                for (c, &pc) in p.iter().enumerate() {
                    grad_b[c] += pc;
                    for (g, v) in grad_w[c * d..(c + 1) * d].iter_mut().zip(x) {
                        *g += pc * v;
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for (w, g) in m.weights.iter_mut().zip(&grad_w) {
                *w -= lr * (g * scale + l2 * *w);
            }
            for (b, g) in m.bias.iter_mut().zip(&grad_b) {
                *b -= lr * g * scale;
            }
        }
        m.epochs_run = epoch + 1;
        let current = loss(&m, &data.x, &data.y, monitor);
        if !current.is_finite() {
            break;
        }
        if current < best.best_dev_loss - sched.tol {
            stale = 0;
        } else {
            stale += 1;
        }
        if current < best.best_dev_loss {
            best = ProbeModel { best_dev_loss: current, ..m.clone() };
        }
        if stale >= sched.patience {
            break;
        }
    }
    best.epochs_run = m.epochs_run;
    Ok(best)
}

/// Fraction of items whose argmax label matches.
pub fn probe_accuracy(m: &ProbeModel, eval: &LabeledDataset) -> Result<f64, ProbeError> {
    if eval.is_empty() {
        return Err(ProbeError::Empty);
    }
    if eval.dim != m.dim {
        return Err(ProbeError::DimMismatch { model: m.dim, data: eval.dim });
    }
    let data = encode(eval, &m.labels)?;
    let hits = data.x.iter().zip(&data.y).filter(|(x, &y)| m.predict_index(x) == y).count();
    Ok(hits as f64 / eval.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub language: String,
    pub layer: u8,
    pub strengths: Vec<f64>,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// 95% t-interval over strengths; a point when only one strength is given.
    pub ci_low: f64,
    pub ci_high: f64,
    pub per_label_counts: BTreeMap<String, usize>,
}

pub fn confidence_interval(values: &[f64]) -> (f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, mean, mean);
    }
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let t = StudentsT::new(0.0, 1.0, n - 1.0).expect("positive degrees of freedom").inverse_cdf(0.975);
    let half = t * sd / n.sqrt();
    (mean, mean - half, mean + half)
}

/// One probe per strength, trained in parallel and scored on `eval`. The
/// models are returned in strength order.
pub fn probe_sweep(
    train: &LabeledDataset,
    eval: &LabeledDataset,
    strengths: &[f64],
    sched: &ProbeSchedule,
) -> Result<(ProbeReport, Vec<ProbeModel>), ProbeError> {
    if strengths.is_empty() {
        return Err(ProbeError::Config("no regularization strengths".into()));
    }
    let fitted = strengths
        .par_iter()
        .map(|&l2| {
            let m = train_probe(train, l2, sched)?;
            let acc = probe_accuracy(&m, eval)?;
            Ok((m, acc))
        })
        .collect::<Result<Vec<_>, ProbeError>>()?;
    let (models, accuracies): (Vec<ProbeModel>, Vec<f64>) = fitted.into_iter().unzip();
    let (mean, ci_low, ci_high) = confidence_interval(&accuracies);
    let report = ProbeReport {
        language: train.language.clone(),
        layer: train.layer,
        strengths: strengths.to_vec(),
        accuracies,
        mean,
        ci_low,
        ci_high,
        per_label_counts: train.label_counts().into_iter().map(|(k, v)| (k.to_owned(), v)).collect(),
    };
    Ok((report, models))
}
