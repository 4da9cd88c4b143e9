//! Dataset distances between languages.

use clap::{Args, ValueEnum};
use langdist::analysis::{DistanceMatrix, LanguageTable, MatrixMeta};
use langdist::otdd::{dataset_distance, CostMode, LabelMode, OtddConfig, OtddResult};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::context::{csv_bytes, Ctx};
use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelModeArg {
    EmpiricalSinkhorn,
    GaussianBures,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostModeArg {
    Squared,
    Plain,
}

#[derive(Debug, Args, Serialize)]
pub struct OtddArgs {
    /// Entropic regularization
    #[arg(long, env = "LANGDIST_EPS", default_value_t = 0.1)]
    pub eps: f64,
    /// Wasserstein order
    #[arg(long, env = "LANGDIST_P", default_value_t = 2.0)]
    pub p: f64,
    #[arg(long, value_enum, env = "LANGDIST_LABEL_MODE", default_value = "empirical-sinkhorn")]
    pub label_mode: LabelModeArg,
    #[arg(long, value_enum, env = "LANGDIST_COST_MODE", default_value = "squared")]
    pub cost_mode: CostModeArg,
    #[arg(long, env = "LANGDIST_MAX_ITER", default_value_t = 10_000)]
    pub max_iter: usize,
    #[arg(long, env = "LANGDIST_MARGINAL_TOL", default_value_t = 1e-6)]
    pub marginal_tol: f64,
    /// Ridge added to class covariances in gaussian-bures mode
    #[arg(long, env = "LANGDIST_COVARIANCE_REG", default_value_t = 1e-6)]
    pub covariance_reg: f64,
}

impl OtddArgs {
    pub fn config(&self) -> OtddConfig {
        OtddConfig {
            p: self.p,
            eps: self.eps,
            max_iter: self.max_iter,
            marginal_tol: self.marginal_tol,
            label_mode: match self.label_mode {
                LabelModeArg::EmpiricalSinkhorn => LabelMode::EmpiricalSinkhorn,
                LabelModeArg::GaussianBures => LabelMode::GaussianBures,
            },
            cost_mode: match self.cost_mode {
                CostModeArg::Squared => CostMode::Squared,
                CostModeArg::Plain => CostMode::Plain,
            },
            covariance_reg: self.covariance_reg,
            ..Default::default()
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct OtddCmdArgs {
    /// First LDDS dataset
    #[arg(long)]
    pub a: String,
    /// Second LDDS dataset
    #[arg(long)]
    pub b: String,
    /// Result JSON to write
    #[arg(long)]
    pub out: Option<String>,
    /// Also write the label-to-label distances as CSV
    #[arg(long)]
    pub label_matrix_out: Option<String>,
    #[command(flatten)]
    pub otdd: OtddArgs,
}

fn brief(r: &OtddResult) -> Value {
    json!({
        "language_a": r.language_a,
        "language_b": r.language_b,
        "distance": r.distance,
        "converged": r.converged,
        "iterations": r.iterations,
    })
}

pub fn otdd(ctx: &mut Ctx, args: &OtddCmdArgs) -> Result<Value> {
    let a = ctx.dataset(&args.a)?;
    let b = ctx.dataset(&args.b)?;
    let cfg = args.otdd.config();
    let res = dataset_distance(&a, &b, &cfg)?;
    if let Some(path) = &args.out {
        let env = ctx.envelope(&json!({ "args": args, "otdd": cfg }), &res)?;
        ctx.write_json(path, &env)?;
    }
    if let Some(path) = &args.label_matrix_out {
        let lm = &res.label_matrix;
        let table = LanguageTable::new(
            lm.labels_a.clone(),
            lm.labels_b.clone(),
            lm.values.iter().map(|r| r.iter().map(|&v| Some(v)).collect()).collect(),
        )?;
        let bytes = csv_bytes(|buf| Ok(table.write_csv(buf, "label")?))?;
        let meta = json!({ "language_a": res.language_a, "language_b": res.language_b });
        ctx.write_with_meta(path, &bytes, &cfg, &meta)?;
    }
    Ok(brief(&res))
}

#[derive(Debug, Args, Serialize)]
pub struct DistanceMatrixArgs {
    /// LDDS datasets, one per language
    #[arg(long, num_args = 2.., required = true)]
    pub datasets: Vec<String>,
    /// Matrix CSV to write
    #[arg(long)]
    pub out: String,
    #[command(flatten)]
    pub otdd: OtddArgs,
}

pub fn distance_matrix(ctx: &mut Ctx, args: &DistanceMatrixArgs) -> Result<Value> {
    let mut sets = Vec::with_capacity(args.datasets.len());
    for p in &args.datasets {
        sets.push(ctx.dataset(p)?);
    }
    sets.sort_by(|a, b| a.language.cmp(&b.language));
    if let Some(w) = sets.windows(2).find(|w| w[0].language == w[1].language) {
        return Err(CliError::Input(format!("language {} appears twice", w[0].language)));
    }
    let (model_id, layer) = (sets[0].model_id.clone(), sets[0].layer);
    if let Some(s) = sets.iter().find(|s| s.model_id != model_id || s.layer != layer) {
        return Err(CliError::Input(format!(
            "{} comes from {} layer {}, expected {model_id} layer {layer}",
            s.language, s.model_id, s.layer
        )));
    }
    let cfg = args.otdd.config();
    let n = sets.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let results = pairs
        .par_iter()
        .map(|&(i, j)| dataset_distance(&sets[i], &sets[j], &cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let mut values = vec![vec![0.0; n]; n];
    for (&(i, j), r) in pairs.iter().zip(&results) {
        values[i][j] = r.distance;
        values[j][i] = r.distance;
    }
    let languages: Vec<String> = sets.iter().map(|s| s.language.clone()).collect();
    let meta = MatrixMeta {
        measure: "otdd".into(),
        model_id: Some(model_id),
        layer: Some(layer),
        config: serde_json::to_value(cfg)?,
    };
    let m = DistanceMatrix::new(languages.clone(), values, meta)?;
    let bytes = csv_bytes(|buf| Ok(m.to_table().write_csv(buf, "language")?))?;
    let per_pair: Vec<Value> = results.iter().map(brief).collect();
    let unconverged = results.iter().filter(|r| !r.converged).count();
    let sidecar = json!({ "matrix": m.meta, "pairs": per_pair });
    ctx.write_with_meta(&args.out, &bytes, &json!({ "args": args, "otdd": cfg }), &sidecar)?;
    Ok(json!({ "languages": languages, "pairs": pairs.len(), "unconverged": unconverged }))
}
