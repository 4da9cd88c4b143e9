//! Typological distances and the regressor trained on them.

use clap::{Args, ValueEnum};
use langdist::analysis::{DistanceMatrix, LanguageTable, MatrixMeta};
use langdist::regress::{
    cross_validate, fit_gbdt, impurity_importance, leave_one_language_out, permutation_importance,
    rank_features, select_source, GbdtConfig, GbdtModel,
};
use langdist::typology::{
    average_feature_distance, feature_distance_vector, jaccard_distance, raw_feature_distances,
    read_parameter_csv, read_wals_csv, write_feature_vectors, FeatureInventory, Imputation,
    ImputationTable, TypologyError, WalsProfile,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::context::{csv_bytes, Ctx};
use crate::error::{CliError, InFile, Result};

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImputationArg {
    Mean,
    Sentinel,
}

#[derive(Debug, Args, Serialize)]
pub struct TypologyArgs {
    /// Long-format WALS CSV
    #[arg(long)]
    pub wals: String,
    /// Feature id list; defaults to the built-in 116-feature inventory
    #[arg(long)]
    pub inventory: Option<String>,
    #[arg(long, value_enum, env = "LANGDIST_IMPUTATION", default_value = "mean")]
    pub imputation: ImputationArg,
}

pub fn load_inventory(ctx: &mut Ctx, path: Option<&str>) -> Result<FeatureInventory> {
    match path {
        None => Ok(FeatureInventory::default()),
        Some(p) => {
            let text = ctx.read_text(p)?;
            FeatureInventory::parse(&text).in_file(p)
        }
    }
}

pub fn load_wals(ctx: &mut Ctx, path: &str) -> Result<Vec<WalsProfile>> {
    let bytes = ctx.read(path)?;
    read_wals_csv(bytes.as_slice()).in_file(path)
}

fn profile<'a>(profiles: &'a [WalsProfile], lang: &str) -> Result<&'a WalsProfile> {
    profiles
        .iter()
        .find(|p| p.language == lang)
        .ok_or_else(|| CliError::Input(format!("language {lang:?} has no WALS profile")))
}

#[derive(Debug, Args, Serialize)]
pub struct FormalDistArgs {
    /// Parameter CSV: language, then one 0/1/? cell per parameter
    #[arg(long)]
    pub params: String,
    /// Matrix CSV to write
    #[arg(long)]
    pub out: String,
    /// Restrict to these languages (comma-separated)
    #[arg(long, value_delimiter = ',')]
    pub languages: Option<Vec<String>>,
}

pub fn formal_dist(ctx: &mut Ctx, args: &FormalDistArgs) -> Result<Value> {
    let bytes = ctx.read(&args.params)?;
    let mut profiles = read_parameter_csv(bytes.as_slice()).in_file(&args.params)?;
    let mut skipped = Vec::new();
    if let Some(keep) = &args.languages {
        for l in keep {
            if !profiles.iter().any(|p| &p.language == l) {
                skipped.push(l.clone());
            }
        }
        profiles.retain(|p| keep.contains(&p.language));
    }
    profiles.sort_by(|a, b| a.language.cmp(&b.language));
    let n = profiles.len();
    let mut values = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = jaccard_distance(&profiles[i], &profiles[j])?;
            values[i][j] = d;
            values[j][i] = d;
        }
    }
    let languages: Vec<String> = profiles.iter().map(|p| p.language.clone()).collect();
    let meta = MatrixMeta { measure: "jaccard".into(), ..Default::default() };
    let m = DistanceMatrix::new(languages.clone(), values, meta)?;
    let bytes = csv_bytes(|buf| Ok(m.to_table().write_csv(buf, "language")?))?;
    ctx.write_with_meta(&args.out, &bytes, args, &json!({ "matrix": m.meta, "skipped": skipped }))?;
    Ok(json!({ "languages": languages, "skipped": skipped }))
}

#[derive(Debug, Args, Serialize)]
pub struct WalsDistArgs {
    #[command(flatten)]
    pub typology: TypologyArgs,
    /// Per-pair feature-distance CSV to write
    #[arg(long)]
    pub out: String,
    /// Also write the matrix of mean defined feature distances
    #[arg(long)]
    pub average_out: Option<String>,
}

fn imputation_for(arg: ImputationArg, table: impl FnOnce() -> Result<ImputationTable>) -> Result<Imputation> {
    Ok(match arg {
        ImputationArg::Sentinel => Imputation::Sentinel,
        ImputationArg::Mean => Imputation::Mean { table: table()? },
    })
}

pub fn wals_dist(ctx: &mut Ctx, args: &WalsDistArgs) -> Result<Value> {
    let inv = load_inventory(ctx, args.typology.inventory.as_deref())?;
    let profiles = load_wals(ctx, &args.typology.wals)?;
    let imp = imputation_for(args.typology.imputation, || Ok(ImputationTable::from_profiles(&profiles, &inv)?))?;
    let n = profiles.len();
    let mut rows = Vec::new();
    let mut avg = vec![vec![Some(0.0); n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = feature_distance_vector(&profiles[i], &profiles[j], &inv, &imp)?;
            let a = match average_feature_distance(&v) {
                Ok(a) => Some(a),
                Err(TypologyError::AllMissing) => None,
                Err(e) => return Err(e.into()),
            };
            avg[i][j] = a;
            avg[j][i] = a;
            rows.push((profiles[i].language.clone(), profiles[j].language.clone(), v));
        }
    }
    let bytes = csv_bytes(|buf| Ok(write_feature_vectors(buf, &rows)?))?;
    let imputed: usize = rows.iter().map(|r| r.2.mask.iter().filter(|&&m| m).count()).sum();
    let meta = json!({ "features": inv.ids(), "imputation": imp, "pairs": rows.len() });
    ctx.write_with_meta(&args.out, &bytes, args, &meta)?;
    let languages: Vec<String> = profiles.iter().map(|p| p.language.clone()).collect();
    if let Some(path) = &args.average_out {
        let table = LanguageTable::new(languages.clone(), languages.clone(), avg)?;
        let bytes = csv_bytes(|buf| Ok(table.write_csv(buf, "language")?))?;
        ctx.write_with_meta(path, &bytes, args, &json!({ "measure": "wals-average" }))?;
    }
    Ok(json!({ "languages": languages.len(), "pairs": rows.len(), "imputed_cells": imputed }))
}

#[derive(Debug, Args, Serialize)]
pub struct GbdtArgs {
    #[arg(long, env = "LANGDIST_N_ESTIMATORS", default_value_t = 100)]
    pub n_estimators: usize,
    #[arg(long, env = "LANGDIST_MAX_DEPTH", default_value_t = 3)]
    pub max_depth: usize,
    #[arg(long, env = "LANGDIST_GBDT_LEARNING_RATE", default_value_t = 0.1)]
    pub learning_rate: f64,
    #[arg(long, env = "LANGDIST_MIN_SAMPLES_LEAF", default_value_t = 1)]
    pub min_samples_leaf: usize,
}

impl GbdtArgs {
    fn config(&self) -> GbdtConfig {
        GbdtConfig {
            n_estimators: self.n_estimators,
            max_depth: self.max_depth,
            learning_rate: self.learning_rate,
            min_samples_leaf: self.min_samples_leaf,
        }
    }
}

/// Feature rows for every unordered language pair found in both the WALS data and the target table.
struct PairData {
    pairs: Vec<(String, String)>,
    raw: Vec<Vec<Option<f64>>>,
    y: Vec<f64>,
}

impl PairData {
    fn build(profiles: &[WalsProfile], inv: &FeatureInventory, target: &LanguageTable) -> Result<Self> {
        let mut langs: Vec<&WalsProfile> =
            profiles.iter().filter(|p| target.rows.contains(&p.language) && target.cols.contains(&p.language)).collect();
        langs.sort_by(|a, b| a.language.cmp(&b.language));
        let mut out = PairData { pairs: Vec::new(), raw: Vec::new(), y: Vec::new() };
        for (i, a) in langs.iter().enumerate() {
            for b in &langs[i + 1..] {
                let Some(t) = target.get(&a.language, &b.language).or_else(|| target.get(&b.language, &a.language))
                else {
                    continue;
                };
                out.pairs.push((a.language.clone(), b.language.clone()));
                out.raw.push(raw_feature_distances(a, b, inv)?);
                out.y.push(t);
            }
        }
        if out.pairs.len() < 2 {
            return Err(CliError::Input(format!(
                "only {} language pairs are covered by both the WALS data and the target",
                out.pairs.len()
            )));
        }
        Ok(out)
    }

    fn rows(&self, inv: &FeatureInventory, imp: &Imputation) -> Result<Vec<Vec<f64>>> {
        Ok(self
            .raw
            .iter()
            .map(|r| imp.apply(inv, r).map(|v| v.distances))
            .collect::<Result<_, _>>()?)
    }
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub typology: TypologyArgs,
    /// Distance matrix CSV with the regression targets
    #[arg(long)]
    pub target: String,
    /// Model JSON to write
    #[arg(long)]
    pub out: String,
    #[command(flatten)]
    pub gbdt: GbdtArgs,
}

fn prepare(ctx: &mut Ctx, t: &TypologyArgs, target: &str) -> Result<(FeatureInventory, Imputation, PairData)> {
    let inv = load_inventory(ctx, t.inventory.as_deref())?;
    let profiles = load_wals(ctx, &t.wals)?;
    let table = ctx.table(target)?;
    let data = PairData::build(&profiles, &inv, &table)?;
    let imp = imputation_for(t.imputation, || Ok(ImputationTable::fit(&inv, &data.raw)))?;
    Ok((inv, imp, data))
}

pub fn train_regressor(ctx: &mut Ctx, args: &TrainArgs) -> Result<Value> {
    let (inv, imp, data) = prepare(ctx, &args.typology, &args.target)?;
    let x = data.rows(&inv, &imp)?;
    let model = fit_gbdt(&x, &data.y, inv.ids().to_vec(), Some(imp), &args.gbdt.config())?;
    let mut languages: Vec<&String> = data.pairs.iter().flat_map(|(a, b)| [a, b]).collect();
    languages.sort();
    languages.dedup();
    let summary = json!({
        "pairs": data.pairs.len(),
        "languages": languages.len(),
        "train_mse": model.train_mse.last(),
    });
    let result = json!({ "model": model, "languages": languages, "pairs": data.pairs });
    let env = ctx.envelope(args, &result)?;
    ctx.write_json(&args.out, &env)?;
    Ok(summary)
}

#[derive(Debug, Args, Serialize)]
pub struct CrossValidateArgs {
    #[command(flatten)]
    pub typology: TypologyArgs,
    #[arg(long)]
    pub target: String,
    /// Report JSON to write
    #[arg(long)]
    pub out: String,
    #[arg(long, env = "LANGDIST_FOLDS", default_value_t = 10)]
    pub folds: usize,
    /// Hold out all pairs of one language at a time instead of k random folds
    #[arg(long)]
    pub leave_one_language_out: bool,
    #[command(flatten)]
    pub gbdt: GbdtArgs,
}

pub fn cross_validate_cmd(ctx: &mut Ctx, args: &CrossValidateArgs) -> Result<Value> {
    let (inv, imp, data) = prepare(ctx, &args.typology, &args.target)?;
    let x = data.rows(&inv, &imp)?;
    let cfg = args.gbdt.config();
    let (result, summary) = if args.leave_one_language_out {
        let folds = leave_one_language_out(&x, &data.y, &data.pairs, &cfg)?;
        let defined: Vec<f64> = folds.iter().filter_map(|f| f.r2).collect();
        let mean = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
        (json!({ "scheme": "leave-one-language-out", "folds": folds, "r2_mean": mean }), json!({ "r2_mean": mean }))
    } else {
        let rep = cross_validate(&x, &data.y, &cfg, args.folds, ctx.seed)?;
        let s = json!({ "r2_mean": rep.r2_mean });
        (json!({ "scheme": "k-fold", "report": rep }), s)
    };
    let env = ctx.envelope(args, &result)?;
    ctx.write_json(&args.out, &env)?;
    Ok(summary)
}

/// Accepts a train-regressor artifact or a bare model object.
pub fn load_model(ctx: &mut Ctx, path: &str) -> Result<GbdtModel> {
    let v = ctx.json(path)?;
    let inner = v.get("result").and_then(|r| r.get("model")).cloned().unwrap_or(v);
    serde_json::from_value(inner).in_file(path)
}

fn model_parts(m: &GbdtModel) -> Result<(FeatureInventory, Imputation)> {
    let inv = FeatureInventory::new(m.feature_ids.clone())?;
    let imp = m
        .imputation
        .clone()
        .ok_or_else(|| CliError::Input("model carries no imputation rule".into()))?;
    Ok((inv, imp))
}

#[derive(Debug, Args, Serialize)]
pub struct ImportanceArgs {
    /// Model JSON from train-regressor
    #[arg(long)]
    pub model: String,
    #[arg(long)]
    pub wals: String,
    #[arg(long)]
    pub target: String,
    /// Importance CSV to write
    #[arg(long)]
    pub out: String,
    #[arg(long, env = "LANGDIST_REPEATS", default_value_t = 30)]
    pub repeats: usize,
}

pub fn importance(ctx: &mut Ctx, args: &ImportanceArgs) -> Result<Value> {
    let model = load_model(ctx, &args.model)?;
    let (inv, imp) = model_parts(&model)?;
    let profiles = load_wals(ctx, &args.wals)?;
    let table = ctx.table(&args.target)?;
    let data = PairData::build(&profiles, &inv, &table)?;
    let x = data.rows(&inv, &imp)?;
    let perm = permutation_importance(&model, &x, &data.y, args.repeats, ctx.seed)?;
    let gain = impurity_importance(&model);
    let order = rank_features(&perm.mean);
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Input(format!("csv: {e}"));
    wtr.write_record(["rank", "feature", "permutation_mean", "permutation_std", "impurity"]).map_err(csv_err)?;
    for (r, &f) in order.iter().enumerate() {
        wtr.write_record([
            (r + 1).to_string(),
            inv.ids()[f].clone(),
            perm.mean[f].to_string(),
            perm.std[f].to_string(),
            gain[f].to_string(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = wtr.into_inner().map_err(|e| CliError::Input(e.to_string()))?;
    let top: Vec<&String> = order.iter().take(5).map(|&f| &inv.ids()[f]).collect();
    let meta = json!({ "baseline_r2": perm.baseline_r2, "repeats": perm.repeats, "pairs": data.pairs.len() });
    ctx.write_with_meta(&args.out, &bytes, args, &meta)?;
    Ok(json!({ "baseline_r2": perm.baseline_r2, "top_features": top }))
}

#[derive(Debug, Args, Serialize)]
pub struct SelectSourceArgs {
    #[arg(long)]
    pub model: String,
    #[arg(long)]
    pub wals: String,
    /// Target language code
    #[arg(long)]
    pub target: String,
    /// Candidate source languages; defaults to every other language in the WALS data
    #[arg(long, value_delimiter = ',')]
    pub candidates: Option<Vec<String>>,
    /// Ranking JSON to write
    #[arg(long)]
    pub out: String,
}

pub fn select_source_cmd(ctx: &mut Ctx, args: &SelectSourceArgs) -> Result<Value> {
    let model = load_model(ctx, &args.model)?;
    let (inv, imp) = model_parts(&model)?;
    let profiles = load_wals(ctx, &args.wals)?;
    let target = profile(&profiles, &args.target)?;
    let candidates: Vec<WalsProfile> = match &args.candidates {
        Some(list) => list.iter().map(|l| profile(&profiles, l).cloned()).collect::<Result<_>>()?,
        None => profiles.iter().filter(|p| p.language != args.target).cloned().collect(),
    };
    let ranking = select_source(&model, &inv, &imp, target, &candidates)?;
    let result = json!({ "target": args.target, "ranking": ranking });
    let env = ctx.envelope(args, &result)?;
    ctx.write_json(&args.out, &env)?;
    Ok(json!({ "target": args.target, "best": ranking.first().map(|r| &r.language) }))
}
