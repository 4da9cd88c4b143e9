//! Correlation, clustering, LAS drop and ranking quality.

use std::collections::HashMap;
use std::str::FromStr;

use clap::{Args, ValueEnum};
use langdist::analysis::{
    agglomerative_cluster, compare_measures, las_drop, min_shift, ndcg_at_k, spearman_exact_p, write_scatter,
    DistanceMatrix, LanguageTable, Linkage, MatrixMeta, PairSelection, MAX_EXACT_N,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::context::{csv_bytes, Ctx};
use crate::error::{CliError, InFile, Result};

/// `upper`, `off-diagonal` or `row:LANG`.
#[derive(Debug, Clone, Serialize)]
#[serde(transparent)]
pub struct Selection(pub PairSelection);

impl FromStr for Selection {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "upper" => Ok(Self(PairSelection::UpperTriangle)),
            "off-diagonal" => Ok(Self(PairSelection::OffDiagonal)),
            _ => match s.strip_prefix("row:") {
                Some(l) if !l.is_empty() => Ok(Self(PairSelection::Row(l.to_owned()))),
                _ => Err(format!("expected upper, off-diagonal or row:LANG, got {s:?}")),
            },
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct CorrelateArgs {
    /// First language table CSV
    #[arg(long)]
    pub a: String,
    /// Second language table CSV
    #[arg(long)]
    pub b: String,
    #[arg(long, env = "LANGDIST_SELECTION", default_value = "upper")]
    pub selection: Selection,
    /// Add the exact permutation p-value (at most 10 pairs)
    #[arg(long)]
    pub exact_p: bool,
    /// Report JSON to write
    #[arg(long)]
    pub out: Option<String>,
    /// Scatter CSV of the compared cells
    #[arg(long)]
    pub scatter_out: Option<String>,
}

pub fn correlate(ctx: &mut Ctx, args: &CorrelateArgs) -> Result<Value> {
    let a = ctx.table(&args.a)?;
    let b = ctx.table(&args.b)?;
    let cmp = compare_measures(&a, &b, &args.selection.0)?;
    let exact_p = if args.exact_p {
        if cmp.rows.len() > MAX_EXACT_N {
            return Err(CliError::Input(format!(
                "exact p-value needs at most {MAX_EXACT_N} pairs, selection has {}",
                cmp.rows.len()
            )));
        }
        let xs: Vec<f64> = cmp.rows.iter().map(|r| r.x).collect();
        let ys: Vec<f64> = cmp.rows.iter().map(|r| r.y).collect();
        Some(spearman_exact_p(&xs, &ys)?)
    } else {
        None
    };
    let summary = json!({ "rho": cmp.correlation.rho, "p_value": cmp.correlation.p_value, "exact_p": exact_p, "n": cmp.correlation.n });
    if let Some(path) = &args.out {
        let result = json!({ "correlation": cmp.correlation, "exact_p": exact_p, "rows": cmp.rows });
        let env = ctx.envelope(args, &result)?;
        ctx.write_json(path, &env)?;
    }
    if let Some(path) = &args.scatter_out {
        let bytes = csv_bytes(|buf| Ok(write_scatter(buf, &cmp.rows)?))?;
        ctx.write_with_meta(path, &bytes, args, &summary)?;
    }
    Ok(summary)
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinkageArg {
    Single,
    Complete,
    Average,
}

#[derive(Debug, Args, Serialize)]
pub struct ClusterArgs {
    /// Symmetric distance matrix CSV
    #[arg(long)]
    pub matrix: String,
    #[arg(long, value_enum, env = "LANGDIST_LINKAGE", default_value = "average")]
    pub linkage: LinkageArg,
    /// Newick tree to write
    #[arg(long)]
    pub out: String,
}

pub fn cluster(ctx: &mut Ctx, args: &ClusterArgs) -> Result<Value> {
    let table = ctx.table(&args.matrix)?;
    let m = DistanceMatrix::from_table(&table, MatrixMeta::default()).in_file(&args.matrix)?;
    let linkage = match args.linkage {
        LinkageArg::Single => Linkage::Single,
        LinkageArg::Complete => Linkage::Complete,
        LinkageArg::Average => Linkage::Average,
    };
    let tree = agglomerative_cluster(&m, linkage)?;
    let mut newick = tree.newick();
    newick.push('\n');
    let first = tree.merges.first().map(|mg| {
        let mut both = tree.members(mg.left);
        both.extend(tree.members(mg.right));
        both
    });
    ctx.write_with_meta(&args.out, newick.as_bytes(), args, &tree)?;
    Ok(json!({ "leaves": tree.leaves.len(), "first_merge": first, "newick": newick.trim_end() }))
}

#[derive(Debug, Args, Serialize)]
pub struct DropArgs {
    /// LAS table: rows are source languages, columns target languages, values in 0..100
    #[arg(long)]
    pub las: String,
    /// LAS-drop CSV to write
    #[arg(long)]
    pub out: String,
}

pub fn drop_cmd(ctx: &mut Ctx, args: &DropArgs) -> Result<Value> {
    let las = ctx.table(&args.las)?;
    let d = las_drop(&las).in_file(&args.las)?;
    let bytes = csv_bytes(|buf| Ok(d.write_csv(buf, "source")?))?;
    ctx.write_with_meta(&args.out, &bytes, args, &json!({ "measure": "las-drop" }))?;
    Ok(json!({ "sources": d.rows.len(), "targets": d.cols.len() }))
}

#[derive(Debug, Args, Serialize)]
pub struct NdcgArgs {
    /// Predicted ranking: select-source output, `{target, ranking}`, or a JSON array
    #[arg(long)]
    pub pred: String,
    /// LAS table: rows are source languages, columns target languages
    #[arg(long)]
    pub gold: String,
    /// Target column; defaults to the prediction's target or the table's only column
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long, env = "LANGDIST_NDCG_K", default_value_t = 3)]
    pub k: usize,
    /// Shift relevances so the smallest is 0
    #[arg(long)]
    pub min_shift: bool,
    #[arg(long)]
    pub out: Option<String>,
}

fn ranking_entry(v: &Value) -> Option<(Option<u64>, String)> {
    match v {
        Value::String(s) => Some((None, s.clone())),
        Value::Object(o) => {
            let lang = o.get("language")?.as_str()?.to_owned();
            Some((o.get("rank").and_then(Value::as_u64), lang))
        }
        _ => None,
    }
}

/// Candidate order and optional target from any of the accepted prediction shapes.
fn parse_prediction(v: &Value) -> std::result::Result<(Vec<String>, Option<String>), String> {
    let body = v.get("result").unwrap_or(v);
    let (list, target) = match body {
        Value::Array(a) => (a, None),
        Value::Object(o) => (
            o.get("ranking").and_then(Value::as_array).ok_or("prediction object has no `ranking` array")?,
            o.get("target").and_then(Value::as_str).map(str::to_owned),
        ),
        _ => return Err("prediction must be an array or an object".into()),
    };
    let mut entries: Vec<(Option<u64>, String)> = list
        .iter()
        .map(|e| ranking_entry(e).ok_or_else(|| format!("unrecognized ranking entry {e}")))
        .collect::<std::result::Result<_, _>>()?;
    if entries.iter().all(|e| e.0.is_some()) {
        entries.sort_by_key(|e| e.0);
    }
    Ok((entries.into_iter().map(|e| e.1).collect(), target))
}

fn pick_target(args: &NdcgArgs, from_pred: Option<String>, gold: &LanguageTable) -> Result<String> {
    if let Some(t) = args.target.clone().or(from_pred) {
        return Ok(t);
    }
    match gold.cols.as_slice() {
        [only] => Ok(only.clone()),
        _ => Err(CliError::Input("gold table has several columns; pass --target".into())),
    }
}

pub fn ndcg(ctx: &mut Ctx, args: &NdcgArgs) -> Result<Value> {
    let pred = ctx.json(&args.pred)?;
    let (order, pred_target) =
        parse_prediction(&pred).map_err(|m| CliError::InFile { path: args.pred.clone(), inner: Box::new(CliError::Input(m)) })?;
    let gold = ctx.table(&args.gold)?;
    let target = pick_target(args, pred_target, &gold)?;
    if !gold.cols.contains(&target) {
        return Err(CliError::Input(format!("target {target:?} is not a column of {}", args.gold)));
    }
    let mut relevance = HashMap::new();
    for c in &order {
        let v = gold
            .get(c, &target)
            .ok_or_else(|| CliError::Input(format!("no gold value for candidate {c:?} on target {target:?}")))?;
        relevance.insert(c.clone(), v);
    }
    if args.min_shift {
        relevance = min_shift(&relevance);
    }
    let score = ndcg_at_k(&order, &relevance, args.k)?;
    let summary = json!({ "target": target, "k": args.k, "ndcg": score, "candidates": order.len() });
    if let Some(path) = &args.out {
        let env = ctx.envelope(args, &json!({ "ndcg": score, "target": target, "order": order }))?;
        ctx.write_json(path, &env)?;
    }
    Ok(summary)
}
