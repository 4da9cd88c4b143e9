//! Treebank parsing, dataset assembly, probing and PCA export.

use clap::Args;
use langdist::analysis::{pca_project, DEFAULT_PCA_DIMS};
use langdist::embedstore::{assemble_dataset, read_embeddings, write_dataset, Sampling};
use langdist::probe::{probe_sweep, ProbeSchedule, DEFAULT_STRENGTHS};
use langdist::treebank::{extract_relations, parse_conllu, summarize, write_relation_pairs};
use serde::Serialize;
use serde_json::{json, Value};

use crate::context::Ctx;
use crate::error::{CliError, InFile, Result};

#[derive(Debug, Args, Serialize)]
pub struct ParseTreebankArgs {
    /// CoNLL-U file
    #[arg(long)]
    pub input: String,
    /// Language code recorded with the treebank
    #[arg(long)]
    pub language: String,
    /// Relation-pair TSV to write
    #[arg(long)]
    pub out: String,
    /// Keep relation subtypes such as `nsubj:pass`
    #[arg(long, env = "LANGDIST_KEEP_SUBTYPES")]
    pub keep_subtypes: bool,
}

pub fn parse_treebank(ctx: &mut Ctx, args: &ParseTreebankArgs) -> Result<Value> {
    let text = ctx.read_text(&args.input)?;
    let tb = parse_conllu(&text, &args.language).in_file(&args.input)?;
    let extraction = extract_relations(&tb, !args.keep_subtypes);
    let mut tsv = Vec::new();
    write_relation_pairs(&mut tsv, &extraction.instances).map_err(|source| CliError::Io { path: args.out.clone(), source })?;
    let summary = summarize(&tb, &extraction);
    let meta = json!({ "summary": summary, "rejects": extraction.rejects });
    ctx.write_with_meta(&args.out, &tsv, args, &meta)?;
    Ok(serde_json::to_value(summary)?)
}

#[derive(Debug, Args, Serialize)]
pub struct BuildDatasetArgs {
    /// CoNLL-U treebank
    #[arg(long)]
    pub treebank: String,
    /// LDEB embeddings aligned with the treebank
    #[arg(long)]
    pub embeddings: String,
    /// LDDS dataset to write
    #[arg(long)]
    pub out: String,
    #[arg(long, env = "LANGDIST_MAX_ITEMS", default_value_t = 5000)]
    pub max_items: usize,
    #[arg(long, env = "LANGDIST_PER_LABEL_MIN", default_value_t = 5)]
    pub per_label_min: usize,
    #[arg(long, env = "LANGDIST_KEEP_SUBTYPES")]
    pub keep_subtypes: bool,
}

pub fn build_dataset(ctx: &mut Ctx, args: &BuildDatasetArgs) -> Result<Value> {
    let bytes = ctx.read(&args.embeddings)?;
    let es = read_embeddings(bytes.as_slice()).in_file(&args.embeddings)?;
    let text = ctx.read_text(&args.treebank)?;
    let tb = parse_conllu(&text, &es.language).in_file(&args.treebank)?;
    let sampling = Sampling { max_items: args.max_items, per_label_min: args.per_label_min, seed: ctx.seed };
    let ds = assemble_dataset(&tb, &es, &sampling, !args.keep_subtypes)?;
    let mut out = Vec::new();
    write_dataset(&mut out, &ds)?;
    let summary = json!({
        "language": ds.language,
        "model_id": ds.model_id,
        "layer": ds.layer,
        "dim": ds.dim,
        "items": ds.len(),
        "label_counts": ds.label_counts(),
    });
    ctx.write_with_meta(&args.out, &out, &json!({ "args": args, "sampling": sampling }), &summary)?;
    Ok(summary)
}

#[derive(Debug, Args, Serialize)]
pub struct ProbeArgs {
    /// LDDS training dataset
    #[arg(long)]
    pub train: String,
    /// LDDS evaluation dataset
    #[arg(long)]
    pub eval: String,
    /// Report JSON to write
    #[arg(long)]
    pub out: String,
    /// Also write the best-scoring model as JSON
    #[arg(long)]
    pub model_out: Option<String>,
    /// Comma-separated L2 strengths
    #[arg(long, value_delimiter = ',', env = "LANGDIST_STRENGTHS")]
    pub strengths: Option<Vec<f64>>,
    #[arg(long, env = "LANGDIST_MAX_EPOCHS", default_value_t = 10_000)]
    pub max_epochs: usize,
    #[arg(long, env = "LANGDIST_PATIENCE", default_value_t = 5)]
    pub patience: usize,
    #[arg(long, env = "LANGDIST_BATCH_SIZE", default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, env = "LANGDIST_LEARNING_RATE", default_value_t = 0.01)]
    pub learning_rate: f64,
}

pub fn probe(ctx: &mut Ctx, args: &ProbeArgs) -> Result<Value> {
    let train = ctx.dataset(&args.train)?;
    let eval = ctx.dataset(&args.eval)?;
    let strengths = args.strengths.clone().unwrap_or_else(|| DEFAULT_STRENGTHS.to_vec());
    let sched = ProbeSchedule {
        max_epochs: args.max_epochs,
        patience: args.patience,
        batch_size: args.batch_size,
        learning_rate: args.learning_rate,
        seed: ctx.seed,
        ..Default::default()
    };
    let (report, models) = probe_sweep(&train, &eval, &strengths, &sched)?;
    let config = json!({ "args": args, "schedule": sched, "strengths": strengths });
    let env = ctx.envelope(&config, &report)?;
    ctx.write_json(&args.out, &env)?;
    if let Some(path) = &args.model_out {
        // first strength reaching the top accuracy
        let best = (0..models.len())
            .fold(0, |b, i| if report.accuracies[i] > report.accuracies[b] { i } else { b });
        let env = ctx.envelope(&config, &models[best])?;
        ctx.write_json(path, &env)?;
    }
    Ok(json!({
        "language": report.language,
        "layer": report.layer,
        "mean_accuracy": report.mean,
        "ci": [report.ci_low, report.ci_high],
    }))
}

#[derive(Debug, Args, Serialize)]
pub struct PcaExportArgs {
    /// LDDS datasets pooled for the projection
    #[arg(long, num_args = 1.., required = true)]
    pub datasets: Vec<String>,
    /// Projection CSV to write
    #[arg(long)]
    pub out: String,
    #[arg(long, env = "LANGDIST_PCA_DIMS", default_value_t = DEFAULT_PCA_DIMS)]
    pub dims: usize,
}

pub fn pca_export(ctx: &mut Ctx, args: &PcaExportArgs) -> Result<Value> {
    let mut rows = Vec::new();
    let mut x = Vec::new();
    for path in &args.datasets {
        let ds = ctx.dataset(path)?;
        for it in ds.items {
            rows.push((ds.language.clone(), it.label));
            x.push(it.features);
        }
    }
    if x.iter().any(|r| r.len() != x[0].len()) {
        return Err(CliError::Input("datasets differ in dimension".into()));
    }
    let (pca, z) = pca_project(&x, args.dims)?;
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["language".to_string(), "label".to_string()];
    header.extend((1..=args.dims).map(|k| format!("pc{k}")));
    wtr.write_record(&header).map_err(langdist::analysis::AnalysisError::from)?;
    for ((lang, label), zi) in rows.iter().zip(&z) {
        let mut rec = vec![lang.clone(), label.clone()];
        rec.extend(zi.iter().map(|v| v.to_string()));
        wtr.write_record(&rec).map_err(langdist::analysis::AnalysisError::from)?;
    }
    let bytes = wtr.into_inner().map_err(|e| CliError::Input(e.to_string()))?;
    let total: f64 = pca.explained_variance.iter().sum();
    let meta = json!({ "rows": z.len(), "explained_variance": pca.explained_variance, "mean": pca.mean });
    ctx.write_with_meta(&args.out, &bytes, args, &meta)?;
    Ok(json!({ "rows": z.len(), "dims": args.dims, "explained_variance_total": total }))
}
