//! `langdist`: syntactic distance pipeline from treebanks and embeddings to
//! typology-based source-language selection.

mod commands;
mod context;
mod error;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use commands::{analysis, data, distance, typology, validate};
use context::Ctx;
use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "langdist", version, about = "Syntactic distance between languages")]
struct Cli {
    /// Seed for every random substream
    #[arg(long, global = true, env = "LANGDIST_SEED", default_value_t = 0)]
    seed: u64,
    /// Worker threads for pairwise work (default: logical cores)
    #[arg(long, global = true, env = "LANGDIST_JOBS")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Extract head/dependent relation pairs from a CoNLL-U file
    ParseTreebank(data::ParseTreebankArgs),
    /// Check input formats and list every problem found
    Validate(validate::ValidateArgs),
    /// Build a labeled relation-vector dataset from a treebank and its embeddings
    BuildDataset(data::BuildDatasetArgs),
    /// Optimal transport distance between two datasets
    Otdd(distance::OtddCmdArgs),
    /// Pairwise distances between several datasets
    DistanceMatrix(distance::DistanceMatrixArgs),
    /// Train and evaluate the linear relation probe over a strength sweep
    Probe(data::ProbeArgs),
    /// Jaccard distances between formal parameter profiles
    FormalDist(typology::FormalDistArgs),
    /// Per-feature WALS distances for every language pair
    WalsDist(typology::WalsDistArgs),
    /// Spearman correlation between two language tables
    Correlate(analysis::CorrelateArgs),
    /// Agglomerative clustering of a distance matrix
    Cluster(analysis::ClusterArgs),
    /// LAS drop relative to in-language performance
    Drop(analysis::DropArgs),
    /// Fit the gradient-boosted regressor from WALS feature distances
    TrainRegressor(typology::TrainArgs),
    /// Cross-validated R² of the regressor
    CrossValidate(typology::CrossValidateArgs),
    /// Permutation and impurity feature importances
    Importance(typology::ImportanceArgs),
    /// Rank candidate source languages for a target
    SelectSource(typology::SelectSourceArgs),
    /// NDCG@k of a predicted ranking against LAS
    Ndcg(analysis::NdcgArgs),
    /// Project pooled relation vectors onto their principal components
    PcaExport(data::PcaExportArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::ParseTreebank(_) => "parse-treebank",
            Command::Validate(_) => "validate",
            Command::BuildDataset(_) => "build-dataset",
            Command::Otdd(_) => "otdd",
            Command::DistanceMatrix(_) => "distance-matrix",
            Command::Probe(_) => "probe",
            Command::FormalDist(_) => "formal-dist",
            Command::WalsDist(_) => "wals-dist",
            Command::Correlate(_) => "correlate",
            Command::Cluster(_) => "cluster",
            Command::Drop(_) => "drop",
            Command::TrainRegressor(_) => "train-regressor",
            Command::CrossValidate(_) => "cross-validate",
            Command::Importance(_) => "importance",
            Command::SelectSource(_) => "select-source",
            Command::Ndcg(_) => "ndcg",
            Command::PcaExport(_) => "pca-export",
        }
    }

    fn run(&self, ctx: &mut Ctx) -> Result<Value, CliError> {
        match self {
            Command::ParseTreebank(a) => data::parse_treebank(ctx, a),
            Command::Validate(a) => validate::validate(ctx, a),
            Command::BuildDataset(a) => data::build_dataset(ctx, a),
            Command::Otdd(a) => distance::otdd(ctx, a),
            Command::DistanceMatrix(a) => distance::distance_matrix(ctx, a),
            Command::Probe(a) => data::probe(ctx, a),
            Command::FormalDist(a) => typology::formal_dist(ctx, a),
            Command::WalsDist(a) => typology::wals_dist(ctx, a),
            Command::Correlate(a) => analysis::correlate(ctx, a),
            Command::Cluster(a) => analysis::cluster(ctx, a),
            Command::Drop(a) => analysis::drop_cmd(ctx, a),
            Command::TrainRegressor(a) => typology::train_regressor(ctx, a),
            Command::CrossValidate(a) => typology::cross_validate_cmd(ctx, a),
            Command::Importance(a) => typology::importance(ctx, a),
            Command::SelectSource(a) => typology::select_source_cmd(ctx, a),
            Command::Ndcg(a) => analysis::ndcg(ctx, a),
            Command::PcaExport(a) => data::pca_export(ctx, a),
        }
    }
}

fn fail(err: &CliError) -> ExitCode {
    let mut body = json!({ "kind": err.kind(), "message": err.to_string() });
    if let Some(p) = err.path() {
        body["path"] = json!(p);
    }
    eprintln!("{}", json!({ "error": body }));
    ExitCode::from(1)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            return fail(&CliError::Input(format!("--jobs: {e}")));
        }
    }
    let mut ctx = Ctx::new(cli.command.name(), cli.seed);
    match cli.command.run(&mut ctx) {
        Ok(summary) => {
            println!("{}", ctx.summary(summary));
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}
