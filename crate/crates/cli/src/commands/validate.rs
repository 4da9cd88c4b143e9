//! Format checks over input files without computing anything.

use std::collections::BTreeMap;

use clap::Args;
use langdist::analysis::{las_drop, DistanceMatrix, LanguageTable, MatrixMeta};
use langdist::embedstore::{read_dataset, read_embeddings};
use langdist::treebank::parse_conllu;
use langdist::typology::{read_parameter_csv, read_wals_csv, FeatureInventory};
use serde::Serialize;
use serde_json::{json, Value};

use crate::context::Ctx;
use crate::error::Result;

#[derive(Debug, Args, Serialize)]
pub struct ValidateArgs {
    /// LDEB embedding files
    #[arg(long, num_args = 1..)]
    pub ldeb: Vec<String>,
    /// Dimension every LDEB file must declare; defaults to the most common one
    #[arg(long)]
    pub expect_dim: Option<usize>,
    /// LDDS dataset files
    #[arg(long, num_args = 1..)]
    pub dataset: Vec<String>,
    /// CoNLL-U treebanks
    #[arg(long, num_args = 1..)]
    pub conllu: Vec<String>,
    /// Long-format WALS CSV
    #[arg(long)]
    pub wals: Option<String>,
    /// Feature inventory checked against the WALS data
    #[arg(long)]
    pub inventory: Option<String>,
    /// Formal parameter CSV
    #[arg(long)]
    pub params: Option<String>,
    /// Symmetric distance matrices
    #[arg(long, num_args = 1..)]
    pub matrix: Vec<String>,
    /// LAS table
    #[arg(long)]
    pub las: Option<String>,
    /// Report JSON to write
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct Problem {
    pub file: String,
    pub message: String,
}

#[derive(Default)]
struct Report {
    checked: Vec<String>,
    problems: Vec<Problem>,
}

impl Report {
    fn problem(&mut self, file: &str, message: impl ToString) {
        self.problems.push(Problem { file: file.to_owned(), message: message.to_string() });
    }

    /// Reads a file, recording a problem instead of failing when it cannot be read.
    fn read(&mut self, ctx: &mut Ctx, path: &str) -> Option<Vec<u8>> {
        self.checked.push(path.to_owned());
        ctx.read(path).map_err(|e| self.problem(path, e)).ok()
    }
}

fn modal(dims: &[usize]) -> Option<usize> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &d in dims {
        *counts.entry(d).or_default() += 1;
    }
    // BTreeMap order makes the smallest dim win ties
    counts.into_iter().fold(None, |best: Option<(usize, usize)>, (d, c)| match best {
        Some((_, bc)) if bc >= c => best,
        _ => Some((d, c)),
    })
    .map(|(d, _)| d)
}

pub fn validate(ctx: &mut Ctx, args: &ValidateArgs) -> Result<Value> {
    let mut rep = Report::default();

    let mut headers = Vec::new();
    for path in &args.ldeb {
        let Some(bytes) = rep.read(ctx, path) else { continue };
        match read_embeddings(bytes.as_slice()) {
            Ok(es) => headers.push((path.clone(), es.language.clone(), es.layer, es.dim)),
            Err(e) => rep.problem(path, e),
        }
    }
    let dims: Vec<usize> = headers.iter().map(|h| h.3).collect();
    if let Some(expected) = args.expect_dim.or_else(|| modal(&dims)) {
        for (path, lang, layer, dim) in &headers {
            if *dim != expected {
                rep.problem(path, format!("{lang} layer {layer} declares dim {dim}, expected {expected}"));
            }
        }
    }

    for path in &args.dataset {
        let Some(bytes) = rep.read(ctx, path) else { continue };
        if let Err(e) = read_dataset(bytes.as_slice()) {
            rep.problem(path, e);
        }
    }

    for path in &args.conllu {
        let Some(bytes) = rep.read(ctx, path) else { continue };
        match String::from_utf8(bytes) {
            Ok(text) => {
                if let Err(e) = parse_conllu(&text, "und") {
                    rep.problem(path, e);
                }
            }
            Err(_) => rep.problem(path, "not UTF-8"),
        }
    }

    let inventory = match &args.inventory {
        Some(path) => rep.read(ctx, path).and_then(|b| {
            let parsed = String::from_utf8(b).map_err(|e| e.to_string()).and_then(|t| {
                FeatureInventory::parse(&t).map_err(|e| e.to_string())
            });
            parsed.map_err(|e| rep.problem(path, e)).ok()
        }),
        None => Some(FeatureInventory::default()),
    };
    if let Some(path) = &args.wals {
        if let Some(bytes) = rep.read(ctx, path) {
            match read_wals_csv(bytes.as_slice()) {
                Ok(profiles) => {
                    if let Some(inv) = &inventory {
                        for f in inv.ids() {
                            if !profiles.iter().any(|p| p.features.contains_key(f)) {
                                rep.problem(path, format!("feature {f} has no values for any language"));
                            }
                        }
                    }
                    for p in &profiles {
                        for (f, v) in &p.features {
                            if !v.iter().any(|&b| b) {
                                rep.problem(path, format!("feature {f} of {} has no value set", p.language));
                            }
                        }
                    }
                }
                Err(e) => rep.problem(path, e),
            }
        }
    }

    if let Some(path) = &args.params {
        if let Some(bytes) = rep.read(ctx, path) {
            match read_parameter_csv(bytes.as_slice()) {
                Ok(profiles) => {
                    if let Some(first) = profiles.first() {
                        let n = first.parameters.len();
                        for p in profiles.iter().filter(|p| p.parameters.len() != n) {
                            rep.problem(path, format!("{} has {} parameters, expected {n}", p.language, p.parameters.len()));
                        }
                    }
                }
                Err(e) => rep.problem(path, e),
            }
        }
    }

    for path in &args.matrix {
        let Some(bytes) = rep.read(ctx, path) else { continue };
        let checked = LanguageTable::read_csv(bytes.as_slice())
            .and_then(|t| DistanceMatrix::from_table(&t, MatrixMeta::default()));
        if let Err(e) = checked {
            rep.problem(path, e);
        }
    }

    if let Some(path) = &args.las {
        if let Some(bytes) = rep.read(ctx, path) {
            if let Err(e) = LanguageTable::read_csv(bytes.as_slice()).and_then(|t| las_drop(&t)) {
                rep.problem(path, e);
            }
        }
    }

    let result = json!({ "valid": rep.problems.is_empty(), "checked": rep.checked, "problems": rep.problems });
    if let Some(path) = &args.out {
        let env = ctx.envelope(args, &result)?;
        ctx.write_json(path, &env)?;
    }
    Ok(result)
}
