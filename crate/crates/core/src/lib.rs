//! Syntactic distance between languages measured as an optimal transport
//! distance between labeled distributions of grammatical-relation vectors,
//! together with the typological and statistical tooling used to validate
//! and predict it.
//!
//! Pipeline, module by module:
//!
//! - [`treebank`]: CoNLL-U parsing and head/dependent relation extraction
//! - [`embedstore`]: LDEB embedding files, relation vectors, labeled datasets
//! - [`otdd`]: Sinkhorn solver and the optimal transport dataset distance
//! - [`probe`]: linear relation classifier over relation vectors
//! - [`typology`]: formal-parameter Jaccard and WALS cosine feature distances
//! - [`regress`]: gradient-boosted trees, cross-validation, importances, source selection
//! - [`analysis`]: Spearman, LAS drop, NDCG, clustering, PCA, measure comparison

// `!(x > 0.0)` is used on purpose so NaN lands on the rejecting side
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod embedstore;
pub mod otdd;
pub mod probe;
pub mod regress;
pub mod rng;
pub mod treebank;
pub mod typology;
