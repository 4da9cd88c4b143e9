//! CoNLL-U treebank ingestion and head-dependent relation extraction.
//!
//! Only the columns needed downstream are kept (ID, FORM, UPOS, HEAD, DEPREL).
//! Multiword-token ranges (`3-4`) and empty nodes (`5.1`) are skipped, so every
//! sentence is a list of syntactic words indexed `1..=n`.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The 37 universal dependency relations of UD v2.
pub const UD_RELATIONS: [&str; 37] = [
    "acl", "advcl", "advmod", "amod", "appos", "aux", "case", "cc", "ccomp", "clf", "compound",
    "conj", "cop", "csubj", "dep", "det", "discourse", "dislocated", "expl", "fixed", "flat",
    "goeswith", "iobj", "list", "mark", "nmod", "nsubj", "nummod", "obj", "obl", "orphan",
    "parataxis", "punct", "reparandum", "root", "vocative", "xcomp",
];

/// True for the 36 universal relations that hold between two words (everything but `root`).
pub fn is_word_relation(label: &str) -> bool {
    label != "root" && UD_RELATIONS.binary_search(&label).is_ok()
}

/// Drops a language-specific subtype: `obl:tmod` -> `obl`.
pub fn universal_label(deprel: &str) -> &str {
    deprel.split(':').next().unwrap_or(deprel)
}

#[derive(Debug, Error, PartialEq)]
pub enum TreebankError {
    #[error("line {line}: expected 10 tab-separated columns, found {found}")]
    ColumnCount { line: usize, found: usize },
    #[error("line {line}: invalid token id {value:?}")]
    TokenId { line: usize, value: String },
    #[error("line {line}: non-integer head {value:?}")]
    Head { line: usize, value: String },
    #[error("line {line}: empty dependency relation")]
    EmptyDeprel { line: usize },
    #[error("line {line}: token index {found} out of sequence (expected {expected})")]
    NonContiguous { line: usize, expected: usize, found: usize },
    #[error("sentence {sentence:?}: head {head} of token {index} exceeds sentence length {len}")]
    HeadOutOfRange { sentence: String, index: usize, head: usize, len: usize },
    #[error("sentence {sentence:?}: expected exactly one root, found {roots}")]
    RootCount { sentence: String, roots: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub index: usize,
    pub form: String,
    pub upos: String,
    /// Index of the head word; 0 marks the root.
    pub head: usize,
    pub deprel: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub id: String,
    pub tokens: Vec<Token>,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Treebank {
    pub language: String,
    pub sentences: Vec<Sentence>,
    /// Raw DEPREL values on non-root arcs.
    pub label_inventory: BTreeSet<String>,
}

impl Treebank {
    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }

    /// Relation labels as they come out of [`extract_relations`] with the same `strip_subtypes`.
    pub fn relation_labels(&self, strip_subtypes: bool) -> BTreeSet<String> {
        self.label_inventory
            .iter()
            .map(|l| if strip_subtypes { universal_label(l) } else { l.as_str() })
            .filter(|l| is_word_relation(universal_label(l)))
            .map(str::to_owned)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RelationInstance {
    pub sentence_id: String,
    pub head_index: usize,
    pub dep_index: usize,
    pub label: String,
}

/// A dependency arc dropped during extraction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Reject {
    pub sentence_id: String,
    pub dep_index: usize,
    pub deprel: String,
}

#[derive(Debug, Clone, Default)]
pub struct Extraction {
    pub instances: Vec<RelationInstance>,
    pub rejects: Vec<Reject>,
}

/// Parses CoNLL-U text into a [`Treebank`].
pub fn parse_conllu(text: &str, language: &str) -> Result<Treebank, TreebankError> {
    let mut sentences = Vec::new();
    let mut inventory = BTreeSet::new();
    let mut pending_id: Option<String> = None;
    let mut tokens: Vec<Token> = Vec::new();
    let mut counter = 0usize;

    let mut finish = |tokens: &mut Vec<Token>, id: &mut Option<String>| -> Result<(), TreebankError> {
        if tokens.is_empty() {
            *id = None;
            return Ok(());
        }
        counter += 1;
        let id = id.take().unwrap_or_else(|| counter.to_string());
        let sentence = Sentence { id, tokens: std::mem::take(tokens) };
        check_sentence(&sentence)?;
        for t in &sentence.tokens {
            if t.head != 0 {
                inventory.insert(t.deprel.clone());
            }
        }
        sentences.push(sentence);
        Ok(())
    };

    for (lineno, raw) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            finish(&mut tokens, &mut pending_id)?;
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((key, value)) = comment.split_once('=') {
                if key.trim() == "sent_id" {
                    pending_id = Some(value.trim().to_owned());
                }
            }
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(TreebankError::ColumnCount { line: line_no, found: cols.len() });
        }
        let id = cols[0];
        if id.contains('-') || id.contains('.') {
            continue;
        }
        let index: usize = id
            .parse()
            .ok()
            .filter(|&i| i >= 1)
            .ok_or_else(|| TreebankError::TokenId { line: line_no, value: id.to_owned() })?;
        if index != tokens.len() + 1 {
            return Err(TreebankError::NonContiguous {
                line: line_no,
                expected: tokens.len() + 1,
                found: index,
            });
        }
        let head: usize = cols[6]
            .parse()
            .map_err(|_| TreebankError::Head { line: line_no, value: cols[6].to_owned() })?;
        let deprel = cols[7];
        if deprel.is_empty() || deprel == "_" {
            return Err(TreebankError::EmptyDeprel { line: line_no });
        }
        tokens.push(Token {
            index,
            form: cols[1].to_owned(),
            upos: cols[3].to_owned(),
            head,
            deprel: deprel.to_owned(),
        });
    }
    finish(&mut tokens, &mut pending_id)?;

    Ok(Treebank { language: language.to_owned(), sentences, label_inventory: inventory })
}

fn check_sentence(s: &Sentence) -> Result<(), TreebankError> {
    let len = s.tokens.len();
    let mut roots = 0;
    for t in &s.tokens {
        if t.head > len {
            return Err(TreebankError::HeadOutOfRange {
                sentence: s.id.clone(),
                index: t.index,
                head: t.head,
                len,
            });
        }
        if t.head == 0 {
            roots += 1;
        }
    }
    if roots != 1 {
        return Err(TreebankError::RootCount { sentence: s.id.clone(), roots });
    }
    Ok(())
}

/// One instance per non-root token, in treebank order.
///
/// Labels outside the 36 word-level UD relations (after optional subtype
/// stripping, the universal part is what gets checked) are moved to `rejects`.
pub fn extract_relations(tb: &Treebank, strip_subtypes: bool) -> Extraction {
    let mut out = Extraction::default();
    for s in &tb.sentences {
        for t in &s.tokens {
            if t.head == 0 {
                continue;
            }
            let universal = universal_label(&t.deprel);
            if !is_word_relation(universal) {
                out.rejects.push(Reject {
                    sentence_id: s.id.clone(),
                    dep_index: t.index,
                    deprel: t.deprel.clone(),
                });
                continue;
            }
            let label = if strip_subtypes { universal } else { t.deprel.as_str() };
            out.instances.push(RelationInstance {
                sentence_id: s.id.clone(),
                head_index: t.head,
                dep_index: t.index,
                label: label.to_owned(),
            });
        }
    }
    out
}

/// Serializes a treebank as CoNLL-U; columns the model does not keep are written as `_`.
pub fn write_conllu<W: Write>(mut w: W, tb: &Treebank) -> std::io::Result<()> {
    for s in &tb.sentences {
        writeln!(w, "# sent_id = {}", s.id)?;
        for t in &s.tokens {
            let form = if t.form.is_empty() { "_" } else { t.form.as_str() };
            let upos = if t.upos.is_empty() { "_" } else { t.upos.as_str() };
            writeln!(w, "{}\t{form}\t_\t{upos}\t_\t_\t{}\t{}\t_\t_", t.index, t.head, t.deprel)?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Writes the tab-separated relation-pairs file (with a header line).
pub fn write_relation_pairs<W: Write>(mut w: W, instances: &[RelationInstance]) -> std::io::Result<()> {
    writeln!(w, "sentence_id\thead_index\tdep_index\tlabel")?;
    for r in instances {
        writeln!(w, "{}\t{}\t{}\t{}", r.sentence_id, r.head_index, r.dep_index, r.label)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreebankSummary {
    pub language: String,
    pub sentences: usize,
    pub tokens: usize,
    pub relations: usize,
    pub rejected: usize,
    pub label_histogram: BTreeMap<String, usize>,
}

pub fn summarize(tb: &Treebank, extraction: &Extraction) -> TreebankSummary {
    let mut label_histogram = BTreeMap::new();
    for r in &extraction.instances {
        *label_histogram.entry(r.label.clone()).or_insert(0) += 1;
    }
    TreebankSummary {
        language: tb.language.clone(),
        sentences: tb.sentences.len(),
        tokens: tb.token_count(),
        relations: extraction.instances.len(),
        rejected: extraction.rejects.len(),
        label_histogram,
    }
}
