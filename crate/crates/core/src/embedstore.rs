//! Word-aligned embedding files (LDEB), relation vectors and labeled datasets.
//!
//! LDEB layout, all integers little-endian:
//!
//! ```text
//! magic "LDEB" | version u16 = 1
//! language: u8 length + bytes | model_id: u16 length + bytes
//! layer u8 | dim u32 | sentence_count u32
//! per sentence: sentence_id (u16 length + bytes), word_count u32,
//!               word_count * dim f32 values, row-major
//! ```
//!
//! Labeled datasets are stored in a companion format (LDDS) with f64 features:
//!
//! ```text
//! magic "LDDS" | version u16 = 1
//! language: u8 length + bytes | model_id: u16 length + bytes
//! layer u8 | dim u32 | label_count u16, then each label as u8 length + bytes
//! item_count u32 | per item: label index u16, dim f64 values
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;
use crate::treebank::{extract_relations, RelationInstance, Treebank};

pub const LDEB_MAGIC: &[u8; 4] = b"LDEB";
pub const LDDS_MAGIC: &[u8; 4] = b"LDDS";
pub const FORMAT_VERSION: u16 = 1;
pub const MAX_LAYER: u8 = 12;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("format: {0}")]
    Format(String),
    #[error("truncated record at byte offset {offset}")]
    Truncated { offset: u64 },
    #[error("no embedding for sentence {sentence:?} word {index}")]
    Join { sentence: String, index: usize },
    #[error("language mismatch: treebank {treebank:?} vs embeddings {embeddings:?}")]
    LanguageMismatch { treebank: String, embeddings: String },
    #[error("no relation instance could be joined with embeddings")]
    EmptyDataset,
}

/// Vectors of one sentence, row-major `word_count x dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceVectors {
    pub id: String,
    pub word_count: usize,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub language: String,
    pub model_id: String,
    pub layer: u8,
    pub dim: usize,
    sentences: Vec<SentenceVectors>,
    by_id: HashMap<String, usize>,
}

impl EmbeddingSet {
    pub fn new(language: &str, model_id: &str, layer: u8, dim: usize) -> Result<Self, EmbedError> {
        if layer > MAX_LAYER {
            return Err(EmbedError::Format(format!("layer {layer} outside 0..={MAX_LAYER}")));
        }
        if dim == 0 {
            return Err(EmbedError::Format("dim must be positive".into()));
        }
        Ok(Self {
            language: language.to_owned(),
            model_id: model_id.to_owned(),
            layer,
            dim,
            sentences: Vec::new(),
            by_id: HashMap::new(),
        })
    }

    /// Appends one sentence of `rows.len()` word vectors.
    pub fn push_sentence(&mut self, id: &str, rows: &[Vec<f32>]) -> Result<(), EmbedError> {
        let mut values = Vec::with_capacity(rows.len() * self.dim);
        for r in rows {
            if r.len() != self.dim {
                return Err(EmbedError::Format(format!(
                    "sentence {id:?}: vector of length {} in a dim-{} set",
                    r.len(),
                    self.dim
                )));
            }
            values.extend_from_slice(r);
        }
        self.push_flat(SentenceVectors { id: id.to_owned(), word_count: rows.len(), values })
    }

    fn push_flat(&mut self, s: SentenceVectors) -> Result<(), EmbedError> {
        if s.values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::Format(format!("sentence {:?}: non-finite value", s.id)));
        }
        if self.by_id.insert(s.id.clone(), self.sentences.len()).is_some() {
            return Err(EmbedError::Format(format!("duplicate sentence id {:?}", s.id)));
        }
        self.sentences.push(s);
        Ok(())
    }

    pub fn sentences(&self) -> &[SentenceVectors] {
        &self.sentences
    }

    /// Vector of 1-based word `index` in sentence `sentence_id`.
    pub fn word(&self, sentence_id: &str, index: usize) -> Option<&[f32]> {
        let s = &self.sentences[*self.by_id.get(sentence_id)?];
        if index == 0 || index > s.word_count {
            return None;
        }
        Some(&s.values[(index - 1) * self.dim..index * self.dim])
    }
}

struct Reader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>, EmbedError> {
        let mut buf = vec![0u8; n];
        let mut filled = 0;
        while filled < n {
            match self.inner.read(&mut buf[filled..]) {
                Ok(0) => return Err(EmbedError::Truncated { offset: self.offset + filled as u64 }),
                Ok(k) => filled += k,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        self.offset += n as u64;
        Ok(buf)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], EmbedError> {
        let v = self.bytes(N)?;
        let mut a = [0u8; N];
        a.copy_from_slice(&v);
        Ok(a)
    }

    fn u8(&mut self) -> Result<u8, EmbedError> {
        Ok(self.array::<1>()?[0])
    }

    fn u16(&mut self) -> Result<u16, EmbedError> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32, EmbedError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn string(&mut self, len: usize) -> Result<String, EmbedError> {
        let at = self.offset;
        String::from_utf8(self.bytes(len)?)
            .map_err(|_| EmbedError::Format(format!("invalid UTF-8 string at offset {at}")))
    }

    fn at_eof(&mut self) -> Result<bool, EmbedError> {
        let mut probe = [0u8; 1];
        loop {
            match self.inner.read(&mut probe) {
                Ok(0) => return Ok(true),
                Ok(_) => return Ok(false),
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
    }
}

struct Header {
    language: String,
    model_id: String,
    layer: u8,
    dim: usize,
}

fn read_header<R: Read>(r: &mut Reader<R>, magic: &[u8; 4]) -> Result<Header, EmbedError> {
    let found = r.array::<4>()?;
    if &found != magic {
        return Err(EmbedError::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&found),
            String::from_utf8_lossy(magic)
        )));
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(EmbedError::Format(format!("unsupported version {version}")));
    }
    let n = r.u8()? as usize;
    let language = r.string(n)?;
    let n = r.u16()? as usize;
    let model_id = r.string(n)?;
    let layer = r.u8()?;
    if layer > MAX_LAYER {
        return Err(EmbedError::Format(format!("layer {layer} outside 0..={MAX_LAYER}")));
    }
    let dim = r.u32()? as usize;
    if dim == 0 {
        return Err(EmbedError::Format("dim is zero".into()));
    }
    Ok(Header { language, model_id, layer, dim })
}

fn write_header<W: Write>(
    w: &mut W,
    magic: &[u8; 4],
    language: &str,
    model_id: &str,
    layer: u8,
    dim: usize,
) -> Result<(), EmbedError> {
    let lang = u8::try_from(language.len())
        .map_err(|_| EmbedError::Format("language code longer than 255 bytes".into()))?;
    let model = u16::try_from(model_id.len())
        .map_err(|_| EmbedError::Format("model id longer than 65535 bytes".into()))?;
    let dim = u32::try_from(dim).map_err(|_| EmbedError::Format("dim exceeds u32".into()))?;
    w.write_all(magic)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&[lang])?;
    w.write_all(language.as_bytes())?;
    w.write_all(&model.to_le_bytes())?;
    w.write_all(model_id.as_bytes())?;
    w.write_all(&[layer])?;
    w.write_all(&dim.to_le_bytes())?;
    Ok(())
}

pub fn read_embeddings<R: Read>(input: R) -> Result<EmbeddingSet, EmbedError> {
    let mut r = Reader { inner: input, offset: 0 };
    let h = read_header(&mut r, LDEB_MAGIC)?;
    let mut set = EmbeddingSet::new(&h.language, &h.model_id, h.layer, h.dim)?;
    let count = r.u32()?;
    for _ in 0..count {
        let n = r.u16()? as usize;
        let id = r.string(n)?;
        let word_count = r.u32()? as usize;
        let raw = r.bytes(word_count * h.dim * 4)?;
        let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        set.push_flat(SentenceVectors { id, word_count, values })?;
    }
    if !r.at_eof()? {
        return Err(EmbedError::Format(format!(
            "trailing bytes after {count} sentence records at offset {} (dim {} inconsistent with payload?)",
            r.offset, h.dim
        )));
    }
    Ok(set)
}

pub fn read_embedding_file(path: &Path) -> Result<EmbeddingSet, EmbedError> {
    let f = std::fs::File::open(path)?;
    read_embeddings(std::io::BufReader::new(f))
}

pub fn write_embeddings<W: Write>(mut w: W, set: &EmbeddingSet) -> Result<(), EmbedError> {
    write_header(&mut w, LDEB_MAGIC, &set.language, &set.model_id, set.layer, set.dim)?;
    let count = u32::try_from(set.sentences.len())
        .map_err(|_| EmbedError::Format("too many sentences".into()))?;
    w.write_all(&count.to_le_bytes())?;
    for s in &set.sentences {
        let n = u16::try_from(s.id.len())
            .map_err(|_| EmbedError::Format(format!("sentence id {:?} too long", s.id)))?;
        w.write_all(&n.to_le_bytes())?;
        w.write_all(s.id.as_bytes())?;
        w.write_all(&(s.word_count as u32).to_le_bytes())?;
        for v in &s.values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_embedding_file(path: &Path, set: &EmbeddingSet) -> Result<(), EmbedError> {
    let f = std::fs::File::create(path)?;
    write_embeddings(std::io::BufWriter::new(f), set)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationVector {
    pub features: Vec<f64>,
    pub label: String,
    pub language: String,
}

/// Head minus dependent, computed in f64.
pub fn relation_vector(es: &EmbeddingSet, inst: &RelationInstance) -> Result<RelationVector, EmbedError> {
    let lookup = |index| {
        es.word(&inst.sentence_id, index)
            .ok_or_else(|| EmbedError::Join { sentence: inst.sentence_id.clone(), index })
    };
    let head = lookup(inst.head_index)?;
    let dep = lookup(inst.dep_index)?;
    Ok(RelationVector {
        features: head.iter().zip(dep).map(|(&h, &d)| h as f64 - d as f64).collect(),
        label: inst.label.clone(),
        language: es.language.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sampling {
    pub max_items: usize,
    pub per_label_min: usize,
    pub seed: u64,
}

impl Default for Sampling {
    fn default() -> Self {
        Self { max_items: 5000, per_label_min: 5, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub language: String,
    pub model_id: String,
    pub layer: u8,
    pub dim: usize,
    pub items: Vec<RelationVector>,
    pub label_set: BTreeSet<String>,
}

impl LabeledDataset {
    /// Builds a dataset from `(features, label)` pairs; all features must share one length.
    pub fn from_items(
        language: &str,
        model_id: &str,
        layer: u8,
        items: Vec<(Vec<f64>, String)>,
    ) -> Result<Self, EmbedError> {
        let dim = items.first().map_or(0, |(f, _)| f.len());
        let mut out = Vec::with_capacity(items.len());
        for (features, label) in items {
            if features.len() != dim {
                return Err(EmbedError::Format(format!(
                    "item of length {} in a dim-{dim} dataset",
                    features.len()
                )));
            }
            if features.iter().any(|v| !v.is_finite()) {
                return Err(EmbedError::Format("non-finite feature value".into()));
            }
            out.push(RelationVector { features, label, language: language.to_owned() });
        }
        let label_set = out.iter().map(|r| r.label.clone()).collect();
        Ok(Self {
            language: language.to_owned(),
            model_id: model_id.to_owned(),
            layer,
            dim,
            items: out,
            label_set,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Item counts per label.
    pub fn label_counts(&self) -> BTreeMap<&str, usize> {
        let mut m = BTreeMap::new();
        for it in &self.items {
            *m.entry(it.label.as_str()).or_insert(0) += 1;
        }
        m
    }

    /// Applies a label renaming to every item.
    pub fn relabeled(&self, f: impl Fn(&str) -> String) -> Self {
        let items: Vec<RelationVector> = self
            .items
            .iter()
            .map(|it| RelationVector { label: f(&it.label), ..it.clone() })
            .collect();
        let label_set = items.iter().map(|r| r.label.clone()).collect();
        Self { items, label_set, ..self.clone() }
    }
}

/// Number of items drawn from each label when `total > max_items`.
///
/// Largest-remainder proportional allocation, then every label is raised to
/// `min(per_label_min, available)` by taking items from the labels with the
/// largest allocations.
pub fn allocate(counts: &[usize], max_items: usize, per_label_min: usize) -> Vec<usize> {
    let total: usize = counts.iter().sum();
    if total <= max_items {
        return counts.to_vec();
    }
    let mut alloc: Vec<usize> = counts.iter().map(|&c| c * max_items / total).collect();
    let mut remainders: Vec<(usize, usize)> =
        counts.iter().enumerate().map(|(i, &c)| ((c * max_items) % total, i)).collect();
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut left = max_items - alloc.iter().sum::<usize>();
    for &(_, i) in &remainders {
        if left == 0 {
            break;
        }
        if alloc[i] < counts[i] {
            alloc[i] += 1;
            left -= 1;
        }
    }

    let floor: Vec<usize> = counts.iter().map(|&c| c.min(per_label_min)).collect();
    while let Some(needy) = (0..counts.len()).find(|&i| alloc[i] < floor[i]) {
        let donor = (0..counts.len())
            .filter(|&i| alloc[i] > floor[i])
            .max_by(|&a, &b| alloc[a].cmp(&alloc[b]).then(b.cmp(&a)));
        match donor {
            Some(d) => {
                alloc[d] -= 1;
                alloc[needy] += 1;
            }
            // per_label_min * labels exceeds the cap: keep the cap, minimum cannot be met
            None => break,
        }
    }
    alloc
}

/// Vectorizes every relation of `tb` and draws a label-stratified subsample if needed.
pub fn assemble_dataset(
    tb: &Treebank,
    es: &EmbeddingSet,
    sampling: &Sampling,
    strip_subtypes: bool,
) -> Result<LabeledDataset, EmbedError> {
    if tb.language != es.language {
        return Err(EmbedError::LanguageMismatch {
            treebank: tb.language.clone(),
            embeddings: es.language.clone(),
        });
    }
    let extraction = extract_relations(tb, strip_subtypes);
    let mut vectors = Vec::with_capacity(extraction.instances.len());
    for inst in &extraction.instances {
        match relation_vector(es, inst) {
            Ok(v) => vectors.push(v),
            Err(EmbedError::Join { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    if vectors.is_empty() {
        return Err(EmbedError::EmptyDataset);
    }

    let mut by_label: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, v) in vectors.iter().enumerate() {
        by_label.entry(v.label.clone()).or_default().push(i);
    }
    let counts: Vec<usize> = by_label.values().map(Vec::len).collect();
    let alloc = allocate(&counts, sampling.max_items, sampling.per_label_min);

    let mut rng = rng::substream(sampling.seed, "sampling");
    let mut keep = Vec::with_capacity(alloc.iter().sum());
    for (idx, &n) in by_label.values().zip(&alloc) {
        if n == idx.len() {
            keep.extend_from_slice(idx);
        } else {
            let mut idx = idx.clone();
            idx.shuffle(&mut rng);
            keep.extend_from_slice(&idx[..n]);
        }
    }
    keep.sort_unstable();

    let mut slots: Vec<Option<RelationVector>> = vectors.into_iter().map(Some).collect();
    let items: Vec<RelationVector> = keep.into_iter().filter_map(|i| slots[i].take()).collect();
    let label_set = items.iter().map(|r| r.label.clone()).collect();
    Ok(LabeledDataset {
        language: es.language.clone(),
        model_id: es.model_id.clone(),
        layer: es.layer,
        dim: es.dim,
        items,
        label_set,
    })
}

pub fn write_dataset<W: Write>(mut w: W, ds: &LabeledDataset) -> Result<(), EmbedError> {
    write_header(&mut w, LDDS_MAGIC, &ds.language, &ds.model_id, ds.layer, ds.dim)?;
    let labels: Vec<&String> = ds.label_set.iter().collect();
    let index: HashMap<&str, u16> =
        labels.iter().enumerate().map(|(i, l)| (l.as_str(), i as u16)).collect();
    let n = u16::try_from(labels.len()).map_err(|_| EmbedError::Format("too many labels".into()))?;
    w.write_all(&n.to_le_bytes())?;
    for l in &labels {
        let len = u8::try_from(l.len())
            .map_err(|_| EmbedError::Format(format!("label {l:?} longer than 255 bytes")))?;
        w.write_all(&[len])?;
        w.write_all(l.as_bytes())?;
    }
    w.write_all(&(ds.items.len() as u32).to_le_bytes())?;
    for it in &ds.items {
        let li = index
            .get(it.label.as_str())
            .ok_or_else(|| EmbedError::Format(format!("label {:?} missing from label set", it.label)))?;
        w.write_all(&li.to_le_bytes())?;
        for v in &it.features {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset<R: Read>(input: R) -> Result<LabeledDataset, EmbedError> {
    let mut r = Reader { inner: input, offset: 0 };
    let h = read_header(&mut r, LDDS_MAGIC)?;
    let n_labels = r.u16()? as usize;
    let mut labels = Vec::with_capacity(n_labels);
    for _ in 0..n_labels {
        let n = r.u8()? as usize;
        labels.push(r.string(n)?);
    }
    let count = r.u32()? as usize;
    let mut items = Vec::with_capacity(count);
    for _ in 0..count {
        let at = r.offset;
        let li = r.u16()? as usize;
        let label = labels
            .get(li)
            .ok_or_else(|| EmbedError::Format(format!("label index {li} out of range at offset {at}")))?;
        let raw = r.bytes(h.dim * 8)?;
        let features = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        items.push((features, label.clone()));
    }
    if !r.at_eof()? {
        return Err(EmbedError::Format(format!("trailing bytes at offset {}", r.offset)));
    }
    let mut ds = LabeledDataset::from_items(&h.language, &h.model_id, h.layer, items)?;
    ds.dim = h.dim;
    Ok(ds)
}

pub fn write_dataset_file(path: &Path, ds: &LabeledDataset) -> Result<(), EmbedError> {
    let f = std::fs::File::create(path)?;
    write_dataset(std::io::BufWriter::new(f), ds)
}

pub fn read_dataset_file(path: &Path) -> Result<LabeledDataset, EmbedError> {
    let f = std::fs::File::open(path)?;
    read_dataset(std::io::BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::treebank::parse_conllu;

    fn small_set() -> EmbeddingSet {
        let mut es = EmbeddingSet::new("en", "pretrained", 7, 4).unwrap();
        es.push_sentence("s1", &[vec![1.0, -2.5, 0.125, 3.0e-7], vec![f32::MAX, 0.0, -0.0, 1.0]])
            .unwrap();
        es
    }

    #[test]
    fn empty_file_round_trip() {
        let es = EmbeddingSet::new("en", "m", 0, 8).unwrap();
        let mut buf = Vec::new();
        write_embeddings(&mut buf, &es).unwrap();
        let back = read_embeddings(&buf[..]).unwrap();
        assert!(back.sentences().is_empty());
        assert_eq!(back.dim, 8);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let es = small_set();
        let mut buf = Vec::new();
        write_embeddings(&mut buf, &es).unwrap();
        let back = read_embeddings(&buf[..]).unwrap();
        assert_eq!(back, es);
        let a: Vec<u32> = es.sentences()[0].values.iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = back.sentences()[0].values.iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
        let mut again = Vec::new();
        write_embeddings(&mut again, &back).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn header_layout() {
        let mut buf = Vec::new();
        write_embeddings(&mut buf, &EmbeddingSet::new("en", "m", 3, 2).unwrap()).unwrap();
        let expected: Vec<u8> = [
            &b"LDEB"[..],
            &[1, 0],
            &[2],
            b"en",
            &[1, 0],
            b"m",
            &[3],
            &[2, 0, 0, 0],
            &[0, 0, 0, 0],
        ]
        .concat();
        assert_eq!(buf, expected);
    }

    #[test]
    fn bad_magic() {
        let mut buf = Vec::new();
        write_embeddings(&mut buf, &small_set()).unwrap();
        buf[..4].copy_from_slice(b"XXXX");
        assert!(matches!(read_embeddings(&buf[..]), Err(EmbedError::Format(_))));
    }

    #[test]
    fn truncation_reports_offset() {
        let mut buf = Vec::new();
        write_embeddings(&mut buf, &small_set()).unwrap();
        let cut = buf.len() - 3;
        match read_embeddings(&buf[..cut]) {
            Err(EmbedError::Truncated { offset }) => assert_eq!(offset, cut as u64),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn trailing_bytes_mean_dim_mismatch() {
        let mut buf = Vec::new();
        write_embeddings(&mut buf, &small_set()).unwrap();
        // declare dim 3 instead of 4: records no longer line up with the payload
        let dim_at = 4 + 2 + 1 + 2 + 2 + "pretrained".len() + 1;
        buf[dim_at] = 3;
        assert!(read_embeddings(&buf[..]).is_err());
    }

    #[test]
    fn relation_vector_difference() {
        let mut es = EmbeddingSet::new("xx", "m", 0, 2).unwrap();
        es.push_sentence("s", &[vec![3.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let inst = |h, d| RelationInstance {
            sentence_id: "s".into(),
            head_index: h,
            dep_index: d,
            label: "obj".into(),
        };
        assert_eq!(relation_vector(&es, &inst(1, 2)).unwrap().features, vec![2.0, -1.0]);
        assert_eq!(relation_vector(&es, &inst(2, 1)).unwrap().features, vec![-2.0, 1.0]);
        assert_eq!(relation_vector(&es, &inst(1, 1)).unwrap().features, vec![0.0, 0.0]);
        assert!(matches!(
            relation_vector(&es, &inst(1, 3)),
            Err(EmbedError::Join { index: 3, .. })
        ));
    }

    #[test]
    fn allocation_examples() {
        assert_eq!(allocate(&[900, 100], 100, 5), vec![90, 10]);
        assert_eq!(allocate(&[6, 4], 100, 5), vec![6, 4]);
        assert_eq!(allocate(&[990, 10], 100, 5), vec![95, 5]);
        assert_eq!(allocate(&[998, 2], 100, 5), vec![98, 2]);
        assert_eq!(allocate(&[5, 5, 5], 4, 5).iter().sum::<usize>(), 4);
    }

    fn chain_treebank(n_sent: usize, labels: &[&str]) -> (Treebank, EmbeddingSet) {
        let mut text = String::new();
        let mut es = EmbeddingSet::new("xx", "m", 0, 2).unwrap();
        for s in 0..n_sent {
            text.push_str(&format!("# sent_id = s{s}\n1\tr\t_\tX\t_\t_\t0\troot\t_\t_\n"));
            let mut rows = vec![vec![0.0f32, 0.0]];
            for (k, l) in labels.iter().enumerate() {
                text.push_str(&format!("{}\tw\t_\tX\t_\t_\t1\t{l}\t_\t_\n", k + 2));
                rows.push(vec![s as f32, k as f32]);
            }
            text.push('\n');
            es.push_sentence(&format!("s{s}"), &rows).unwrap();
        }
        (parse_conllu(&text, "xx").unwrap(), es)
    }

    #[test]
    fn assemble_without_sampling() {
        let (tb, es) = chain_treebank(5, &["nsubj", "obj"]);
        let ds = assemble_dataset(&tb, &es, &Sampling { max_items: 100, ..Default::default() }, true)
            .unwrap();
        assert_eq!(ds.len(), 10);
        assert!(ds.label_set.is_subset(&tb.relation_labels(true)));
    }

    #[test]
    fn assemble_stratified_and_deterministic() {
        let mut labels = vec!["nsubj"; 9];
        labels.push("obj");
        let (tb, es) = chain_treebank(100, &labels);
        let cfg = Sampling { max_items: 100, per_label_min: 5, seed: 7 };
        let a = assemble_dataset(&tb, &es, &cfg, true).unwrap();
        let b = assemble_dataset(&tb, &es, &cfg, true).unwrap();
        assert_eq!(a, b);
        let counts = a.label_counts();
        assert_eq!(counts["nsubj"], 90);
        assert_eq!(counts["obj"], 10);
        let c = assemble_dataset(&tb, &es, &Sampling { seed: 8, ..cfg }, true).unwrap();
        assert_ne!(a.items, c.items);
    }

    #[test]
    fn assemble_errors() {
        let (tb, _) = chain_treebank(2, &["obj"]);
        let other = EmbeddingSet::new("yy", "m", 0, 2).unwrap();
        assert!(matches!(
            assemble_dataset(&tb, &other, &Sampling::default(), true),
            Err(EmbedError::LanguageMismatch { .. })
        ));
        let empty = EmbeddingSet::new("xx", "m", 0, 2).unwrap();
        assert!(matches!(
            assemble_dataset(&tb, &empty, &Sampling::default(), true),
            Err(EmbedError::EmptyDataset)
        ));
    }

    #[test]
    fn dataset_file_round_trip() {
        let ds = LabeledDataset::from_items(
            "en",
            "m",
            7,
            vec![(vec![0.1, -3.0], "obj".into()), (vec![1e-300, 2.0], "amod".into())],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_dataset(&mut buf, &ds).unwrap();
        assert_eq!(read_dataset(&buf[..]).unwrap(), ds);
    }
}
