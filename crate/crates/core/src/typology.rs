//! Formal-syntax parameter distance and WALS feature distances.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// WALS feature ids used for the feature-distance vector by default.
pub const DEFAULT_WALS_FEATURES: [&str; 116] = [
    "20A", "21A", "21B", "22A", "23A", "24A", "25A", "25B", "26A", "27A", "28A", "29A",
    "30A", "31A", "32A", "33A", "34A", "35A", "36A", "37A", "38A", "39A", "40A", "41A",
    "42A", "43A", "44A", "45A", "46A", "47A", "48A", "49A", "50A", "51A", "52A", "53A",
    "54A", "55A", "56A", "57A", "58A", "58B", "59A", "60A", "61A", "62A", "63A", "64A",
    "65A", "66A", "67A", "68A", "69A", "70A", "71A", "72A", "73A", "74A", "75A", "76A",
    "77A", "78A", "79A", "79B", "80A", "81A", "82A", "83A", "84A", "85A", "86A", "87A",
    "88A", "89A", "90A", "91A", "92A", "93A", "94A", "98A", "99A", "100A", "101A", "102A",
    "103A", "104A", "105A", "106A", "107A", "108A", "108B", "109A", "109B", "110A", "111A", "112A",
    "113A", "114A", "115A", "116A", "117A", "118A", "119A", "120A", "121A", "122A", "123A", "124A",
    "125A", "126A", "127A", "128A", "143A", "143B", "144A", "144B",];

#[derive(Debug, Error)]
pub enum TypologyError {
    #[error("profiles have {a} and {b} parameters")]
    LengthMismatch { a: usize, b: usize },
    #[error("feature {feature} of {language} is defined but has no value set")]
    ZeroVector { language: String, feature: String },
    #[error("unknown feature id {0:?}")]
    UnknownFeature(String),
    #[error("every feature distance is missing")]
    AllMissing,
    #[error("inventory: {0}")]
    Inventory(String),
    #[error("line {line}: {message}")]
    Format { line: u64, message: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterProfile {
    pub language: String,
    /// `None` marks a parameter left undefined for this language.
    pub parameters: Vec<Option<bool>>,
}

/// Jaccard distance over slots defined in both profiles; 0 when no slot is set in either.
pub fn jaccard_distance(a: &ParameterProfile, b: &ParameterProfile) -> Result<f64, TypologyError> {
    if a.parameters.len() != b.parameters.len() {
        return Err(TypologyError::LengthMismatch { a: a.parameters.len(), b: b.parameters.len() });
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (x, y) in a.parameters.iter().zip(&b.parameters) {
        if let (Some(x), Some(y)) = (x, y) {
            inter += (*x && *y) as usize;
            union += (*x || *y) as usize;
        }
    }
    if union == 0 {
        return Ok(0.0);
    }
    Ok((union - inter) as f64 / union as f64)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalsProfile {
    pub language: String,
    /// Multi-hot value vector per defined feature; absent keys are missing.
    pub features: BTreeMap<String, Vec<bool>>,
}

impl WalsProfile {
    pub fn new(language: &str) -> Self {
        Self { language: language.to_owned(), features: BTreeMap::new() }
    }

    pub fn with_feature(mut self, id: &str, values: &[u8]) -> Self {
        self.features.insert(id.to_owned(), values.iter().map(|&v| v != 0).collect());
        self
    }
}

/// Cosine distance between the two value vectors of `feature`, `None` when either is absent.
///
/// Vectors of different length are compared as if the shorter one were zero-padded.
pub fn wals_feature_distance(
    a: &WalsProfile,
    b: &WalsProfile,
    feature: &str,
) -> Result<Option<f64>, TypologyError> {
    let (Some(va), Some(vb)) = (a.features.get(feature), b.features.get(feature)) else {
        return Ok(None);
    };
    let count = |v: &[bool], p: &WalsProfile| {
        let n = v.iter().filter(|&&x| x).count();
        if n == 0 {
            Err(TypologyError::ZeroVector { language: p.language.clone(), feature: feature.to_owned() })
        } else {
            Ok(n)
        }
    };
    let na = count(va, a)?;
    let nb = count(vb, b)?;
    let dot = va.iter().zip(vb).filter(|(x, y)| **x && **y).count();
    let cos = dot as f64 / ((na as f64).sqrt() * (nb as f64).sqrt());
    Ok(Some((1.0 - cos).clamp(0.0, 1.0)))
}

/// Ordered list of feature ids making up a feature-distance vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureInventory {
    ids: Vec<String>,
}

impl Default for FeatureInventory {
    fn default() -> Self {
        Self { ids: DEFAULT_WALS_FEATURES.iter().map(|s| s.to_string()).collect() }
    }
}

impl FeatureInventory {
    pub fn new(ids: Vec<String>) -> Result<Self, TypologyError> {
        if ids.is_empty() {
            return Err(TypologyError::Inventory("empty feature list".into()));
        }
        let mut seen = HashSet::new();
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(TypologyError::Inventory(format!("duplicate feature {id:?}")));
            }
        }
        Ok(Self { ids })
    }

    /// Ids separated by whitespace or commas; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, TypologyError> {
        let ids = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or(""))
            .flat_map(|l| l.split(|c: char| c == ',' || c.is_whitespace()))
            .filter(|s| !s.is_empty())
            .map(str::to_owned)
            .collect();
        Self::new(ids)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.ids.iter().any(|x| x == id)
    }
}

/// Per-feature distances before any imputation.
pub fn raw_feature_distances(
    a: &WalsProfile,
    b: &WalsProfile,
    inventory: &FeatureInventory,
) -> Result<Vec<Option<f64>>, TypologyError> {
    inventory.ids().iter().map(|f| wals_feature_distance(a, b, f)).collect()
}

/// Fill values for missing distances, one per feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputationTable {
    pub features: Vec<String>,
    pub means: Vec<f64>,
}

impl ImputationTable {
    /// Mean of each feature over the rows where it is defined.
    ///
    /// A feature never defined in any row takes the mean of all defined
    /// entries, or 0 when there are none at all.
    pub fn fit(inventory: &FeatureInventory, rows: &[Vec<Option<f64>>]) -> Self {
        let n = inventory.len();
        let mut sums = vec![0.0; n];
        let mut counts = vec![0usize; n];
        for row in rows {
            for (k, v) in row.iter().enumerate().take(n) {
                if let Some(v) = v {
                    sums[k] += v;
                    counts[k] += 1;
                }
            }
        }
        let total: usize = counts.iter().sum();
        let global = if total == 0 { 0.0 } else { sums.iter().sum::<f64>() / total as f64 };
        let means = sums
            .iter()
            .zip(&counts)
            .map(|(&s, &c)| if c == 0 { global } else { s / c as f64 })
            .collect();
        Self { features: inventory.ids().to_vec(), means }
    }

    /// Table fitted on every unordered pair of the given profiles.
    pub fn from_profiles(
        profiles: &[WalsProfile],
        inventory: &FeatureInventory,
    ) -> Result<Self, TypologyError> {
        let mut rows = Vec::new();
        for (i, a) in profiles.iter().enumerate() {
            for b in &profiles[i + 1..] {
                rows.push(raw_feature_distances(a, b, inventory)?);
            }
        }
        Ok(Self::fit(inventory, &rows))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Imputation {
    Mean { table: ImputationTable },
    Sentinel,
}

pub const SENTINEL: f64 = -1.0;

impl Imputation {
    /// Fills the missing entries of a raw distance row.
    pub fn apply(
        &self,
        inventory: &FeatureInventory,
        raw: &[Option<f64>],
    ) -> Result<FeatureDistanceVector, TypologyError> {
        if raw.len() != inventory.len() {
            return Err(TypologyError::Inventory(format!(
                "{} distances for {} features",
                raw.len(),
                inventory.len()
            )));
        }
        let fill: Vec<f64> = match self {
            Imputation::Sentinel => vec![SENTINEL; raw.len()],
            Imputation::Mean { table } => {
                let lookup: HashMap<&str, f64> =
                    table.features.iter().map(String::as_str).zip(table.means.iter().copied()).collect();
                inventory
                    .ids()
                    .iter()
                    .map(|f| lookup.get(f.as_str()).copied().ok_or_else(|| TypologyError::UnknownFeature(f.clone())))
                    .collect::<Result<_, _>>()?
            }
        };
        Ok(FeatureDistanceVector {
            features: inventory.ids().to_vec(),
            distances: raw.iter().zip(&fill).map(|(v, f)| v.unwrap_or(*f)).collect(),
            mask: raw.iter().map(Option::is_none).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDistanceVector {
    pub features: Vec<String>,
    pub distances: Vec<f64>,
    /// `true` where the entry was imputed.
    pub mask: Vec<bool>,
}

pub fn feature_distance_vector(
    a: &WalsProfile,
    b: &WalsProfile,
    inventory: &FeatureInventory,
    imputation: &Imputation,
) -> Result<FeatureDistanceVector, TypologyError> {
    imputation.apply(inventory, &raw_feature_distances(a, b, inventory)?)
}

/// Mean over the entries that were not imputed.
pub fn average_feature_distance(v: &FeatureDistanceVector) -> Result<f64, TypologyError> {
    let defined: Vec<f64> =
        v.distances.iter().zip(&v.mask).filter(|(_, &m)| !m).map(|(&d, _)| d).collect();
    if defined.is_empty() {
        return Err(TypologyError::AllMissing);
    }
    Ok(defined.iter().sum::<f64>() / defined.len() as f64)
}

pub const WALS_HEADER: [&str; 4] = ["language_code", "feature_id", "value_index", "value_flag"];

/// Reads long-format WALS rows into profiles sorted by language code.
///
/// `value_index` is 1-based. Each feature's vector length is the largest index
/// seen for it across all languages, so profiles are directly comparable.
pub fn read_wals_csv<R: Read>(input: R) -> Result<Vec<WalsProfile>, TypologyError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != WALS_HEADER {
        return Err(TypologyError::Format {
            line: 1,
            message: format!("expected header {}", WALS_HEADER.join(",")),
        });
    }
    let mut set: BTreeMap<String, BTreeMap<String, BTreeMap<usize, bool>>> = BTreeMap::new();
    let mut width: HashMap<String, usize> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |message: String| TypologyError::Format { line, message };
        let index: usize = rec[2].parse().map_err(|_| bad(format!("value_index {:?}", &rec[2])))?;
        if index == 0 {
            return Err(bad("value_index is 1-based".into()));
        }
        let flag = match &rec[3] {
            "0" => false,
            "1" => true,
            other => return Err(bad(format!("value_flag {other:?} is not 0 or 1"))),
        };
        let slot = set.entry(rec[0].to_owned()).or_default().entry(rec[1].to_owned()).or_default();
        if slot.insert(index, flag).is_some() {
            return Err(bad(format!("duplicate value {index} for {} {}", &rec[0], &rec[1])));
        }
        let w = width.entry(rec[1].to_owned()).or_insert(0);
        *w = (*w).max(index);
    }
    Ok(set
        .into_iter()
        .map(|(language, feats)| {
            let features = feats
                .into_iter()
                .map(|(f, vals)| {
                    let mut v = vec![false; width[&f]];
                    for (i, flag) in vals {
                        v[i - 1] = flag;
                    }
                    (f, v)
                })
                .collect();
            WalsProfile { language, features }
        })
        .collect())
}

/// Reads `language_code,p1,p2,...` rows; cells are `0`, `1` or `?`.
pub fn read_parameter_csv<R: Read>(input: R) -> Result<Vec<ParameterProfile>, TypologyError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = rdr.headers()?.clone();
    if header.get(0) != Some("language_code") || header.len() < 2 {
        return Err(TypologyError::Format {
            line: 1,
            message: "expected header language_code,p1,...".into(),
        });
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let parameters = rec
            .iter()
            .skip(1)
            .map(|c| match c {
                "0" => Ok(Some(false)),
                "1" => Ok(Some(true)),
                "?" | "" => Ok(None),
                other => Err(TypologyError::Format { line, message: format!("parameter value {other:?}") }),
            })
            .collect::<Result<_, _>>()?;
        out.push(ParameterProfile { language: rec[0].to_owned(), parameters });
    }
    Ok(out)
}

/// One row per language pair, one column per feature.
pub fn write_feature_vectors<W: Write>(
    w: W,
    rows: &[(String, String, FeatureDistanceVector)],
) -> Result<(), TypologyError> {
    let mut wtr = csv::Writer::from_writer(w);
    if let Some((_, _, first)) = rows.first() {
        let mut header = vec!["language_a".to_owned(), "language_b".to_owned()];
        header.extend(first.features.iter().cloned());
        header.push("imputed".into());
        wtr.write_record(&header)?;
    }
    for (a, b, v) in rows {
        let mut rec = vec![a.clone(), b.clone()];
        rec.extend(v.distances.iter().map(|d| d.to_string()));
        rec.push(v.mask.iter().filter(|&&m| m).count().to_string());
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(v: &[u8]) -> ParameterProfile {
        ParameterProfile {
            language: "x".into(),
            parameters: v.iter().map(|&x| if x == 2 { None } else { Some(x == 1) }).collect(),
        }
    }

    #[test]
    fn jaccard_examples() {
        assert_eq!(jaccard_distance(&params(&[1, 0, 1]), &params(&[1, 1, 0])).unwrap(), 2.0 / 3.0);
        assert_eq!(jaccard_distance(&params(&[1, 1, 0]), &params(&[1, 1, 0])).unwrap(), 0.0);
        assert_eq!(jaccard_distance(&params(&[0, 0]), &params(&[0, 0])).unwrap(), 0.0);
        // undefined slots are ignored on both sides
        assert_eq!(jaccard_distance(&params(&[1, 2, 1]), &params(&[1, 1, 2])).unwrap(), 0.0);
        assert!(matches!(
            jaccard_distance(&params(&[1]), &params(&[1, 0])),
            Err(TypologyError::LengthMismatch { a: 1, b: 2 })
        ));
    }

    #[test]
    fn relative_clause_order() {
        let en = WalsProfile::new("en").with_feature("90A", &[1, 0, 0]);
        let hi = WalsProfile::new("hi").with_feature("90A", &[0, 0, 1]);
        let hu = WalsProfile::new("hu").with_feature("90A", &[1, 1, 0]);
        assert_eq!(wals_feature_distance(&en, &hi, "90A").unwrap(), Some(1.0));
        let d = wals_feature_distance(&en, &hu, "90A").unwrap().unwrap();
        assert!((d - (1.0 - 1.0 / 2f64.sqrt())).abs() <= 1e-12);
        assert_eq!(wals_feature_distance(&en, &en, "90A").unwrap(), Some(0.0));
        assert_eq!(wals_feature_distance(&en, &hu, "81A").unwrap(), None);
    }

    #[test]
    fn zero_vector_is_a_data_error() {
        let a = WalsProfile::new("a").with_feature("81A", &[0, 0]);
        let b = WalsProfile::new("b").with_feature("81A", &[1, 0]);
        assert!(matches!(wals_feature_distance(&a, &b, "81A"), Err(TypologyError::ZeroVector { .. })));
    }

    #[test]
    fn mean_imputation_fills_and_masks() {
        let inv = FeatureInventory::new(vec!["1A".into(), "2A".into()]).unwrap();
        let table = ImputationTable { features: inv.ids().to_vec(), means: vec![0.9, 0.4] };
        let a = WalsProfile::new("a").with_feature("1A", &[1, 0]).with_feature("2A", &[1, 0]);
        let b = WalsProfile::new("b").with_feature("1A", &[1, 0]);
        let v = feature_distance_vector(&a, &b, &inv, &Imputation::Mean { table }).unwrap();
        assert_eq!(v.distances, vec![0.0, 0.4]);
        assert_eq!(v.mask, vec![false, true]);
        let s = feature_distance_vector(&a, &b, &inv, &Imputation::Sentinel).unwrap();
        assert_eq!(s.distances, vec![0.0, SENTINEL]);

        let short = ImputationTable { features: vec!["1A".into()], means: vec![0.1] };
        assert!(matches!(
            feature_distance_vector(&a, &b, &inv, &Imputation::Mean { table: short }),
            Err(TypologyError::UnknownFeature(f)) if f == "2A"
        ));
    }

    #[test]
    fn table_fit_uses_defined_pairs_and_falls_back() {
        let inv = FeatureInventory::new(vec!["1A".into(), "2A".into(), "3A".into()]).unwrap();
        let rows = vec![vec![Some(0.2), None, None], vec![Some(0.6), Some(1.0), None]];
        let t = ImputationTable::fit(&inv, &rows);
        assert!((t.means[0] - 0.4).abs() < 1e-15);
        assert_eq!(t.means[1], 1.0);
        assert!((t.means[2] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn average_excludes_imputed() {
        let v = FeatureDistanceVector {
            features: vec!["a".into(), "b".into(), "c".into()],
            distances: vec![0.2, 0.77, 0.4],
            mask: vec![false, true, false],
        };
        assert!((average_feature_distance(&v).unwrap() - 0.3).abs() < 1e-15);
        let none = FeatureDistanceVector { mask: vec![true; 3], ..v };
        assert!(matches!(average_feature_distance(&none), Err(TypologyError::AllMissing)));
    }

    #[test]
    fn default_inventory_has_116_unique_ids() {
        let inv = FeatureInventory::default();
        assert_eq!(inv.len(), 116);
        assert!(FeatureInventory::new(inv.ids().to_vec()).is_ok());
        assert!(FeatureInventory::parse("90A, 81A\n# note\n 90A").is_err());
    }

    #[test]
    fn csv_ingestion() {
        let wals = "language_code,feature_id,value_index,value_flag\n\
                    en,90A,1,1\nhu,90A,1,1\nhu,90A,2,1\nhi,90A,3,1\nen,81A,2,1\n";
        let ps = read_wals_csv(wals.as_bytes()).unwrap();
        assert_eq!(ps.iter().map(|p| p.language.as_str()).collect::<Vec<_>>(), ["en", "hi", "hu"]);
        assert_eq!(ps[0].features["90A"], vec![true, false, false]);
        assert_eq!(ps[1].features["90A"], vec![false, false, true]);
        assert_eq!(ps[0].features["81A"], vec![false, true]);
        assert!(read_wals_csv("lang,feature\n".as_bytes()).is_err());
        let dup = "language_code,feature_id,value_index,value_flag\nen,90A,1,1\nen,90A,1,0\n";
        assert!(matches!(read_wals_csv(dup.as_bytes()), Err(TypologyError::Format { line: 3, .. })));

        let p = read_parameter_csv("language_code,p1,p2,p3\nen,1,0,?\nit,1,1,1\n".as_bytes()).unwrap();
        assert_eq!(p[0].parameters, vec![Some(true), Some(false), None]);
        assert!(read_parameter_csv("language_code,p1\nen,2\n".as_bytes()).is_err());
    }
}
