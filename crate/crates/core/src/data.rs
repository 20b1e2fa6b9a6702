//! Datasets of concept-annotated records: CSV ingestion and export,
//! synthetic generators and stratified splits.
//!
//! CSV layout: a header `id,label,feat_*…,concept_*…[,prob_*…]`. Feature and
//! probability columns are optional; when present, `prob_<name>` columns must
//! mirror the `concept_<name>` columns in order. Row numbers in diagnostics
//! count data records from 1 (the header is not counted).

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CrlError, Result};
use crate::predictor::ConceptPredictor;

/// Soft concept probability given to a present concept in generated data.
pub const SOFT_HIGH: f64 = 0.9;
/// Soft concept probability given to an absent concept in generated data.
pub const SOFT_LOW: f64 = 0.1;
/// Shifted probabilities are clamped into `[SHIFT_CLAMP_LO, SHIFT_CLAMP_HI]`.
pub const SHIFT_CLAMP_LO: f64 = 0.05;
pub const SHIFT_CLAMP_HI: f64 = 0.95;
/// Below-threshold probabilities stay at least this far under 0.5 after a shift.
pub const SHIFT_SIDE_MARGIN: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub features: Option<Vec<f64>>,
    pub concept_probs: Option<Vec<f64>>,
    pub concept_labels: Vec<bool>,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConceptDataset {
    pub concept_names: Vec<String>,
    pub class_names: Vec<String>,
    pub feature_names: Vec<String>,
    pub records: Vec<Record>,
}

pub fn default_class_names(count: usize) -> Vec<String> {
    (0..count).map(|i| format!("class_{i}")).collect()
}

impl ConceptDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn concept_count(&self) -> usize {
        self.concept_names.len()
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn has_features(&self) -> bool {
        !self.feature_names.is_empty()
    }

    pub fn has_probs(&self) -> bool {
        self.records.first().is_some_and(|r| r.concept_probs.is_some())
    }

    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.label).collect()
    }

    /// Same metadata, a subset of the records.
    pub fn subset(&self, indices: &[usize]) -> ConceptDataset {
        ConceptDataset {
            concept_names: self.concept_names.clone(),
            class_names: self.class_names.clone(),
            feature_names: self.feature_names.clone(),
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }

    /// Check that every record agrees with the metadata.
    pub fn validate(&self) -> Result<()> {
        let k = self.concept_count();
        let d = self.feature_names.len();
        for (row, r) in self.records.iter().enumerate() {
            let row = row + 1;
            CrlError::check_len("record concept labels", k, r.concept_labels.len())?;
            match &r.features {
                Some(f) => CrlError::check_len("record features", d, f.len())?,
                None if d > 0 => {
                    return Err(CrlError::MissingColumn {
                        row,
                        column: "feat_*".into(),
                    })
                }
                None => {}
            }
            if let Some(p) = &r.concept_probs {
                CrlError::check_len("record concept probabilities", k, p.len())?;
                if let Some(v) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                    return Err(CrlError::InvalidConfig(format!(
                        "record {row}: concept probability {v} outside [0, 1]"
                    )));
                }
            }
            if r.label >= self.class_count() {
                return Err(CrlError::LabelOutOfRange {
                    row,
                    value: r.label.to_string(),
                    classes: self.class_count(),
                });
            }
        }
        if self.records.iter().any(|r| r.concept_probs.is_some() != self.has_probs()) {
            return Err(CrlError::InvalidConfig(
                "concept probabilities must be present on all records or none".into(),
            ));
        }
        Ok(())
    }

    /// Model input of a record: features for a learned predictor, concept
    /// probabilities (or the labels themselves) for a passthrough predictor.
    pub fn model_input(&self, record: &Record, predictor: &ConceptPredictor) -> Result<Vec<f64>> {
        match predictor {
            ConceptPredictor::Passthrough { .. } => Ok(match &record.concept_probs {
                Some(p) => p.clone(),
                None => crate::model::bits_to_f64(&record.concept_labels),
            }),
            ConceptPredictor::Mlp(_) => record.features.clone().ok_or_else(|| CrlError::MissingColumn {
                row: self.records.iter().position(|r| r.id == record.id).map_or(0, |i| i + 1),
                column: "feat_*".into(),
            }),
        }
    }

    /// Duplicate every concept as the pair `(c, not c)`, so positive-only
    /// rules can express negation.
    pub fn with_complements(&self) -> ConceptDataset {
        let mut concept_names = self.concept_names.clone();
        concept_names.extend(self.concept_names.iter().map(|n| format!("not_{n}")));
        let records = self
            .records
            .iter()
            .map(|r| {
                let mut labels = r.concept_labels.clone();
                labels.extend(r.concept_labels.iter().map(|&c| !c));
                let probs = r.concept_probs.as_ref().map(|p| {
                    let mut out = p.clone();
                    out.extend(p.iter().map(|v| 1.0 - v));
                    out
                });
                Record {
                    concept_labels: labels,
                    concept_probs: probs,
                    ..r.clone()
                }
            })
            .collect();
        ConceptDataset {
            concept_names,
            records,
            ..self.clone()
        }
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| CrlError::io(path, e))?;
        self.write_csv_to(file)
    }

    pub fn write_csv_to(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let probs = self.has_probs();
        let mut header = vec!["id".to_string(), "label".to_string()];
        header.extend(self.feature_names.iter().map(|n| format!("feat_{n}")));
        header.extend(self.concept_names.iter().map(|n| format!("concept_{n}")));
        if probs {
            header.extend(self.concept_names.iter().map(|n| format!("prob_{n}")));
        }
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![r.id.clone(), r.label.to_string()];
            if let Some(f) = &r.features {
                row.extend(f.iter().map(|v| v.to_string()));
            }
            row.extend(r.concept_labels.iter().map(|&c| if c { "1" } else { "0" }.to_string()));
            if let Some(p) = &r.concept_probs {
                row.extend(p.iter().map(|v| v.to_string()));
            }
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| CrlError::io("<csv>", e))?;
        Ok(())
    }
}

/// Read a dataset; the class count is one more than the largest label (at least 2).
pub fn load_csv(path: impl AsRef<Path>) -> Result<ConceptDataset> {
    load_csv_with_classes(path, None)
}

/// Read a dataset with a declared class count; labels at or above it are errors.
pub fn load_csv_with_classes(path: impl AsRef<Path>, classes: Option<usize>) -> Result<ConceptDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| CrlError::io(path, e))?;
    read_csv(file, classes)
}

#[derive(Default)]
struct Columns {
    id: Option<usize>,
    label: Option<usize>,
    features: Vec<(usize, String)>,
    concepts: Vec<(usize, String)>,
    probs: Vec<(usize, String)>,
}

fn parse_header(header: &csv::StringRecord) -> Result<Columns> {
    let mut cols = Columns::default();
    for (i, name) in header.iter().enumerate() {
        if name == "id" {
            cols.id = Some(i);
        } else if name == "label" {
            cols.label = Some(i);
        } else if let Some(n) = name.strip_prefix("feat_") {
            cols.features.push((i, n.to_string()));
        } else if let Some(n) = name.strip_prefix("concept_") {
            cols.concepts.push((i, n.to_string()));
        } else if let Some(n) = name.strip_prefix("prob_") {
            cols.probs.push((i, n.to_string()));
        } else {
            return Err(CrlError::BadHeader(format!("unrecognized column {name:?}")));
        }
    }
    if cols.id.is_none() {
        return Err(CrlError::BadHeader("missing column \"id\"".into()));
    }
    if cols.label.is_none() {
        return Err(CrlError::BadHeader("missing column \"label\"".into()));
    }
    if cols.concepts.is_empty() {
        return Err(CrlError::BadHeader("no concept_* columns".into()));
    }
    if !cols.probs.is_empty() {
        let concept_names: Vec<&String> = cols.concepts.iter().map(|(_, n)| n).collect();
        let prob_names: Vec<&String> = cols.probs.iter().map(|(_, n)| n).collect();
        if concept_names != prob_names {
            return Err(CrlError::BadHeader(
                "prob_* columns must match concept_* columns in name and order".into(),
            ));
        }
    }
    Ok(cols)
}

/// Parse CSV from any reader. See [`load_csv_with_classes`].
pub fn read_csv(reader: impl Read, classes: Option<usize>) -> Result<ConceptDataset> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    let cols = parse_header(&header)?;
    let field = |rec: &csv::StringRecord, row: usize, idx: usize| -> Result<String> {
        rec.get(idx).map(str::to_string).ok_or_else(|| CrlError::MissingColumn {
            row,
            column: header.get(idx).unwrap_or("?").to_string(),
        })
    };
    let number = |rec: &csv::StringRecord, row: usize, idx: usize| -> Result<f64> {
        let raw = field(rec, row, idx)?;
        raw.trim().parse::<f64>().map_err(|_| CrlError::BadNumber {
            row,
            column: header.get(idx).unwrap_or("?").to_string(),
            value: raw,
        })
    };

    let mut records = Vec::new();
    let mut max_label = 0;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let id = field(&rec, row, cols.id.unwrap())?;
        let raw_label = field(&rec, row, cols.label.unwrap())?;
        let label: usize = raw_label.trim().parse().map_err(|_| CrlError::LabelOutOfRange {
            row,
            value: raw_label.clone(),
            classes: classes.unwrap_or(0),
        })?;
        if let Some(l) = classes {
            if label >= l {
                return Err(CrlError::LabelOutOfRange {
                    row,
                    value: raw_label,
                    classes: l,
                });
            }
        }
        max_label = max_label.max(label);
        let features = if cols.features.is_empty() {
            None
        } else {
            Some(
                cols.features
                    .iter()
                    .map(|(idx, _)| number(&rec, row, *idx))
                    .collect::<Result<Vec<_>>>()?,
            )
        };
        let concept_labels = cols
            .concepts
            .iter()
            .map(|(idx, _)| {
                let raw = field(&rec, row, *idx)?;
                match raw.trim() {
                    "0" => Ok(false),
                    "1" => Ok(true),
                    _ => Err(CrlError::NonBinaryConcept {
                        row,
                        column: header[*idx].to_string(),
                        value: raw,
                    }),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let concept_probs = if cols.probs.is_empty() {
            None
        } else {
            let p = cols
                .probs
                .iter()
                .map(|(idx, _)| {
                    let v = number(&rec, row, *idx)?;
                    if (0.0..=1.0).contains(&v) {
                        Ok(v)
                    } else {
                        Err(CrlError::BadNumber {
                            row,
                            column: header[*idx].to_string(),
                            value: v.to_string(),
                        })
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            Some(p)
        };
        if rec.len() > header.len() {
            return Err(CrlError::BadHeader(format!(
                "row {row} has {} fields but the header has {}",
                rec.len(),
                header.len()
            )));
        }
        records.push(Record {
            id,
            features,
            concept_probs,
            concept_labels,
            label,
        });
    }
    let class_count = classes.unwrap_or((max_label + 1).max(2));
    let ds = ConceptDataset {
        concept_names: cols.concepts.into_iter().map(|(_, n)| n).collect(),
        class_names: default_class_names(class_count),
        feature_names: cols.features.into_iter().map(|(_, n)| n).collect(),
        records,
    };
    ds.validate()?;
    Ok(ds)
}

/// A binary task whose positive class is a DNF over concepts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DnfSpec {
    pub concepts: usize,
    /// Each term is the set of concept indices that must all be present.
    pub terms: Vec<Vec<usize>>,
    pub samples: usize,
    #[serde(default)]
    pub concept_noise: f64,
    #[serde(default)]
    pub label_noise: f64,
    pub seed: u64,
}

impl DnfSpec {
    pub fn validate(&self) -> Result<()> {
        if self.concepts == 0 {
            return Err(CrlError::InvalidConfig("a DNF needs at least one concept".into()));
        }
        if self.terms.is_empty() || self.terms.iter().any(Vec::is_empty) {
            return Err(CrlError::InvalidConfig("DNF terms must be nonempty".into()));
        }
        if let Some(&i) = self.terms.iter().flatten().find(|&&i| i >= self.concepts) {
            return Err(CrlError::InvalidConfig(format!(
                "term literal {i} is out of range for {} concepts",
                self.concepts
            )));
        }
        for (name, p) in [("concept_noise", self.concept_noise), ("label_noise", self.label_noise)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(CrlError::InvalidConfig(format!("{name} must lie in [0, 1]")));
            }
        }
        Ok(())
    }

    /// The noiseless label of a concept vector.
    pub fn label_of(&self, concepts: &[bool]) -> bool {
        self.terms.iter().any(|t| t.iter().all(|&i| concepts[i]))
    }
}

/// Concepts i.i.d. Bernoulli(1/2); the label is 1 iff some term holds.
pub fn gen_dnf(spec: &DnfSpec) -> Result<ConceptDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let width = spec.samples.to_string().len().max(5);
    let records = (0..spec.samples)
        .map(|i| {
            let concept_labels: Vec<bool> = (0..spec.concepts).map(|_| rng.gen_bool(0.5)).collect();
            let concept_probs = concept_labels
                .iter()
                .map(|&c| {
                    let flip = rng.gen_bool(spec.concept_noise);
                    if c != flip {
                        SOFT_HIGH
                    } else {
                        SOFT_LOW
                    }
                })
                .collect();
            let clean = spec.label_of(&concept_labels);
            let label = clean != rng.gen_bool(spec.label_noise);
            Record {
                id: format!("r{i:0width$}"),
                features: None,
                concept_probs: Some(concept_probs),
                concept_labels,
                label: usize::from(label),
            }
        })
        .collect();
    Ok(ConceptDataset {
        concept_names: (0..spec.concepts).map(|i| format!("c{i}")).collect(),
        class_names: default_class_names(2),
        feature_names: Vec::new(),
        records,
    })
}

/// Two domains that agree on every binarized concept but whose soft
/// probabilities lean toward the label in opposite directions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeakagePairSpec {
    pub base: DnfSpec,
    /// Magnitude of the label-aligned probability shift.
    pub shift: f64,
}

impl LeakagePairSpec {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if !(self.shift > 0.0 && self.shift < 0.5) {
            return Err(CrlError::InvalidConfig(format!(
                "leakage shift must lie in (0, 0.5), got {}",
                self.shift
            )));
        }
        Ok(())
    }
}

/// Shift one probability toward (`alignment = +1`) or away from
/// (`alignment = -1`) the label, without changing its side of 0.5.
pub fn shift_probability(p: f64, label: usize, shift: f64, alignment: f64) -> f64 {
    let sign = if label == 1 { 1.0 } else { -1.0 };
    let moved = (p + shift * alignment * sign).clamp(SHIFT_CLAMP_LO, SHIFT_CLAMP_HI);
    if p >= 0.5 {
        moved.max(0.5)
    } else {
        moved.min(0.5 - SHIFT_SIDE_MARGIN)
    }
}

/// Apply [`shift_probability`] to every concept probability of a dataset.
pub fn shift_domain(ds: &ConceptDataset, shift: f64, alignment: f64) -> Result<ConceptDataset> {
    let mut out = ds.clone();
    for r in &mut out.records {
        let label = r.label;
        let probs = r
            .concept_probs
            .as_mut()
            .ok_or_else(|| CrlError::InvalidConfig("leakage shift needs concept probabilities".into()))?;
        for p in probs.iter_mut() {
            *p = shift_probability(*p, label, shift, alignment);
        }
    }
    Ok(out)
}

/// `(in_domain, out_of_domain)`: the same records, shifted `+shift` and `-shift`.
pub fn gen_leakage_pair(spec: &LeakagePairSpec) -> Result<(ConceptDataset, ConceptDataset)> {
    spec.validate()?;
    let base = gen_dnf(&spec.base)?;
    Ok((shift_domain(&base, spec.shift, 1.0)?, shift_domain(&base, spec.shift, -1.0)?))
}

/// A synthesis request, as accepted from JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorSpec {
    Dnf(DnfSpec),
    LeakagePair(LeakagePairSpec),
}

impl GeneratorSpec {
    pub fn seed(&self) -> u64 {
        match self {
            GeneratorSpec::Dnf(s) => s.seed,
            GeneratorSpec::LeakagePair(s) => s.base.seed,
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        match self {
            GeneratorSpec::Dnf(s) => s.seed = seed,
            GeneratorSpec::LeakagePair(s) => s.base.seed = seed,
        }
    }
}

/// Record order that interleaves classes evenly: within each class the
/// records are shuffled, then every class is spread across `[0, 1)`.
fn stratified_order(ds: &ConceptDataset, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keyed: Vec<(f64, usize, usize)> = Vec::with_capacity(ds.len());
    for class in 0..ds.class_count() {
        let mut members: Vec<usize> = (0..ds.len()).filter(|&i| ds.records[i].label == class).collect();
        members.shuffle(&mut rng);
        let n = members.len() as f64;
        for (rank, idx) in members.into_iter().enumerate() {
            keyed.push(((rank as f64 + 0.5) / n, class, idx));
        }
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    keyed.into_iter().map(|(_, _, i)| i).collect()
}

/// Sizes from fractions by the largest-remainder rule; they sum to `n`.
fn apportion(n: usize, fractions: &[f64]) -> Vec<usize> {
    let raw: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut sizes: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut rest = n - sizes.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())).then(a.cmp(&b)));
    for i in order.into_iter().cycle() {
        if rest == 0 {
            break;
        }
        sizes[i] += 1;
        rest -= 1;
    }
    sizes
}

/// Disjoint, exhaustive, label-stratified parts with the given fractions.
pub fn split(ds: &ConceptDataset, fractions: &[f64], seed: u64) -> Result<Vec<ConceptDataset>> {
    if fractions.is_empty() || fractions.iter().any(|&f| !(0.0..=1.0).contains(&f)) {
        return Err(CrlError::InvalidConfig("split fractions must lie in [0, 1]".into()));
    }
    if (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(CrlError::InvalidConfig("split fractions must sum to 1".into()));
    }
    let order = stratified_order(ds, seed);
    let mut parts = Vec::with_capacity(fractions.len());
    let mut start = 0;
    for size in apportion(ds.len(), fractions) {
        let mut idx = order[start..start + size].to_vec();
        idx.sort_unstable();
        parts.push(ds.subset(&idx));
        start += size;
    }
    Ok(parts)
}

/// One cross-validation fold.
#[derive(Clone, Debug)]
pub struct Fold {
    pub train: ConceptDataset,
    pub test: ConceptDataset,
}

/// `k` stratified folds; every record is in exactly one test part.
pub fn kfold(ds: &ConceptDataset, k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 || k > ds.len() {
        return Err(CrlError::InvalidConfig(format!(
            "k-fold needs 2 <= k <= {} records, got {k}",
            ds.len()
        )));
    }
    let order = stratified_order(ds, seed);
    let mut assignment = vec![0; ds.len()];
    for (pos, &idx) in order.iter().enumerate() {
        assignment[idx] = pos % k;
    }
    Ok((0..k)
        .map(|f| {
            let test: Vec<usize> = (0..ds.len()).filter(|&i| assignment[i] == f).collect();
            let train: Vec<usize> = (0..ds.len()).filter(|&i| assignment[i] != f).collect();
            Fold {
                train: ds.subset(&train),
                test: ds.subset(&test),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn spec() -> DnfSpec {
        DnfSpec {
            concepts: 8,
            terms: vec![vec![0, 1], vec![2, 3], vec![4]],
            samples: 2000,
            concept_noise: 0.0,
            label_noise: 0.0,
            seed: 7,
        }
    }

    #[test]
    fn minimal_csv() {
        let text = "id,label,concept_a,concept_b\nx,0,1,0\ny,1,0,1\n";
        let ds = read_csv(text.as_bytes(), None).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.concept_names, vec!["a", "b"]);
        assert_eq!(ds.records[1].concept_labels, vec![false, true]);
        assert_eq!(ds.class_count(), 2);
    }

    #[test]
    fn non_binary_concept_names_row() {
        let text = "id,label,concept_a\na,0,1\nb,0,0\nc,1,1\nd,1,0\ne,0,2\n";
        let err = read_csv(text.as_bytes(), None).unwrap_err();
        match err {
            CrlError::NonBinaryConcept { row, ref value, .. } => {
                assert_eq!(row, 5);
                assert_eq!(value, "2");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains("row 5"));
    }

    #[test]
    fn csv_diagnostics_are_distinct() {
        let missing = "id,concept_a\na,1\n";
        assert!(matches!(read_csv(missing.as_bytes(), None), Err(CrlError::BadHeader(_))));
        let short = "id,label,concept_a,concept_b\na,0,1\n";
        assert!(matches!(
            read_csv(short.as_bytes(), None),
            Err(CrlError::MissingColumn { row: 1, .. })
        ));
        let label = "id,label,concept_a\na,0,1\nb,3,0\n";
        assert!(matches!(
            read_csv(label.as_bytes(), Some(2)),
            Err(CrlError::LabelOutOfRange { row: 2, .. })
        ));
        let neg = "id,label,concept_a\na,-1,1\n";
        assert!(matches!(
            read_csv(neg.as_bytes(), None),
            Err(CrlError::LabelOutOfRange { row: 1, .. })
        ));
        let prob = "id,label,concept_a,prob_a\na,0,1,1.5\n";
        assert!(matches!(read_csv(prob.as_bytes(), None), Err(CrlError::BadNumber { .. })));
        let names = "id,label,concept_a,prob_b\na,0,1,0.5\n";
        assert!(matches!(read_csv(names.as_bytes(), None), Err(CrlError::BadHeader(_))));
    }

    #[test]
    fn csv_round_trip_preserves_values() {
        let mut ds = gen_dnf(&DnfSpec {
            samples: 50,
            concept_noise: 0.2,
            ..spec()
        })
        .unwrap();
        ds.feature_names = vec!["u".into(), "v".into()];
        for (i, r) in ds.records.iter_mut().enumerate() {
            r.features = Some(vec![0.1 * i as f64, -1.0 / (i as f64 + 3.0)]);
        }
        let mut buf = Vec::new();
        ds.write_csv_to(&mut buf).unwrap();
        let back = read_csv(buf.as_slice(), Some(2)).unwrap();
        assert_eq!(back, ds);
        let mut again = Vec::new();
        back.write_csv_to(&mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn dnf_labels_follow_terms() {
        let ds = gen_dnf(&spec()).unwrap();
        for r in &ds.records {
            assert_eq!(r.label == 1, spec().label_of(&r.concept_labels));
            if r.concept_labels[0] && r.concept_labels[1] {
                assert_eq!(r.label, 1);
            }
        }
    }

    #[test]
    fn dnf_positive_rate_matches_truth_table() {
        // Exact fraction by enumerating all 2^8 assignments.
        let s = spec();
        let positives = (0u32..256)
            .filter(|m| s.label_of(&(0..8).map(|i| m >> i & 1 == 1).collect::<Vec<_>>()))
            .count();
        let exact = positives as f64 / 256.0;
        assert_eq!(exact, 0.71875);
        let ds = gen_dnf(&s).unwrap();
        let rate = ds.records.iter().filter(|r| r.label == 1).count() as f64 / ds.len() as f64;
        let sigma = (exact * (1.0 - exact) / ds.len() as f64).sqrt();
        assert!((rate - exact).abs() <= 3.0 * sigma, "rate {rate}");
    }

    #[test]
    fn generators_are_deterministic() {
        assert_eq!(gen_dnf(&spec()).unwrap(), gen_dnf(&spec()).unwrap());
        let other = gen_dnf(&DnfSpec { seed: 8, ..spec() }).unwrap();
        assert_ne!(other, gen_dnf(&spec()).unwrap());
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(gen_dnf(&DnfSpec { terms: vec![vec![9]], ..spec() }).is_err());
        assert!(gen_dnf(&DnfSpec { terms: vec![vec![]], ..spec() }).is_err());
        let pair = LeakagePairSpec { base: spec(), shift: 0.5 };
        assert!(gen_leakage_pair(&pair).is_err());
    }

    #[test]
    fn shift_never_crosses_threshold() {
        assert!((shift_probability(0.7, 1, 0.2, 1.0) - 0.9).abs() < 1e-12);
        assert!((shift_probability(0.7, 1, 0.2, -1.0) - 0.5).abs() < 1e-12);
        for &p in &[0.05, 0.1, 0.3, 0.49, 0.5, 0.6, 0.9, 0.95] {
            for label in 0..2 {
                for &a in &[1.0, -1.0] {
                    for &d in &[0.01, 0.2, 0.45, 0.499] {
                        let q = shift_probability(p, label, d, a);
                        assert_eq!(q >= 0.5, p >= 0.5, "p={p} label={label} a={a} d={d}");
                        assert!((0.0..=1.0).contains(&q));
                    }
                }
            }
        }
    }

    #[test]
    fn leakage_pair_shares_binary_concepts() {
        let spec = LeakagePairSpec {
            base: DnfSpec { concept_noise: 0.1, ..spec() },
            shift: 0.2,
        };
        let (a, b) = gen_leakage_pair(&spec).unwrap();
        let mut diff = (0.0, 0.0, 0usize);
        for (ra, rb) in a.records.iter().zip(&b.records) {
            assert_eq!(ra.label, rb.label);
            let pa = ra.concept_probs.as_ref().unwrap();
            let pb = rb.concept_probs.as_ref().unwrap();
            let ba: Vec<bool> = pa.iter().map(|&p| p >= 0.5).collect();
            let bb: Vec<bool> = pb.iter().map(|&p| p >= 0.5).collect();
            assert_eq!(ba, bb);
            if ra.label == 1 {
                diff.0 += pa.iter().sum::<f64>();
                diff.1 += pb.iter().sum::<f64>();
                diff.2 += pa.len();
            }
        }
        let mean_gap = (diff.0 - diff.1) / diff.2 as f64;
        assert!(mean_gap >= 0.1, "gap {mean_gap}");
    }

    #[test]
    fn split_sizes_and_stratification() {
        let ds = gen_dnf(&DnfSpec { samples: 100, ..spec() }).unwrap();
        let parts = split(&ds, &[0.8, 0.2], 3).unwrap();
        assert_eq!(parts[0].len(), 80);
        assert_eq!(parts[1].len(), 20);
        let ids: HashSet<_> = parts.iter().flat_map(|p| p.records.iter().map(|r| r.id.clone())).collect();
        assert_eq!(ids.len(), 100);
        let global = ds.records.iter().filter(|r| r.label == 1).count() as f64 / 100.0;
        for p in &parts {
            let pos = p.records.iter().filter(|r| r.label == 1).count() as f64;
            assert!((pos - global * p.len() as f64).abs() <= 1.0, "{pos} vs {}", global * p.len() as f64);
        }
        assert!(split(&ds, &[0.5, 0.4], 3).is_err());
    }

    #[test]
    fn kfold_partitions() {
        let ds = gen_dnf(&DnfSpec { samples: 103, ..spec() }).unwrap();
        let folds = kfold(&ds, 5, 1).unwrap();
        let mut seen = HashSet::new();
        let global = ds.records.iter().filter(|r| r.label == 1).count() as f64 / ds.len() as f64;
        for f in &folds {
            assert_eq!(f.train.len() + f.test.len(), 103);
            for r in &f.test.records {
                assert!(seen.insert(r.id.clone()));
            }
            let pos = f.test.records.iter().filter(|r| r.label == 1).count() as f64;
            assert!((pos - global * f.test.len() as f64).abs() <= 1.0);
        }
        assert_eq!(seen.len(), 103);
    }

    #[test]
    fn complements_double_concepts() {
        let ds = gen_dnf(&DnfSpec { samples: 5, ..spec() }).unwrap();
        let aug = ds.with_complements();
        assert_eq!(aug.concept_count(), 16);
        assert_eq!(aug.concept_names[8], "not_c0");
        for r in &aug.records {
            for i in 0..8 {
                assert_eq!(r.concept_labels[i], !r.concept_labels[i + 8]);
            }
        }
    }

    #[test]
    fn generator_spec_json() {
        let text = r#"{"kind":"leakage_pair","base":{"concepts":4,"terms":[[0,1]],"samples":10,"seed":3},"shift":0.2}"#;
        let spec: GeneratorSpec = serde_json::from_str(text).unwrap();
        assert_eq!(spec.seed(), 3);
        let bad = r#"{"kind":"dnf","concepts":4,"terms":[[0]],"samples":10,"seed":3,"extra":1}"#;
        assert!(serde_json::from_str::<GeneratorSpec>(bad).is_err());
    }
}
