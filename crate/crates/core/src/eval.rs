//! Metrics, logistic baselines and the in-domain versus out-of-domain
//! leakage comparison.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{gen_leakage_pair, split, ConceptDataset, LeakagePairSpec};
use crate::error::{CrlError, Result};
use crate::loss;
use crate::matrix::Matrix;
use crate::model::{argmax, binarize_concepts, bits_to_f64, CrlModel, DEFAULT_CONCEPT_THRESHOLD};
use crate::optim::{cosine_lr, AdamW, AdamWConfig, ParamGroup};
use crate::train::{train, TrainConfig};

pub const METRICS_FORMAT: &str = "metrics_v1";
pub const LEAKAGE_FORMAT: &str = "leakage_v1";

fn check_pair(preds: &[usize], truths: &[usize]) -> Result<()> {
    CrlError::check_len("predictions", truths.len(), preds.len())?;
    if truths.is_empty() {
        return Err(CrlError::EmptyDataset);
    }
    Ok(())
}

pub fn accuracy(preds: &[usize], truths: &[usize]) -> Result<f64> {
    check_pair(preds, truths)?;
    let hits = preds.iter().zip(truths).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / truths.len() as f64)
}

/// F1 with the 0/0 → 0 convention.
fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Per-class `(precision, recall, f1, support)`.
pub fn per_class_scores(preds: &[usize], truths: &[usize], classes: usize) -> Result<Vec<(f64, f64, f64, usize)>> {
    check_pair(preds, truths)?;
    let mut tp = vec![0; classes];
    let mut fp = vec![0; classes];
    let mut fn_ = vec![0; classes];
    for (&p, &t) in preds.iter().zip(truths) {
        if p >= classes || t >= classes {
            return Err(CrlError::LabelOutOfRange {
                row: 0,
                value: p.max(t).to_string(),
                classes,
            });
        }
        if p == t {
            tp[t] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    Ok((0..classes)
        .map(|c| {
            (
                ratio(tp[c], tp[c] + fp[c]),
                ratio(tp[c], tp[c] + fn_[c]),
                f1(tp[c], fp[c], fn_[c]),
                tp[c] + fn_[c],
            )
        })
        .collect())
}

pub fn macro_f1(preds: &[usize], truths: &[usize], classes: usize) -> Result<f64> {
    let scores = per_class_scores(preds, truths, classes)?;
    Ok(scores.iter().map(|s| s.2).sum::<f64>() / classes as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConceptMetrics {
    pub name: String,
    pub acc: f64,
    /// F1 of the concept being present.
    pub f1: f64,
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub format: String,
    pub samples: usize,
    pub concept_acc: f64,
    pub concept_macro_f1: f64,
    pub diag_acc: f64,
    pub diag_macro_f1: f64,
    pub per_concept: Vec<ConceptMetrics>,
    pub per_class: Vec<ClassMetrics>,
}

impl MetricsReport {
    /// Build from binarized concepts and predicted classes.
    pub fn from_predictions(
        ds: &ConceptDataset,
        concepts: &[Vec<bool>],
        preds: &[usize],
    ) -> Result<MetricsReport> {
        let truths = ds.labels();
        check_pair(preds, &truths)?;
        CrlError::check_len("concept predictions", truths.len(), concepts.len())?;
        let per_concept = (0..ds.concept_count())
            .map(|k| {
                let p: Vec<usize> = concepts.iter().map(|c| usize::from(c[k])).collect();
                let t: Vec<usize> = ds.records.iter().map(|r| usize::from(r.concept_labels[k])).collect();
                let scores = per_class_scores(&p, &t, 2)?;
                Ok(ConceptMetrics {
                    name: ds.concept_names[k].clone(),
                    acc: accuracy(&p, &t)?,
                    f1: scores[1].2,
                    support: scores[1].3,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let per_class = per_class_scores(preds, &truths, ds.class_count())?
            .into_iter()
            .zip(&ds.class_names)
            .map(|((precision, recall, f1, support), name)| ClassMetrics {
                name: name.clone(),
                precision,
                recall,
                f1,
                support,
            })
            .collect::<Vec<_>>();
        let mean = |v: &mut dyn Iterator<Item = f64>, n: usize| if n == 0 { 0.0 } else { v.sum::<f64>() / n as f64 };
        let kc = per_concept.len();
        Ok(MetricsReport {
            format: METRICS_FORMAT.to_string(),
            samples: truths.len(),
            concept_acc: mean(&mut per_concept.iter().map(|c| c.acc), kc),
            concept_macro_f1: mean(&mut per_concept.iter().map(|c| c.f1), kc),
            diag_acc: accuracy(preds, &truths)?,
            diag_macro_f1: mean(&mut per_class.iter().map(|c| c.f1), per_class.len()),
            per_concept,
            per_class,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<12} {:>8} {:>8}", "", "ACC", "F1");
        let _ = writeln!(s, "{:<12} {:>8.2} {:>8.2}", "concept", 100.0 * self.concept_acc, 100.0 * self.concept_macro_f1);
        let _ = writeln!(s, "{:<12} {:>8.2} {:>8.2}", "diagnosis", 100.0 * self.diag_acc, 100.0 * self.diag_macro_f1);
        let _ = writeln!(s, "\n{:<20} {:>8} {:>8} {:>8}", "concept", "ACC", "F1", "support");
        for c in &self.per_concept {
            let _ = writeln!(s, "{:<20} {:>8.2} {:>8.2} {:>8}", c.name, 100.0 * c.acc, 100.0 * c.f1, c.support);
        }
        let _ = writeln!(s, "\n{:<20} {:>8} {:>8} {:>8} {:>8}", "class", "P", "R", "F1", "support");
        for c in &self.per_class {
            let _ = writeln!(
                s,
                "{:<20} {:>8.2} {:>8.2} {:>8.2} {:>8}",
                c.name,
                100.0 * c.precision,
                100.0 * c.recall,
                100.0 * c.f1,
                c.support
            );
        }
        let _ = writeln!(s, "\nsamples: {}", self.samples);
        s
    }
}

/// Discrete predictions of `model` on every record.
pub fn predict(model: &CrlModel, ds: &ConceptDataset) -> Result<Vec<crate::model::DiscreteOutput>> {
    let net = model.discrete_network();
    ds.records
        .iter()
        .map(|r| model.forward_discrete_with(&net, &ds.model_input(r, model.predictor())?))
        .collect()
}

pub fn evaluate(model: &CrlModel, ds: &ConceptDataset) -> Result<MetricsReport> {
    if ds.is_empty() {
        return Err(CrlError::EmptyDataset);
    }
    CrlError::check_len("dataset concepts", model.concept_count(), ds.concept_count())?;
    let outs = predict(model, ds)?;
    let concepts: Vec<Vec<bool>> = outs.iter().map(|o| o.concepts.clone()).collect();
    let preds: Vec<usize> = outs.iter().map(|o| o.predicted_class()).collect();
    MetricsReport::from_predictions(ds, &concepts, &preds)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    /// Logistic regression on concept probabilities.
    SoftLogistic,
    /// Logistic regression on binarized concepts.
    HardLogistic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_init: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            epochs: 100,
            batch_size: 64,
            lr_init: 0.05,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineModel {
    pub kind: BaselineKind,
    /// K×L.
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl BaselineModel {
    /// Model input: probabilities (or labels when absent), binarized for the
    /// hard variant.
    pub fn input(&self, record: &crate::data::Record) -> Vec<f64> {
        baseline_input(self.kind, record)
    }

    pub fn logits(&self, input: &[f64]) -> Vec<f64> {
        let mut z = self.bias.clone();
        for (x, row) in input.iter().zip(self.weights.iter_rows()) {
            for (zc, w) in z.iter_mut().zip(row) {
                *zc += x * w;
            }
        }
        z
    }

    pub fn predict(&self, ds: &ConceptDataset) -> Vec<usize> {
        ds.records.iter().map(|r| argmax(&self.logits(&self.input(r)))).collect()
    }
}

fn baseline_input(kind: BaselineKind, record: &crate::data::Record) -> Vec<f64> {
    let probs = record
        .concept_probs
        .clone()
        .unwrap_or_else(|| bits_to_f64(&record.concept_labels));
    match kind {
        BaselineKind::SoftLogistic => probs,
        BaselineKind::HardLogistic => bits_to_f64(&binarize_concepts(&probs, DEFAULT_CONCEPT_THRESHOLD)),
    }
}

/// Fit a logistic baseline with cross-entropy, AdamW and the cosine schedule.
pub fn train_baseline(kind: BaselineKind, ds: &ConceptDataset, config: &BaselineConfig) -> Result<BaselineModel> {
    if ds.is_empty() {
        return Err(CrlError::EmptyDataset);
    }
    if config.epochs == 0 || config.batch_size == 0 || !(config.lr_init > 0.0) {
        return Err(CrlError::InvalidConfig("baseline needs positive epochs, batch_size and lr_init".into()));
    }
    let (k, l) = (ds.concept_count(), ds.class_count());
    let inputs: Vec<Vec<f64>> = ds.records.iter().map(|r| baseline_input(kind, r)).collect();
    let labels = ds.labels();
    let mut model = BaselineModel {
        kind,
        weights: Matrix::zeros(k, l),
        bias: vec![0.0; l],
    };
    let mut opt = AdamW::new(AdamWConfig {
        weight_decay: config.weight_decay,
        ..AdamWConfig::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let batches = ds.len().div_ceil(config.batch_size);
    let total = config.epochs * batches;
    let mut step = 0;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let mut gw = Matrix::zeros(k, l);
            let mut gb = vec![0.0; l];
            for &i in batch {
                let d = loss::task_loss_grad(&model.logits(&inputs[i]), labels[i])?;
                for (x, row) in inputs[i].iter().zip(0..k) {
                    for (c, dc) in d.iter().enumerate() {
                        gw.row_mut(row)[c] += x * dc;
                    }
                }
                for (b, dc) in gb.iter_mut().zip(&d) {
                    *b += dc;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            gw.as_mut_slice().iter_mut().for_each(|g| *g *= scale);
            gb.iter_mut().for_each(|g| *g *= scale);
            let lr = cosine_lr(step, total, config.lr_init);
            opt.step(
                vec![
                    (ParamGroup::Head, model.weights.as_mut_slice()),
                    (ParamGroup::Head, &mut model.bias),
                ],
                &[gw.as_slice(), &gb],
                lr,
            )?;
            step += 1;
        }
    }
    Ok(model)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeakageConfig {
    pub spec: LeakagePairSpec,
    /// Share of records used for training; the rest is the test part.
    pub train_fraction: f64,
    pub split_seed: u64,
    pub crl: TrainConfig,
    pub baseline: BaselineConfig,
}

/// One row of the comparison; accuracies in percentage points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeakageRow {
    pub model: String,
    pub in_domain_acc: f64,
    pub ood_acc: f64,
    pub drop: f64,
}

impl LeakageRow {
    fn new(model: &str, in_acc: f64, ood_acc: f64) -> Self {
        let (a, b) = (100.0 * in_acc, 100.0 * ood_acc);
        LeakageRow {
            model: model.to_string(),
            in_domain_acc: a,
            ood_acc: b,
            drop: a - b,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub format: String,
    pub shift: f64,
    pub test_samples: usize,
    pub rows: Vec<LeakageRow>,
    /// Paired test records whose CRL logits differ in any bit.
    pub crl_paired_mismatches: usize,
}

impl LeakageReport {
    pub fn row(&self, model: &str) -> Option<&LeakageRow> {
        self.rows.iter().find(|r| r.model == model)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<16} {:>14} {:>10} {:>8}", "Method", "In-domain ACC", "OOD ACC", "Drop");
        for r in &self.rows {
            let _ = writeln!(s, "{:<16} {:>14.2} {:>10.2} {:>8.2}", r.model, r.in_domain_acc, r.ood_acc, r.drop);
        }
        let _ = writeln!(
            s,
            "\nshift {}; {} paired test samples; CRL paired mismatches: {}",
            self.shift, self.test_samples, self.crl_paired_mismatches
        );
        s
    }
}

/// Train CRL and both baselines in-domain and score them on the in-domain
/// and out-of-domain test parts, which hold the same records.
pub fn leakage_benchmark(config: &LeakageConfig) -> Result<LeakageReport> {
    let (id, ood) = gen_leakage_pair(&config.spec)?;
    let fractions = [config.train_fraction, 1.0 - config.train_fraction];
    // same labels and order in both domains, so the parts pair up
    let id_parts = split(&id, &fractions, config.split_seed)?;
    let ood_parts = split(&ood, &fractions, config.split_seed)?;
    let (train_ds, id_test, ood_test) = (&id_parts[0], &id_parts[1], &ood_parts[1]);

    let crl = train(&config.crl, train_ds, None)?.best_model;
    let crl_id = predict(&crl, id_test)?;
    let crl_ood = predict(&crl, ood_test)?;
    let mismatches = crl_id
        .iter()
        .zip(&crl_ood)
        .filter(|(a, b)| {
            a.logits.len() != b.logits.len()
                || a.logits.iter().zip(&b.logits).any(|(x, y)| x.to_bits() != y.to_bits())
        })
        .count();
    let acc_of = |outs: &[crate::model::DiscreteOutput], ds: &ConceptDataset| {
        let preds: Vec<usize> = outs.iter().map(|o| o.predicted_class()).collect();
        accuracy(&preds, &ds.labels())
    };
    let mut rows = vec![LeakageRow::new("CRL", acc_of(&crl_id, id_test)?, acc_of(&crl_ood, ood_test)?)];

    for (name, kind) in [("soft-logistic", BaselineKind::SoftLogistic), ("hard-logistic", BaselineKind::HardLogistic)] {
        let m = train_baseline(kind, train_ds, &config.baseline)?;
        rows.push(LeakageRow::new(
            name,
            accuracy(&m.predict(id_test), &id_test.labels())?,
            accuracy(&m.predict(ood_test), &ood_test.labels())?,
        ));
    }
    Ok(LeakageReport {
        format: LEAKAGE_FORMAT.to_string(),
        shift: config.spec.shift,
        test_samples: id_test.len(),
        rows,
        crl_paired_mismatches: mismatches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_dnf, DnfSpec, Record};
    use crate::logic::LogicLayer;
    use crate::model::ModelConfig;
    use crate::predictor::ConceptPredictor;

    #[test]
    fn metric_examples() {
        let (p, t) = ([1, 1, 0, 0], [1, 0, 0, 0]);
        assert_eq!(accuracy(&p, &t).unwrap(), 0.75);
        let f = macro_f1(&p, &t, 2).unwrap();
        assert!((f - (0.8 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert_eq!(accuracy(&t, &t).unwrap(), 1.0);
        assert_eq!(macro_f1(&t, &t, 2).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 1], &[0, 0]).unwrap(), 0.0);
        assert_eq!(macro_f1(&[1, 1], &[0, 0], 2).unwrap(), 0.0);
        assert!(accuracy(&[], &[]).is_err());
        assert!(accuracy(&[0], &[0, 1]).is_err());
    }

    fn dnf() -> ConceptDataset {
        gen_dnf(&DnfSpec {
            concepts: 5,
            terms: vec![vec![0, 1], vec![2, 3], vec![4]],
            samples: 300,
            concept_noise: 0.0,
            label_noise: 0.0,
            seed: 3,
        })
        .unwrap()
    }

    /// conj nodes over {0,1}, {2,3}, {4}; one OR node over them.
    fn ground_truth(k: usize) -> CrlModel {
        let mut c = Matrix::zeros(3, k);
        for (i, term) in [vec![0, 1], vec![2, 3], vec![4]].iter().enumerate() {
            for &j in term {
                c.set(i, j, 1.0);
            }
        }
        let l1 = LogicLayer::new(c, Matrix::zeros(0, k)).unwrap();
        let l2 = LogicLayer::new(Matrix::zeros(0, 3), Matrix::from_rows(vec![vec![1.0, 1.0, 1.0]]).unwrap()).unwrap();
        let names = (0..k).map(|i| format!("c{i}")).collect();
        CrlModel::from_parts(
            ModelConfig::new(names, vec!["class_0".into(), "class_1".into()], vec![3, 1]),
            ConceptPredictor::Passthrough { width: k },
            vec![l1, l2],
            Matrix::from_rows(vec![vec![-1.0, 1.0]]).unwrap(),
            vec![0.5, 0.0],
        )
        .unwrap()
    }

    #[test]
    fn hand_wired_model_scores_perfectly() {
        let ds = dnf();
        let r = evaluate(&ground_truth(5), &ds).unwrap();
        assert_eq!((r.concept_acc, r.concept_macro_f1, r.diag_acc, r.diag_macro_f1), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn constant_model_scores_majority() {
        let ds = dnf();
        let mut m = ground_truth(5);
        m.head_weights_mut().fill(0.0);
        let r = evaluate(&m, &ds).unwrap();
        let zeros = ds.labels().iter().filter(|&&l| l == 0).count() as f64;
        assert_eq!(r.diag_acc, zeros / ds.len() as f64);
    }

    #[test]
    fn breakdowns_average_to_summaries() {
        let ds = dnf();
        let mut m = ground_truth(5);
        m.head_bias_mut()[0] = 2.0;
        let r = evaluate(&m, &ds).unwrap();
        let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
        assert_eq!(r.diag_macro_f1, mean(r.per_class.iter().map(|c| c.f1).collect()));
        assert_eq!(r.concept_acc, mean(r.per_concept.iter().map(|c| c.acc).collect()));
        assert_eq!(r.concept_macro_f1, mean(r.per_concept.iter().map(|c| c.f1).collect()));
        let json: MetricsReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(json, r);
        assert!(r.render_text().contains("diagnosis"));
    }

    fn separable() -> ConceptDataset {
        let rec = |id: &str, p: f64, label| Record {
            id: id.into(),
            features: None,
            concept_probs: Some(vec![p, 1.0 - p]),
            concept_labels: vec![p >= 0.5, p < 0.5],
            label,
        };
        ConceptDataset {
            concept_names: vec!["a".into(), "b".into()],
            class_names: vec!["n".into(), "p".into()],
            feature_names: vec![],
            records: vec![rec("1", 0.9, 1), rec("2", 0.7, 1), rec("3", 0.2, 0), rec("4", 0.1, 0)],
        }
    }

    #[test]
    fn baselines_fit_separable_data() {
        let ds = separable();
        for kind in [BaselineKind::SoftLogistic, BaselineKind::HardLogistic] {
            let m = train_baseline(kind, &ds, &BaselineConfig::default()).unwrap();
            assert_eq!(accuracy(&m.predict(&ds), &ds.labels()).unwrap(), 1.0);
            assert_eq!(m, train_baseline(kind, &ds, &BaselineConfig::default()).unwrap());
        }
    }

    #[test]
    fn hard_baseline_sees_binary_inputs() {
        let ds = separable();
        let m = train_baseline(BaselineKind::HardLogistic, &ds, &BaselineConfig::default()).unwrap();
        assert_eq!(m.input(&ds.records[1]), vec![1.0, 0.0]);
    }
}
