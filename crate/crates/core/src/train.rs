//! The training objective and the epoch loop.
//!
//! The objective is `L_t(ŷ, y) + α L_c(ĉ, c) + λ ||W̄||²`, where the task loss
//! is taken at the discrete logits and its gradient is grafted onto the
//! continuous graph.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{self, ConceptDataset};
use crate::error::{CrlError, Result};
use crate::loss;
use crate::model::{argmax, CrlModel, DiscreteNetwork, InitOptions, ModelConfig, ModelGradients, PredictorSpec};
use crate::optim::{cosine_lr, AdamW, AdamWConfig};

/// Per-sample gradients are summed in chunks of this size, then the chunk sums
/// are added in order. The result does not depend on the thread count.
const REDUCE_CHUNK: usize = 8;

/// Concept predictor choice in a training run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PredictorChoice {
    Passthrough,
    Mlp { hidden_width: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_init: f64,
    pub weight_decay: f64,
    /// Weight of the squared-L2 penalty on logic weights.
    pub lambda: f64,
    pub concept_loss_weight: f64,
    pub seed: u64,
    pub concept_threshold: f64,
    pub weight_threshold: f64,
    pub layer_sizes: Vec<usize>,
    pub conj_fraction: f64,
    /// Held-out share of the training data when no validation set is given.
    pub validation_fraction: f64,
    pub predictor: PredictorChoice,
    pub init: InitOptions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            batch_size: 64,
            lr_init: 5e-5,
            weight_decay: 0.01,
            lambda: 5e-6,
            concept_loss_weight: 1.0,
            seed: 0,
            concept_threshold: 0.5,
            weight_threshold: 0.5,
            layer_sizes: vec![256, 256],
            conj_fraction: 0.5,
            validation_fraction: 0.1,
            predictor: PredictorChoice::Passthrough,
            init: InitOptions::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(CrlError::InvalidConfig(msg.to_string()));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive");
        }
        if !(self.lr_init > 0.0) || self.weight_decay < 0.0 || self.lambda < 0.0 || self.concept_loss_weight < 0.0 {
            return bad("lr_init must be positive; weight_decay, lambda and concept_loss_weight nonnegative");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction must lie in [0, 1)");
        }
        let (lo, hi) = (self.init.logic_init_min, self.init.logic_init_max);
        if !(0.0 <= lo && lo < hi && hi <= 1.0) {
            return bad("logic init range must satisfy 0 <= min < max <= 1");
        }
        Ok(())
    }

    pub fn model_config(&self, ds: &ConceptDataset) -> ModelConfig {
        ModelConfig {
            concept_names: ds.concept_names.clone(),
            class_names: ds.class_names.clone(),
            layer_sizes: self.layer_sizes.clone(),
            conj_fraction: self.conj_fraction,
            concept_threshold: self.concept_threshold,
            weight_threshold: self.weight_threshold,
        }
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }
}

/// One training example in model-ready form.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub input: Vec<f64>,
    pub concepts: Vec<bool>,
    pub label: usize,
}

/// Convert every record into a [`Sample`] for `model`.
pub fn samples_for(model: &CrlModel, ds: &ConceptDataset) -> Result<Vec<Sample>> {
    ds.records
        .iter()
        .map(|r| {
            Ok(Sample {
                input: ds.model_input(r, model.predictor())?,
                concepts: r.concept_labels.clone(),
                label: r.label,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub task: f64,
    pub concept: f64,
    pub reg: f64,
    pub total: f64,
}

/// Batch objective and its gradient (mean over samples, then the penalty).
pub fn total_loss(
    model: &CrlModel,
    net: &DiscreteNetwork,
    batch: &[&Sample],
    concept_loss_weight: f64,
    lambda: f64,
) -> Result<(LossBreakdown, ModelGradients)> {
    if batch.is_empty() {
        return Err(CrlError::EmptyDataset);
    }
    let partials: Vec<Result<(f64, f64, ModelGradients)>> = batch
        .par_chunks(REDUCE_CHUNK)
        .map(|chunk| {
            let mut grads = ModelGradients::zeros_like(model);
            let (mut task, mut concept) = (0.0, 0.0);
            for s in chunk {
                let trace = model.forward_continuous_with(net, &s.input)?;
                task += loss::task_loss(&trace.logits_discrete, s.label)?;
                let d_logits = loss::task_loss_grad(&trace.logits_discrete, s.label)?;
                concept += loss::concept_loss(&trace.concept_probs, &s.concepts)?;
                let extra = if concept_loss_weight != 0.0 {
                    let mut g = loss::concept_loss_grad(&trace.concept_probs, &s.concepts)?;
                    g.iter_mut().for_each(|v| *v *= concept_loss_weight);
                    Some(g)
                } else {
                    None
                };
                model.backward_into(&trace, &d_logits, extra.as_deref(), &mut grads)?;
            }
            Ok((task, concept, grads))
        })
        .collect();

    let mut grads = ModelGradients::zeros_like(model);
    let (mut task, mut concept) = (0.0, 0.0);
    for part in partials {
        let (t, c, g) = part?;
        task += t;
        concept += c;
        grads.accumulate(&g);
    }
    let n = batch.len() as f64;
    grads.scale(1.0 / n);
    task /= n;
    concept /= n;

    let reg = loss::reg_term(model.layers(), lambda);
    if lambda != 0.0 {
        for (layer, g) in model.layers().iter().zip(grads.layers.iter_mut()) {
            g.conj.add_scaled(layer.conj(), 2.0 * lambda);
            g.disj.add_scaled(layer.disj(), 2.0 * lambda);
        }
    }
    let total = task + concept_loss_weight * concept + reg;
    Ok((
        LossBreakdown {
            task,
            concept,
            reg,
            total,
        },
        grads,
    ))
}

/// Apply one optimizer update to every model parameter.
pub fn optimizer_step(model: &mut CrlModel, grads: &ModelGradients, opt: &mut AdamW, lr: f64) -> Result<()> {
    let slices = grads.slices();
    opt.step(model.param_slices_mut(), &slices, lr)
}

/// One line of the training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub task_loss: f64,
    pub concept_loss: f64,
    pub reg_loss: f64,
    pub total_loss: f64,
    pub train_acc: f64,
    pub val_acc: Option<f64>,
    pub active_connections: usize,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: CrlModel,
    pub best_model: CrlModel,
    /// 1-based epoch of `best_model`.
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

/// Discrete-path diagnosis accuracy on prepared samples.
pub fn discrete_accuracy(model: &CrlModel, net: &DiscreteNetwork, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(CrlError::EmptyDataset);
    }
    let correct = samples
        .par_iter()
        .map(|s| Ok(usize::from(argmax(&model.forward_discrete_with(net, &s.input)?.logits) == s.label)))
        .collect::<Result<Vec<usize>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(correct as f64 / samples.len() as f64)
}

/// Initialize a model for `ds` and train it.
///
/// Without a validation set, `validation_fraction` of `ds` is held out
/// (stratified, seeded). The best model is chosen by validation accuracy,
/// later epochs winning ties.
pub fn train(config: &TrainConfig, ds: &ConceptDataset, validation: Option<&ConceptDataset>) -> Result<TrainOutcome> {
    config.validate()?;
    if ds.is_empty() {
        return Err(CrlError::EmptyDataset);
    }
    ds.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let predictor = match config.predictor {
        PredictorChoice::Passthrough => PredictorSpec::Passthrough,
        PredictorChoice::Mlp { hidden_width } => PredictorSpec::Mlp {
            input_width: ds.feature_names.len(),
            hidden_width,
        },
    };
    let model = CrlModel::initialize(config.model_config(ds), predictor, &config.init, &mut rng)?;

    let (train_ds, val_ds) = match validation {
        Some(v) => (ds.clone(), Some(v.clone())),
        None if config.validation_fraction > 0.0 && ds.len() >= 2 => {
            let f = config.validation_fraction;
            let mut parts = data::split(ds, &[1.0 - f, f], config.seed)?;
            let val = parts.pop().filter(|v| !v.is_empty());
            (parts.pop().expect("split returns one part per fraction"), val)
        }
        None => (ds.clone(), None),
    };
    if train_ds.is_empty() {
        return Err(CrlError::EmptyDataset);
    }
    train_model(config, model, &train_ds, val_ds.as_ref(), &mut rng)
}

/// Train an existing model. `rng` drives the per-epoch shuffles.
pub fn train_model(
    config: &TrainConfig,
    mut model: CrlModel,
    train_ds: &ConceptDataset,
    val_ds: Option<&ConceptDataset>,
    rng: &mut ChaCha8Rng,
) -> Result<TrainOutcome> {
    config.validate()?;
    let samples = samples_for(&model, train_ds)?;
    if samples.is_empty() {
        return Err(CrlError::EmptyDataset);
    }
    let val_samples = match val_ds {
        Some(v) if !v.is_empty() => Some(samples_for(&model, v)?),
        _ => None,
    };
    let batches_per_epoch = samples.len().div_ceil(config.batch_size);
    let total_steps = config.epochs * batches_per_epoch;
    let mut opt = AdamW::new(config.adamw());
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, CrlModel)> = None;
    let mut step = 0;

    for epoch in 1..=config.epochs {
        order.shuffle(rng);
        let mut sums = LossBreakdown::default();
        let mut lr = config.lr_init;
        for batch_idx in order.chunks(config.batch_size) {
            let batch: Vec<&Sample> = batch_idx.iter().map(|&i| &samples[i]).collect();
            let net = model.discrete_network();
            let (losses, grads) = total_loss(&model, &net, &batch, config.concept_loss_weight, config.lambda)?;
            if !losses.total.is_finite() {
                return Err(CrlError::NonFiniteLoss {
                    epoch,
                    step,
                    last_good: Box::new(model),
                });
            }
            lr = cosine_lr(step, total_steps, config.lr_init);
            let last_good = model.clone();
            if let Err(e) = optimizer_step(&mut model, &grads, &mut opt, lr) {
                return Err(match e {
                    CrlError::NonFiniteGradient(_) => CrlError::NonFiniteLoss {
                        epoch,
                        step,
                        last_good: Box::new(last_good),
                    },
                    other => other,
                });
            }
            step += 1;
            sums.task += losses.task;
            sums.concept += losses.concept;
            sums.reg += losses.reg;
            sums.total += losses.total;
        }
        let nb = batches_per_epoch as f64;
        let net = model.discrete_network();
        let train_acc = discrete_accuracy(&model, &net, &samples)?;
        let val_acc = match &val_samples {
            Some(v) => Some(discrete_accuracy(&model, &net, v)?),
            None => None,
        };
        let score = val_acc.unwrap_or(train_acc);
        if best.as_ref().is_none_or(|(b, _, _)| score >= *b) {
            best = Some((score, epoch, model.clone()));
        }
        history.push(EpochRecord {
            epoch,
            lr,
            task_loss: sums.task / nb,
            concept_loss: sums.concept / nb,
            reg_loss: sums.reg / nb,
            total_loss: sums.total / nb,
            train_acc,
            val_acc,
            active_connections: model
                .layers()
                .iter()
                .map(|l| l.active_connections(config.weight_threshold))
                .sum(),
        });
    }
    let (_, best_epoch, best_model) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        model,
        best_model,
        best_epoch,
        history,
    })
}

/// History as JSON lines.
pub fn history_jsonl(history: &[EpochRecord]) -> Result<String> {
    let mut out = String::new();
    for rec in history {
        out.push_str(&serde_json::to_string(rec)?);
        out.push('\n');
    }
    Ok(out)
}
