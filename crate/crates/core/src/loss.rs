//! Loss terms of the training objective.

use crate::error::{CrlError, Result};
use crate::logic::LogicLayer;

/// Probabilities are clamped to `[EPS, 1 - EPS]` inside the concept loss.
pub const CONCEPT_EPS: f64 = 1e-7;

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln()
}

/// Cross-entropy `-ln softmax(logits)[label]`.
pub fn task_loss(logits: &[f64], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(CrlError::DimensionMismatch {
            context: "task label",
            expected: logits.len(),
            actual: label,
        });
    }
    Ok((log_sum_exp(logits) - logits[label]).max(0.0))
}

/// Gradient of [`task_loss`] with respect to the logits: `softmax - onehot`.
pub fn task_loss_grad(logits: &[f64], label: usize) -> Result<Vec<f64>> {
    if label >= logits.len() {
        return Err(CrlError::DimensionMismatch {
            context: "task label",
            expected: logits.len(),
            actual: label,
        });
    }
    let mut g = softmax(logits);
    g[label] -= 1.0;
    Ok(g)
}

/// Mean binary cross-entropy over concepts.
pub fn concept_loss(probs: &[f64], labels: &[bool]) -> Result<f64> {
    CrlError::check_len("concept labels", probs.len(), labels.len())?;
    if probs.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &c)| {
            let p = p.clamp(CONCEPT_EPS, 1.0 - CONCEPT_EPS);
            if c {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(total / probs.len() as f64)
}

/// Gradient of [`concept_loss`] with respect to the probabilities. Zero where
/// the clamp is active.
pub fn concept_loss_grad(probs: &[f64], labels: &[bool]) -> Result<Vec<f64>> {
    CrlError::check_len("concept labels", probs.len(), labels.len())?;
    let k = probs.len() as f64;
    Ok(probs
        .iter()
        .zip(labels)
        .map(|(&p, &c)| {
            if !(CONCEPT_EPS..=1.0 - CONCEPT_EPS).contains(&p) {
                0.0
            } else if c {
                -1.0 / (p * k)
            } else {
                1.0 / ((1.0 - p) * k)
            }
        })
        .collect())
}

/// `lambda * sum w^2` over every logic weight.
pub fn reg_term(layers: &[LogicLayer], lambda: f64) -> f64 {
    lambda
        * layers
            .iter()
            .flat_map(|l| l.conj().as_slice().iter().chain(l.disj().as_slice()))
            .map(|w| w * w)
            .sum::<f64>()
}
