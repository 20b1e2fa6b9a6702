//! Adaptive-moment optimizer with decoupled weight decay, and the cosine
//! learning-rate schedule.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{CrlError, Result};

/// Parameter groups, which the optimizer treats differently: logic weights
/// get no weight decay and are clamped to `[0, 1]` after every step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    Predictor,
    Logic,
    Head,
}

/// `lr_init * (1 + cos(pi * step / total)) / 2`; `step` is clamped to `total`.
pub fn cosine_lr(step: usize, total_steps: usize, lr_init: f64) -> f64 {
    if total_steps == 0 {
        return lr_init;
    }
    let t = step.min(total_steps) as f64 / total_steps as f64;
    lr_init * 0.5 * (1.0 + (PI * t).cos())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Moment accumulators, one pair per parameter slice.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState {
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
    pub step: u64,
}

#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub state: OptimizerState,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        AdamW {
            config,
            state: OptimizerState::default(),
        }
    }

    /// One update. `params` and `grads` must list the same slices in the same
    /// order on every call.
    pub fn step(&mut self, params: Vec<(ParamGroup, &mut [f64])>, grads: &[&[f64]], lr: f64) -> Result<()> {
        CrlError::check_len("gradient slices", params.len(), grads.len())?;
        for (i, ((_, p), g)) in params.iter().zip(grads).enumerate() {
            CrlError::check_len("gradient slice", p.len(), g.len())?;
            if let Some(pos) = g.iter().position(|v| !v.is_finite()) {
                return Err(CrlError::NonFiniteGradient(format!(
                    "parameter slice {i}, entry {pos}: {}",
                    g[pos]
                )));
            }
        }
        if self.state.first.is_empty() {
            self.state.first = params.iter().map(|(_, p)| vec![0.0; p.len()]).collect();
            self.state.second = self.state.first.clone();
        } else if self.state.first.len() != params.len()
            || self.state.first.iter().zip(&params).any(|(m, (_, p))| m.len() != p.len())
        {
            return Err(CrlError::StaleCache("optimizer state does not match parameters"));
        }

        self.state.step += 1;
        let AdamWConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let t = self.state.step as i32;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);

        for (((group, p), g), (m, v)) in params
            .into_iter()
            .zip(grads)
            .zip(self.state.first.iter_mut().zip(self.state.second.iter_mut()))
        {
            let decay = match group {
                ParamGroup::Logic => 0.0,
                ParamGroup::Predictor | ParamGroup::Head => weight_decay,
            };
            for j in 0..p.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let m_hat = m[j] / bias1;
                let v_hat = v[j] / bias2;
                let mut w = p[j];
                if decay != 0.0 {
                    w -= lr * decay * w;
                }
                w -= lr * m_hat / (v_hat.sqrt() + eps);
                if group == ParamGroup::Logic {
                    w = w.clamp(0.0, 1.0);
                }
                p[j] = w;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_lr(0, 1000, 5e-5), 5e-5);
        assert!(cosine_lr(1000, 1000, 5e-5).abs() < 1e-20);
        assert!((cosine_lr(500, 1000, 5e-5) - 2.5e-5).abs() < 1e-18);
        assert!(cosine_lr(2000, 1000, 5e-5).abs() < 1e-20);
    }

    #[test]
    fn zero_gradient_without_decay_is_noop() {
        let mut opt = AdamW::new(AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        });
        let mut p = vec![0.3, -1.2];
        let mut q = vec![0.7];
        opt.step(
            vec![(ParamGroup::Head, &mut p), (ParamGroup::Logic, &mut q)],
            &[&[0.0, 0.0], &[0.0]],
            1e-2,
        )
        .unwrap();
        assert_eq!(p, vec![0.3, -1.2]);
        assert_eq!(q, vec![0.7]);
    }

    #[test]
    fn logic_weights_are_clamped() {
        let mut opt = AdamW::new(AdamWConfig::default());
        let mut w = vec![1.0, 0.0];
        for _ in 0..5 {
            opt.step(vec![(ParamGroup::Logic, &mut w)], &[&[-3.0, 3.0]], 0.1).unwrap();
            assert_eq!(w, vec![1.0, 0.0]);
        }
    }

    #[test]
    fn first_step_matches_hand_calculation() {
        // Scalar parameter 0.5, gradient 0.2, lr 0.1, decay 0.01:
        // m = 0.02, v = 4e-5, m_hat = 0.2, v_hat = 0.04,
        // p = 0.5 - 0.1*0.01*0.5 - 0.1 * 0.2 / (0.2 + 1e-8)
        let mut opt = AdamW::new(AdamWConfig::default());
        let mut p = vec![0.5];
        opt.step(vec![(ParamGroup::Head, &mut p)], &[&[0.2]], 0.1).unwrap();
        let expected = 0.5 - 0.1 * 0.01 * 0.5 - 0.1 * 0.2 / (0.2 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-15, "{} vs {expected}", p[0]);

        // Second step, gradient -0.1:
        // m = 0.9*0.02 - 0.01 = 0.008, v = 0.999*4e-5 + 0.001*0.01 = 4.996e-5
        let before = p[0];
        opt.step(vec![(ParamGroup::Head, &mut p)], &[&[-0.1]], 0.1).unwrap();
        let m_hat = 0.008 / (1.0 - 0.81);
        let v_hat: f64 = 4.996e-5 / (1.0 - 0.998001);
        let expected = before - 0.1 * 0.01 * before - 0.1 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((p[0] - expected).abs() < 1e-12, "{} vs {expected}", p[0]);
    }

    #[test]
    fn logic_group_skips_weight_decay() {
        let mut opt = AdamW::new(AdamWConfig {
            weight_decay: 0.5,
            ..Default::default()
        });
        let mut w = vec![0.6];
        opt.step(vec![(ParamGroup::Logic, &mut w)], &[&[0.0]], 0.1).unwrap();
        assert_eq!(w, vec![0.6]);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut opt = AdamW::new(AdamWConfig::default());
        let mut p = vec![0.5, 0.1];
        let err = opt
            .step(vec![(ParamGroup::Head, &mut p)], &[&[0.1, f64::NAN]], 0.1)
            .unwrap_err();
        assert!(err.to_string().contains("entry 1"));
        assert_eq!(p, vec![0.5, 0.1]);
    }

    #[test]
    fn shape_change_is_rejected() {
        let mut opt = AdamW::new(AdamWConfig::default());
        let mut p = vec![0.5];
        opt.step(vec![(ParamGroup::Head, &mut p)], &[&[0.1]], 0.1).unwrap();
        let mut q = vec![0.5, 0.2];
        assert!(opt.step(vec![(ParamGroup::Head, &mut q)], &[&[0.1, 0.1]], 0.1).is_err());
    }
}
