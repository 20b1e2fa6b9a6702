//! Central finite-difference checks of the hand-derived gradients.
//!
//! Two checks: a single logic layer against `g · forward_continuous`, and a
//! whole model against the task loss of its continuous logits, which is the
//! plain relaxed network with grafting switched off.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::logic::LogicLayer;
use crate::loss;
use crate::matrix::Matrix;
use crate::model::{CrlModel, GradientSource, InitOptions, ModelConfig, PredictorSpec};

pub const FD_STEP: f64 = 1e-6;
/// Smallest denominator in [`rel_error`]. Central differences at
/// [`FD_STEP`] carry about `1e-16 · |f| / 1e-6` of round-off, so gradients
/// below this floor are compared absolutely.
pub const REL_FLOOR: f64 = 1e-4;
pub const LAYER_TOLERANCE: f64 = 1e-5;
pub const MODEL_TOLERANCE: f64 = 1e-4;

/// Points are drawn from this open interval, away from the clamps.
const INTERIOR: (f64, f64) = (0.05, 0.95);

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub name: String,
    pub points: usize,
    /// Gradient entries compared.
    pub entries: usize,
    pub max_rel_err: f64,
    /// Where the largest error occurred, with both values there.
    pub worst: String,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradcheckReport {
    fn new(name: &str, tolerance: f64) -> Self {
        GradcheckReport {
            name: name.to_string(),
            points: 0,
            entries: 0,
            max_rel_err: 0.0,
            worst: String::new(),
            worst_analytic: 0.0,
            worst_numeric: 0.0,
            tolerance,
            passed: true,
        }
    }

    fn record(&mut self, analytic: f64, numeric: f64, at: impl FnOnce() -> String) {
        let e = rel_error(analytic, numeric);
        self.entries += 1;
        if !(e <= self.max_rel_err) {
            self.max_rel_err = e;
            self.worst = at();
            self.worst_analytic = analytic;
            self.worst_numeric = numeric;
        }
    }

    fn finish(mut self) -> Self {
        self.passed = self.max_rel_err < self.tolerance;
        self
    }

    pub fn summary(&self) -> String {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        format!(
            "{verdict} {} max_rel_err={:.3e} (<{:e}) over {} points, {} entries",
            self.name, self.max_rel_err, self.tolerance, self.points, self.entries
        )
    }
}

fn interior(rng: &mut impl Rng) -> f64 {
    rng.gen_range(INTERIOR.0..INTERIOR.1)
}

fn central(f: impl Fn(f64) -> Result<f64>, x: f64) -> Result<f64> {
    Ok((f(x + FD_STEP)? - f(x - FD_STEP)?) / (2.0 * FD_STEP))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Layer gradients with respect to weights and inputs.
pub fn check_layer(points: usize, seed: u64) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradcheckReport::new("layer", LAYER_TOLERANCE);
    for point in 0..points {
        let n = rng.gen_range(1..=8);
        let conj = rng.gen_range(0..=4);
        let disj = rng.gen_range(usize::from(conj == 0)..=4);
        let mut draw = |rows| Matrix::from_fn(rows, n, |_, _| interior(&mut rng));
        let layer = LogicLayer::new(draw(conj), draw(disj))?;
        let input: Vec<f64> = (0..n).map(|_| interior(&mut rng)).collect();
        let g: Vec<f64> = (0..conj + disj).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let (_, cache) = layer.forward_continuous(&input)?;
        let grads = layer.backward_continuous(&cache, &g)?;
        let objective = |l: &LogicLayer, x: &[f64]| -> Result<f64> { Ok(dot(&g, &l.forward_continuous(x)?.0)) };

        for (which, analytic) in [("conj", &grads.d_conj), ("disj", &grads.d_disj)] {
            for r in 0..analytic.rows() {
                for c in 0..n {
                    let numeric = central(
                        |w| {
                            let mut l = layer.clone();
                            let m = if which == "conj" { l.conj_mut() } else { l.disj_mut() };
                            m.set(r, c, w);
                            objective(&l, &input)
                        },
                        weight_at(&layer, which, r, c),
                    )?;
                    report.record(analytic.get(r, c), numeric, || format!("point {point} {which}[{r},{c}]"));
                }
            }
        }
        for i in 0..n {
            let numeric = central(
                |v| {
                    let mut x = input.clone();
                    x[i] = v;
                    objective(&layer, &x)
                },
                input[i],
            )?;
            report.record(grads.d_input[i], numeric, || format!("point {point} input[{i}]"));
        }
        report.points += 1;
    }
    Ok(report.finish())
}

fn weight_at(layer: &LogicLayer, which: &str, r: usize, c: usize) -> f64 {
    if which == "conj" {
        layer.conj().get(r, c)
    } else {
        layer.disj().get(r, c)
    }
}

/// Whole-model gradients of the continuous task loss with respect to the
/// logic weights and the head.
pub fn check_model(points: usize, seed: u64) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradcheckReport::new("model", MODEL_TOLERANCE);
    for point in 0..points {
        let k = rng.gen_range(2..=5);
        let classes = rng.gen_range(2..=3);
        let sizes = vec![rng.gen_range(2..=6), rng.gen_range(2..=6)];
        let config = ModelConfig::new(
            (0..k).map(|i| format!("c{i}")).collect(),
            (0..classes).map(|i| format!("y{i}")).collect(),
            sizes,
        );
        let init = InitOptions {
            logic_init_min: INTERIOR.0,
            logic_init_max: INTERIOR.1,
            head_init_scale: 1.0,
        };
        let mut model = CrlModel::initialize(config, PredictorSpec::Passthrough, &init, &mut rng)?;
        for b in model.head_bias_mut() {
            *b = rng.gen_range(-0.5..0.5);
        }
        let x: Vec<f64> = (0..k).map(|_| f64::from(u8::from(rng.gen_bool(0.5)))).collect();
        let label = rng.gen_range(0..classes);

        let trace = model.forward_continuous(&x)?;
        let grads = model.backward(&trace, label, GradientSource::Continuous)?;
        let loss_of = |m: &CrlModel| -> Result<f64> { loss::task_loss(&m.forward_continuous(&x)?.logits_continuous, label) };

        // Parameter slices in `param_slices_mut` order, paired with the
        // gradient slices in the same order.
        let analytic: Vec<Vec<f64>> = grads.slices().into_iter().map(<[f64]>::to_vec).collect();
        let params: Vec<Vec<f64>> = model.clone().param_slices_mut().into_iter().map(|(_, p)| p.to_vec()).collect();
        for (s, values) in params.iter().enumerate() {
            for (j, &at) in values.iter().enumerate() {
                let numeric = central(
                    |v| {
                        let mut m = model.clone();
                        m.param_slices_mut()[s].1[j] = v;
                        loss_of(&m)
                    },
                    at,
                )?;
                report.record(analytic[s][j], numeric, || format!("point {point} slice {s}[{j}]"));
            }
        }
        report.points += 1;
    }
    Ok(report.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rel_error_floor() {
        assert_eq!(rel_error(1.0, 1.0), 0.0);
        assert!((rel_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((rel_error(1e-9, 0.0) - 1e-5).abs() < 1e-18);
    }

    #[test]
    fn small_runs_pass() {
        let l = check_layer(50, 1).unwrap();
        assert!(l.passed, "{}", l.summary());
        assert!(l.entries > 50);
        let m = check_model(20, 1).unwrap();
        assert!(m.passed, "{}", m.summary());
    }

    #[test]
    fn report_flags_failure() {
        let mut r = GradcheckReport::new("x", 1e-5);
        r.record(1.0, 1.1, || "here".into());
        let r = r.finish();
        assert!(!r.passed);
        assert_eq!(r.worst, "here");
        assert!(r.summary().starts_with("FAIL x"));
    }
}
