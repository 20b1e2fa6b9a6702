//! Concept predictors: maps from an input vector to concept probabilities.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CrlError, Result};
use crate::matrix::Matrix;

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// One hidden `tanh` layer followed by a sigmoid output per concept.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub hidden_weights: Matrix,
    pub hidden_bias: Vec<f64>,
    pub output_weights: Matrix,
    pub output_bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpGradients {
    pub hidden_weights: Matrix,
    pub hidden_bias: Vec<f64>,
    pub output_weights: Matrix,
    pub output_bias: Vec<f64>,
}

/// Intermediate values of an MLP forward pass.
#[derive(Clone, Debug)]
pub struct MlpCache {
    input: Vec<f64>,
    hidden: Vec<f64>,
    output: Vec<f64>,
}

impl Mlp {
    /// All-zero parameters; every output is `sigmoid(0) = 0.5`.
    pub fn zeros(input: usize, hidden: usize, concepts: usize) -> Self {
        Mlp {
            hidden_weights: Matrix::zeros(hidden, input),
            hidden_bias: vec![0.0; hidden],
            output_weights: Matrix::zeros(concepts, hidden),
            output_bias: vec![0.0; concepts],
        }
    }

    /// Uniform Glorot initialization, zero biases.
    pub fn random(input: usize, hidden: usize, concepts: usize, rng: &mut impl Rng) -> Self {
        let a1 = (6.0 / (input + hidden) as f64).sqrt();
        let a2 = (6.0 / (hidden + concepts) as f64).sqrt();
        Mlp {
            hidden_weights: Matrix::from_fn(hidden, input, |_, _| rng.gen_range(-a1..a1)),
            hidden_bias: vec![0.0; hidden],
            output_weights: Matrix::from_fn(concepts, hidden, |_, _| rng.gen_range(-a2..a2)),
            output_bias: vec![0.0; concepts],
        }
    }

    pub fn input_width(&self) -> usize {
        self.hidden_weights.cols()
    }

    pub fn output_width(&self) -> usize {
        self.output_weights.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.hidden_weights.rows();
        CrlError::check_len("mlp hidden bias", h, self.hidden_bias.len())?;
        CrlError::check_len("mlp output weight columns", h, self.output_weights.cols())?;
        CrlError::check_len("mlp output bias", self.output_weights.rows(), self.output_bias.len())
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, MlpCache)> {
        CrlError::check_len("concept predictor input", self.input_width(), x.len())?;
        let hidden: Vec<f64> = self
            .hidden_weights
            .iter_rows()
            .zip(&self.hidden_bias)
            .map(|(row, b)| (dot(row, x) + b).tanh())
            .collect();
        let output: Vec<f64> = self
            .output_weights
            .iter_rows()
            .zip(&self.output_bias)
            .map(|(row, b)| sigmoid(dot(row, &hidden) + b))
            .collect();
        let cache = MlpCache {
            input: x.to_vec(),
            hidden,
            output: output.clone(),
        };
        Ok((output, cache))
    }

    /// Gradients of `sum_k d_out_k * out_k` with respect to the parameters.
    pub fn backward(&self, cache: &MlpCache, d_out: &[f64]) -> Result<MlpGradients> {
        CrlError::check_len("concept gradient", self.output_width(), d_out.len())?;
        if cache.hidden.len() != self.hidden_weights.rows() || cache.input.len() != self.input_width() {
            return Err(CrlError::StaleCache("mlp cache shape differs from predictor"));
        }
        let dz: Vec<f64> = d_out
            .iter()
            .zip(&cache.output)
            .map(|(g, c)| g * c * (1.0 - c))
            .collect();
        let output_weights = Matrix::from_fn(dz.len(), cache.hidden.len(), |k, j| dz[k] * cache.hidden[j]);
        let mut d_hidden = vec![0.0; cache.hidden.len()];
        for (k, row) in self.output_weights.iter_rows().enumerate() {
            for (dh, w) in d_hidden.iter_mut().zip(row) {
                *dh += dz[k] * w;
            }
        }
        let da: Vec<f64> = d_hidden
            .iter()
            .zip(&cache.hidden)
            .map(|(g, h)| g * (1.0 - h * h))
            .collect();
        let hidden_weights = Matrix::from_fn(da.len(), cache.input.len(), |j, i| da[j] * cache.input[i]);
        Ok(MlpGradients {
            hidden_weights,
            hidden_bias: da,
            output_weights,
            output_bias: dz,
        })
    }
}

impl MlpGradients {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        MlpGradients {
            hidden_weights: Matrix::zeros(mlp.hidden_weights.rows(), mlp.hidden_weights.cols()),
            hidden_bias: vec![0.0; mlp.hidden_bias.len()],
            output_weights: Matrix::zeros(mlp.output_weights.rows(), mlp.output_weights.cols()),
            output_bias: vec![0.0; mlp.output_bias.len()],
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `g`: the map from inputs to concept probabilities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConceptPredictor {
    /// Inputs already are concept probabilities.
    Passthrough { width: usize },
    Mlp(Mlp),
}

#[derive(Clone, Debug)]
pub enum PredictorCache {
    Passthrough,
    Mlp(MlpCache),
}

impl ConceptPredictor {
    pub fn input_width(&self) -> usize {
        match self {
            ConceptPredictor::Passthrough { width } => *width,
            ConceptPredictor::Mlp(m) => m.input_width(),
        }
    }

    pub fn concept_count(&self) -> usize {
        match self {
            ConceptPredictor::Passthrough { width } => *width,
            ConceptPredictor::Mlp(m) => m.output_width(),
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, PredictorCache)> {
        match self {
            ConceptPredictor::Passthrough { width } => {
                CrlError::check_len("concept predictor input", *width, x.len())?;
                if let Some(&v) = x.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                    return Err(CrlError::InvalidConfig(format!(
                        "passthrough input {v} is not a probability"
                    )));
                }
                Ok((x.to_vec(), PredictorCache::Passthrough))
            }
            ConceptPredictor::Mlp(m) => {
                let (out, cache) = m.forward(x)?;
                Ok((out, PredictorCache::Mlp(cache)))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn passthrough_is_identity() {
        let p = ConceptPredictor::Passthrough { width: 2 };
        assert_eq!(p.forward(&[0.2, 0.9]).unwrap().0, vec![0.2, 0.9]);
        assert!(p.forward(&[0.2]).is_err());
        assert!(p.forward(&[0.2, 1.5]).is_err());
    }

    #[test]
    fn zero_mlp_outputs_half() {
        let m = Mlp::zeros(3, 4, 2);
        let (out, _) = m.forward(&[1.0, -2.0, 0.3]).unwrap();
        assert_eq!(out, vec![0.5, 0.5]);
    }

    #[test]
    fn random_mlp_outputs_open_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let m = Mlp::random(5, 6, 3, &mut rng);
            let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let (out, _) = m.forward(&x).unwrap();
            assert!(out.iter().all(|&c| c > 0.0 && c < 1.0));
        }
    }

    #[test]
    fn mlp_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut m = Mlp::random(3, 4, 2, &mut rng);
        let x = [0.3, -0.7, 1.1];
        let d_out = [0.4, -1.3];
        let (_, cache) = m.forward(&x).unwrap();
        let g = m.backward(&cache, &d_out).unwrap();
        let objective = |m: &Mlp| -> f64 {
            let (o, _) = m.forward(&x).unwrap();
            o.iter().zip(&d_out).map(|(a, b)| a * b).sum()
        };
        let h = 1e-6;
        for (i, j) in [(0, 0), (2, 1), (3, 2)] {
            let orig = m.hidden_weights.get(i, j);
            m.hidden_weights.set(i, j, orig + h);
            let up = objective(&m);
            m.hidden_weights.set(i, j, orig - h);
            let down = objective(&m);
            m.hidden_weights.set(i, j, orig);
            let fd = (up - down) / (2.0 * h);
            assert!((fd - g.hidden_weights.get(i, j)).abs() < 1e-8);
        }
        let orig = m.output_bias[1];
        m.output_bias[1] = orig + h;
        let up = objective(&m);
        m.output_bias[1] = orig - h;
        let down = objective(&m);
        m.output_bias[1] = orig;
        assert!(((up - down) / (2.0 * h) - g.output_bias[1]).abs() < 1e-8);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
    }
}
