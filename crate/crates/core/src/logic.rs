//! Boolean logical layers and their continuous relaxation.
//!
//! A layer holds two adjacency matrices over the previous layer's nodes: one
//! for conjunction nodes and one for disjunction nodes. Its output is the
//! conjunction block followed by the disjunction block.
//!
//! In the discrete form a conjunction node is the AND of the inputs it is
//! connected to (1 when it has no connections) and a disjunction node is the
//! OR (0 when it has none). The continuous form replaces every connection by a
//! factor
//!
//! ```text
//! F_c(n, w) = 1 - w (1 - n)        F_d(n, w) = 1 - n w
//! ```
//!
//! and squashes the product of the factors with `P(x) = 1 / (1 - ln x)`:
//! `conj = P(prod F_c)`, `disj = 1 - P(prod F_d)`. Products are accumulated
//! as log-sums, so `P` is evaluated as `1 / (1 - S)` with `S = sum ln F`.
//! On binary inputs with binary weights both forms agree exactly.

use serde::{Deserialize, Serialize};

use crate::error::{CrlError, Result};
use crate::matrix::Matrix;

/// Factors at or below this value count as zero: the node is dead, outputs its
/// absorbing value and passes no gradient.
pub const FACTOR_FLOOR: f64 = 1e-300;

/// Default threshold for turning continuous weights into connections.
pub const DEFAULT_WEIGHT_THRESHOLD: f64 = 0.5;

// Products of this many factors are formed directly before taking a log.
const CHUNK: usize = 16;
// A chunk product below this is recomputed factor by factor in log space.
const CHUNK_UNDERFLOW: f64 = 1e-280;

/// Conjunction factor `1 - w (1 - n)`.
#[inline]
pub fn f_c(n: f64, w: f64) -> f64 {
    1.0 - w * (1.0 - n)
}

/// Disjunction factor `1 - n w`.
#[inline]
pub fn f_d(n: f64, w: f64) -> f64 {
    1.0 - n * w
}

/// The projection `P` evaluated from the log of its argument.
///
/// `S = -inf` is the limit of a zero product and maps to 0.
pub fn project_logsum(s: f64) -> Result<f64> {
    if s > 0.0 || s.is_nan() {
        return Err(CrlError::PositiveLogSum(s));
    }
    if s == f64::NEG_INFINITY {
        return Ok(0.0);
    }
    Ok(1.0 / (1.0 - s))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Gate {
    Conj,
    Disj,
}

impl Gate {
    #[inline]
    fn factor(self, n: f64, w: f64) -> f64 {
        match self {
            Gate::Conj => f_c(n, w),
            Gate::Disj => f_d(n, w),
        }
    }
}

/// `sum_j ln F(n_j, w_j)`, or `None` when some factor is (numerically) zero.
fn row_logsum(gate: Gate, n: &[f64], w: &[f64]) -> Option<f64> {
    let mut s = 0.0;
    for (nc, wc) in n.chunks(CHUNK).zip(w.chunks(CHUNK)) {
        let mut p = 1.0;
        for (&a, &b) in nc.iter().zip(wc) {
            let f = gate.factor(a, b);
            if f <= FACTOR_FLOOR {
                return None;
            }
            p *= f;
        }
        if p >= CHUNK_UNDERFLOW {
            s += p.ln();
        } else {
            s += nc
                .iter()
                .zip(wc)
                .map(|(&a, &b)| gate.factor(a, b).ln())
                .sum::<f64>();
        }
    }
    Some(s)
}

/// Continuous conjunction of `n` over the weight row `w`.
pub fn conj_continuous(n: &[f64], w: &[f64]) -> Result<f64> {
    CrlError::check_len("conjunction row", n.len(), w.len())?;
    match row_logsum(Gate::Conj, n, w) {
        Some(s) => project_logsum(s),
        None => Ok(0.0),
    }
}

/// Continuous disjunction of `n` over the weight row `w`.
pub fn disj_continuous(n: &[f64], w: &[f64]) -> Result<f64> {
    CrlError::check_len("disjunction row", n.len(), w.len())?;
    match row_logsum(Gate::Disj, n, w) {
        Some(s) => Ok(1.0 - project_logsum(s)?),
        None => Ok(1.0),
    }
}

/// Entrywise threshold: 1 if `w >= threshold`, else 0.
#[inline]
pub fn binarize_weight(w: f64, threshold: f64) -> f64 {
    if w >= threshold {
        1.0
    } else {
        0.0
    }
}

fn is_binary(v: f64) -> bool {
    v == 0.0 || v == 1.0
}

/// Weights of one logical layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogicLayer {
    conj: Matrix,
    disj: Matrix,
}

/// Gradients matching a [`LogicLayer`] and its input.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGradients {
    pub d_conj: Matrix,
    pub d_disj: Matrix,
    pub d_input: Vec<f64>,
}

impl LayerGradients {
    pub fn zeros_like(layer: &LogicLayer) -> Self {
        LayerGradients {
            d_conj: Matrix::zeros(layer.conj.rows(), layer.conj.cols()),
            d_disj: Matrix::zeros(layer.disj.rows(), layer.disj.cols()),
            d_input: vec![0.0; layer.input_width()],
        }
    }
}

/// Values retained by [`LogicLayer::forward_continuous`] for the backward pass.
#[derive(Clone, Debug)]
pub struct LayerCache {
    input: Vec<f64>,
    // log-sum per node; `None` marks a dead node
    logsums: Vec<Option<f64>>,
    output: Vec<f64>,
    shape: (usize, usize, usize),
    digest: u64,
}

impl LayerCache {
    pub fn input(&self) -> &[f64] {
        &self.input
    }

    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

impl LogicLayer {
    /// Build a layer from its two adjacency matrices.
    ///
    /// Both must share the input width and hold values in `[0, 1]`.
    pub fn new(conj: Matrix, disj: Matrix) -> Result<Self> {
        let layer = LogicLayer { conj, disj };
        layer.validate()?;
        Ok(layer)
    }

    /// A layer with every weight set to `value`.
    pub fn constant(input: usize, conj_nodes: usize, disj_nodes: usize, value: f64) -> Self {
        let mut conj = Matrix::zeros(conj_nodes, input);
        let mut disj = Matrix::zeros(disj_nodes, input);
        conj.fill(value);
        disj.fill(value);
        LogicLayer { conj, disj }
    }

    pub fn validate(&self) -> Result<()> {
        CrlError::check_len("disjunction input width", self.conj.cols(), self.disj.cols())?;
        for &w in self.conj.as_slice().iter().chain(self.disj.as_slice()) {
            if !(0.0..=1.0).contains(&w) {
                return Err(CrlError::InvalidConfig(format!(
                    "logic weight {w} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }

    pub fn conj(&self) -> &Matrix {
        &self.conj
    }

    pub fn disj(&self) -> &Matrix {
        &self.disj
    }

    pub fn conj_mut(&mut self) -> &mut Matrix {
        &mut self.conj
    }

    pub fn disj_mut(&mut self) -> &mut Matrix {
        &mut self.disj
    }

    /// Both weight blocks as flat mutable slices, conjunction first.
    pub fn weights_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (self.conj.as_mut_slice(), self.disj.as_mut_slice())
    }

    pub fn input_width(&self) -> usize {
        self.conj.cols()
    }

    pub fn conj_count(&self) -> usize {
        self.conj.rows()
    }

    pub fn disj_count(&self) -> usize {
        self.disj.rows()
    }

    /// Number of output nodes.
    pub fn width(&self) -> usize {
        self.conj.rows() + self.disj.rows()
    }

    pub fn weight_count(&self) -> usize {
        self.conj.as_slice().len() + self.disj.as_slice().len()
    }

    /// Clamp every weight back into `[0, 1]`.
    pub fn project(&mut self) {
        for w in self
            .conj
            .as_mut_slice()
            .iter_mut()
            .chain(self.disj.as_mut_slice().iter_mut())
        {
            *w = w.clamp(0.0, 1.0);
        }
    }

    pub fn binarize(&self, threshold: f64) -> LogicLayer {
        LogicLayer {
            conj: self.conj.map(|w| binarize_weight(w, threshold)),
            disj: self.disj.map(|w| binarize_weight(w, threshold)),
        }
    }

    pub fn is_binarized(&self) -> bool {
        self.conj
            .as_slice()
            .iter()
            .chain(self.disj.as_slice())
            .all(|&w| is_binary(w))
    }

    /// Number of weights that binarize to 1.
    pub fn active_connections(&self, threshold: f64) -> usize {
        self.conj
            .as_slice()
            .iter()
            .chain(self.disj.as_slice())
            .filter(|&&w| w >= threshold)
            .count()
    }

    /// Discrete forward pass over a binary input with binarized weights.
    pub fn forward_discrete(&self, n: &[f64]) -> Result<Vec<f64>> {
        CrlError::check_len("layer input", self.input_width(), n.len())?;
        if let Some(&v) = n.iter().find(|&&v| !is_binary(v)) {
            return Err(CrlError::NonBinary {
                context: "discrete layer input",
                value: v,
            });
        }
        if let Some(&w) = self
            .conj
            .as_slice()
            .iter()
            .chain(self.disj.as_slice())
            .find(|&&w| !is_binary(w))
        {
            return Err(CrlError::NonBinary {
                context: "discrete layer weight",
                value: w,
            });
        }
        let mut out = Vec::with_capacity(self.width());
        for row in self.conj.iter_rows() {
            let all = row.iter().zip(n).all(|(&w, &v)| w == 0.0 || v == 1.0);
            out.push(if all { 1.0 } else { 0.0 });
        }
        for row in self.disj.iter_rows() {
            let any = row.iter().zip(n).any(|(&w, &v)| w == 1.0 && v == 1.0);
            out.push(if any { 1.0 } else { 0.0 });
        }
        Ok(out)
    }

    fn digest(&self) -> u64 {
        // FNV-1a over the weight bits; detects a cache used after an update.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for w in self.conj.as_slice().iter().chain(self.disj.as_slice()) {
            h ^= w.to_bits();
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }

    /// Continuous forward pass. Returns the node values and a cache for
    /// [`LogicLayer::backward_continuous`].
    pub fn forward_continuous(&self, n: &[f64]) -> Result<(Vec<f64>, LayerCache)> {
        CrlError::check_len("layer input", self.input_width(), n.len())?;
        let mut logsums = Vec::with_capacity(self.width());
        let mut output = Vec::with_capacity(self.width());
        for row in self.conj.iter_rows() {
            let s = row_logsum(Gate::Conj, n, row);
            output.push(match s {
                Some(s) => project_logsum(s)?,
                None => 0.0,
            });
            logsums.push(s);
        }
        for row in self.disj.iter_rows() {
            let s = row_logsum(Gate::Disj, n, row);
            output.push(match s {
                Some(s) => 1.0 - project_logsum(s)?,
                None => 1.0,
            });
            logsums.push(s);
        }
        let cache = LayerCache {
            input: n.to_vec(),
            logsums,
            output: output.clone(),
            shape: (self.conj_count(), self.disj_count(), self.input_width()),
            digest: self.digest(),
        };
        Ok((output, cache))
    }

    /// Analytic gradients of `sum_i upstream_i * out_i`.
    pub fn backward_continuous(&self, cache: &LayerCache, upstream: &[f64]) -> Result<LayerGradients> {
        let mut grads = LayerGradients::zeros_like(self);
        self.backward_accumulate(cache, upstream, &mut grads.d_conj, &mut grads.d_disj, &mut grads.d_input)?;
        Ok(grads)
    }

    /// Like [`LogicLayer::backward_continuous`], but adds the weight gradients
    /// into `d_conj`/`d_disj` and overwrites `d_input`.
    pub fn backward_accumulate(
        &self,
        cache: &LayerCache,
        upstream: &[f64],
        d_conj: &mut Matrix,
        d_disj: &mut Matrix,
        d_input: &mut [f64],
    ) -> Result<()> {
        let shape = (self.conj_count(), self.disj_count(), self.input_width());
        if cache.shape != shape {
            return Err(CrlError::StaleCache("layer shape differs from cached forward"));
        }
        if cache.digest != self.digest() {
            return Err(CrlError::StaleCache("weights changed since the forward pass"));
        }
        if upstream.len() != self.width() {
            return Err(CrlError::StaleCache("upstream gradient length differs from layer width"));
        }
        if d_conj.shape() != self.conj.shape()
            || d_disj.shape() != self.disj.shape()
            || d_input.len() != self.input_width()
        {
            return Err(CrlError::StaleCache("gradient buffers do not match layer shape"));
        }
        d_input.iter_mut().for_each(|g| *g = 0.0);
        let n = &cache.input;
        let mc = self.conj_count();

        for i in 0..mc {
            let up = upstream[i];
            let Some(s) = cache.logsums[i] else { continue };
            if up == 0.0 {
                continue;
            }
            let y = 1.0 / (1.0 - s);
            let scale = up * y * y;
            let w = self.conj.row(i);
            let dw = d_conj.row_mut(i);
            for j in 0..n.len() {
                let inv_f = scale / f_c(n[j], w[j]);
                dw[j] -= inv_f * (1.0 - n[j]);
                d_input[j] += inv_f * w[j];
            }
        }
        for i in 0..self.disj_count() {
            let up = upstream[mc + i];
            let Some(s) = cache.logsums[mc + i] else { continue };
            if up == 0.0 {
                continue;
            }
            // out = 1 - P(S): d out / dS = -y^2, and dF_d carries another minus sign.
            let y = 1.0 / (1.0 - s);
            let scale = up * y * y;
            let w = self.disj.row(i);
            let dw = d_disj.row_mut(i);
            for j in 0..n.len() {
                let inv_f = scale / f_d(n[j], w[j]);
                dw[j] += inv_f * n[j];
                d_input[j] += inv_f * w[j];
            }
        }
        Ok(())
    }
}

/// Connection lists of a binarized layer, for fast discrete evaluation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Adjacency {
    pub input_width: usize,
    pub conj: Vec<Vec<usize>>,
    pub disj: Vec<Vec<usize>>,
}

impl Adjacency {
    pub fn from_layer(layer: &LogicLayer, threshold: f64) -> Self {
        let lists = |m: &Matrix| {
            m.iter_rows()
                .map(|row| {
                    row.iter()
                        .enumerate()
                        .filter(|(_, &w)| w >= threshold)
                        .map(|(j, _)| j)
                        .collect()
                })
                .collect()
        };
        Adjacency {
            input_width: layer.input_width(),
            conj: lists(&layer.conj),
            disj: lists(&layer.disj),
        }
    }

    pub fn width(&self) -> usize {
        self.conj.len() + self.disj.len()
    }

    pub fn eval(&self, n: &[bool]) -> Vec<bool> {
        debug_assert_eq!(n.len(), self.input_width);
        self.conj
            .iter()
            .map(|c| c.iter().all(|&j| n[j]))
            .chain(self.disj.iter().map(|d| d.iter().any(|&j| n[j])))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const P_HALF: f64 = 0.590_616_109_149_641_2; // 1 / (1 + ln 2)

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn factor_examples() {
        assert_eq!(f_c(0.5, 1.0), 0.5);
        assert_eq!(f_c(0.3, 0.0), 1.0);
        assert_eq!(f_c(1.0, 0.7), 1.0);
        assert_eq!(f_d(0.5, 1.0), 0.5);
        assert_eq!(f_d(0.9, 0.0), 1.0);
        assert_eq!(f_d(0.0, 1.0), 1.0);
    }

    #[test]
    fn projection_examples() {
        assert_eq!(project_logsum(0.0).unwrap(), 1.0);
        assert!(close(project_logsum(0.5f64.ln()).unwrap(), 0.590616, 1e-6));
        assert!(close(project_logsum(0.5f64.ln()).unwrap(), P_HALF, 1e-15));
        assert_eq!(project_logsum(f64::NEG_INFINITY).unwrap(), 0.0);
        assert!(matches!(project_logsum(0.1), Err(CrlError::PositiveLogSum(_))));
    }

    #[test]
    fn conj_disj_examples() {
        assert!(close(conj_continuous(&[0.5], &[1.0]).unwrap(), P_HALF, 1e-15));
        assert_eq!(conj_continuous(&[0.3, 0.9], &[0.0, 0.0]).unwrap(), 1.0);
        assert!(close(disj_continuous(&[0.5], &[1.0]).unwrap(), 1.0 - P_HALF, 1e-15));
        assert!(close(disj_continuous(&[0.5], &[1.0]).unwrap(), 0.409384, 1e-6));
        assert_eq!(disj_continuous(&[0.3, 0.9], &[0.0, 0.0]).unwrap(), 0.0);
        assert!(conj_continuous(&[0.5, 0.5], &[1.0]).is_err());
        assert!(disj_continuous(&[0.5], &[]).is_err());
    }

    #[test]
    fn zero_factor_is_absorbing() {
        assert_eq!(conj_continuous(&[0.0, 1.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(disj_continuous(&[1.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
    }

    #[test]
    fn wide_rows_do_not_underflow() {
        // 256 factors of 0.01 multiply to 1e-512, far below f64 range.
        let n = vec![0.0; 256];
        let w = vec![0.99; 256];
        let y = conj_continuous(&n, &w).unwrap();
        let expected = 1.0 / (1.0 - 256.0 * 0.01f64.ln());
        assert!(close(y, expected, 1e-14), "{y} vs {expected}");
    }

    #[test]
    fn discrete_examples() {
        let layer = LogicLayer::new(
            Matrix::from_rows(vec![vec![1.0, 0.0, 1.0]]).unwrap(),
            Matrix::from_rows(vec![vec![0.0, 1.0, 0.0]]).unwrap(),
        )
        .unwrap();
        assert_eq!(layer.forward_discrete(&[1.0, 0.0, 1.0]).unwrap(), vec![1.0, 0.0]);

        let empty = LogicLayer::constant(2, 1, 1, 0.0);
        assert_eq!(empty.forward_discrete(&[1.0, 1.0]).unwrap(), vec![1.0, 0.0]);
        assert!(matches!(
            empty.forward_discrete(&[0.5, 1.0]),
            Err(CrlError::NonBinary { .. })
        ));
    }

    #[test]
    fn continuous_examples() {
        let zero = LogicLayer::constant(3, 2, 2, 0.0);
        let (out, _) = zero.forward_continuous(&[0.2, 0.7, 0.4]).unwrap();
        assert_eq!(out, vec![1.0, 1.0, 0.0, 0.0]);

        let single = LogicLayer::constant(1, 1, 1, 1.0);
        let (out, _) = single.forward_continuous(&[0.5]).unwrap();
        assert!(close(out[0], 0.590616, 1e-6));
        assert!(close(out[1], 0.409384, 1e-6));
        assert!(single.forward_continuous(&[0.5, 0.5]).is_err());
    }

    #[test]
    fn binarize_ties_go_up() {
        assert_eq!(binarize_weight(0.7, 0.5), 1.0);
        assert_eq!(binarize_weight(0.5, 0.5), 1.0);
        assert_eq!(binarize_weight(0.49, 0.5), 0.0);
    }

    #[test]
    fn invalid_weights_rejected() {
        let bad = Matrix::from_rows(vec![vec![1.2]]).unwrap();
        assert!(LogicLayer::new(bad, Matrix::zeros(0, 1)).is_err());
        let narrow = Matrix::zeros(1, 2);
        assert!(LogicLayer::new(Matrix::zeros(1, 3), narrow).is_err());
    }

    #[test]
    fn backward_trivial_cases() {
        let layer = LogicLayer::new(
            Matrix::from_rows(vec![vec![0.3, 0.6], vec![0.0, 0.0]]).unwrap(),
            Matrix::from_rows(vec![vec![0.0, 0.0]]).unwrap(),
        )
        .unwrap();
        let (_, cache) = layer.forward_continuous(&[0.4, 0.8]).unwrap();
        let g = layer.backward_continuous(&cache, &[0.0, 0.0, 0.0]).unwrap();
        assert!(g.d_input.iter().all(|&v| v == 0.0));
        assert!(g.d_conj.as_slice().iter().all(|&v| v == 0.0));

        // all-zero rows: constant outputs, no gradient w.r.t. the input
        let g = layer.backward_continuous(&cache, &[0.0, 1.0, 1.0]).unwrap();
        assert!(g.d_input.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stale_cache_detected() {
        let mut layer = LogicLayer::constant(2, 1, 1, 0.4);
        let (_, cache) = layer.forward_continuous(&[0.4, 0.8]).unwrap();
        layer.conj_mut().set(0, 0, 0.5);
        assert!(matches!(
            layer.backward_continuous(&cache, &[1.0, 1.0]),
            Err(CrlError::StaleCache(_))
        ));
        let other = LogicLayer::constant(3, 1, 1, 0.4);
        assert!(other.backward_continuous(&cache, &[1.0, 1.0]).is_err());
        layer.conj_mut().set(0, 0, 0.4);
        assert!(layer.backward_continuous(&cache, &[1.0]).is_err());
    }

    #[test]
    fn dead_node_has_zero_gradient() {
        let layer = LogicLayer::constant(2, 1, 1, 1.0);
        let (out, cache) = layer.forward_continuous(&[0.0, 1.0]).unwrap();
        assert_eq!(out[0], 0.0);
        let g = layer.backward_continuous(&cache, &[1.0, 0.0]).unwrap();
        assert!(g.d_conj.as_slice().iter().all(|&v| v == 0.0));
        assert!(g.d_input.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn adjacency_matches_matrix_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let n_in = rng.gen_range(1..10);
            let layer = LogicLayer::new(
                Matrix::from_fn(rng.gen_range(0..5), n_in, |_, _| rng.gen()),
                Matrix::from_fn(rng.gen_range(0..5), n_in, |_, _| rng.gen()),
            )
            .unwrap();
            let bits: Vec<bool> = (0..n_in).map(|_| rng.gen()).collect();
            let x: Vec<f64> = bits.iter().map(|&b| f64::from(u8::from(b))).collect();
            let adj = Adjacency::from_layer(&layer, 0.5);
            let fast: Vec<f64> = adj.eval(&bits).into_iter().map(|b| f64::from(u8::from(b))).collect();
            assert_eq!(fast, layer.binarize(0.5).forward_discrete(&x).unwrap());
        }
    }

    fn unit() -> impl Strategy<Value = f64> {
        0.0..=1.0f64
    }

    proptest! {
        #[test]
        fn outputs_stay_in_unit_interval(
            pairs in prop::collection::vec((unit(), unit()), 1..40)
        ) {
            let (n, w): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let c = conj_continuous(&n, &w).unwrap();
            let d = disj_continuous(&n, &w).unwrap();
            prop_assert!((0.0..=1.0).contains(&c));
            prop_assert!((0.0..=1.0).contains(&d));
        }

        #[test]
        fn monotone_in_inputs_and_weights(
            pairs in prop::collection::vec((unit(), unit()), 1..12),
            idx in 0usize..12,
            bump in 0.0..0.5f64,
        ) {
            let (n, w): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let j = idx % n.len();
            let mut n_up = n.clone();
            n_up[j] = (n[j] + bump).min(1.0);
            let mut w_up = w.clone();
            w_up[j] = (w[j] + bump).min(1.0);
            let c = conj_continuous(&n, &w).unwrap();
            let d = disj_continuous(&n, &w).unwrap();
            prop_assert!(conj_continuous(&n_up, &w).unwrap() >= c - 1e-15);
            prop_assert!(disj_continuous(&n_up, &w).unwrap() >= d - 1e-15);
            prop_assert!(conj_continuous(&n, &w_up).unwrap() <= c + 1e-15);
            prop_assert!(disj_continuous(&n, &w_up).unwrap() >= d - 1e-15);
        }
    }
}
