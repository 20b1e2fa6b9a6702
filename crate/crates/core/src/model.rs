//! The composed classifier: concept predictor, binarizer, logic stack and
//! linear head, with its discrete and continuous forward passes and the
//! grafted backward pass.

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CrlError, Result};
use crate::logic::{Adjacency, LayerCache, LogicLayer, DEFAULT_WEIGHT_THRESHOLD};
use crate::loss;
use crate::matrix::Matrix;
pub use crate::optim::ParamGroup;
use crate::predictor::{ConceptPredictor, Mlp, MlpGradients, PredictorCache};

pub const DEFAULT_CONCEPT_THRESHOLD: f64 = 0.5;
pub const CHECKPOINT_FORMAT: &str = "crl_checkpoint_v1";

/// Entrywise `p >= threshold`.
pub fn binarize_concepts(probs: &[f64], threshold: f64) -> Vec<bool> {
    probs.iter().map(|&p| p >= threshold).collect()
}

/// Straight-through estimator: the gradient w.r.t. the binarized concepts is
/// used unchanged as the gradient w.r.t. the probabilities.
pub fn ste_backward(grad_binary: &[f64]) -> Vec<f64> {
    grad_binary.to_vec()
}

pub(crate) fn bits_to_f64(bits: &[bool]) -> Vec<f64> {
    bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
}

/// Shape and threshold settings of a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub concept_names: Vec<String>,
    pub class_names: Vec<String>,
    /// Node count of every logic layer, input side first.
    pub layer_sizes: Vec<usize>,
    /// Share of each layer given to conjunction nodes (rounded up).
    #[serde(default = "default_conj_fraction")]
    pub conj_fraction: f64,
    pub concept_threshold: f64,
    pub weight_threshold: f64,
}

fn default_conj_fraction() -> f64 {
    0.5
}

impl ModelConfig {
    pub fn new(concept_names: Vec<String>, class_names: Vec<String>, layer_sizes: Vec<usize>) -> Self {
        ModelConfig {
            concept_names,
            class_names,
            layer_sizes,
            conj_fraction: default_conj_fraction(),
            concept_threshold: DEFAULT_CONCEPT_THRESHOLD,
            weight_threshold: DEFAULT_WEIGHT_THRESHOLD,
        }
    }

    pub fn concept_count(&self) -> usize {
        self.concept_names.len()
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    /// `(conjunction, disjunction)` node counts of a layer with `size` nodes.
    pub fn split(&self, size: usize) -> (usize, usize) {
        let conj = ((size as f64) * self.conj_fraction).ceil() as usize;
        let conj = conj.min(size);
        (conj, size - conj)
    }

    pub fn validate(&self) -> Result<()> {
        if self.concept_names.is_empty() {
            return Err(CrlError::InvalidConfig("at least one concept is required".into()));
        }
        if self.class_names.len() < 2 {
            return Err(CrlError::InvalidConfig("at least two classes are required".into()));
        }
        if self.layer_sizes.is_empty() || self.layer_sizes.contains(&0) {
            return Err(CrlError::InvalidConfig(
                "layer sizes must be a nonempty list of positive counts".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.conj_fraction) {
            return Err(CrlError::InvalidConfig("conj_fraction must lie in [0, 1]".into()));
        }
        for (name, t) in [
            ("concept_threshold", self.concept_threshold),
            ("weight_threshold", self.weight_threshold),
        ] {
            if !(t > 0.0 && t < 1.0) {
                return Err(CrlError::InvalidConfig(format!("{name} must lie in (0, 1), got {t}")));
            }
        }
        Ok(())
    }
}

/// How fresh parameters are drawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitOptions {
    /// Logic weights are drawn uniformly from `[logic_init_min, logic_init_max)`.
    pub logic_init_min: f64,
    pub logic_init_max: f64,
    /// Head weights are drawn uniformly from `±head_init_scale / sqrt(R)`.
    pub head_init_scale: f64,
}

impl Default for InitOptions {
    fn default() -> Self {
        InitOptions {
            logic_init_min: 0.0,
            logic_init_max: 0.5,
            head_init_scale: 1.0,
        }
    }
}

/// Which concept predictor a fresh model gets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PredictorSpec {
    Passthrough,
    Mlp { input_width: usize, hidden_width: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrlModel {
    config: ModelConfig,
    predictor: ConceptPredictor,
    layers: Vec<LogicLayer>,
    /// R x L; row `i` holds the class weights of rule `i`.
    head_weights: Matrix,
    head_bias: Vec<f64>,
}

/// Connection lists of every binarized layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DiscreteNetwork {
    pub layers: Vec<Adjacency>,
}

impl DiscreteNetwork {
    /// Final-layer node values for binary concepts.
    pub fn eval(&self, concepts: &[bool]) -> Vec<bool> {
        self.layers
            .iter()
            .fold(concepts.to_vec(), |n, layer| layer.eval(&n))
    }
}

/// Output of [`CrlModel::forward_discrete`].
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteOutput {
    pub concept_probs: Vec<f64>,
    pub concepts: Vec<bool>,
    pub rules: Vec<bool>,
    pub logits: Vec<f64>,
}

impl DiscreteOutput {
    pub fn predicted_class(&self) -> usize {
        argmax(&self.logits)
    }
}

/// Everything both branches computed for one input.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub concept_probs: Vec<f64>,
    pub concepts: Vec<bool>,
    pub rules_continuous: Vec<f64>,
    pub rules_discrete: Vec<bool>,
    pub logits_discrete: Vec<f64>,
    pub logits_continuous: Vec<f64>,
    predictor_cache: PredictorCache,
    layer_caches: Vec<LayerCache>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogicGradients {
    pub conj: Matrix,
    pub disj: Matrix,
}

/// Gradients for every parameter of a [`CrlModel`].
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGradients {
    pub predictor: Option<MlpGradients>,
    pub layers: Vec<LogicGradients>,
    pub head_weights: Matrix,
    pub head_bias: Vec<f64>,
    /// Gradient that reached the concept probabilities (last backward call).
    pub concept_probs: Vec<f64>,
}

/// Where the task-loss gradient is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradientSource {
    /// At the discrete logits, pushed through the continuous graph.
    Grafted,
    /// At the continuous logits; the plain gradient of the relaxed model.
    Continuous,
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

impl CrlModel {
    /// Assemble a model from explicit parameters, checking every shape.
    pub fn from_parts(
        config: ModelConfig,
        predictor: ConceptPredictor,
        layers: Vec<LogicLayer>,
        head_weights: Matrix,
        head_bias: Vec<f64>,
    ) -> Result<Self> {
        let model = CrlModel {
            config,
            predictor,
            layers,
            head_weights,
            head_bias,
        };
        model.validate()?;
        Ok(model)
    }

    /// A freshly initialized model.
    pub fn initialize(
        config: ModelConfig,
        predictor: PredictorSpec,
        init: &InitOptions,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        let k = config.concept_count();
        let predictor = match predictor {
            PredictorSpec::Passthrough => ConceptPredictor::Passthrough { width: k },
            PredictorSpec::Mlp {
                input_width,
                hidden_width,
            } => ConceptPredictor::Mlp(Mlp::random(input_width, hidden_width, k, rng)),
        };
        let mut layers = Vec::with_capacity(config.layer_sizes.len());
        let mut input = k;
        for &size in &config.layer_sizes {
            let (mc, md) = config.split(size);
            let range = init.logic_init_min..init.logic_init_max;
            let conj = Matrix::from_fn(mc, input, |_, _| rng.gen_range(range.clone()));
            let disj = Matrix::from_fn(md, input, |_, _| rng.gen_range(range.clone()));
            layers.push(LogicLayer::new(conj, disj)?);
            input = size;
        }
        let bound = init.head_init_scale / (input as f64).sqrt();
        let head_weights = Matrix::from_fn(input, config.class_count(), |_, _| rng.gen_range(-bound..bound));
        let head_bias = vec![0.0; config.class_count()];
        CrlModel::from_parts(config, predictor, layers, head_weights, head_bias)
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let k = self.config.concept_count();
        CrlError::check_len("predictor concept count", k, self.predictor.concept_count())?;
        if let ConceptPredictor::Mlp(m) = &self.predictor {
            m.validate()?;
        }
        CrlError::check_len("logic layer count", self.config.layer_sizes.len(), self.layers.len())?;
        let mut input = k;
        for (layer, &size) in self.layers.iter().zip(&self.config.layer_sizes) {
            layer.validate()?;
            CrlError::check_len("logic layer input width", input, layer.input_width())?;
            CrlError::check_len("logic layer width", size, layer.width())?;
            input = size;
        }
        CrlError::check_len("head rows", input, self.head_weights.rows())?;
        CrlError::check_len("head columns", self.config.class_count(), self.head_weights.cols())?;
        CrlError::check_len("head bias", self.config.class_count(), self.head_bias.len())
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn predictor(&self) -> &ConceptPredictor {
        &self.predictor
    }

    pub fn layers(&self) -> &[LogicLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LogicLayer] {
        &mut self.layers
    }

    pub fn head_weights(&self) -> &Matrix {
        &self.head_weights
    }

    pub fn head_bias(&self) -> &[f64] {
        &self.head_bias
    }

    pub fn head_weights_mut(&mut self) -> &mut Matrix {
        &mut self.head_weights
    }

    pub fn head_bias_mut(&mut self) -> &mut [f64] {
        &mut self.head_bias
    }

    pub fn concept_count(&self) -> usize {
        self.config.concept_count()
    }

    pub fn class_count(&self) -> usize {
        self.config.class_count()
    }

    /// Number of final-layer nodes.
    pub fn rule_count(&self) -> usize {
        self.head_weights.rows()
    }

    pub fn input_width(&self) -> usize {
        self.predictor.input_width()
    }

    /// `ĉ = g(x)`.
    pub fn predict_concepts(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.predictor.forward(x)?.0)
    }

    pub fn discrete_network(&self) -> DiscreteNetwork {
        let t = self.config.weight_threshold;
        DiscreteNetwork {
            layers: self.layers.iter().map(|l| Adjacency::from_layer(l, t)).collect(),
        }
    }

    /// `u + sum of the head rows of fired rules`, summed in rule order.
    pub fn head_discrete(&self, rules: &[bool]) -> Vec<f64> {
        let mut logits = self.head_bias.clone();
        for (i, _) in rules.iter().enumerate().filter(|(_, &r)| r) {
            for (z, w) in logits.iter_mut().zip(self.head_weights.row(i)) {
                *z += w;
            }
        }
        logits
    }

    fn head_continuous(&self, rules: &[f64]) -> Vec<f64> {
        let mut logits = self.head_bias.clone();
        for (i, &r) in rules.iter().enumerate() {
            if r == 0.0 {
                continue;
            }
            for (z, w) in logits.iter_mut().zip(self.head_weights.row(i)) {
                *z += r * w;
            }
        }
        logits
    }

    /// Discrete prediction `f(r(q(g(x))) | W)`.
    pub fn forward_discrete(&self, x: &[f64]) -> Result<DiscreteOutput> {
        self.forward_discrete_with(&self.discrete_network(), x)
    }

    /// [`CrlModel::forward_discrete`] with a prebuilt network.
    pub fn forward_discrete_with(&self, net: &DiscreteNetwork, x: &[f64]) -> Result<DiscreteOutput> {
        let concept_probs = self.predict_concepts(x)?;
        self.forward_discrete_from_probs(net, concept_probs)
    }

    /// Discrete prediction from already-predicted concept probabilities.
    pub fn forward_discrete_from_probs(
        &self,
        net: &DiscreteNetwork,
        concept_probs: Vec<f64>,
    ) -> Result<DiscreteOutput> {
        CrlError::check_len("concept probabilities", self.concept_count(), concept_probs.len())?;
        let concepts = binarize_concepts(&concept_probs, self.config.concept_threshold);
        let rules = net.eval(&concepts);
        let logits = self.head_discrete(&rules);
        Ok(DiscreteOutput {
            concept_probs,
            concepts,
            rules,
            logits,
        })
    }

    /// Both branches on one input.
    pub fn forward_continuous(&self, x: &[f64]) -> Result<ForwardTrace> {
        self.forward_continuous_with(&self.discrete_network(), x)
    }

    pub fn forward_continuous_with(&self, net: &DiscreteNetwork, x: &[f64]) -> Result<ForwardTrace> {
        let (concept_probs, predictor_cache) = self.predictor.forward(x)?;
        let concepts = binarize_concepts(&concept_probs, self.config.concept_threshold);
        let rules_discrete = net.eval(&concepts);
        let logits_discrete = self.head_discrete(&rules_discrete);

        let mut layer_caches = Vec::with_capacity(self.layers.len());
        let mut n = bits_to_f64(&concepts);
        for layer in &self.layers {
            let (out, cache) = layer.forward_continuous(&n)?;
            layer_caches.push(cache);
            n = out;
        }
        let logits_continuous = self.head_continuous(&n);
        Ok(ForwardTrace {
            concept_probs,
            concepts,
            rules_continuous: n,
            rules_discrete,
            logits_discrete,
            logits_continuous,
            predictor_cache,
            layer_caches,
        })
    }

    /// Gradient of the task loss, grafted: `softmax(ŷ) - onehot(y)` is taken
    /// at the discrete logits and pushed back through the continuous graph.
    pub fn backward_grafted(&self, trace: &ForwardTrace, label: usize) -> Result<ModelGradients> {
        self.backward(trace, label, GradientSource::Grafted)
    }

    pub fn backward(&self, trace: &ForwardTrace, label: usize, source: GradientSource) -> Result<ModelGradients> {
        let logits = match source {
            GradientSource::Grafted => &trace.logits_discrete,
            GradientSource::Continuous => &trace.logits_continuous,
        };
        let d_logits = loss::task_loss_grad(logits, label)?;
        let mut grads = ModelGradients::zeros_like(self);
        self.backward_into(trace, &d_logits, None, &mut grads)?;
        Ok(grads)
    }

    /// Adds the gradients of `d_logits · ȳ (+ extra · ĉ)` into `acc`.
    ///
    /// `extra_concept_grad` is added at the concept probabilities after the
    /// straight-through step, which is where the concept loss enters.
    pub fn backward_into(
        &self,
        trace: &ForwardTrace,
        d_logits: &[f64],
        extra_concept_grad: Option<&[f64]>,
        acc: &mut ModelGradients,
    ) -> Result<()> {
        let l = self.class_count();
        CrlError::check_len("logit gradient", l, d_logits.len())?;
        if trace.layer_caches.len() != self.layers.len()
            || trace.rules_continuous.len() != self.rule_count()
            || trace.concept_probs.len() != self.concept_count()
        {
            return Err(CrlError::StaleCache("trace does not belong to this model"));
        }
        if acc.layers.len() != self.layers.len() {
            return Err(CrlError::StaleCache("gradient accumulator does not match model"));
        }

        let mut upstream = vec![0.0; self.rule_count()];
        for (i, (&r, up)) in trace.rules_continuous.iter().zip(upstream.iter_mut()).enumerate() {
            let w = self.head_weights.row(i);
            let dw = acc.head_weights.row_mut(i);
            let mut s = 0.0;
            for c in 0..l {
                dw[c] += d_logits[c] * r;
                s += w[c] * d_logits[c];
            }
            *up = s;
        }
        for (b, g) in acc.head_bias.iter_mut().zip(d_logits) {
            *b += g;
        }

        for ((layer, cache), grads) in self
            .layers
            .iter()
            .zip(&trace.layer_caches)
            .zip(acc.layers.iter_mut())
            .rev()
        {
            let mut d_input = vec![0.0; layer.input_width()];
            layer.backward_accumulate(cache, &upstream, &mut grads.conj, &mut grads.disj, &mut d_input)?;
            upstream = d_input;
        }

        let mut d_probs = ste_backward(&upstream);
        if let Some(extra) = extra_concept_grad {
            CrlError::check_len("concept gradient", d_probs.len(), extra.len())?;
            for (d, e) in d_probs.iter_mut().zip(extra) {
                *d += e;
            }
        }
        if let (ConceptPredictor::Mlp(mlp), PredictorCache::Mlp(cache)) = (&self.predictor, &trace.predictor_cache) {
            let g = mlp.backward(cache, &d_probs)?;
            let acc_p = acc
                .predictor
                .as_mut()
                .ok_or(CrlError::StaleCache("gradient accumulator lacks predictor"))?;
            acc_p.hidden_weights.add_scaled(&g.hidden_weights, 1.0);
            acc_p.output_weights.add_scaled(&g.output_weights, 1.0);
            add_into(&mut acc_p.hidden_bias, &g.hidden_bias);
            add_into(&mut acc_p.output_bias, &g.output_bias);
        }
        acc.concept_probs = d_probs;
        Ok(())
    }

    /// Mutable parameter slices in a fixed order, tagged by group.
    pub fn param_slices_mut(&mut self) -> Vec<(ParamGroup, &mut [f64])> {
        let mut out: Vec<(ParamGroup, &mut [f64])> = Vec::new();
        if let ConceptPredictor::Mlp(m) = &mut self.predictor {
            out.push((ParamGroup::Predictor, m.hidden_weights.as_mut_slice()));
            out.push((ParamGroup::Predictor, &mut m.hidden_bias));
            out.push((ParamGroup::Predictor, m.output_weights.as_mut_slice()));
            out.push((ParamGroup::Predictor, &mut m.output_bias));
        }
        for layer in &mut self.layers {
            let (conj, disj) = layer.weights_mut();
            out.push((ParamGroup::Logic, conj));
            out.push((ParamGroup::Logic, disj));
        }
        out.push((ParamGroup::Head, self.head_weights.as_mut_slice()));
        out.push((ParamGroup::Head, &mut self.head_bias));
        out
    }

    /// SHA-256 of the checkpoint document, hex encoded.
    pub fn fingerprint(&self) -> String {
        let doc = self.to_checkpoint_json().expect("model serializes");
        let digest = Sha256::digest(doc.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_checkpoint_json(&self) -> Result<String> {
        let doc = CheckpointRef {
            format: CHECKPOINT_FORMAT,
            concept_count: self.concept_count(),
            class_count: self.class_count(),
            config: &self.config,
            predictor: &self.predictor,
            logic_layers: &self.layers,
            head_weights: &self.head_weights,
            head_bias: &self.head_bias,
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_checkpoint_json(text: &str) -> Result<Self> {
        let doc: CheckpointDoc = serde_json::from_str(text)?;
        if doc.format != CHECKPOINT_FORMAT {
            return Err(CrlError::UnsupportedVersion {
                kind: "checkpoint",
                found: doc.format,
                expected: CHECKPOINT_FORMAT,
            });
        }
        CrlError::check_len("checkpoint concept count", doc.concept_count, doc.config.concept_count())?;
        CrlError::check_len("checkpoint class count", doc.class_count, doc.config.class_count())?;
        CrlModel::from_parts(doc.config, doc.predictor, doc.logic_layers, doc.head_weights, doc.head_bias)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_checkpoint_json()? + "\n").map_err(|e| CrlError::io(path, e))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CrlError::io(path, e))?;
        CrlModel::from_checkpoint_json(&text)
    }
}

fn add_into(acc: &mut [f64], g: &[f64]) {
    for (a, b) in acc.iter_mut().zip(g) {
        *a += b;
    }
}

#[derive(Serialize)]
struct CheckpointRef<'a> {
    format: &'a str,
    concept_count: usize,
    class_count: usize,
    config: &'a ModelConfig,
    predictor: &'a ConceptPredictor,
    logic_layers: &'a [LogicLayer],
    head_weights: &'a Matrix,
    head_bias: &'a [f64],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointDoc {
    format: String,
    concept_count: usize,
    class_count: usize,
    config: ModelConfig,
    predictor: ConceptPredictor,
    logic_layers: Vec<LogicLayer>,
    head_weights: Matrix,
    head_bias: Vec<f64>,
}

impl ModelGradients {
    pub fn zeros_like(model: &CrlModel) -> Self {
        ModelGradients {
            predictor: match &model.predictor {
                ConceptPredictor::Mlp(m) => Some(MlpGradients::zeros_like(m)),
                ConceptPredictor::Passthrough { .. } => None,
            },
            layers: model
                .layers
                .iter()
                .map(|l| LogicGradients {
                    conj: Matrix::zeros(l.conj_count(), l.input_width()),
                    disj: Matrix::zeros(l.disj_count(), l.input_width()),
                })
                .collect(),
            head_weights: Matrix::zeros(model.head_weights.rows(), model.head_weights.cols()),
            head_bias: vec![0.0; model.head_bias.len()],
            concept_probs: vec![0.0; model.concept_count()],
        }
    }

    /// Slices in the same order as [`CrlModel::param_slices_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        if let Some(p) = &self.predictor {
            out.push(p.hidden_weights.as_slice());
            out.push(&p.hidden_bias);
            out.push(p.output_weights.as_slice());
            out.push(&p.output_bias);
        }
        for l in &self.layers {
            out.push(l.conj.as_slice());
            out.push(l.disj.as_slice());
        }
        out.push(self.head_weights.as_slice());
        out.push(&self.head_bias);
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        if let Some(p) = &mut self.predictor {
            out.push(p.hidden_weights.as_mut_slice());
            out.push(&mut p.hidden_bias);
            out.push(p.output_weights.as_mut_slice());
            out.push(&mut p.output_bias);
        }
        for l in &mut self.layers {
            out.push(l.conj.as_mut_slice());
            out.push(l.disj.as_mut_slice());
        }
        out.push(self.head_weights.as_mut_slice());
        out.push(&mut self.head_bias);
        out
    }

    /// `self += other`.
    pub fn accumulate(&mut self, other: &ModelGradients) {
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            add_into(a, b);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}
