//! Reading a trained network back as Boolean rules, and per-input
//! explanations built from those rules.
//!
//! Every final-layer node becomes one rule: its connections are expanded
//! down to concept literals, constants are folded, duplicate children are
//! removed and single-literal absorption is applied. No further minimization
//! is attempted, so each rule stays tied to one node and its head weights.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CrlError, Result};
use crate::model::{argmax, CrlModel};

pub const RULES_FORMAT: &str = "rules_v1";
pub const EXPLANATION_FORMAT: &str = "explanation_v1";

/// Head rows with every entry below this magnitude count as empty.
pub const ZERO_WEIGHT: f64 = 1e-8;

/// Largest concept count [`formulas_equivalent`] accepts.
pub const MAX_EQUIVALENCE_CONCEPTS: usize = 20;
/// Up to this many concepts, equivalence is checked on every assignment.
pub const EXHAUSTIVE_CONCEPTS: usize = 16;
pub const SAMPLED_ASSIGNMENTS: usize = 1_000_000;

/// A positive Boolean formula over concept indices.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formula {
    True,
    False,
    Literal(usize),
    And(Vec<Formula>),
    Or(Vec<Formula>),
}

impl Formula {
    /// Simplifying conjunction. An empty conjunction is `True`.
    pub fn and(children: impl IntoIterator<Item = Formula>) -> Formula {
        Formula::combine(true, children)
    }

    /// Simplifying disjunction. An empty disjunction is `False`.
    pub fn or(children: impl IntoIterator<Item = Formula>) -> Formula {
        Formula::combine(false, children)
    }

    fn combine(is_and: bool, children: impl IntoIterator<Item = Formula>) -> Formula {
        // identity and absorbing constants for this operator
        let (identity, absorbing) = if is_and {
            (Formula::True, Formula::False)
        } else {
            (Formula::False, Formula::True)
        };
        let mut set = Vec::new();
        for child in children {
            match child {
                c if c == identity => {}
                c if c == absorbing => return absorbing,
                Formula::And(inner) if is_and => set.extend(inner),
                Formula::Or(inner) if !is_and => set.extend(inner),
                c => set.push(c),
            }
        }
        // canonical order: by smallest literal, then structurally
        set.sort_by(|a, b| a.min_literal().cmp(&b.min_literal()).then_with(|| a.cmp(b)));
        set.dedup();
        // c AND (c OR x) = c, and dually.
        let literals: BTreeSet<usize> = set
            .iter()
            .filter_map(|f| match f {
                Formula::Literal(i) => Some(*i),
                _ => None,
            })
            .collect();
        set.retain(|f| {
            let inner = match (is_and, f) {
                (true, Formula::Or(inner)) | (false, Formula::And(inner)) => inner,
                _ => return true,
            };
            !inner
                .iter()
                .any(|g| matches!(g, Formula::Literal(i) if literals.contains(i)))
        });
        let mut items = set;
        match items.len() {
            0 => identity,
            1 => items.pop().unwrap(),
            _ if is_and => Formula::And(items),
            _ => Formula::Or(items),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Formula::True | Formula::False)
    }

    pub fn eval(&self, concepts: &[bool]) -> bool {
        match self {
            Formula::True => true,
            Formula::False => false,
            Formula::Literal(i) => concepts[*i],
            Formula::And(c) => c.iter().all(|f| f.eval(concepts)),
            Formula::Or(c) => c.iter().any(|f| f.eval(concepts)),
        }
    }

    /// Evaluate with a range check on literal indices.
    pub fn try_eval(&self, concepts: &[bool]) -> Result<bool> {
        if let Some(max) = self.max_literal() {
            if max >= concepts.len() {
                return Err(CrlError::DimensionMismatch {
                    context: "formula literal",
                    expected: concepts.len(),
                    actual: max,
                });
            }
        }
        Ok(self.eval(concepts))
    }

    pub fn min_literal(&self) -> Option<usize> {
        match self {
            Formula::True | Formula::False => None,
            Formula::Literal(i) => Some(*i),
            Formula::And(c) | Formula::Or(c) => c.iter().filter_map(Formula::min_literal).min(),
        }
    }

    pub fn max_literal(&self) -> Option<usize> {
        match self {
            Formula::True | Formula::False => None,
            Formula::Literal(i) => Some(*i),
            Formula::And(c) | Formula::Or(c) => c.iter().filter_map(Formula::max_literal).max(),
        }
    }

    /// Human-readable form, e.g. `(c0 AND c1) OR (c2)`.
    pub fn render(&self, names: &[String]) -> String {
        match self {
            Formula::Or(children) => children
                .iter()
                .map(|c| format!("({})", c.render_inner(names)))
                .collect::<Vec<_>>()
                .join(" OR "),
            Formula::And(_) => format!("({})", self.render_inner(names)),
            other => other.render_inner(names),
        }
    }

    fn render_inner(&self, names: &[String]) -> String {
        let name = |i: usize| names.get(i).cloned().unwrap_or_else(|| format!("c{i}"));
        let nested = |f: &Formula| match f {
            Formula::And(_) | Formula::Or(_) => format!("({})", f.render_inner(names)),
            other => other.render_inner(names),
        };
        match self {
            Formula::True => "TRUE".into(),
            Formula::False => "FALSE".into(),
            Formula::Literal(i) => name(*i),
            Formula::And(c) => c.iter().map(nested).collect::<Vec<_>>().join(" AND "),
            Formula::Or(c) => c.iter().map(nested).collect::<Vec<_>>().join(" OR "),
        }
    }
}

/// Whether two formulas agree on every assignment of `concepts` variables:
/// exhaustive up to [`EXHAUSTIVE_CONCEPTS`], else on [`SAMPLED_ASSIGNMENTS`]
/// seeded random assignments.
pub fn formulas_equivalent(a: &Formula, b: &Formula, concepts: usize) -> Result<bool> {
    if concepts > MAX_EQUIVALENCE_CONCEPTS {
        return Err(CrlError::InvalidConfig(format!(
            "equivalence check supports at most {MAX_EQUIVALENCE_CONCEPTS} concepts, got {concepts}"
        )));
    }
    for f in [a, b] {
        if f.max_literal().is_some_and(|m| m >= concepts) {
            return Err(CrlError::DimensionMismatch {
                context: "formula literal",
                expected: concepts,
                actual: f.max_literal().unwrap(),
            });
        }
    }
    let mut bits = vec![false; concepts];
    if concepts <= EXHAUSTIVE_CONCEPTS {
        for mask in 0u32..(1u32 << concepts) {
            for (i, b) in bits.iter_mut().enumerate() {
                *b = mask >> i & 1 == 1;
            }
            if a.eval(&bits) != b.eval(&bits) {
                return Ok(false);
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        for _ in 0..SAMPLED_ASSIGNMENTS {
            bits.iter_mut().for_each(|b| *b = rng.gen());
            if a.eval(&bits) != b.eval(&bits) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rule {
    /// Index of the final-layer node.
    pub node: usize,
    pub formula: Formula,
    /// Head weights of this node, one per class.
    pub class_weights: Vec<f64>,
    /// Constant formula or all-zero class weights.
    pub pruned: bool,
}

impl Rule {
    /// Display name, `R1` for node 0.
    pub fn name(&self) -> String {
        format!("R{}", self.node + 1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSet {
    pub format: String,
    pub model_fingerprint: String,
    pub concept_names: Vec<String>,
    pub class_names: Vec<String>,
    pub bias: Vec<f64>,
    pub rules: Vec<Rule>,
}

impl RuleSet {
    pub fn active(&self) -> impl Iterator<Item = &Rule> {
        self.rules.iter().filter(|r| !r.pruned)
    }

    pub fn pruned(&self) -> impl Iterator<Item = &Rule> {
        self.rules.iter().filter(|r| r.pruned)
    }

    /// Disjunction of the non-pruned rules whose largest class weight is
    /// `class`.
    pub fn class_union(&self, class: usize) -> Formula {
        Formula::or(
            self.active()
                .filter(|r| argmax(&r.class_weights) == class)
                .map(|r| r.formula.clone()),
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rs: RuleSet = serde_json::from_str(text)?;
        if rs.format != RULES_FORMAT {
            return Err(CrlError::UnsupportedVersion {
                kind: "rules",
                found: rs.format,
                expected: RULES_FORMAT,
            });
        }
        Ok(rs)
    }
}

/// Formulas of every node of every layer, input side first.
pub fn layer_formulas(model: &CrlModel) -> Vec<Vec<Formula>> {
    let net = model.discrete_network();
    let mut prev: Vec<Formula> = (0..model.concept_count()).map(Formula::Literal).collect();
    let mut out = Vec::with_capacity(net.layers.len());
    for layer in &net.layers {
        let pick = |idx: &Vec<usize>| idx.iter().map(|&j| prev[j].clone()).collect::<Vec<_>>();
        let nodes: Vec<Formula> = layer
            .conj
            .iter()
            .map(|c| Formula::and(pick(c)))
            .chain(layer.disj.iter().map(|d| Formula::or(pick(d))))
            .collect();
        out.push(nodes.clone());
        prev = nodes;
    }
    out
}

/// One rule per final-layer node of the binarized network.
pub fn extract_rules(model: &CrlModel) -> RuleSet {
    let finals = layer_formulas(model).pop().unwrap_or_default();
    let rules = finals
        .into_iter()
        .enumerate()
        .map(|(node, formula)| {
            let class_weights = model.head_weights().row(node).to_vec();
            let silent = class_weights.iter().all(|w| w.abs() < ZERO_WEIGHT);
            Rule {
                node,
                pruned: formula.is_constant() || silent,
                formula,
                class_weights,
            }
        })
        .collect();
    RuleSet {
        format: RULES_FORMAT.to_string(),
        model_fingerprint: model.fingerprint(),
        concept_names: model.config().concept_names.clone(),
        class_names: model.config().class_names.clone(),
        bias: model.head_bias().to_vec(),
        rules,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConceptState {
    pub name: String,
    pub probability: f64,
    pub present: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiredRule {
    pub node: usize,
    pub name: String,
    pub formula: String,
    pub pruned: bool,
    pub contribution: Vec<f64>,
}

/// Why one input got its prediction: which rules fired and what each added.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub format: String,
    pub input_id: String,
    pub concepts: Vec<ConceptState>,
    pub fired: Vec<FiredRule>,
    pub bias: Vec<f64>,
    pub logits: Vec<f64>,
    pub predicted_class: usize,
    pub class_names: Vec<String>,
}

impl Explanation {
    /// `bias + sum of contributions`, in rule order.
    pub fn reconstructed_logits(&self) -> Vec<f64> {
        let mut z = self.bias.clone();
        for f in &self.fired {
            for (a, b) in z.iter_mut().zip(&f.contribution) {
                *a += b;
            }
        }
        z
    }

    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "input {}", self.input_id);
        let _ = writeln!(s, "concepts:");
        for c in &self.concepts {
            let mark = if c.present { "x" } else { " " };
            let _ = writeln!(s, "  [{mark}] {:<20} p={:.4}", c.name, c.probability);
        }
        let _ = writeln!(s, "matched rules:");
        if self.fired.is_empty() {
            let _ = writeln!(s, "  (none)");
        }
        for f in &self.fired {
            let _ = writeln!(s, "  {}: {} -> {}", f.name, f.formula, fmt_vec(&f.contribution));
        }
        let _ = writeln!(s, "bias:   {}", fmt_vec(&self.bias));
        let _ = writeln!(s, "logits: {}", fmt_vec(&self.logits));
        let _ = writeln!(
            s,
            "prediction: {}",
            self.class_names
                .get(self.predicted_class)
                .cloned()
                .unwrap_or_else(|| self.predicted_class.to_string())
        );
        s
    }
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:+.4}")).collect();
    format!("[{}]", parts.join(", "))
}

/// Explain the discrete prediction for input `x`.
pub fn explain(model: &CrlModel, rules: &RuleSet, input_id: &str, x: &[f64]) -> Result<Explanation> {
    let fp = model.fingerprint();
    if rules.model_fingerprint != fp {
        return Err(CrlError::FingerprintMismatch {
            rules: rules.model_fingerprint.clone(),
            model: fp,
        });
    }
    let out = model.forward_discrete(x)?;
    explain_output(rules, input_id, &out)
}

/// Build an explanation from an already computed discrete forward pass.
pub fn explain_output(rules: &RuleSet, input_id: &str, out: &crate::model::DiscreteOutput) -> Result<Explanation> {
    CrlError::check_len("rule count", rules.rules.len(), out.rules.len())?;
    let fired = rules
        .rules
        .iter()
        .zip(&out.rules)
        .filter(|(_, &on)| on)
        .map(|(r, _)| FiredRule {
            node: r.node,
            name: r.name(),
            formula: r.formula.render(&rules.concept_names),
            pruned: r.pruned,
            contribution: r.class_weights.clone(),
        })
        .collect();
    let mut exp = Explanation {
        format: EXPLANATION_FORMAT.to_string(),
        input_id: input_id.to_string(),
        concepts: rules
            .concept_names
            .iter()
            .zip(out.concept_probs.iter().zip(&out.concepts))
            .map(|(name, (&p, &c))| ConceptState {
                name: name.clone(),
                probability: p,
                present: c,
            })
            .collect(),
        fired,
        bias: rules.bias.clone(),
        logits: Vec::new(),
        predicted_class: 0,
        class_names: rules.class_names.clone(),
    };
    exp.logits = exp.reconstructed_logits();
    exp.predicted_class = argmax(&exp.logits);
    Ok(exp)
}

/// Per-rule firing counts over binary concept vectors.
pub fn fired_counts(model: &CrlModel, concepts: &[Vec<bool>]) -> Vec<usize> {
    let net = model.discrete_network();
    let mut counts = vec![0; model.rule_count()];
    for c in concepts {
        for (n, on) in counts.iter_mut().zip(net.eval(c)) {
            *n += usize::from(on);
        }
    }
    counts
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Json,
}

#[derive(Serialize, Deserialize, Debug, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RuleReport {
    pub format: String,
    pub model_fingerprint: String,
    pub concept_names: Vec<String>,
    pub class_names: Vec<String>,
    pub bias: Vec<f64>,
    pub rules: Vec<RuleReportEntry>,
    pub evaluated_samples: Option<usize>,
}

#[derive(Serialize, Deserialize, Debug, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RuleReportEntry {
    pub node: usize,
    pub name: String,
    pub text: String,
    pub formula: Formula,
    pub class_weights: Vec<f64>,
    pub pruned: bool,
    pub fired: Option<usize>,
}

impl RuleReport {
    pub fn to_rule_set(&self) -> RuleSet {
        RuleSet {
            format: self.format.clone(),
            model_fingerprint: self.model_fingerprint.clone(),
            concept_names: self.concept_names.clone(),
            class_names: self.class_names.clone(),
            bias: self.bias.clone(),
            rules: self
                .rules
                .iter()
                .map(|r| Rule {
                    node: r.node,
                    formula: r.formula.clone(),
                    class_weights: r.class_weights.clone(),
                    pruned: r.pruned,
                })
                .collect(),
        }
    }
}

/// Text or JSON report. `fired` holds per-rule firing counts and the number
/// of samples they were counted over.
pub fn render_rules(rules: &RuleSet, format: ReportFormat, fired: Option<(&[usize], usize)>) -> Result<String> {
    match format {
        ReportFormat::Json => {
            let report = RuleReport {
                format: rules.format.clone(),
                model_fingerprint: rules.model_fingerprint.clone(),
                concept_names: rules.concept_names.clone(),
                class_names: rules.class_names.clone(),
                bias: rules.bias.clone(),
                rules: rules
                    .rules
                    .iter()
                    .map(|r| RuleReportEntry {
                        node: r.node,
                        name: r.name(),
                        text: r.formula.render(&rules.concept_names),
                        formula: r.formula.clone(),
                        class_weights: r.class_weights.clone(),
                        pruned: r.pruned,
                        fired: fired.map(|(c, _)| c[r.node]),
                    })
                    .collect(),
                evaluated_samples: fired.map(|(_, n)| n),
            };
            Ok(serde_json::to_string_pretty(&report)?)
        }
        ReportFormat::Text => {
            let mut s = String::new();
            let line = |r: &Rule| {
                let mut l = format!(
                    "{}: {} → class weights {}",
                    r.name(),
                    r.formula.render(&rules.concept_names),
                    fmt_vec(&r.class_weights)
                );
                if let Some((counts, n)) = fired {
                    let _ = write!(l, "  fired {}/{}", counts[r.node], n);
                }
                l
            };
            for r in rules.active() {
                let _ = writeln!(s, "{}", line(r));
            }
            let pruned: Vec<&Rule> = rules.pruned().collect();
            if !pruned.is_empty() {
                let _ = writeln!(s, "\npruned rules ({}):", pruned.len());
                for r in pruned {
                    let _ = writeln!(s, "  {}", line(r));
                }
            }
            let _ = writeln!(s, "\nbias {}", fmt_vec(&rules.bias));
            Ok(s)
        }
    }
}
