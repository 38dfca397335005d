//! Soft program executor: evaluates DSL programs over a scene by propagating
//! object masks and distributions on an autodiff tape.
//!
//! In soft mode every concept probability comes from the registry's learned
//! scorers. Hard mode substitutes ground-truth 0/1 indicators read from the
//! scene annotations, which makes the executor exact and comparable with the
//! symbolic oracle.

use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::autodiff::{AutodiffError, NodeId};
use crate::concepts::{AttributeId, ConceptError, ConceptId, Registry, Scorer};
use crate::dsl::{type_check, Comparison, Program, ProgramNode, TypeErrorReport};
use crate::worldgen::domain::{Attribute, SpatialRelation, MAX_OBJECTS};
use crate::worldgen::{Answer, SceneRecord};

/// Added to every mask entry before `unique` normalizes it.
pub const UNIQUE_EPSILON: f64 = 1e-6;
/// Width of the Gaussian that turns a soft count into integer answers.
pub const COUNT_SIGMA: f64 = 0.25;
/// Largest count in the answer support.
pub const COUNT_MAX: usize = MAX_OBJECTS;
/// Margin and temperature of `count-compare` for greater/less.
pub const COMPARE_MARGIN: f64 = 0.5;
pub const COMPARE_TAU: f64 = 0.25;
/// Floor applied to the gold probability inside the loss.
pub const LOSS_FLOOR: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("scene has no objects")]
    EmptyScene,
    #[error("scene {0} has no synthesized features")]
    MissingFeatures(u64),
    #[error("type error: {0:?}")]
    Type(TypeErrorReport),
    #[error("program result is not an answer")]
    NotAnswer,
    #[error("answer `{0}` is not in the support")]
    GoldNotInSupport(String),
    #[error("hard mode has no ground truth for `{0}`")]
    NoGroundTruth(String),
    #[error(transparent)]
    Concept(#[from] ConceptError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

pub type Result<T> = std::result::Result<T, ExecError>;

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Mode {
    Soft,
    Hard,
}

/// Answer tokens paired with a probability vector on the tape.
#[derive(Clone, Debug)]
pub struct AnswerDistribution {
    pub support: Vec<Answer>,
    pub probs: NodeId,
}

impl AnswerDistribution {
    pub fn probabilities<'a>(&self, scorer: &'a Scorer<'_>) -> &'a [f64] {
        scorer.tape.value(self.probs)
    }

    /// Most probable answer; ties go to the earliest support entry.
    pub fn argmax(&self, scorer: &Scorer<'_>) -> Answer {
        let p = self.probabilities(scorer);
        let mut best = 0;
        for (i, v) in p.iter().enumerate() {
            if *v > p[best] {
                best = i;
            }
        }
        self.support[best].clone()
    }

    pub fn prob_of(&self, scorer: &Scorer<'_>, answer: &Answer) -> Option<f64> {
        let k = self.support.iter().position(|a| a == answer)?;
        Some(self.probabilities(scorer)[k])
    }
}

/// What one program node evaluated to.
#[derive(Clone, Debug, PartialEq)]
pub enum TraceValue {
    Mask(Vec<f64>),
    Distribution(Vec<f64>),
    Answer(Vec<(Answer, f64)>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    /// Pre-order index of the node in the program.
    pub node: usize,
    pub op: &'static str,
    pub value: TraceValue,
}

/// One record per program node, in evaluation (post-) order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExecTrace {
    pub records: Vec<TraceRecord>,
}

impl ExecTrace {
    /// Lines of `node-index op-name value-summary`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            let summary = match &r.value {
                TraceValue::Mask(v) => format!("mask[{}] {}", v.len(), fmt_values(v)),
                TraceValue::Distribution(v) => format!("dist[{}] {}", v.len(), fmt_values(v)),
                TraceValue::Answer(pairs) => {
                    let mut sorted: Vec<&(Answer, f64)> = pairs.iter().collect();
                    sorted.sort_by(|a, b| b.1.total_cmp(&a.1));
                    let top: Vec<String> = sorted.iter().take(4).map(|(a, p)| format!("{a}={p:.4}")).collect();
                    format!("answer {}", top.join(" "))
                }
            };
            let _ = writeln!(out, "{} {} {}", r.node, r.op, summary);
        }
        out
    }
}

fn fmt_values(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" ")
}

enum Value {
    Set(NodeId),
    Ref(NodeId),
    Answer(AnswerDistribution),
}

/// Per-scene evaluation state; caches every score it computes.
pub struct Executor<'a, 'r> {
    pub scorer: &'a mut Scorer<'r>,
    scene: &'a SceneRecord,
    mode: Mode,
    n: usize,
    encoded: HashMap<usize, NodeId>,
    projected: HashMap<(usize, AttributeId), NodeId>,
    object_scores: HashMap<(usize, ConceptId), NodeId>,
    relation_scores: HashMap<(usize, usize, ConceptId), NodeId>,
    queries: HashMap<(usize, AttributeId), NodeId>,
    zero: Option<NodeId>,
    trace: Option<ExecTrace>,
}

impl<'a, 'r> Executor<'a, 'r> {
    pub fn new(scorer: &'a mut Scorer<'r>, scene: &'a SceneRecord, mode: Mode) -> Result<Self> {
        if scene.is_empty() {
            return Err(ExecError::EmptyScene);
        }
        if mode == Mode::Soft && !scene.has_features() {
            return Err(ExecError::MissingFeatures(scene.id));
        }
        Ok(Self {
            scorer,
            scene,
            mode,
            n: scene.len(),
            encoded: HashMap::new(),
            projected: HashMap::new(),
            object_scores: HashMap::new(),
            relation_scores: HashMap::new(),
            queries: HashMap::new(),
            zero: None,
            trace: None,
        })
    }

    /// Records an [`ExecTrace`] during subsequent [`Executor::run`] calls.
    pub fn with_trace(mut self) -> Self {
        self.trace = Some(ExecTrace::default());
        self
    }

    pub fn take_trace(&mut self) -> ExecTrace {
        self.trace.take().unwrap_or_default()
    }

    fn registry(&self) -> &'r Registry {
        self.scorer.registry()
    }

    fn zero(&mut self) -> Result<NodeId> {
        if let Some(z) = self.zero {
            return Ok(z);
        }
        let z = self.scorer.tape.scalar_constant(0.0)?;
        self.zero = Some(z);
        Ok(z)
    }

    fn indicator(&mut self, truth: bool) -> Result<NodeId> {
        Ok(self.scorer.tape.scalar_constant(if truth { 1.0 } else { 0.0 })?)
    }

    fn encoded(&mut self, i: usize) -> Result<NodeId> {
        if let Some(h) = self.encoded.get(&i) {
            return Ok(*h);
        }
        let h = self.scorer.encode_object(&self.scene.object_features[i])?;
        self.encoded.insert(i, h);
        Ok(h)
    }

    fn projected(&mut self, i: usize, attr: AttributeId) -> Result<NodeId> {
        if let Some(v) = self.projected.get(&(i, attr)) {
            return Ok(*v);
        }
        let h = self.encoded(i)?;
        let v = self.scorer.project(h, attr)?;
        self.projected.insert((i, attr), v);
        Ok(v)
    }

    /// Probability that object `i` has `concept`.
    pub fn object_score(&mut self, i: usize, concept: ConceptId) -> Result<NodeId> {
        if let Some(s) = self.object_scores.get(&(i, concept)) {
            return Ok(*s);
        }
        let ns = self.registry().namespace_of(concept)?;
        let s = match self.mode {
            Mode::Soft => {
                let v = self.projected(i, ns)?;
                self.scorer.membership(v, concept)?
            }
            Mode::Hard => {
                let name = &self.registry().concept(concept).name;
                self.indicator(self.scene.objects[i].has(name))?
            }
        };
        self.object_scores.insert((i, concept), s);
        Ok(s)
    }

    /// Probability that `relation(i, j)` holds; self pairs score 0.
    pub fn relation_score(&mut self, i: usize, j: usize, relation: ConceptId) -> Result<NodeId> {
        if i == j {
            return self.zero();
        }
        if let Some(s) = self.relation_scores.get(&(i, j, relation)) {
            return Ok(*s);
        }
        let s = match self.mode {
            Mode::Soft => self.scorer.relation_score(self.scene.pair_feature(i, j), relation)?,
            Mode::Hard => {
                let name = &self.registry().concept(relation).name;
                let rel = SpatialRelation::from_concept(name).ok_or_else(|| ExecError::NoGroundTruth(name.clone()))?;
                self.indicator(self.scene.relation(rel, i, j))?
            }
        };
        self.relation_scores.insert((i, j, relation), s);
        Ok(s)
    }

    /// Distribution of object `i` over the members of `attr`.
    pub fn query_distribution(&mut self, i: usize, attr: AttributeId) -> Result<NodeId> {
        if let Some(q) = self.queries.get(&(i, attr)) {
            return Ok(*q);
        }
        let q = match self.mode {
            Mode::Soft => {
                let v = self.projected(i, attr)?;
                self.scorer.query_projected(v, attr)?
            }
            Mode::Hard => {
                let reg = self.registry();
                let ns = reg.namespace(attr);
                let kind = Attribute::from_name(&ns.name).ok_or_else(|| ExecError::NoGroundTruth(ns.name.clone()))?;
                let value = self.scene.objects[i].value(kind);
                let m = ns.members.len();
                let hit = ns.members.iter().position(|c| reg.concept(*c).name == value);
                let probs = match hit {
                    Some(k) => (0..m).map(|c| if c == k { 1.0 } else { 0.0 }).collect(),
                    None => vec![1.0 / m as f64; m],
                };
                self.scorer.tape.constant(probs)?
            }
        };
        self.queries.insert((i, attr), q);
        Ok(q)
    }

    /// Evaluates `program`, whose root must produce an answer.
    pub fn run(&mut self, program: &Program) -> Result<AnswerDistribution> {
        let typed = type_check(program, self.registry()).map_err(ExecError::Type)?;
        if !typed.result_type().is_answer() {
            return Err(ExecError::NotAnswer);
        }
        let mut counter = 0;
        match self.eval(&program.root, &mut counter)? {
            Value::Answer(a) => Ok(a),
            _ => Err(ExecError::NotAnswer),
        }
    }

    fn record(&mut self, node: usize, op: &'static str, value: &Value) {
        let Some(trace) = self.trace.as_mut() else { return };
        let tape = &self.scorer.tape;
        let value = match value {
            Value::Set(m) => TraceValue::Mask(tape.value(*m).to_vec()),
            Value::Ref(d) => TraceValue::Distribution(tape.value(*d).to_vec()),
            Value::Answer(a) => {
                TraceValue::Answer(a.support.iter().cloned().zip(tape.value(a.probs).iter().copied()).collect())
            }
        };
        trace.records.push(TraceRecord { node, op, value });
    }

    fn eval(&mut self, node: &ProgramNode, counter: &mut usize) -> Result<Value> {
        let index = *counter;
        *counter += 1;
        let value = self.eval_inner(node, counter)?;
        self.record(index, node.head(), &value);
        Ok(value)
    }

    fn set(&mut self, node: &ProgramNode, counter: &mut usize) -> Result<NodeId> {
        match self.eval(node, counter)? {
            Value::Set(m) => Ok(m),
            _ => Err(ExecError::NotAnswer),
        }
    }

    fn reference(&mut self, node: &ProgramNode, counter: &mut usize) -> Result<NodeId> {
        match self.eval(node, counter)? {
            Value::Ref(d) => Ok(d),
            _ => Err(ExecError::NotAnswer),
        }
    }

    fn concept_scores(&mut self, concept: ConceptId) -> Result<NodeId> {
        let scores = (0..self.n).map(|i| self.object_score(i, concept)).collect::<Result<Vec<_>>>()?;
        Ok(self.scorer.tape.concat(&scores)?)
    }

    fn bool_answer(&mut self, p_yes: NodeId) -> Result<AnswerDistribution> {
        let tape = &mut self.scorer.tape;
        let p_no = tape.affine(p_yes, -1.0, 1.0)?;
        let probs = tape.concat(&[p_yes, p_no])?;
        Ok(AnswerDistribution { support: vec![Answer::Bool(true), Answer::Bool(false)], probs })
    }

    fn count_scalar(&mut self, mask: NodeId) -> Result<NodeId> {
        Ok(self.scorer.tape.sum(mask)?)
    }

    /// `P(k) ∝ exp(-(c - k)^2 / (2 sigma^2))` for `k = 0..=COUNT_MAX`.
    fn count_answer(&mut self, c: NodeId) -> Result<AnswerDistribution> {
        let tape = &mut self.scorer.tape;
        let mut logits = Vec::with_capacity(COUNT_MAX + 1);
        for k in 0..=COUNT_MAX {
            let d = tape.affine(c, 1.0, -(k as f64))?;
            let sq = tape.mul(d, d)?;
            logits.push(tape.affine(sq, -1.0 / (2.0 * COUNT_SIGMA * COUNT_SIGMA), 0.0)?);
        }
        let all = tape.concat(&logits)?;
        let probs = tape.softmax(all)?;
        Ok(AnswerDistribution { support: (0..=COUNT_MAX).map(Answer::Count).collect(), probs })
    }

    /// `sum_i dist_i q_i` over the members of `attr`.
    fn mixed_query(&mut self, dist: NodeId, attr: AttributeId) -> Result<NodeId> {
        let mut acc: Option<NodeId> = None;
        for i in 0..self.n {
            let q = self.query_distribution(i, attr)?;
            let tape = &mut self.scorer.tape;
            let w = tape.index(dist, i)?;
            let term = tape.scale(q, w)?;
            acc = Some(match acc {
                None => term,
                Some(a) => tape.add(a, term)?,
            });
        }
        Ok(acc.expect("non-empty scene"))
    }

    fn eval_inner(&mut self, node: &ProgramNode, counter: &mut usize) -> Result<Value> {
        let reg = self.registry();
        Ok(match node {
            ProgramNode::Scene => {
                let ones = self.scorer.tape.constant(vec![1.0; self.n])?;
                Value::Set(ones)
            }
            ProgramNode::Filter { child, concept } => {
                let mask = self.set(child, counter)?;
                let scores = self.concept_scores(reg.concept_id(concept)?)?;
                Value::Set(self.scorer.tape.mul(mask, scores)?)
            }
            ProgramNode::Relate { relation, reference } => {
                let dist = self.reference(reference, counter)?;
                let rel = reg.concept_id(relation)?;
                let mut entries = Vec::with_capacity(self.n * self.n);
                for i in 0..self.n {
                    for j in 0..self.n {
                        entries.push(self.relation_score(i, j, rel)?);
                    }
                }
                let tape = &mut self.scorer.tape;
                let matrix = tape.concat(&entries)?;
                Value::Set(tape.matvec(matrix, dist, self.n)?)
            }
            ProgramNode::RelateSame { attribute, reference } => {
                let dist = self.reference(reference, counter)?;
                let attr = reg.attribute_id(attribute)?;
                let qs = (0..self.n).map(|i| self.query_distribution(i, attr)).collect::<Result<Vec<_>>>()?;
                let zero = self.zero()?;
                let tape = &mut self.scorer.tape;
                let mut entries = Vec::with_capacity(self.n * self.n);
                for i in 0..self.n {
                    for j in 0..self.n {
                        entries.push(if i == j { zero } else { tape.dot(qs[i], qs[j])? });
                    }
                }
                let matrix = tape.concat(&entries)?;
                Value::Set(tape.matvec(matrix, dist, self.n)?)
            }
            ProgramNode::Intersect(a, b) => {
                let (a, b) = (self.set(a, counter)?, self.set(b, counter)?);
                Value::Set(self.scorer.tape.mul(a, b)?)
            }
            ProgramNode::Union(a, b) => {
                let (a, b) = (self.set(a, counter)?, self.set(b, counter)?);
                let tape = &mut self.scorer.tape;
                let s = tape.add(a, b)?;
                let p = tape.mul(a, b)?;
                Value::Set(tape.sub(s, p)?)
            }
            ProgramNode::Unique(child) => {
                let mask = self.set(child, counter)?;
                let tape = &mut self.scorer.tape;
                let shifted = tape.affine(mask, 1.0, UNIQUE_EPSILON)?;
                let total = tape.sum(shifted)?;
                let one = tape.scalar_constant(1.0)?;
                let inv = tape.div(one, total)?;
                Value::Ref(tape.scale(shifted, inv)?)
            }
            ProgramNode::Count(child) => {
                let mask = self.set(child, counter)?;
                let c = self.count_scalar(mask)?;
                Value::Answer(self.count_answer(c)?)
            }
            ProgramNode::Exist(child) => {
                let mask = self.set(child, counter)?;
                let p = self.scorer.tape.max(mask)?;
                Value::Answer(self.bool_answer(p)?)
            }
            ProgramNode::Query { attribute, reference } => {
                let dist = self.reference(reference, counter)?;
                let attr = reg.attribute_id(attribute)?;
                let probs = self.mixed_query(dist, attr)?;
                let support =
                    reg.namespace(attr).members.iter().map(|c| Answer::Concept(reg.concept(*c).name.clone())).collect();
                Value::Answer(AnswerDistribution { support, probs })
            }
            ProgramNode::AttrEqual { attribute, left, right } => {
                let a = self.reference(left, counter)?;
                let b = self.reference(right, counter)?;
                let attr = reg.attribute_id(attribute)?;
                let qa = self.mixed_query(a, attr)?;
                let qb = self.mixed_query(b, attr)?;
                let p = self.scorer.tape.dot(qa, qb)?;
                Value::Answer(self.bool_answer(p)?)
            }
            ProgramNode::CountCompare { cmp, left, right } => {
                let a = self.set(left, counter)?;
                let b = self.set(right, counter)?;
                let ca = self.count_scalar(a)?;
                let cb = self.count_scalar(b)?;
                let tape = &mut self.scorer.tape;
                let diff = tape.sub(ca, cb)?;
                let p = match cmp {
                    Comparison::Greater | Comparison::Less => {
                        let s = if *cmp == Comparison::Greater { 1.0 } else { -1.0 };
                        let z = tape.affine(diff, s / COMPARE_TAU, -COMPARE_MARGIN / COMPARE_TAU)?;
                        tape.sigmoid(z)?
                    }
                    Comparison::Equal => {
                        let sq = tape.mul(diff, diff)?;
                        let z = tape.affine(sq, -1.0 / (2.0 * COUNT_SIGMA * COUNT_SIGMA), 0.0)?;
                        tape.exp(z)?
                    }
                };
                Value::Answer(self.bool_answer(p)?)
            }
            ProgramNode::ExistPair { subject, object, relation } => {
                let (s, o, r) = (reg.concept_id(subject)?, reg.concept_id(object)?, reg.concept_id(relation)?);
                let mut terms = Vec::new();
                for i in 0..self.n {
                    for j in 0..self.n {
                        if i == j {
                            continue;
                        }
                        let ps = self.object_score(i, s)?;
                        let po = self.object_score(j, o)?;
                        let pr = self.relation_score(i, j, r)?;
                        let tape = &mut self.scorer.tape;
                        let so = tape.mul(ps, po)?;
                        terms.push(tape.mul(so, pr)?);
                    }
                }
                let p = if terms.is_empty() {
                    self.zero()?
                } else {
                    let tape = &mut self.scorer.tape;
                    let all = tape.concat(&terms)?;
                    tape.max(all)?
                };
                Value::Answer(self.bool_answer(p)?)
            }
        })
    }
}

/// Evaluates `program` on `scene` with a fresh executor over `scorer`.
pub fn execute(
    program: &Program,
    scene: &SceneRecord,
    scorer: &mut Scorer<'_>,
    mode: Mode,
) -> Result<(AnswerDistribution, ExecTrace)> {
    let mut ex = Executor::new(scorer, scene, mode)?.with_trace();
    let answer = ex.run(program)?;
    let trace = ex.take_trace();
    Ok((answer, trace))
}

/// `-log max(P(gold), LOSS_FLOOR)`.
pub fn answer_loss(scorer: &mut Scorer<'_>, result: &AnswerDistribution, gold: &Answer) -> Result<NodeId> {
    let k =
        result.support.iter().position(|a| a == gold).ok_or_else(|| ExecError::GoldNotInSupport(gold.to_string()))?;
    let tape = &mut scorer.tape;
    let p = tape.index(result.probs, k)?;
    let floor = tape.scalar_constant(LOSS_FLOOR)?;
    let both = tape.concat(&[p, floor])?;
    let clamped = tape.max(both)?;
    let log = tape.log(clamped)?;
    Ok(tape.affine(log, -1.0, 0.0)?)
}

/// Argmax answer without keeping the tape.
pub fn predict(registry: &Registry, program: &Program, scene: &SceneRecord, mode: Mode) -> Result<Answer> {
    let mut scorer = registry.score_context();
    let mut ex = Executor::new(&mut scorer, scene, mode)?;
    let dist = ex.run(program)?;
    Ok(dist.argmax(&scorer))
}
