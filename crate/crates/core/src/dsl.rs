//! The typed reasoning language: AST, s-expression syntax and type checker.

use std::fmt;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum Comparison {
    Greater,
    Less,
    Equal,
}

impl Comparison {
    pub const ALL: [Comparison; 3] = [Comparison::Greater, Comparison::Less, Comparison::Equal];

    pub fn name(self) -> &'static str {
        match self {
            Comparison::Greater => "greater",
            Comparison::Less => "less",
            Comparison::Equal => "equal",
        }
    }

    fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum ProgramNode {
    Scene,
    Filter {
        child: Box<ProgramNode>,
        concept: String,
    },
    Relate {
        relation: String,
        reference: Box<ProgramNode>,
    },
    /// Objects other than the reference that share its value of `attribute`.
    RelateSame {
        attribute: String,
        reference: Box<ProgramNode>,
    },
    Intersect(Box<ProgramNode>, Box<ProgramNode>),
    Union(Box<ProgramNode>, Box<ProgramNode>),
    Unique(Box<ProgramNode>),
    Count(Box<ProgramNode>),
    Exist(Box<ProgramNode>),
    Query {
        attribute: String,
        reference: Box<ProgramNode>,
    },
    AttrEqual {
        attribute: String,
        left: Box<ProgramNode>,
        right: Box<ProgramNode>,
    },
    CountCompare {
        cmp: Comparison,
        left: Box<ProgramNode>,
        right: Box<ProgramNode>,
    },
    /// Some pair (i, j), i != j, with `subject(i)`, `object(j)` and `relation(i, j)`.
    ExistPair {
        subject: String,
        object: String,
        relation: String,
    },
}

use ProgramNode as P;

impl ProgramNode {
    pub fn filter(child: ProgramNode, concept: &str) -> Self {
        P::Filter { child: Box::new(child), concept: concept.to_string() }
    }

    pub fn relate(relation: &str, reference: ProgramNode) -> Self {
        P::Relate { relation: relation.to_string(), reference: Box::new(reference) }
    }

    pub fn relate_same(attribute: &str, reference: ProgramNode) -> Self {
        P::RelateSame { attribute: attribute.to_string(), reference: Box::new(reference) }
    }

    pub fn unique(child: ProgramNode) -> Self {
        P::Unique(Box::new(child))
    }

    pub fn count(child: ProgramNode) -> Self {
        P::Count(Box::new(child))
    }

    pub fn exist(child: ProgramNode) -> Self {
        P::Exist(Box::new(child))
    }

    pub fn query(attribute: &str, reference: ProgramNode) -> Self {
        P::Query { attribute: attribute.to_string(), reference: Box::new(reference) }
    }

    pub fn attr_equal(attribute: &str, left: ProgramNode, right: ProgramNode) -> Self {
        P::AttrEqual { attribute: attribute.to_string(), left: Box::new(left), right: Box::new(right) }
    }

    pub fn count_compare(cmp: Comparison, left: ProgramNode, right: ProgramNode) -> Self {
        P::CountCompare { cmp, left: Box::new(left), right: Box::new(right) }
    }

    pub fn exist_pair(subject: &str, object: &str, relation: &str) -> Self {
        P::ExistPair { subject: subject.into(), object: object.into(), relation: relation.into() }
    }

    pub fn head(&self) -> &'static str {
        match self {
            P::Scene => "scene",
            P::Filter { .. } => "filter",
            P::Relate { .. } => "relate",
            P::RelateSame { .. } => "relate-same",
            P::Intersect(..) => "intersect",
            P::Union(..) => "union",
            P::Unique(_) => "unique",
            P::Count(_) => "count",
            P::Exist(_) => "exist",
            P::Query { .. } => "query",
            P::AttrEqual { .. } => "attr-equal",
            P::CountCompare { .. } => "count-compare",
            P::ExistPair { .. } => "exist-pair",
        }
    }

    pub fn children(&self) -> Vec<&ProgramNode> {
        match self {
            P::Scene | P::ExistPair { .. } => vec![],
            P::Filter { child, .. } | P::Unique(child) | P::Count(child) | P::Exist(child) => vec![child],
            P::Relate { reference, .. } | P::RelateSame { reference, .. } | P::Query { reference, .. } => {
                vec![reference]
            }
            P::Intersect(a, b) | P::Union(a, b) => vec![a, b],
            P::AttrEqual { left, right, .. } | P::CountCompare { left, right, .. } => vec![left, right],
        }
    }

    /// Longest chain of operations above the scene leaf; `scene` itself has depth 0.
    pub fn depth(&self) -> usize {
        match self {
            P::Scene => 0,
            P::ExistPair { .. } => 1,
            _ => 1 + self.children().iter().map(|c| c.depth()).max().unwrap_or(0),
        }
    }

    pub fn size(&self) -> usize {
        1 + self.children().iter().map(|c| c.size()).sum::<usize>()
    }

    /// Every concept or attribute identifier mentioned anywhere in the tree.
    pub fn identifiers(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_identifiers(&mut out);
        out
    }

    fn collect_identifiers<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            P::Filter { concept, .. } => out.push(concept),
            P::Relate { relation, .. } => out.push(relation),
            P::RelateSame { attribute, .. } | P::Query { attribute, .. } | P::AttrEqual { attribute, .. } => {
                out.push(attribute)
            }
            P::ExistPair { subject, object, relation } => {
                out.push(subject);
                out.push(object);
                out.push(relation);
            }
            _ => {}
        }
        for c in self.children() {
            c.collect_identifiers(out);
        }
    }
}

impl fmt::Display for ProgramNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            P::Scene => write!(f, "scene"),
            P::Filter { child, concept } => write!(f, "(filter {child} {concept})"),
            P::Relate { relation, reference } => write!(f, "(relate {relation} {reference})"),
            P::RelateSame { attribute, reference } => write!(f, "(relate-same {attribute} {reference})"),
            P::Intersect(a, b) => write!(f, "(intersect {a} {b})"),
            P::Union(a, b) => write!(f, "(union {a} {b})"),
            P::Unique(c) => write!(f, "(unique {c})"),
            P::Count(c) => write!(f, "(count {c})"),
            P::Exist(c) => write!(f, "(exist {c})"),
            P::Query { attribute, reference } => write!(f, "(query {attribute} {reference})"),
            P::AttrEqual { attribute, left, right } => write!(f, "(attr-equal {attribute} {left} {right})"),
            P::CountCompare { cmp, left, right } => write!(f, "(count-compare {} {left} {right})", cmp.name()),
            P::ExistPair { subject, object, relation } => write!(f, "(exist-pair {subject} {object} {relation})"),
        }
    }
}

/// A question's meaning as a tree of DSL operations.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Program {
    pub root: ProgramNode,
}

impl Program {
    pub fn new(root: ProgramNode) -> Self {
        Self { root }
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.root.fmt(f)
    }
}

impl std::str::FromStr for Program {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_program(s)
    }
}

impl serde::Serialize for Program {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for Program {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        parse_program(&text).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("unbalanced parentheses at byte {0}")]
    Unbalanced(usize),
    #[error("unexpected end of input")]
    Empty,
    #[error("trailing input at byte {0}")]
    Trailing(usize),
    #[error("unknown head `{head}` at byte {pos}")]
    UnknownHead { head: String, pos: usize },
    #[error("`{head}` expects {expected} argument(s), found {found} (byte {pos})")]
    Arity { head: String, expected: usize, found: usize, pos: usize },
    #[error("expected identifier at byte {pos}, found {found}")]
    ExpectedIdentifier { pos: usize, found: String },
    #[error("invalid identifier `{ident}` at byte {pos}")]
    InvalidIdentifier { ident: String, pos: usize },
    #[error("unknown comparison `{found}` at byte {pos}")]
    BadComparison { found: String, pos: usize },
}

enum Sexp {
    Atom(String, usize),
    List(Vec<Sexp>, usize),
}

impl Sexp {
    fn pos(&self) -> usize {
        match self {
            Sexp::Atom(_, p) | Sexp::List(_, p) => *p,
        }
    }
}

fn read_sexp(text: &str) -> Result<Sexp, ParseError> {
    let bytes = text.as_bytes();
    let mut stack: Vec<(Vec<Sexp>, usize)> = Vec::new();
    let mut done: Option<Sexp> = None;
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if c == b')' && stack.is_empty() {
            return Err(ParseError::Unbalanced(i));
        }
        if done.is_some() {
            return Err(ParseError::Trailing(i));
        }
        match c {
            b'(' => {
                stack.push((Vec::new(), i));
                i += 1;
            }
            b')' => {
                let (items, start) = stack.pop().ok_or(ParseError::Unbalanced(i))?;
                let list = Sexp::List(items, start);
                match stack.last_mut() {
                    Some((parent, _)) => parent.push(list),
                    None => done = Some(list),
                }
                i += 1;
            }
            _ => {
                let start = i;
                while i < bytes.len() && !bytes[i].is_ascii_whitespace() && bytes[i] != b'(' && bytes[i] != b')' {
                    i += 1;
                }
                let atom = Sexp::Atom(text[start..i].to_string(), start);
                match stack.last_mut() {
                    Some((parent, _)) => parent.push(atom),
                    None => done = Some(atom),
                }
            }
        }
    }
    if let Some((_, start)) = stack.last() {
        return Err(ParseError::Unbalanced(*start));
    }
    done.ok_or(ParseError::Empty)
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some('a'..='z')) && chars.all(|c| matches!(c, 'a'..='z' | '0'..='9' | '-'))
}

fn ident(s: &Sexp) -> Result<String, ParseError> {
    match s {
        Sexp::Atom(a, pos) if is_identifier(a) => Ok(a.clone()),
        Sexp::Atom(a, pos) => Err(ParseError::InvalidIdentifier { ident: a.clone(), pos: *pos }),
        Sexp::List(_, pos) => Err(ParseError::ExpectedIdentifier { pos: *pos, found: "list".into() }),
    }
}

fn to_node(s: &Sexp) -> Result<ProgramNode, ParseError> {
    let (items, pos) = match s {
        Sexp::Atom(a, pos) => {
            return if a.eq_ignore_ascii_case("scene") {
                Ok(P::Scene)
            } else {
                Err(ParseError::UnknownHead { head: a.clone(), pos: *pos })
            };
        }
        Sexp::List(items, pos) => (items, *pos),
    };
    let Some(Sexp::Atom(head, head_pos)) = items.first() else {
        return Err(match items.first() {
            None => ParseError::Empty,
            Some(other) => ParseError::UnknownHead { head: "(".into(), pos: other.pos() },
        });
    };
    let head = head.to_ascii_lowercase();
    let args = &items[1..];
    let arity = |n: usize| -> Result<(), ParseError> {
        if args.len() != n {
            Err(ParseError::Arity { head: head.clone(), expected: n, found: args.len(), pos })
        } else {
            Ok(())
        }
    };
    let sub = |i: usize| to_node(&args[i]).map(Box::new);
    Ok(match head.as_str() {
        "scene" => {
            arity(0)?;
            P::Scene
        }
        "filter" => {
            arity(2)?;
            P::Filter { child: sub(0)?, concept: ident(&args[1])? }
        }
        "relate" => {
            arity(2)?;
            P::Relate { relation: ident(&args[0])?, reference: sub(1)? }
        }
        "relate-same" => {
            arity(2)?;
            P::RelateSame { attribute: ident(&args[0])?, reference: sub(1)? }
        }
        "intersect" => {
            arity(2)?;
            P::Intersect(sub(0)?, sub(1)?)
        }
        "union" => {
            arity(2)?;
            P::Union(sub(0)?, sub(1)?)
        }
        "unique" => {
            arity(1)?;
            P::Unique(sub(0)?)
        }
        "count" => {
            arity(1)?;
            P::Count(sub(0)?)
        }
        "exist" => {
            arity(1)?;
            P::Exist(sub(0)?)
        }
        "query" => {
            arity(2)?;
            P::Query { attribute: ident(&args[0])?, reference: sub(1)? }
        }
        "attr-equal" => {
            arity(3)?;
            P::AttrEqual { attribute: ident(&args[0])?, left: sub(1)?, right: sub(2)? }
        }
        "count-compare" => {
            arity(3)?;
            let name = ident(&args[0])?;
            let cmp =
                Comparison::from_name(&name).ok_or(ParseError::BadComparison { found: name, pos: args[0].pos() })?;
            P::CountCompare { cmp, left: sub(1)?, right: sub(2)? }
        }
        "exist-pair" => {
            arity(3)?;
            P::ExistPair { subject: ident(&args[0])?, object: ident(&args[1])?, relation: ident(&args[2])? }
        }
        _ => return Err(ParseError::UnknownHead { head, pos: *head_pos }),
    })
}

/// Parses the s-expression program notation, e.g. `(count (filter scene red))`.
pub fn parse_program(text: &str) -> Result<Program, ParseError> {
    let sexp = read_sexp(text)?;
    Ok(Program::new(to_node(&sexp)?))
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum ValueType {
    ObjectSet,
    ObjectRef,
    Bool,
    Int,
    /// A concept name drawn from the given attribute namespace.
    ConceptName(String),
    ActionFormula,
}

impl ValueType {
    pub fn is_answer(&self) -> bool {
        matches!(self, ValueType::Bool | ValueType::Int | ValueType::ConceptName(_))
    }
}

impl fmt::Display for ValueType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValueType::ObjectSet => write!(f, "ObjectSet"),
            ValueType::ObjectRef => write!(f, "ObjectRef"),
            ValueType::Bool => write!(f, "Bool"),
            ValueType::Int => write!(f, "Int"),
            ValueType::ConceptName(a) => write!(f, "ConceptName({a})"),
            ValueType::ActionFormula => write!(f, "ActionFormula"),
        }
    }
}

/// How a concept participates in programs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ConceptRole {
    Attribute(String),
    Relation,
    Action,
}

/// The part of a concept registry the type checker and program sampler need.
pub trait Vocabulary {
    fn concept_role(&self, name: &str) -> Option<ConceptRole>;
    fn has_attribute(&self, name: &str) -> bool;
    fn attribute_names(&self) -> Vec<String>;
    fn attribute_members(&self, attribute: &str) -> Vec<String>;
    fn relation_names(&self) -> Vec<String>;
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("type error at {path:?}: expected {expected}, found {found}: {message}")]
pub struct TypeErrorReport {
    /// Child indices from the root to the offending node.
    pub path: Vec<usize>,
    pub expected: String,
    pub found: String,
    pub message: String,
}

/// A program that passed [`type_check`], with one type per node in pre-order.
#[derive(Clone, Debug, PartialEq)]
pub struct TypedProgram {
    pub program: Program,
    pub types: Vec<ValueType>,
}

impl TypedProgram {
    pub fn result_type(&self) -> &ValueType {
        &self.types[0]
    }
}

pub fn type_check(program: &Program, vocab: &dyn Vocabulary) -> Result<TypedProgram, TypeErrorReport> {
    let mut types = Vec::with_capacity(program.root.size());
    let mut path = Vec::new();
    check_node(&program.root, vocab, &mut path, &mut types)?;
    Ok(TypedProgram { program: program.clone(), types })
}

fn report(
    path: &[usize],
    expected: impl fmt::Display,
    found: impl fmt::Display,
    message: impl Into<String>,
) -> TypeErrorReport {
    TypeErrorReport {
        path: path.to_vec(),
        expected: expected.to_string(),
        found: found.to_string(),
        message: message.into(),
    }
}

fn expect_attribute_concept(name: &str, vocab: &dyn Vocabulary, path: &[usize]) -> Result<(), TypeErrorReport> {
    match vocab.concept_role(name) {
        Some(ConceptRole::Attribute(_)) => Ok(()),
        Some(other) => {
            Err(report(path, "attribute concept", format!("{other:?}"), format!("`{name}` is not an object concept")))
        }
        None => Err(report(path, "attribute concept", "unresolved", format!("unknown concept `{name}`"))),
    }
}

fn expect_relation(name: &str, vocab: &dyn Vocabulary, path: &[usize]) -> Result<(), TypeErrorReport> {
    match vocab.concept_role(name) {
        Some(ConceptRole::Relation) => Ok(()),
        Some(other) => {
            Err(report(path, "relation concept", format!("{other:?}"), format!("`{name}` is not a relation")))
        }
        None => Err(report(path, "relation concept", "unresolved", format!("unknown relation `{name}`"))),
    }
}

fn expect_namespace(name: &str, vocab: &dyn Vocabulary, path: &[usize]) -> Result<(), TypeErrorReport> {
    if vocab.has_attribute(name) {
        Ok(())
    } else {
        Err(report(path, "attribute", "unresolved", format!("unknown attribute `{name}`")))
    }
}

fn check_child(
    node: &ProgramNode,
    index: usize,
    expected: ValueType,
    vocab: &dyn Vocabulary,
    path: &mut Vec<usize>,
    types: &mut Vec<ValueType>,
) -> Result<(), TypeErrorReport> {
    path.push(index);
    let found = check_node(node, vocab, path, types)?;
    if found != expected {
        return Err(report(path, &expected, &found, format!("argument {index} has the wrong type")));
    }
    path.pop();
    Ok(())
}

fn check_node(
    node: &ProgramNode,
    vocab: &dyn Vocabulary,
    path: &mut Vec<usize>,
    types: &mut Vec<ValueType>,
) -> Result<ValueType, TypeErrorReport> {
    use ValueType as T;
    let slot = types.len();
    types.push(T::ObjectSet);
    let ty = match node {
        P::Scene => T::ObjectSet,
        P::Filter { child, concept } => {
            check_child(child, 0, T::ObjectSet, vocab, path, types)?;
            expect_attribute_concept(concept, vocab, path)?;
            T::ObjectSet
        }
        P::Relate { relation, reference } => {
            expect_relation(relation, vocab, path)?;
            check_child(reference, 0, T::ObjectRef, vocab, path, types)?;
            T::ObjectSet
        }
        P::RelateSame { attribute, reference } => {
            expect_namespace(attribute, vocab, path)?;
            check_child(reference, 0, T::ObjectRef, vocab, path, types)?;
            T::ObjectSet
        }
        P::Intersect(a, b) | P::Union(a, b) => {
            check_child(a, 0, T::ObjectSet, vocab, path, types)?;
            check_child(b, 1, T::ObjectSet, vocab, path, types)?;
            T::ObjectSet
        }
        P::Unique(c) => {
            check_child(c, 0, T::ObjectSet, vocab, path, types)?;
            T::ObjectRef
        }
        P::Count(c) => {
            check_child(c, 0, T::ObjectSet, vocab, path, types)?;
            T::Int
        }
        P::Exist(c) => {
            check_child(c, 0, T::ObjectSet, vocab, path, types)?;
            T::Bool
        }
        P::Query { attribute, reference } => {
            expect_namespace(attribute, vocab, path)?;
            check_child(reference, 0, T::ObjectRef, vocab, path, types)?;
            T::ConceptName(attribute.clone())
        }
        P::AttrEqual { attribute, left, right } => {
            expect_namespace(attribute, vocab, path)?;
            check_child(left, 0, T::ObjectRef, vocab, path, types)?;
            check_child(right, 1, T::ObjectRef, vocab, path, types)?;
            T::Bool
        }
        P::CountCompare { left, right, .. } => {
            check_child(left, 0, T::ObjectSet, vocab, path, types)?;
            check_child(right, 1, T::ObjectSet, vocab, path, types)?;
            T::Bool
        }
        P::ExistPair { subject, object, relation } => {
            expect_attribute_concept(subject, vocab, path)?;
            expect_attribute_concept(object, vocab, path)?;
            expect_relation(relation, vocab, path)?;
            T::Bool
        }
    };
    types[slot] = ty.clone();
    Ok(ty)
}

/// Seeded sampler of random type-correct programs, bounded in depth.
pub struct ProgramSampler {
    rng: ChaCha8Rng,
    max_depth: usize,
    result_type: ValueType,
    attributes: Vec<String>,
    object_concepts: Vec<String>,
    relations: Vec<String>,
}

/// Endless stream of type-correct programs of depth at most `max_depth`.
///
/// The stream is empty when no program of `result_type` fits the depth bound.
pub fn enumerate_programs(
    max_depth: usize,
    vocab: &dyn Vocabulary,
    result_type: ValueType,
    seed: u64,
) -> ProgramSampler {
    let attributes = vocab.attribute_names();
    let object_concepts = attributes.iter().flat_map(|a| vocab.attribute_members(a)).collect();
    ProgramSampler {
        rng: ChaCha8Rng::seed_from_u64(seed),
        max_depth,
        result_type,
        attributes,
        object_concepts,
        relations: vocab.relation_names(),
    }
}

#[derive(Copy, Clone)]
enum Ctor {
    Scene,
    Filter,
    Relate,
    RelateSame,
    Intersect,
    Union,
    Exist,
    AttrEqual,
    CountCompare,
    ExistPair,
}

impl ProgramSampler {
    fn min_depth(&self, ty: &ValueType) -> Option<usize> {
        match ty {
            ValueType::ObjectSet => Some(0),
            ValueType::ObjectRef | ValueType::Int => Some(1),
            ValueType::Bool => Some(1),
            ValueType::ConceptName(a) if self.attributes.contains(a) => Some(2),
            _ => None,
        }
    }

    fn sample_set(&mut self, budget: usize) -> ProgramNode {
        let mut options = vec![Ctor::Scene];
        if budget >= 1 {
            if !self.object_concepts.is_empty() {
                options.push(Ctor::Filter);
            }
            options.extend([Ctor::Intersect, Ctor::Union]);
        }
        if budget >= 2 {
            if !self.relations.is_empty() {
                options.push(Ctor::Relate);
            }
            if !self.attributes.is_empty() {
                options.push(Ctor::RelateSame);
            }
        }
        match *options.choose(&mut self.rng).unwrap() {
            Ctor::Scene => P::Scene,
            Ctor::Filter => {
                let child = self.sample_set(budget - 1);
                let c = self.object_concepts.choose(&mut self.rng).unwrap().clone();
                P::Filter { child: Box::new(child), concept: c }
            }
            Ctor::Relate => {
                let r = self.relations.choose(&mut self.rng).unwrap().clone();
                P::Relate { relation: r, reference: Box::new(self.sample_ref(budget - 1)) }
            }
            Ctor::RelateSame => {
                let a = self.attributes.choose(&mut self.rng).unwrap().clone();
                P::RelateSame { attribute: a, reference: Box::new(self.sample_ref(budget - 1)) }
            }
            Ctor::Intersect => {
                P::Intersect(Box::new(self.sample_set(budget - 1)), Box::new(self.sample_set(budget - 1)))
            }
            Ctor::Union => P::Union(Box::new(self.sample_set(budget - 1)), Box::new(self.sample_set(budget - 1))),
            _ => unreachable!(),
        }
    }

    fn sample_ref(&mut self, budget: usize) -> ProgramNode {
        P::Unique(Box::new(self.sample_set(budget - 1)))
    }

    fn sample(&mut self, ty: &ValueType, budget: usize) -> ProgramNode {
        match ty {
            ValueType::ObjectSet => self.sample_set(budget),
            ValueType::ObjectRef => self.sample_ref(budget),
            ValueType::Int => P::Count(Box::new(self.sample_set(budget - 1))),
            ValueType::ConceptName(a) => {
                let reference = self.sample_ref(budget - 1);
                P::Query { attribute: a.clone(), reference: Box::new(reference) }
            }
            ValueType::Bool => {
                let mut options = vec![Ctor::Exist, Ctor::CountCompare];
                if !self.object_concepts.is_empty() && !self.relations.is_empty() {
                    options.push(Ctor::ExistPair);
                }
                if budget >= 2 && !self.attributes.is_empty() {
                    options.push(Ctor::AttrEqual);
                }
                match *options.choose(&mut self.rng).unwrap() {
                    Ctor::Exist => P::Exist(Box::new(self.sample_set(budget - 1))),
                    Ctor::CountCompare => {
                        let cmp = *Comparison::ALL.choose(&mut self.rng).unwrap();
                        let left = self.sample_set(budget - 1);
                        let right = self.sample_set(budget - 1);
                        P::CountCompare { cmp, left: Box::new(left), right: Box::new(right) }
                    }
                    Ctor::ExistPair => {
                        let s = self.object_concepts.choose(&mut self.rng).unwrap().clone();
                        let o = self.object_concepts.choose(&mut self.rng).unwrap().clone();
                        let r = self.relations.choose(&mut self.rng).unwrap().clone();
                        P::ExistPair { subject: s, object: o, relation: r }
                    }
                    Ctor::AttrEqual => {
                        let a = self.attributes.choose(&mut self.rng).unwrap().clone();
                        let left = self.sample_ref(budget - 1);
                        let right = self.sample_ref(budget - 1);
                        P::AttrEqual { attribute: a, left: Box::new(left), right: Box::new(right) }
                    }
                    _ => unreachable!(),
                }
            }
            ValueType::ActionFormula => unreachable!("filtered by min_depth"),
        }
    }
}

impl Iterator for ProgramSampler {
    type Item = Program;

    fn next(&mut self) -> Option<Program> {
        let min = self.min_depth(&self.result_type)?;
        if min > self.max_depth {
            return None;
        }
        let budget = self.rng.random_range(min..=self.max_depth);
        let ty = self.result_type.clone();
        Some(Program::new(self.sample(&ty, budget)))
    }
}
