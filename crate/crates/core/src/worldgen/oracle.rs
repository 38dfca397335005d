//! Exact set semantics over ground-truth annotations.

use std::fmt;
use std::str::FromStr;

use crate::dsl::{Comparison, Program, ProgramNode};

use super::domain::{Attribute, SpatialRelation};
use super::SceneRecord;

/// An answer token: `yes`/`no`, a count, or a concept name.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Answer {
    Bool(bool),
    Count(usize),
    Concept(String),
}

impl fmt::Display for Answer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Answer::Bool(true) => f.write_str("yes"),
            Answer::Bool(false) => f.write_str("no"),
            Answer::Count(n) => write!(f, "{n}"),
            Answer::Concept(c) => f.write_str(c),
        }
    }
}

impl FromStr for Answer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "yes" => Ok(Answer::Bool(true)),
            "no" => Ok(Answer::Bool(false)),
            "" => Err("empty answer token".into()),
            _ => match s.parse::<usize>() {
                Ok(n) => Ok(Answer::Count(n)),
                Err(_) => Ok(Answer::Concept(s.to_string())),
            },
        }
    }
}

impl serde::Serialize for Answer {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for Answer {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

enum Value {
    Set(Vec<bool>),
    Ref(usize),
    Bool(bool),
    Int(usize),
    Name(String),
}

/// Executes `program` exactly; `None` marks an invalid program for this scene
/// (e.g. `unique` over a set whose size is not 1, or an identifier the world
/// does not know).
pub fn oracle_execute(program: &Program, scene: &SceneRecord) -> Option<Answer> {
    match eval(&program.root, scene)? {
        Value::Bool(b) => Some(Answer::Bool(b)),
        Value::Int(n) => Some(Answer::Count(n)),
        Value::Name(s) => Some(Answer::Concept(s)),
        Value::Set(_) | Value::Ref(_) => None,
    }
}

fn set(v: Value) -> Option<Vec<bool>> {
    match v {
        Value::Set(s) => Some(s),
        _ => None,
    }
}

fn reference(v: Value) -> Option<usize> {
    match v {
        Value::Ref(r) => Some(r),
        _ => None,
    }
}

fn attribute_concept(scene: &SceneRecord, name: &str) -> Option<Vec<bool>> {
    Attribute::of_value(name)?;
    Some(scene.objects.iter().map(|o| o.has(name)).collect())
}

fn eval(node: &ProgramNode, scene: &SceneRecord) -> Option<Value> {
    let n = scene.objects.len();
    Some(match node {
        ProgramNode::Scene => Value::Set(vec![true; n]),
        ProgramNode::Filter { child, concept } => {
            let s = set(eval(child, scene)?)?;
            let member = attribute_concept(scene, concept)?;
            Value::Set(s.iter().zip(member).map(|(a, b)| *a && b).collect())
        }
        ProgramNode::Relate { relation, reference: r } => {
            let rel = SpatialRelation::from_concept(relation)?;
            let j = reference(eval(r, scene)?)?;
            Value::Set((0..n).map(|i| scene.relation(rel, i, j)).collect())
        }
        ProgramNode::RelateSame { attribute, reference: r } => {
            let attr = Attribute::from_name(attribute)?;
            let j = reference(eval(r, scene)?)?;
            let v = scene.objects[j].value(attr);
            Value::Set((0..n).map(|i| i != j && scene.objects[i].value(attr) == v).collect())
        }
        ProgramNode::Intersect(a, b) => {
            let (a, b) = (set(eval(a, scene)?)?, set(eval(b, scene)?)?);
            Value::Set(a.iter().zip(b).map(|(x, y)| *x && y).collect())
        }
        ProgramNode::Union(a, b) => {
            let (a, b) = (set(eval(a, scene)?)?, set(eval(b, scene)?)?);
            Value::Set(a.iter().zip(b).map(|(x, y)| *x || y).collect())
        }
        ProgramNode::Unique(c) => {
            let s = set(eval(c, scene)?)?;
            let members: Vec<usize> = (0..n).filter(|i| s[*i]).collect();
            if members.len() != 1 {
                return None;
            }
            Value::Ref(members[0])
        }
        ProgramNode::Count(c) => Value::Int(set(eval(c, scene)?)?.iter().filter(|b| **b).count()),
        ProgramNode::Exist(c) => Value::Bool(set(eval(c, scene)?)?.iter().any(|b| *b)),
        ProgramNode::Query { attribute, reference: r } => {
            let attr = Attribute::from_name(attribute)?;
            let i = reference(eval(r, scene)?)?;
            Value::Name(scene.objects[i].value(attr).to_string())
        }
        ProgramNode::AttrEqual { attribute, left, right } => {
            let attr = Attribute::from_name(attribute)?;
            let a = reference(eval(left, scene)?)?;
            let b = reference(eval(right, scene)?)?;
            Value::Bool(scene.objects[a].value(attr) == scene.objects[b].value(attr))
        }
        ProgramNode::CountCompare { cmp, left, right } => {
            let a = set(eval(left, scene)?)?.iter().filter(|b| **b).count();
            let b = set(eval(right, scene)?)?.iter().filter(|b| **b).count();
            Value::Bool(match cmp {
                Comparison::Greater => a > b,
                Comparison::Less => a < b,
                Comparison::Equal => a == b,
            })
        }
        ProgramNode::ExistPair { subject, object, relation } => {
            let rel = SpatialRelation::from_concept(relation)?;
            let s = attribute_concept(scene, subject)?;
            let o = attribute_concept(scene, object)?;
            let found = (0..n).any(|i| s[i] && (0..n).any(|j| o[j] && scene.relation(rel, i, j)));
            Value::Bool(found)
        }
    })
}
