//! Tabletop action domain. Actions are concepts with a precondition, a
//! postcondition and a deterministic controller; goals are conjunctions of
//! predicates that learned concepts can check without any action-domain
//! training.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::concepts::{ConceptError, Registry};
use crate::par;
use crate::worldgen::domain::{Attribute, SpatialRelation, MAX_OBJECTS};
use crate::worldgen::{gen_scene, synth_features, ObjectSpec, Palette, SceneRecord, WorldError};

/// Offset a put leaves between the placed object and its reference.
pub const PUT_OFFSET: f64 = 0.1;
/// Default depth cap of [`plan`].
pub const DEFAULT_PLAN_DEPTH: usize = 4;

pub const ACTION_NAMES: [&str; 5] = ["pick", "put-left-of", "put-right-of", "put-front-of", "put-behind"];

#[derive(Debug, Error)]
pub enum ActionError {
    #[error("unknown action `{0}`")]
    UnknownAction(String),
    #[error("`{action}` takes {expected} arguments, got {got}")]
    Arity { action: String, expected: usize, got: usize },
    #[error("object {index} does not exist in a state with {len} objects")]
    NoSuchObject { index: usize, len: usize },
    #[error("precondition of `{0}` does not hold")]
    Precondition(String),
    #[error("plan step {step} (`{action}`) is not applicable")]
    Inapplicable { step: usize, action: String },
    #[error("goal syntax: {0}")]
    Syntax(String),
    #[error("unknown predicate `{0}`")]
    UnknownPredicate(String),
    #[error("state: {0}")]
    State(String),
    #[error(transparent)]
    Concept(#[from] ConceptError),
    #[error(transparent)]
    World(#[from] WorldError),
}

pub type Result<T> = std::result::Result<T, ActionError>;

/// Predicate over object indices, or over parameter positions inside a schema.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Atom {
    HandEmpty,
    Holding(usize),
    Distinct(usize, usize),
    /// The reference object leaves room for a put on the given side.
    Room(SpatialRelation, usize),
    Relation(SpatialRelation, usize, usize),
    Attribute(String, usize),
}

impl Atom {
    fn args(&self) -> Vec<usize> {
        match self {
            Atom::HandEmpty => vec![],
            Atom::Holding(a) | Atom::Room(_, a) | Atom::Attribute(_, a) => vec![*a],
            Atom::Distinct(a, b) | Atom::Relation(_, a, b) => vec![*a, *b],
        }
    }

    /// Replaces parameter positions with `args`.
    fn ground(&self, args: &[usize]) -> Atom {
        let g = |p: &usize| args[*p];
        match self {
            Atom::HandEmpty => Atom::HandEmpty,
            Atom::Holding(a) => Atom::Holding(g(a)),
            Atom::Distinct(a, b) => Atom::Distinct(g(a), g(b)),
            Atom::Room(r, a) => Atom::Room(*r, g(a)),
            Atom::Relation(r, a, b) => Atom::Relation(*r, g(a), g(b)),
            Atom::Attribute(v, a) => Atom::Attribute(v.clone(), g(a)),
        }
    }

    /// Whether the learned mode scores this atom with a concept.
    pub fn is_conceptual(&self) -> bool {
        matches!(self, Atom::Relation(..) | Atom::Attribute(..))
    }

    /// Ground-truth value.
    pub fn holds(&self, state: &TabletopState) -> bool {
        let o = &state.objects;
        match self {
            Atom::HandEmpty => state.holding.is_none(),
            Atom::Holding(a) => state.holding == Some(*a),
            Atom::Distinct(a, b) => a != b,
            Atom::Room(r, a) => match r {
                SpatialRelation::LeftOf => o[*a].x > 0.0,
                SpatialRelation::RightOf => o[*a].x < 1.0,
                SpatialRelation::FrontOf => o[*a].y > 0.0,
                SpatialRelation::Behind => o[*a].y < 1.0,
            },
            Atom::Relation(r, a, b) => a != b && r.holds(o[*a].position(), o[*b].position()),
            Atom::Attribute(v, a) => o[*a].has(v),
        }
    }
}

/// Object names in goals and plan dumps: `a`, `b`, ... by index.
pub fn object_name(index: usize) -> String {
    match u8::try_from(index).ok().filter(|i| *i < 26) {
        Some(i) => char::from(b'a' + i).to_string(),
        None => format!("o{index}"),
    }
}

fn parse_object(name: &str) -> Result<usize> {
    let bad = || ActionError::Syntax(format!("bad object name `{name}`"));
    let mut chars = name.chars();
    match (chars.next(), chars.as_str()) {
        (Some(c), "") if c.is_ascii_lowercase() => Ok((c as u8 - b'a') as usize),
        (Some('o'), rest) if !rest.is_empty() => rest.parse().map_err(|_| bad()),
        _ => name.parse().map_err(|_| bad()),
    }
}

fn relation_of_word(word: &str) -> Option<SpatialRelation> {
    SpatialRelation::ALL.into_iter().find(|r| r.word() == word || r.concept_name() == word)
}

impl Atom {
    fn render(&self, n: impl Fn(usize) -> String) -> String {
        match self {
            Atom::HandEmpty => "hand-empty".into(),
            Atom::Holding(a) => format!("holding({})", n(*a)),
            Atom::Distinct(a, b) => format!("distinct({},{})", n(*a), n(*b)),
            Atom::Room(r, a) => format!("room-{}({})", r.word(), n(*a)),
            Atom::Relation(r, a, b) => format!("{}({},{})", r.word(), n(*a), n(*b)),
            Atom::Attribute(v, a) => format!("{v}({})", n(*a)),
        }
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render(object_name))
    }
}

/// Conjunction of atoms, written `left(a,b) & red(a)`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Goal {
    pub atoms: Vec<Atom>,
}

impl Goal {
    pub fn holds(&self, state: &TabletopState) -> bool {
        self.atoms.iter().all(|a| a.holds(state))
    }

    fn check_objects(&self, len: usize) -> Result<()> {
        for index in self.atoms.iter().flat_map(Atom::args) {
            if index >= len {
                return Err(ActionError::NoSuchObject { index, len });
            }
        }
        Ok(())
    }
}

impl FromStr for Goal {
    type Err = ActionError;

    fn from_str(s: &str) -> Result<Self> {
        let mut atoms = Vec::new();
        for part in s.split('&') {
            let part = part.trim();
            let (head, rest) = part
                .split_once('(')
                .ok_or_else(|| ActionError::Syntax(format!("expected `name(args)` in `{part}`")))?;
            let inner =
                rest.strip_suffix(')').ok_or_else(|| ActionError::Syntax(format!("missing `)` in `{part}`")))?;
            let args = inner.split(',').map(|a| parse_object(a.trim())).collect::<Result<Vec<_>>>()?;
            let head = head.trim();
            let arity = |n: usize| {
                if args.len() == n {
                    Ok(())
                } else {
                    Err(ActionError::Syntax(format!("`{head}` takes {n} arguments")))
                }
            };
            let atom = if head == "holding" {
                arity(1)?;
                Atom::Holding(args[0])
            } else if let Some(r) = relation_of_word(head) {
                arity(2)?;
                Atom::Relation(r, args[0], args[1])
            } else if Attribute::of_value(head).is_some() {
                arity(1)?;
                Atom::Attribute(head.to_string(), args[0])
            } else {
                return Err(ActionError::UnknownPredicate(head.into()));
            };
            atoms.push(atom);
        }
        Ok(Goal { atoms })
    }
}

impl fmt::Display for Goal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.atoms.iter().map(Atom::to_string).collect();
        write!(f, "{}", parts.join(" & "))
    }
}

/// Objects on the table plus what the hand holds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabletopState {
    pub objects: Vec<ObjectSpec>,
    #[serde(default)]
    pub holding: Option<usize>,
    /// Seed of the feature noise when the state is perceived.
    #[serde(default)]
    pub seed: u64,
}

impl TabletopState {
    pub fn new(objects: Vec<ObjectSpec>) -> Self {
        Self { objects, holding: None, seed: 0 }
    }

    /// `n` objects from the base palette with an empty hand.
    pub fn random(seed: u64, n: usize) -> Result<Self> {
        let scene = gen_scene(seed, n, &Palette::base())?;
        Ok(Self { objects: scene.objects, holding: None, seed })
    }

    pub fn validate(&self) -> Result<()> {
        if self.objects.is_empty() || self.objects.len() > MAX_OBJECTS {
            return Err(ActionError::State(format!("{} objects, expected 1..={MAX_OBJECTS}", self.objects.len())));
        }
        if let Some(h) = self.holding.filter(|h| *h >= self.objects.len()) {
            return Err(ActionError::NoSuchObject { index: h, len: self.objects.len() });
        }
        if self.objects.iter().any(|o| !(0.0..=1.0).contains(&o.x) || !(0.0..=1.0).contains(&o.y)) {
            return Err(ActionError::State("positions must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// The state as a scene with features synthesized under `registry`'s feature spec.
    pub fn perceive(&self, registry: &Registry) -> SceneRecord {
        let mut scene = SceneRecord::from_objects(0, self.seed, self.objects.clone());
        synth_features(&mut scene, &registry.features);
        scene
    }

    fn key(&self) -> (Option<usize>, Vec<(u64, u64)>) {
        (self.holding, self.objects.iter().map(|o| (o.x.to_bits(), o.y.to_bits())).collect())
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActionKind {
    Pick,
    Put(SpatialRelation),
}

impl ActionKind {
    pub const ALL: [ActionKind; 5] = [
        ActionKind::Pick,
        ActionKind::Put(SpatialRelation::LeftOf),
        ActionKind::Put(SpatialRelation::RightOf),
        ActionKind::Put(SpatialRelation::FrontOf),
        ActionKind::Put(SpatialRelation::Behind),
    ];

    pub fn name(self) -> &'static str {
        match self {
            ActionKind::Pick => ACTION_NAMES[0],
            ActionKind::Put(SpatialRelation::LeftOf) => ACTION_NAMES[1],
            ActionKind::Put(SpatialRelation::RightOf) => ACTION_NAMES[2],
            ActionKind::Put(SpatialRelation::FrontOf) => ACTION_NAMES[3],
            ActionKind::Put(SpatialRelation::Behind) => ACTION_NAMES[4],
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    pub fn schema(self) -> ActionSchema {
        match self {
            ActionKind::Pick => ActionSchema {
                kind: self,
                parameters: vec!["x"],
                pre: vec![Atom::HandEmpty],
                post: vec![Atom::Holding(0)],
            },
            ActionKind::Put(r) => ActionSchema {
                kind: self,
                parameters: vec!["x", "y"],
                pre: vec![Atom::Holding(0), Atom::Distinct(0, 1), Atom::Room(r, 1)],
                post: vec![Atom::Relation(r, 0, 1), Atom::HandEmpty],
            },
        }
    }
}

/// Action concept: parameters, pre- and postcondition over parameter
/// positions, and the controller of its kind.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionSchema {
    pub kind: ActionKind,
    pub parameters: Vec<&'static str>,
    pub pre: Vec<Atom>,
    pub post: Vec<Atom>,
}

impl ActionSchema {
    pub fn named(name: &str) -> Option<Self> {
        ActionKind::from_name(name).map(ActionKind::schema)
    }

    fn formula(&self, atoms: &[Atom]) -> String {
        let parts: Vec<String> = atoms.iter().map(|a| a.render(|i| self.parameters[i].to_string())).collect();
        parts.join(" & ")
    }

    /// `pre=...; post=...; controller=NAME`, as stored on the concept.
    pub fn template(&self) -> String {
        format!(
            "pre={}; post={}; controller={}",
            self.formula(&self.pre),
            self.formula(&self.post),
            self.kind.name().to_uppercase()
        )
    }
}

/// Program template of the action concept `name`.
pub fn schema_template(name: &str) -> Option<String> {
    ActionSchema::named(name).map(|s| s.template())
}

/// An action applied to concrete objects.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroundedAction {
    pub kind: ActionKind,
    pub args: Vec<usize>,
}

impl GroundedAction {
    pub fn pick(x: usize) -> Self {
        Self { kind: ActionKind::Pick, args: vec![x] }
    }

    pub fn put(rel: SpatialRelation, x: usize, y: usize) -> Self {
        Self { kind: ActionKind::Put(rel), args: vec![x, y] }
    }

    fn check(&self, state: &TabletopState) -> Result<ActionSchema> {
        let schema = self.kind.schema();
        if self.args.len() != schema.parameters.len() {
            return Err(ActionError::Arity {
                action: self.kind.name().into(),
                expected: schema.parameters.len(),
                got: self.args.len(),
            });
        }
        let len = state.objects.len();
        if let Some(&index) = self.args.iter().find(|a| **a >= len) {
            return Err(ActionError::NoSuchObject { index, len });
        }
        Ok(schema)
    }

    pub fn precondition(&self, state: &TabletopState) -> Result<Vec<Atom>> {
        Ok(self.check(state)?.pre.iter().map(|a| a.ground(&self.args)).collect())
    }

    pub fn postcondition(&self, state: &TabletopState) -> Result<Vec<Atom>> {
        Ok(self.check(state)?.post.iter().map(|a| a.ground(&self.args)).collect())
    }
}

impl fmt::Display for GroundedAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let args: Vec<String> = self.args.iter().map(|a| object_name(*a)).collect();
        write!(f, "{}({})", self.kind.name(), args.join(","))
    }
}

impl FromStr for GroundedAction {
    type Err = ActionError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (head, rest) =
            s.split_once('(').ok_or_else(|| ActionError::Syntax(format!("expected `name(args)` in `{s}`")))?;
        let inner = rest.strip_suffix(')').ok_or_else(|| ActionError::Syntax(format!("missing `)` in `{s}`")))?;
        let kind = ActionKind::from_name(head.trim()).ok_or_else(|| ActionError::UnknownAction(head.trim().into()))?;
        let args = inner.split(',').map(|a| parse_object(a.trim())).collect::<Result<Vec<_>>>()?;
        Ok(Self { kind, args })
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Applicability {
    GroundTruth,
    Learned,
}

/// Product of learned probabilities of `atoms` on `state`; symbolic atoms count 0 or 1.
pub fn learned_probability(atoms: &[Atom], state: &TabletopState, registry: &Registry) -> Result<f64> {
    let mut p = 1.0;
    let mut scene: Option<SceneRecord> = None;
    let mut scorer = registry.score_context();
    for atom in atoms {
        let v = match atom {
            Atom::Relation(r, a, b) => {
                if a == b {
                    0.0
                } else {
                    let scene = scene.get_or_insert_with(|| state.perceive(registry));
                    let id = registry.concept_id(r.concept_name())?;
                    let node = scorer.relation_score(scene.pair_feature(*a, *b), id)?;
                    scorer.tape.scalar(node)
                }
            }
            Atom::Attribute(v, a) => {
                let scene = scene.get_or_insert_with(|| state.perceive(registry));
                let id = registry.concept_id(v)?;
                let node = scorer.object_score(&scene.object_features[*a], id)?;
                scorer.tape.scalar(node)
            }
            symbolic => f64::from(u8::from(symbolic.holds(state))),
        };
        p *= v;
    }
    Ok(p)
}

/// Probability that `action`'s precondition holds. Ground truth gives 0 or 1;
/// the learned mode scores concept atoms on perceived features and checks the
/// hand and geometry symbolically.
pub fn applicable(
    action: &GroundedAction,
    state: &TabletopState,
    registry: &Registry,
    mode: Applicability,
) -> Result<f64> {
    let pre = action.precondition(state)?;
    match mode {
        Applicability::GroundTruth => Ok(f64::from(u8::from(pre.iter().all(|a| a.holds(state))))),
        Applicability::Learned => learned_probability(&pre, state, registry),
    }
}

fn gt_applicable(action: &GroundedAction, state: &TabletopState) -> Result<bool> {
    Ok(action.precondition(state)?.iter().all(|a| a.holds(state)))
}

/// Runs the controller. Fails without touching anything when the
/// ground-truth precondition does not hold.
pub fn apply_action(action: &GroundedAction, state: &TabletopState) -> Result<TabletopState> {
    if !gt_applicable(action, state)? {
        return Err(ActionError::Precondition(action.to_string()));
    }
    let mut next = state.clone();
    match action.kind {
        ActionKind::Pick => next.holding = Some(action.args[0]),
        ActionKind::Put(r) => {
            let (x, y) = (action.args[0], action.args[1]);
            let (rx, ry) = (state.objects[y].x, state.objects[y].y);
            let o = &mut next.objects[x];
            match r {
                SpatialRelation::LeftOf => o.x = (rx - PUT_OFFSET).clamp(0.0, 1.0),
                SpatialRelation::RightOf => o.x = (rx + PUT_OFFSET).clamp(0.0, 1.0),
                SpatialRelation::FrontOf => o.y = (ry - PUT_OFFSET).clamp(0.0, 1.0),
                SpatialRelation::Behind => o.y = (ry + PUT_OFFSET).clamp(0.0, 1.0),
            }
            next.holding = None;
        }
    }
    Ok(next)
}

/// Every grounded action in a fixed order: picks, then puts by relation, object, reference.
pub fn grounded_actions(n: usize) -> Vec<GroundedAction> {
    let mut out: Vec<GroundedAction> = (0..n).map(GroundedAction::pick).collect();
    for r in SpatialRelation::ALL {
        for x in 0..n {
            for y in (0..n).filter(|y| *y != x) {
                out.push(GroundedAction::put(r, x, y));
            }
        }
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub steps: Vec<GroundedAction>,
}

impl Plan {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Ground-truth execution; fails at the first inapplicable step.
    pub fn execute(&self, state: &TabletopState) -> Result<TabletopState> {
        let mut s = state.clone();
        for (step, a) in self.steps.iter().enumerate() {
            s = apply_action(a, &s).map_err(|e| match e {
                ActionError::Precondition(action) => ActionError::Inapplicable { step, action },
                other => other,
            })?;
        }
        Ok(s)
    }

    /// One numbered action per line.
    pub fn dump(&self) -> String {
        if self.steps.is_empty() {
            return "(empty plan)\n".into();
        }
        self.steps.iter().enumerate().map(|(i, a)| format!("{}. {a}\n", i + 1)).collect()
    }
}

/// Breadth-first forward search under ground-truth applicability.
///
/// Each level is expanded in parallel and merged in frontier order, so the
/// returned plan is the first shortest one in [`grounded_actions`] order.
/// `None` when no plan of at most `max_depth` steps reaches the goal.
pub fn plan(state: &TabletopState, goal: &Goal, max_depth: usize) -> Result<Option<Plan>> {
    state.validate()?;
    goal.check_objects(state.objects.len())?;
    if goal.holds(state) {
        return Ok(Some(Plan::default()));
    }
    let actions = grounded_actions(state.objects.len());
    let mut seen = HashSet::from([state.key()]);
    let mut frontier = vec![(state.clone(), Vec::<usize>::new())];
    for _ in 0..max_depth {
        let expanded = par::map(&frontier, |(s, path)| {
            let mut children = Vec::new();
            for (k, a) in actions.iter().enumerate() {
                if gt_applicable(a, s).unwrap_or(false) {
                    if let Ok(next) = apply_action(a, s) {
                        let mut p = path.clone();
                        p.push(k);
                        children.push((next, p));
                    }
                }
            }
            children
        });
        let mut next_frontier = Vec::new();
        for (s, path) in expanded.into_iter().flatten() {
            if !seen.insert(s.key()) {
                continue;
            }
            if goal.holds(&s) {
                return Ok(Some(Plan { steps: path.iter().map(|k| actions[*k].clone()).collect() }));
            }
            next_frontier.push((s, path));
        }
        if next_frontier.is_empty() {
            break;
        }
        frontier = next_frontier;
    }
    Ok(None)
}

/// Executes `plan` and returns the learned probability of every goal atom, multiplied.
pub fn verify_goal(plan: &Plan, state: &TabletopState, goal: &Goal, registry: &Registry) -> Result<f64> {
    goal.check_objects(state.objects.len())?;
    let end = plan.execute(state)?;
    learned_probability(&goal.atoms, &end, registry)
}

/// A goal on `state` that some plan can reach: a relation between two
/// objects, sometimes a second relation on the other axis, and sometimes a
/// nameable attribute of the moved object.
pub fn random_goal(seed: u64, state: &TabletopState) -> Result<Goal> {
    let n = state.objects.len();
    if n < 2 {
        return Err(ActionError::State("random goals need at least two objects".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = rng.random_range(0..n);
    let mut other = || loop {
        let b = rng.random_range(0..n);
        if b != a {
            break b;
        }
    };
    let b = other();
    let c = other();
    let horizontal = [SpatialRelation::LeftOf, SpatialRelation::RightOf];
    let vertical = [SpatialRelation::FrontOf, SpatialRelation::Behind];
    let (first, second) = if rng.random_bool(0.5) { (horizontal, vertical) } else { (vertical, horizontal) };
    let mut atoms = vec![Atom::Relation(first[rng.random_range(0..2)], a, b)];
    if rng.random_bool(0.5) {
        atoms.push(Atom::Relation(second[rng.random_range(0..2)], a, c));
    }
    if rng.random_bool(0.5) {
        let palette = Palette::base();
        let values: Vec<&str> = state.objects[a].values().into_iter().filter(|v| !palette.is_unnamed(v)).collect();
        atoms.push(Atom::Attribute(values[rng.random_range(0..values.len())].to_string(), a));
    }
    let goal = Goal { atoms };
    // Room fails only on the unit-square border, which sampled positions never reach.
    Ok(goal)
}
