//! Template-driven question and caption generation.

use std::collections::HashMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::concepts::FeatureSpec;
use crate::dsl::{Comparison, Program, ProgramNode};
use crate::par;

use super::domain::{Attribute, SpatialRelation, MAX_OBJECTS};
use super::language::{render_caption, render_question};
use super::oracle::{oracle_execute, Answer};
use super::{derive_seed, gen_scene, synth_features, Palette, SceneRecord, WorldError};

const INSTANTIATION_TRIES: usize = 96;
const SCENE_REDRAWS: usize = 48;
const CAPTION_TRIES: usize = 256;

/// Default depth cap for generated programs.
pub const DEFAULT_MAX_DEPTH: usize = 6;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Template {
    QueryAttr,
    Exist,
    Count,
    ExistRelate,
    CountRelate,
    QueryRelate,
    ExistPair,
    AttrEqual,
    CountSame,
    CountCompare,
    CountBoolean,
    TwoHop,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
enum AnswerKind {
    Bool,
    Count,
    Query,
}

impl Template {
    pub const ALL: [Template; 12] = [
        Template::QueryAttr,
        Template::Exist,
        Template::Count,
        Template::ExistRelate,
        Template::CountRelate,
        Template::QueryRelate,
        Template::ExistPair,
        Template::AttrEqual,
        Template::CountSame,
        Template::CountCompare,
        Template::CountBoolean,
        Template::TwoHop,
    ];

    /// Curriculum stage that introduces the template.
    pub fn stage(self) -> u8 {
        match self {
            Template::QueryAttr | Template::Exist | Template::Count => 1,
            Template::ExistRelate
            | Template::CountRelate
            | Template::QueryRelate
            | Template::ExistPair
            | Template::AttrEqual => 2,
            Template::CountSame | Template::CountCompare | Template::CountBoolean | Template::TwoHop => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Template::QueryAttr => "query-attr",
            Template::Exist => "exist",
            Template::Count => "count",
            Template::ExistRelate => "exist-relate",
            Template::CountRelate => "count-relate",
            Template::QueryRelate => "query-relate",
            Template::ExistPair => "exist-pair",
            Template::AttrEqual => "attr-equal",
            Template::CountSame => "count-same",
            Template::CountCompare => "count-compare",
            Template::CountBoolean => "count-boolean",
            Template::TwoHop => "two-hop",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name() == s)
    }

    fn answer_kind(self) -> AnswerKind {
        match self {
            Template::QueryAttr | Template::QueryRelate => AnswerKind::Query,
            Template::Count | Template::CountRelate | Template::CountSame | Template::CountBoolean => AnswerKind::Count,
            _ => AnswerKind::Bool,
        }
    }
}

/// Requested answer for balanced generation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Target {
    Bool(bool),
    Count(usize),
    Query { attribute: Attribute, value: String },
}

impl Target {
    fn accepts(&self, answer: &Answer) -> bool {
        match (self, answer) {
            (Target::Bool(a), Answer::Bool(b)) => a == b,
            (Target::Count(a), Answer::Count(b)) => a == b,
            (Target::Query { value, .. }, Answer::Concept(c)) => value == c,
            _ => false,
        }
    }
}

/// Generation constraints for one curriculum stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub stage: u8,
    pub min_objects: usize,
    pub max_objects: usize,
    pub templates: Vec<Template>,
    pub min_depth: usize,
    pub max_depth: usize,
    /// Largest count requested by balanced targets.
    pub max_count: usize,
}

impl StageSpec {
    /// Stage 1: queries, existence and counting on 1-3 objects. Stage 2 adds
    /// relations and pairs on 2-6 objects. Stage 3 adds multi-hop and
    /// comparative forms on 3-10 objects.
    pub fn standard(stage: u8) -> Result<Self, WorldError> {
        let (min_objects, max_objects, max_depth, max_count) = match stage {
            1 => (1, 3, 3, 3),
            2 => (2, 6, DEFAULT_MAX_DEPTH, 4),
            3 => (3, MAX_OBJECTS, DEFAULT_MAX_DEPTH, 5),
            _ => return Err(WorldError::Stage(stage)),
        };
        Ok(Self {
            stage,
            min_objects,
            max_objects,
            templates: Template::ALL.into_iter().filter(|t| t.stage() == stage).collect(),
            min_depth: 1,
            max_depth,
            max_count,
        })
    }

    /// Every template whose programs can satisfy the depth window.
    pub fn with_all_templates(mut self) -> Self {
        self.templates = Template::ALL.to_vec();
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QAExample {
    pub question: String,
    pub program: Program,
    pub answer: Answer,
    pub stage: u8,
    pub scene_id: u64,
    pub template: Template,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptionExample {
    pub caption: String,
    pub subject: String,
    pub relation: String,
    pub object: String,
    pub label: bool,
    pub scene_id: u64,
}

impl CaptionExample {
    pub fn program(&self) -> Program {
        Program::new(ProgramNode::exist_pair(&self.subject, &self.object, &self.relation))
    }
}

/// A question dataset with one scene per question, index-aligned.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub scenes: Vec<SceneRecord>,
    pub questions: Vec<QAExample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    pub fn scene_of(&self, q: &QAExample) -> Option<&SceneRecord> {
        self.scenes.iter().find(|s| s.id == q.scene_id)
    }

    /// Keeps examples whose index satisfies `keep`.
    pub fn filter_indices(&self, keep: impl Fn(usize) -> bool) -> Dataset {
        let mut out = Dataset::default();
        for (i, (s, q)) in self.scenes.iter().zip(&self.questions).enumerate() {
            if keep(i) {
                out.scenes.push(s.clone());
                out.questions.push(q.clone());
            }
        }
        out
    }

    /// First `n` examples.
    pub fn truncate(&self, n: usize) -> Dataset {
        self.filter_indices(|i| i < n)
    }

    pub fn extend(&mut self, other: Dataset) {
        self.scenes.extend(other.scenes);
        self.questions.extend(other.questions);
    }
}

/// Recipe for [`build_dataset`]: questions are split evenly across `stages`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub seed: u64,
    pub size: usize,
    pub stages: Vec<StageSpec>,
    pub palette: Palette,
    pub features: FeatureSpec,
    /// Offset added to scene ids so several datasets can share one id space.
    pub id_offset: u64,
}

impl DatasetSpec {
    /// All three standard stages.
    pub fn curriculum(seed: u64, size: usize, features: FeatureSpec) -> Self {
        let stages = (1..=3).map(|s| StageSpec::standard(s).expect("standard stage")).collect();
        Self { seed, size, stages, palette: Palette::base(), features, id_offset: 0 }
    }
}

struct Bag<T: Clone> {
    items: Vec<T>,
    queue: Vec<T>,
}

impl<T: Clone> Bag<T> {
    fn new(items: Vec<T>) -> Self {
        Self { items, queue: Vec::new() }
    }

    fn draw(&mut self, rng: &mut ChaCha8Rng) -> T {
        if self.queue.is_empty() {
            self.queue = self.items.clone();
            self.queue.shuffle(rng);
        }
        self.queue.pop().expect("bag is non-empty")
    }
}

struct TargetPlanner {
    templates: Bag<Template>,
    bools: Bag<bool>,
    counts: Bag<usize>,
    attributes: Bag<Attribute>,
    values: HashMap<Attribute, Bag<String>>,
}

impl TargetPlanner {
    fn new(spec: &StageSpec, palette: &Palette) -> Self {
        let values = Attribute::ALL
            .into_iter()
            .map(|a| (a, Bag::new(palette.values(a).into_iter().map(String::from).collect())))
            .collect();
        Self {
            templates: Bag::new(spec.templates.clone()),
            bools: Bag::new(vec![true, false]),
            counts: Bag::new((0..=spec.max_count).collect()),
            attributes: Bag::new(Attribute::ALL.to_vec()),
            values,
        }
    }

    fn draw(&mut self, rng: &mut ChaCha8Rng) -> (Template, Target) {
        let template = self.templates.draw(rng);
        let target = match template.answer_kind() {
            AnswerKind::Bool => Target::Bool(self.bools.draw(rng)),
            AnswerKind::Count => Target::Count(self.counts.draw(rng)),
            AnswerKind::Query => {
                let attribute = self.attributes.draw(rng);
                let value = self.values.get_mut(&attribute).expect("all attributes").draw(rng);
                Target::Query { attribute, value }
            }
        };
        (template, target)
    }
}

/// Generates a balanced dataset. Template and answer targets are drawn from
/// shuffle bags so answer tokens follow the design frequencies; each question
/// gets its own scene, redrawn until the target is realizable.
pub fn build_dataset(spec: &DatasetSpec) -> Result<Dataset, WorldError> {
    if spec.stages.is_empty() || spec.stages.iter().any(|s| s.templates.is_empty()) {
        return Err(WorldError::Stage(0));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 0xDA7A, 0));
    let mut planners: Vec<TargetPlanner> = spec.stages.iter().map(|s| TargetPlanner::new(s, &spec.palette)).collect();
    let per_stage = spec.size / spec.stages.len();
    let extra = spec.size % spec.stages.len();
    let mut jobs = Vec::with_capacity(spec.size);
    for (si, planner) in planners.iter_mut().enumerate() {
        let n = per_stage + usize::from(si < extra);
        for _ in 0..n {
            let (template, target) = planner.draw(&mut rng);
            jobs.push((jobs.len(), si, template, target));
        }
    }
    let results = par::map(&jobs, |(k, si, template, target)| {
        generate_one(spec, &spec.stages[*si], *k as u64, *template, target)
    });
    let mut out = Dataset::default();
    for r in results {
        let (scene, qa) = r?;
        out.scenes.push(scene);
        out.questions.push(qa);
    }
    Ok(out)
}

fn generate_one(
    spec: &DatasetSpec,
    stage: &StageSpec,
    index: u64,
    template: Template,
    target: &Target,
) -> Result<(SceneRecord, QAExample), WorldError> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 0x5CE7E, index));
    for attempt in 0..2 * SCENE_REDRAWS {
        let wanted = (attempt < SCENE_REDRAWS).then_some(target);
        let n = rng.random_range(stage.min_objects..=stage.max_objects);
        let scene_seed = derive_seed(spec.seed, index, attempt as u64);
        let mut scene = gen_scene(scene_seed, n, &spec.palette)?;
        scene.id = spec.id_offset + index;
        let q_seed = rng.random();
        if let Ok(qa) = gen_question_targeted(q_seed, stage, &scene, &spec.palette, template, wanted) {
            synth_features(&mut scene, &spec.features);
            return Ok((scene, qa));
        }
    }
    Err(WorldError::NoInstantiation(template.name().to_string()))
}

/// Samples a template for `stage` and instantiates it on `scene`.
pub fn gen_question(seed: u64, stage: u8, scene: &SceneRecord) -> Result<QAExample, WorldError> {
    let spec = StageSpec::standard(stage)?;
    if scene.is_empty() || scene.len() > spec.max_objects {
        return Err(WorldError::StageScene { stage, objects: scene.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = spec.templates.clone();
    order.shuffle(&mut rng);
    let mut last = WorldError::NoInstantiation(format!("stage {stage}"));
    for template in order {
        match gen_question_targeted(rng.random(), &spec, scene, &Palette::full(), template, None) {
            Ok(qa) => return Ok(qa),
            Err(e) => last = e,
        }
    }
    Err(last)
}

/// Instantiates `template` on `scene`, optionally requiring a specific answer.
pub fn gen_question_targeted(
    seed: u64,
    stage: &StageSpec,
    scene: &SceneRecord,
    palette: &Palette,
    template: Template,
    target: Option<&Target>,
) -> Result<QAExample, WorldError> {
    let mut ctx = Ctx { scene, palette, rng: ChaCha8Rng::seed_from_u64(seed) };
    for _ in 0..INSTANTIATION_TRIES {
        let Some(root) = ctx.instantiate(template, target) else { continue };
        let depth = root.depth();
        if depth < stage.min_depth || depth > stage.max_depth {
            continue;
        }
        let program = Program::new(root);
        let Some(answer) = oracle_execute(&program, scene) else { continue };
        if target.is_some_and(|t| !t.accepts(&answer)) || names_unnamed(&program, &answer, scene, palette) {
            continue;
        }
        let question = render_question(&program)?;
        return Ok(QAExample { question, program, answer, stage: stage.stage, scene_id: scene.id, template });
    }
    Err(WorldError::NoInstantiation(template.name().to_string()))
}

/// Whether answering `program` would require a word for an unnamed color:
/// it mentions one, its answer is one, or it queries or compares color on a
/// scene that holds one.
fn names_unnamed(program: &Program, answer: &Answer, scene: &SceneRecord, palette: &Palette) -> bool {
    if palette.unnamed.is_empty() {
        return false;
    }
    let ids = program.root.identifiers();
    if ids.iter().any(|id| palette.is_unnamed(id)) || matches!(answer, Answer::Concept(c) if palette.is_unnamed(c)) {
        return true;
    }
    let color = Attribute::Color.name();
    ids.contains(&color) && scene.objects.iter().any(|o| palette.is_unnamed(&o.color))
}

struct Ctx<'a> {
    scene: &'a SceneRecord,
    palette: &'a Palette,
    rng: ChaCha8Rng,
}

const SURFACE_ORDER: [Attribute; 4] = [Attribute::Size, Attribute::Color, Attribute::Material, Attribute::Shape];

fn build_set(base: ProgramNode, mut words: Vec<(Attribute, String)>) -> ProgramNode {
    words.sort_by_key(|(a, _)| SURFACE_ORDER.iter().position(|s| s == a));
    words.iter().rev().fold(base, |node, (_, c)| ProgramNode::filter(node, c))
}

impl Ctx<'_> {
    fn coin(&mut self, p: f64) -> bool {
        self.rng.random_bool(p)
    }

    fn attribute(&mut self) -> Attribute {
        *Attribute::ALL.choose(&mut self.rng).expect("non-empty")
    }

    fn relation(&mut self) -> &'static str {
        SpatialRelation::ALL.choose(&mut self.rng).expect("non-empty").concept_name()
    }

    fn object(&mut self) -> usize {
        self.rng.random_range(0..self.scene.len())
    }

    /// A value of `attr`: usually one present in the scene, sometimes any palette value.
    fn value(&mut self, attr: Attribute) -> String {
        if self.coin(0.7) {
            let i = self.object();
            self.scene.objects[i].value(attr).to_string()
        } else {
            let values = self.palette.values(attr);
            values.choose(&mut self.rng).expect("palette values").to_string()
        }
    }

    /// Surface words over up to `max` distinct attributes, none in `exclude`.
    fn descriptor(&mut self, min: usize, max: usize, exclude: Option<Attribute>) -> Vec<(Attribute, String)> {
        let mut attrs: Vec<Attribute> = Attribute::ALL.into_iter().filter(|a| Some(*a) != exclude).collect();
        attrs.shuffle(&mut self.rng);
        let k = self.rng.random_range(min..=max.min(attrs.len()));
        attrs[..k].iter().map(|a| (*a, self.value(*a))).collect()
    }

    /// `unique(filters(scene))` naming one object by some of its own attribute values.
    fn reference(&mut self, max_filters: usize, exclude_attr: Option<Attribute>, avoid: Option<usize>) -> ProgramNode {
        let mut i = self.object();
        if Some(i) == avoid && self.scene.len() > 1 {
            i = (i + 1 + self.rng.random_range(0..self.scene.len() - 1)) % self.scene.len();
        }
        let mut attrs: Vec<Attribute> = Attribute::ALL.into_iter().filter(|a| Some(*a) != exclude_attr).collect();
        attrs.shuffle(&mut self.rng);
        let k = self.rng.random_range(1..=max_filters.min(attrs.len()));
        let words = attrs[..k].iter().map(|a| (*a, self.scene.objects[i].value(*a).to_string())).collect();
        ProgramNode::unique(build_set(ProgramNode::Scene, words))
    }

    fn single_concept(&mut self) -> String {
        let a = self.attribute();
        self.value(a)
    }

    fn instantiate(&mut self, template: Template, target: Option<&Target>) -> Option<ProgramNode> {
        let query_attr = |ctx: &mut Self| match target {
            Some(Target::Query { attribute, .. }) => *attribute,
            _ => ctx.attribute(),
        };
        Some(match template {
            Template::QueryAttr => {
                let attr = query_attr(self);
                ProgramNode::query(attr.name(), self.reference(2, Some(attr), None))
            }
            Template::Exist => ProgramNode::exist(build_set(ProgramNode::Scene, self.descriptor(1, 2, None))),
            Template::Count => ProgramNode::count(build_set(ProgramNode::Scene, self.descriptor(0, 2, None))),
            Template::ExistRelate | Template::CountRelate => {
                let rel = self.relation();
                let base = ProgramNode::relate(rel, self.reference(2, None, None));
                let set = build_set(base, self.descriptor(0, 1, None));
                if template == Template::ExistRelate {
                    ProgramNode::exist(set)
                } else {
                    ProgramNode::count(set)
                }
            }
            Template::QueryRelate => {
                let attr = query_attr(self);
                let rel = self.relation();
                let base = ProgramNode::relate(rel, self.reference(2, None, None));
                let set = build_set(base, self.descriptor(0, 1, Some(attr)));
                ProgramNode::query(attr.name(), ProgramNode::unique(set))
            }
            Template::ExistPair => {
                let (a, b) = (self.single_concept(), self.single_concept());
                ProgramNode::exist_pair(&a, &b, self.relation())
            }
            Template::AttrEqual => {
                let attr = self.attribute();
                let left = self.reference(2, Some(attr), None);
                let right = self.reference(2, Some(attr), None);
                if left == right {
                    return None;
                }
                ProgramNode::attr_equal(attr.name(), left, right)
            }
            Template::CountSame => {
                let attr = self.attribute();
                let base = ProgramNode::relate_same(attr.name(), self.reference(2, Some(attr), None));
                ProgramNode::count(build_set(base, self.descriptor(0, 1, Some(attr))))
            }
            Template::CountCompare => {
                let cmp = *Comparison::ALL.choose(&mut self.rng).expect("non-empty");
                let left = build_set(ProgramNode::Scene, self.descriptor(1, 2, None));
                let right = build_set(ProgramNode::Scene, self.descriptor(1, 2, None));
                if left == right {
                    return None;
                }
                ProgramNode::count_compare(cmp, left, right)
            }
            Template::CountBoolean => {
                let a = ProgramNode::relate(self.relation(), self.reference(1, None, None));
                let b = ProgramNode::relate(self.relation(), self.reference(1, None, None));
                if a == b {
                    return None;
                }
                let joined = if self.coin(0.5) {
                    ProgramNode::Intersect(Box::new(a), Box::new(b))
                } else {
                    ProgramNode::Union(Box::new(a), Box::new(b))
                };
                ProgramNode::count(build_set(joined, self.descriptor(0, 1, None)))
            }
            Template::TwoHop => {
                let inner = ProgramNode::relate(self.relation(), self.reference(1, None, None));
                ProgramNode::exist(ProgramNode::relate(self.relation(), ProgramNode::unique(inner)))
            }
        })
    }
}

/// One caption on `scene`; the label is positive with probability `positive_fraction`.
pub fn gen_caption(
    seed: u64,
    scene: &SceneRecord,
    positive_fraction: f64,
    palette: &Palette,
) -> Result<CaptionExample, WorldError> {
    if !(0.0..=1.0).contains(&positive_fraction) {
        return Err(WorldError::Fraction(positive_fraction));
    }
    let mut ctx = Ctx { scene, palette, rng: ChaCha8Rng::seed_from_u64(seed) };
    let want = ctx.coin(positive_fraction);
    let label_of = |s: &str, o: &str, r: &str| {
        oracle_execute(&Program::new(ProgramNode::exist_pair(s, o, r)), scene) == Some(Answer::Bool(true))
    };
    let n = scene.len();
    for _ in 0..CAPTION_TRIES {
        // Start from a true pair so negatives are single-slot perturbations of positives.
        if n < 2 {
            break;
        }
        let i = ctx.object();
        let j = (i + 1 + ctx.rng.random_range(0..n - 1)) % n;
        let rel = *SpatialRelation::ALL
            .iter()
            .filter(|r| scene.relation(**r, i, j))
            .collect::<Vec<_>>()
            .choose(&mut ctx.rng)
            .expect("distinct objects are related");
        let (mut s, mut o, mut r) = (
            scene.objects[i].value(ctx.attribute()).to_string(),
            scene.objects[j].value(ctx.attribute()).to_string(),
            rel.concept_name().to_string(),
        );
        if !want {
            match ctx.rng.random_range(0..3) {
                0 => s = ctx.single_concept(),
                1 => o = ctx.single_concept(),
                _ => r = ctx.relation().to_string(),
            }
        }
        if palette.is_unnamed(&s) || palette.is_unnamed(&o) || label_of(&s, &o, &r) != want {
            continue;
        }
        let caption = render_caption(&s, &r, &o)?;
        return Ok(CaptionExample { caption, subject: s, relation: r, object: o, label: want, scene_id: scene.id });
    }
    Err(WorldError::NoInstantiation(format!("caption with label {want}")))
}

/// Recipe for [`gen_captions`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptionSpec {
    pub seed: u64,
    pub size: usize,
    pub positive_fraction: f64,
    pub min_objects: usize,
    pub max_objects: usize,
    pub palette: Palette,
    pub features: FeatureSpec,
    pub id_offset: u64,
}

impl CaptionSpec {
    pub fn new(seed: u64, size: usize, features: FeatureSpec) -> Self {
        Self {
            seed,
            size,
            positive_fraction: 0.5,
            min_objects: 2,
            max_objects: 6,
            palette: Palette::base(),
            features,
            id_offset: 0,
        }
    }
}

/// Caption examples, one fresh scene each, in index order.
pub fn gen_captions(spec: &CaptionSpec) -> Result<(Vec<SceneRecord>, Vec<CaptionExample>), WorldError> {
    if spec.min_objects < 2 || spec.max_objects < spec.min_objects || spec.max_objects > MAX_OBJECTS {
        return Err(WorldError::ObjectCount(spec.min_objects));
    }
    let indices: Vec<u64> = (0..spec.size as u64).collect();
    let results = par::map(&indices, |k| -> Result<(SceneRecord, CaptionExample), WorldError> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 0xCA97, *k));
        let mut last = WorldError::NoInstantiation("caption".into());
        for attempt in 0..SCENE_REDRAWS as u64 {
            let n = rng.random_range(spec.min_objects..=spec.max_objects);
            let mut scene = gen_scene(derive_seed(spec.seed, 0xCA98 + attempt, *k), n, &spec.palette)?;
            scene.id = spec.id_offset + k;
            match gen_caption(rng.random(), &scene, spec.positive_fraction, &spec.palette) {
                Ok(c) => {
                    synth_features(&mut scene, &spec.features);
                    return Ok((scene, c));
                }
                Err(e) => last = e,
            }
        }
        Err(last)
    });
    let mut scenes = Vec::with_capacity(spec.size);
    let mut captions = Vec::with_capacity(spec.size);
    for r in results {
        let (s, c) = r?;
        scenes.push(s);
        captions.push(c);
    }
    Ok((scenes, captions))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::concepts::Registry;
    use crate::worldgen::parse_question;

    fn small(size: usize, seed: u64) -> Dataset {
        build_dataset(&DatasetSpec::curriculum(seed, size, FeatureSpec::default())).unwrap()
    }

    #[test]
    fn every_question_matches_the_oracle_and_parses_back() {
        let lex = Registry::standard(Default::default(), 0).lexicon;
        let d = small(300, 3);
        assert_eq!(d.len(), 300);
        for (scene, q) in d.scenes.iter().zip(&d.questions) {
            assert_eq!(oracle_execute(&q.program, scene).as_ref(), Some(&q.answer), "{}", q.question);
            assert_eq!(parse_question(&q.question, &lex).unwrap(), q.program, "{}", q.question);
            assert!(q.program.depth() <= DEFAULT_MAX_DEPTH);
            assert_eq!(scene.id, q.scene_id);
            assert!(scene.has_features());
        }
    }

    #[test]
    fn stages_respect_scene_sizes_and_templates() {
        let d = small(240, 5);
        for (scene, q) in d.scenes.iter().zip(&d.questions) {
            let spec = StageSpec::standard(q.stage).unwrap();
            assert!((spec.min_objects..=spec.max_objects).contains(&scene.len()));
            assert_eq!(q.template.stage(), q.stage);
            if q.stage == 1 {
                assert!(q.program.depth() <= 3);
            }
        }
        assert!(d.questions.iter().any(|q| q.stage == 2 && q.program.to_string().contains("(relate ")));
    }

    #[test]
    fn dataset_is_deterministic() {
        assert_eq!(small(60, 9), small(60, 9));
        assert_ne!(small(60, 9).questions, small(60, 10).questions);
    }

    #[test]
    fn gen_question_rejects_oversized_scene() {
        let scene = gen_scene(1, 5, &Palette::base()).unwrap();
        assert_eq!(gen_question(0, 1, &scene), Err(WorldError::StageScene { stage: 1, objects: 5 }));
        let qa = gen_question(0, 3, &scene).unwrap();
        assert_eq!(oracle_execute(&qa.program, &scene), Some(qa.answer));
    }

    #[test]
    fn captions_follow_pairwise_truth() {
        let (scenes, caps) = gen_captions(&CaptionSpec::new(2, 80, FeatureSpec::default())).unwrap();
        let positives = caps.iter().filter(|c| c.label).count();
        assert!((20..=60).contains(&positives), "{positives}");
        for (s, c) in scenes.iter().zip(&caps) {
            assert_eq!(oracle_execute(&c.program(), s), Some(Answer::Bool(c.label)));
        }
    }

    #[test]
    fn caption_fraction_bounds() {
        let scene = gen_scene(1, 3, &Palette::base()).unwrap();
        assert_eq!(gen_caption(0, &scene, 1.5, &Palette::base()), Err(WorldError::Fraction(1.5)));
        assert!(gen_caption(0, &scene, 1.0, &Palette::base()).unwrap().label);
        assert!(!gen_caption(0, &scene, 0.0, &Palette::base()).unwrap().label);
    }
}
