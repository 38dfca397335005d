//! Concept registry: each concept is a typed parameter list, a program
//! template and a trainable embedding. Grounding probabilities come from the
//! cosine similarity between projected perceptual features and embeddings.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, NodeId, Tape};
use crate::dsl::{ConceptRole, ValueType, Vocabulary};
use crate::worldgen::domain::{Attribute, SpatialRelation, RAW_OBJECT_DIM, RAW_PAIR_DIM, SHAPES};

pub const CHECKPOINT_FORMAT: &str = "nscl-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConceptError {
    #[error("concept `{0}` already registered")]
    Duplicate(String),
    #[error("object-attribute concept `{0}` needs a namespace")]
    MissingNamespace(String),
    #[error("concept `{0}` of this kind cannot belong to a namespace")]
    UnexpectedNamespace(String),
    #[error("unknown concept `{0}`")]
    UnknownConcept(String),
    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),
    #[error("attribute namespace `{0}` already exists")]
    DuplicateAttribute(String),
    #[error("concept `{name}` is a {found}, expected {expected}")]
    WrongKind { name: String, expected: &'static str, found: &'static str },
    #[error("attribute namespace `{0}` has no members")]
    EmptyNamespace(String),
    #[error("feature length {found} does not match encoder input {expected}")]
    FeatureLength { expected: usize, found: usize },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
}

pub type Result<T> = std::result::Result<T, ConceptError>;

/// Constants of the grounding functions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoringConfig {
    /// Embedding dimension.
    pub dim: usize,
    /// Cosine offset of the membership sigmoid.
    pub gamma: f64,
    /// Temperature of the membership sigmoid.
    pub tau: f64,
    /// Temperature of the attribute query softmax.
    pub tau_query: f64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self { dim: 64, gamma: 0.4, tau: 0.08, tau_query: 0.25 }
    }
}

/// How raw features were synthesized; needed to re-featurize new states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub mixing_seed: u64,
    pub noise: f64,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        Self { mixing_seed: 0, noise: 0.05 }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ConceptId(pub usize);

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AttributeId(pub usize);

#[derive(Clone, Debug, PartialEq)]
pub enum ConceptKind {
    ObjectAttribute(AttributeId),
    Relation,
    Action,
}

impl ConceptKind {
    fn label(&self) -> &'static str {
        match self {
            ConceptKind::ObjectAttribute(_) => "object-attribute concept",
            ConceptKind::Relation => "relation",
            ConceptKind::Action => "action",
        }
    }
}

/// Requested kind when registering a concept.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KindRequest {
    ObjectAttribute,
    Relation,
    Action,
}

/// A trainable array plus its freeze flag.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Vec<f64>,
    pub trainable: bool,
}

impl Param {
    fn new(value: Vec<f64>) -> Self {
        Self { value, trainable: true }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConceptEntry {
    pub name: String,
    pub kind: ConceptKind,
    pub parameters: Vec<ValueType>,
    pub program_template: String,
    pub embedding: Param,
    /// Relation concepts own a pair encoder (`dim x RAW_PAIR_DIM`, row-major).
    pub pair_encoder: Option<Param>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttributeNamespace {
    pub name: String,
    pub members: Vec<ConceptId>,
    /// `dim x dim`, row-major.
    pub projection: Param,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", content = "name", rename_all = "lowercase")]
pub enum LexTarget {
    Concept(String),
    Attribute(String),
}

/// Surface word to concept/attribute table.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Lexicon {
    words: BTreeMap<String, LexTarget>,
}

impl Lexicon {
    pub fn bind(&mut self, word: &str, target: LexTarget) {
        self.words.insert(word.to_string(), target);
    }

    pub fn lookup(&self, word: &str) -> Option<&LexTarget> {
        self.words.get(word)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains_key(word)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &LexTarget)> {
        self.words.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Identifies one trainable array in the registry.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamKey {
    ObjectEncoder,
    Projection(AttributeId),
    Embedding(ConceptId),
    PairEncoder(ConceptId),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TrainableSelector {
    All,
    Only(String),
    AllExcept(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Registry {
    pub config: ScoringConfig,
    pub features: FeatureSpec,
    concepts: Vec<ConceptEntry>,
    by_name: HashMap<String, ConceptId>,
    namespaces: Vec<AttributeNamespace>,
    /// `dim x RAW_OBJECT_DIM`, row-major.
    object_encoder: Param,
    pub lexicon: Lexicon,
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

/// Seed for a named parameter, so initialization does not depend on registration order.
fn name_seed(seed: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325 ^ seed;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn matrix_init(seed: u64, tag: &str, rows: usize, cols: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(name_seed(seed, tag));
    uniform(&mut rng, rows * cols, (3.0 / cols as f64).sqrt())
}

impl Registry {
    /// Empty registry with freshly initialized feature maps.
    pub fn new(config: ScoringConfig, features: FeatureSpec, seed: u64) -> Self {
        let object_encoder = Param::new(matrix_init(seed, "object-encoder", config.dim, RAW_OBJECT_DIM));
        Self {
            config,
            features,
            concepts: Vec::new(),
            by_name: HashMap::new(),
            namespaces: Vec::new(),
            object_encoder,
            lexicon: Lexicon::default(),
        }
    }

    /// Registry over the base world vocabulary: every attribute value except
    /// `withheld`, the four spatial relations and the tabletop actions, with
    /// a lexicon covering the question templates.
    pub fn for_world(config: ScoringConfig, features: FeatureSpec, seed: u64, withheld: &[&str]) -> Self {
        let mut reg = Self::new(config, features, seed);
        for attr in Attribute::ALL {
            reg.add_attribute(attr.name(), seed).expect("fresh registry");
            reg.lexicon.bind(attr.name(), LexTarget::Attribute(attr.name().into()));
            for value in attr.values() {
                if withheld.contains(value) {
                    continue;
                }
                reg.register_concept(value, KindRequest::ObjectAttribute, Some(attr.name()), seed)
                    .expect("fresh registry");
                reg.lexicon.bind(value, LexTarget::Concept(value.to_string()));
            }
        }
        for shape in SHAPES {
            reg.lexicon.bind(&format!("{shape}s"), LexTarget::Concept(shape.into()));
        }
        for (word, shape) in [("box", "cube"), ("boxes", "cube"), ("ball", "sphere"), ("balls", "sphere")] {
            reg.lexicon.bind(word, LexTarget::Concept(shape.into()));
        }
        for rel in SpatialRelation::ALL {
            reg.register_concept(rel.concept_name(), KindRequest::Relation, None, seed).expect("fresh registry");
            reg.lexicon.bind(rel.word(), LexTarget::Concept(rel.concept_name().into()));
        }
        for action in crate::actions::ACTION_NAMES {
            reg.register_concept(action, KindRequest::Action, None, seed).expect("fresh registry");
        }
        reg
    }

    /// Base vocabulary with the default scoring constants and teal withheld.
    pub fn standard(config: ScoringConfig, seed: u64) -> Self {
        Self::for_world(config, FeatureSpec::default(), seed, &[crate::worldgen::NOVEL_COLOR])
    }

    pub fn add_attribute(&mut self, name: &str, seed: u64) -> Result<AttributeId> {
        if self.namespaces.iter().any(|n| n.name == name) {
            return Err(ConceptError::DuplicateAttribute(name.into()));
        }
        let d = self.config.dim;
        let projection = Param::new(matrix_init(seed, &format!("projection:{name}"), d, d));
        self.namespaces.push(AttributeNamespace { name: name.into(), members: Vec::new(), projection });
        Ok(AttributeId(self.namespaces.len() - 1))
    }

    /// Adds a concept with an embedding drawn uniformly from [-0.1, 0.1].
    pub fn register_concept(
        &mut self,
        name: &str,
        kind: KindRequest,
        namespace: Option<&str>,
        seed: u64,
    ) -> Result<ConceptId> {
        if self.by_name.contains_key(name) {
            return Err(ConceptError::Duplicate(name.into()));
        }
        let d = self.config.dim;
        let id = ConceptId(self.concepts.len());
        let mut rng = ChaCha8Rng::seed_from_u64(name_seed(seed, &format!("embedding:{name}")));
        let embedding = Param::new(uniform(&mut rng, d, 0.1));
        let upper = name.to_uppercase();
        let (kind, parameters, program_template, pair_encoder) = match kind {
            KindRequest::ObjectAttribute => {
                let ns_name = namespace.ok_or_else(|| ConceptError::MissingNamespace(name.into()))?;
                let ns = self.attribute_id(ns_name)?;
                self.namespaces[ns.0].members.push(id);
                (ConceptKind::ObjectAttribute(ns), vec![ValueType::ObjectRef], format!("filter(x, {upper})"), None)
            }
            KindRequest::Relation => {
                if namespace.is_some() {
                    return Err(ConceptError::UnexpectedNamespace(name.into()));
                }
                let enc = Param::new(matrix_init(seed, &format!("pair-encoder:{name}"), d, RAW_PAIR_DIM));
                (
                    ConceptKind::Relation,
                    vec![ValueType::ObjectRef, ValueType::ObjectRef],
                    format!("relate(x, y, {upper})"),
                    Some(enc),
                )
            }
            KindRequest::Action => {
                if namespace.is_some() {
                    return Err(ConceptError::UnexpectedNamespace(name.into()));
                }
                let schema = crate::actions::ActionSchema::named(name);
                let arity = schema.as_ref().map_or(2, |s| s.parameters.len());
                let template = schema.map_or_else(|| format!("controller={upper}"), |s| s.template());
                (ConceptKind::Action, vec![ValueType::ObjectRef; arity], template, None)
            }
        };
        self.concepts.push(ConceptEntry {
            name: name.into(),
            kind,
            parameters,
            program_template,
            embedding,
            pair_encoder,
        });
        self.by_name.insert(name.into(), id);
        Ok(id)
    }

    pub fn concept_id(&self, name: &str) -> Result<ConceptId> {
        self.by_name.get(name).copied().ok_or_else(|| ConceptError::UnknownConcept(name.into()))
    }

    pub fn concept(&self, id: ConceptId) -> &ConceptEntry {
        &self.concepts[id.0]
    }

    pub fn concepts(&self) -> &[ConceptEntry] {
        &self.concepts
    }

    pub fn attribute_id(&self, name: &str) -> Result<AttributeId> {
        self.namespaces
            .iter()
            .position(|n| n.name == name)
            .map(AttributeId)
            .ok_or_else(|| ConceptError::UnknownAttribute(name.into()))
    }

    pub fn namespace(&self, id: AttributeId) -> &AttributeNamespace {
        &self.namespaces[id.0]
    }

    pub fn namespaces(&self) -> &[AttributeNamespace] {
        &self.namespaces
    }

    /// Namespace of an object-attribute concept.
    pub fn namespace_of(&self, id: ConceptId) -> Result<AttributeId> {
        match self.concepts[id.0].kind {
            ConceptKind::ObjectAttribute(ns) => Ok(ns),
            ref other => Err(ConceptError::WrongKind {
                name: self.concepts[id.0].name.clone(),
                expected: "object-attribute concept",
                found: other.label(),
            }),
        }
    }

    /// All trainable arrays in a fixed order.
    pub fn param_keys(&self) -> Vec<ParamKey> {
        let mut keys = vec![ParamKey::ObjectEncoder];
        keys.extend((0..self.namespaces.len()).map(|i| ParamKey::Projection(AttributeId(i))));
        for (i, c) in self.concepts.iter().enumerate() {
            keys.push(ParamKey::Embedding(ConceptId(i)));
            if c.pair_encoder.is_some() {
                keys.push(ParamKey::PairEncoder(ConceptId(i)));
            }
        }
        keys
    }

    pub fn param(&self, key: ParamKey) -> &Param {
        match key {
            ParamKey::ObjectEncoder => &self.object_encoder,
            ParamKey::Projection(a) => &self.namespaces[a.0].projection,
            ParamKey::Embedding(c) => &self.concepts[c.0].embedding,
            ParamKey::PairEncoder(c) => self.concepts[c.0].pair_encoder.as_ref().expect("relation concept"),
        }
    }

    pub fn param_mut(&mut self, key: ParamKey) -> &mut Param {
        match key {
            ParamKey::ObjectEncoder => &mut self.object_encoder,
            ParamKey::Projection(a) => &mut self.namespaces[a.0].projection,
            ParamKey::Embedding(c) => &mut self.concepts[c.0].embedding,
            ParamKey::PairEncoder(c) => self.concepts[c.0].pair_encoder.as_mut().expect("relation concept"),
        }
    }

    /// Sets the freeze flag on the selected parameters; the rest are untouched.
    ///
    /// `Only(c)` selects the concept's own arrays (embedding, and pair encoder
    /// for relations); `AllExcept(c)` selects everything else.
    pub fn set_trainable(&mut self, selector: &TrainableSelector, flag: bool) -> Result<()> {
        let owned =
            |id: ConceptId, key: ParamKey| matches!(key, ParamKey::Embedding(c) | ParamKey::PairEncoder(c) if c == id);
        let pick: Box<dyn Fn(ParamKey) -> bool> = match selector {
            TrainableSelector::All => Box::new(|_| true),
            TrainableSelector::Only(name) => {
                let id = self.concept_id(name)?;
                Box::new(move |k| owned(id, k))
            }
            TrainableSelector::AllExcept(name) => {
                let id = self.concept_id(name)?;
                Box::new(move |k| !owned(id, k))
            }
        };
        for key in self.param_keys() {
            if pick(key) {
                self.param_mut(key).trainable = flag;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let doc = CheckpointDoc {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            features: self.features.clone(),
            raw_object_dim: RAW_OBJECT_DIM,
            raw_pair_dim: RAW_PAIR_DIM,
            object_encoder: ParamDoc::from_param(&self.object_encoder, self.config.dim, RAW_OBJECT_DIM),
            namespaces: self
                .namespaces
                .iter()
                .map(|n| NamespaceDoc {
                    name: n.name.clone(),
                    members: n.members.iter().map(|m| self.concepts[m.0].name.clone()).collect(),
                    projection: ParamDoc::from_param(&n.projection, self.config.dim, self.config.dim),
                })
                .collect(),
            concepts: self
                .concepts
                .iter()
                .map(|c| ConceptDoc {
                    name: c.name.clone(),
                    kind: match c.kind {
                        ConceptKind::ObjectAttribute(_) => "object-attribute".into(),
                        ConceptKind::Relation => "relation".into(),
                        ConceptKind::Action => "action".into(),
                    },
                    namespace: match c.kind {
                        ConceptKind::ObjectAttribute(ns) => Some(self.namespaces[ns.0].name.clone()),
                        _ => None,
                    },
                    parameters: c.parameters.iter().map(|t| t.to_string()).collect(),
                    program: c.program_template.clone(),
                    embedding: ParamDoc::from_param(&c.embedding, 1, self.config.dim),
                    pair_encoder: c
                        .pair_encoder
                        .as_ref()
                        .map(|p| ParamDoc::from_param(p, self.config.dim, RAW_PAIR_DIM)),
                })
                .collect(),
            lexicon: self.lexicon.iter().map(|(w, t)| (w.to_string(), t.clone())).collect(),
        };
        let mut s = serde_json::to_string_pretty(&doc).expect("checkpoint serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let head: serde_json::Value = serde_json::from_str(text).map_err(|e| ConceptError::Corrupt(e.to_string()))?;
        if head.get("format").and_then(|v| v.as_str()) != Some(CHECKPOINT_FORMAT) {
            return Err(ConceptError::Corrupt("missing checkpoint format tag".into()));
        }
        let version = head.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if version != CHECKPOINT_VERSION {
            return Err(ConceptError::Version { found: version, expected: CHECKPOINT_VERSION });
        }
        let doc: CheckpointDoc = serde_json::from_value(head).map_err(|e| ConceptError::Corrupt(e.to_string()))?;
        let d = doc.config.dim;
        if doc.raw_object_dim != RAW_OBJECT_DIM || doc.raw_pair_dim != RAW_PAIR_DIM {
            return Err(ConceptError::Corrupt("raw feature dimensions do not match this build".into()));
        }
        let mut reg = Registry {
            config: doc.config.clone(),
            features: doc.features.clone(),
            concepts: Vec::new(),
            by_name: HashMap::new(),
            namespaces: Vec::new(),
            object_encoder: doc.object_encoder.to_param(d, RAW_OBJECT_DIM)?,
            lexicon: Lexicon::default(),
        };
        for ns in &doc.namespaces {
            reg.namespaces.push(AttributeNamespace {
                name: ns.name.clone(),
                members: Vec::new(),
                projection: ns.projection.to_param(d, d)?,
            });
        }
        for c in &doc.concepts {
            if reg.by_name.contains_key(&c.name) {
                return Err(ConceptError::Corrupt(format!("duplicate concept `{}`", c.name)));
            }
            let id = ConceptId(reg.concepts.len());
            let kind = match (c.kind.as_str(), &c.namespace) {
                ("object-attribute", Some(ns)) => {
                    let a = reg.attribute_id(ns).map_err(|e| ConceptError::Corrupt(e.to_string()))?;
                    ConceptKind::ObjectAttribute(a)
                }
                ("relation", None) => ConceptKind::Relation,
                ("action", None) => ConceptKind::Action,
                (k, _) => return Err(ConceptError::Corrupt(format!("bad kind `{k}` for `{}`", c.name))),
            };
            let parameters = c
                .parameters
                .iter()
                .map(|p| parse_value_type(p).ok_or_else(|| ConceptError::Corrupt(format!("bad type `{p}`"))))
                .collect::<Result<Vec<_>>>()?;
            let pair_encoder = match (&kind, &c.pair_encoder) {
                (ConceptKind::Relation, Some(p)) => Some(p.to_param(d, RAW_PAIR_DIM)?),
                (ConceptKind::Relation, None) => {
                    return Err(ConceptError::Corrupt(format!("relation `{}` lacks a pair encoder", c.name)))
                }
                (_, None) => None,
                (_, Some(_)) => return Err(ConceptError::Corrupt(format!("unexpected pair encoder on `{}`", c.name))),
            };
            reg.concepts.push(ConceptEntry {
                name: c.name.clone(),
                kind,
                parameters,
                program_template: c.program.clone(),
                embedding: c.embedding.to_param(1, d)?,
                pair_encoder,
            });
            reg.by_name.insert(c.name.clone(), id);
        }
        for (i, ns) in doc.namespaces.iter().enumerate() {
            for m in &ns.members {
                let id = reg.concept_id(m).map_err(|e| ConceptError::Corrupt(e.to_string()))?;
                if reg.concepts[id.0].kind != ConceptKind::ObjectAttribute(AttributeId(i)) {
                    return Err(ConceptError::Corrupt(format!("namespace member `{m}` disagrees with its kind")));
                }
                reg.namespaces[i].members.push(id);
            }
        }
        for (word, target) in doc.lexicon {
            reg.lexicon.bind(&word, target);
        }
        Ok(reg)
    }

    pub fn score_context(&self) -> Scorer<'_> {
        Scorer::new(self)
    }
}

fn parse_value_type(s: &str) -> Option<ValueType> {
    Some(match s {
        "ObjectSet" => ValueType::ObjectSet,
        "ObjectRef" => ValueType::ObjectRef,
        "Bool" => ValueType::Bool,
        "Int" => ValueType::Int,
        "ActionFormula" => ValueType::ActionFormula,
        _ => {
            let inner = s.strip_prefix("ConceptName(")?.strip_suffix(')')?;
            ValueType::ConceptName(inner.into())
        }
    })
}

impl Vocabulary for Registry {
    fn concept_role(&self, name: &str) -> Option<ConceptRole> {
        let id = self.by_name.get(name)?;
        Some(match self.concepts[id.0].kind {
            ConceptKind::ObjectAttribute(ns) => ConceptRole::Attribute(self.namespaces[ns.0].name.clone()),
            ConceptKind::Relation => ConceptRole::Relation,
            ConceptKind::Action => ConceptRole::Action,
        })
    }

    fn has_attribute(&self, name: &str) -> bool {
        self.namespaces.iter().any(|n| n.name == name)
    }

    fn attribute_names(&self) -> Vec<String> {
        self.namespaces.iter().map(|n| n.name.clone()).collect()
    }

    fn attribute_members(&self, attribute: &str) -> Vec<String> {
        self.namespaces
            .iter()
            .find(|n| n.name == attribute)
            .map(|n| n.members.iter().map(|m| self.concepts[m.0].name.clone()).collect())
            .unwrap_or_default()
    }

    fn relation_names(&self) -> Vec<String> {
        self.concepts.iter().filter(|c| c.kind == ConceptKind::Relation).map(|c| c.name.clone()).collect()
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointDoc {
    format: String,
    version: u32,
    config: ScoringConfig,
    features: FeatureSpec,
    raw_object_dim: usize,
    raw_pair_dim: usize,
    namespaces: Vec<NamespaceDoc>,
    concepts: Vec<ConceptDoc>,
    lexicon: Vec<(String, LexTarget)>,
    object_encoder: ParamDoc,
}

#[derive(Serialize, Deserialize)]
struct NamespaceDoc {
    name: String,
    members: Vec<String>,
    projection: ParamDoc,
}

#[derive(Serialize, Deserialize)]
struct ConceptDoc {
    name: String,
    kind: String,
    namespace: Option<String>,
    parameters: Vec<String>,
    program: String,
    embedding: ParamDoc,
    pair_encoder: Option<ParamDoc>,
}

/// Array stored as base64 of little-endian `f64` bytes.
#[derive(Serialize, Deserialize)]
struct ParamDoc {
    rows: usize,
    cols: usize,
    trainable: bool,
    data: String,
}

impl ParamDoc {
    fn from_param(p: &Param, rows: usize, cols: usize) -> Self {
        let bytes: Vec<u8> = p.value.iter().flat_map(|v| v.to_le_bytes()).collect();
        Self { rows, cols, trainable: p.trainable, data: B64.encode(bytes) }
    }

    fn to_param(&self, rows: usize, cols: usize) -> Result<Param> {
        if self.rows != rows || self.cols != cols {
            return Err(ConceptError::Corrupt(format!(
                "array shape {}x{} does not match expected {rows}x{cols}",
                self.rows, self.cols
            )));
        }
        let bytes = B64.decode(&self.data).map_err(|e| ConceptError::Corrupt(e.to_string()))?;
        if bytes.len() != rows * cols * 8 {
            return Err(ConceptError::Corrupt(format!(
                "array holds {} bytes, expected {}",
                bytes.len(),
                rows * cols * 8
            )));
        }
        let value: Vec<f64> =
            bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
        if value.iter().any(|v| !v.is_finite()) {
            return Err(ConceptError::Corrupt("non-finite parameter value".into()));
        }
        Ok(Param { value, trainable: self.trainable })
    }
}

/// Builds grounding computations for one forward pass on its own tape.
///
/// Registry arrays are bound lazily: trainable ones become tape parameters,
/// frozen ones become constants.
pub struct Scorer<'r> {
    registry: &'r Registry,
    pub tape: Tape,
    bound: HashMap<ParamKey, NodeId>,
}

impl<'r> Scorer<'r> {
    pub fn new(registry: &'r Registry) -> Self {
        Self { registry, tape: Tape::new(), bound: HashMap::new() }
    }

    pub fn registry(&self) -> &'r Registry {
        self.registry
    }

    pub fn bind(&mut self, key: ParamKey) -> Result<NodeId> {
        if let Some(id) = self.bound.get(&key) {
            return Ok(*id);
        }
        let p = self.registry.param(key);
        let id =
            if p.trainable { self.tape.parameter(p.value.clone())? } else { self.tape.constant(p.value.clone())? };
        self.bound.insert(key, id);
        Ok(id)
    }

    /// `W_o f` for a raw object feature.
    pub fn encode_object(&mut self, feature: &[f64]) -> Result<NodeId> {
        if feature.len() != RAW_OBJECT_DIM {
            return Err(ConceptError::FeatureLength { expected: RAW_OBJECT_DIM, found: feature.len() });
        }
        let f = self.tape.constant(feature.to_vec())?;
        let w = self.bind(ParamKey::ObjectEncoder)?;
        Ok(self.tape.matvec(w, f, self.registry.config.dim)?)
    }

    /// `A_attr h` for an encoded object.
    pub fn project(&mut self, encoded: NodeId, attribute: AttributeId) -> Result<NodeId> {
        let a = self.bind(ParamKey::Projection(attribute))?;
        Ok(self.tape.matvec(a, encoded, self.registry.config.dim)?)
    }

    /// `sigmoid((cos(v, e_c) - gamma) / tau)`.
    pub fn membership(&mut self, v: NodeId, concept: ConceptId) -> Result<NodeId> {
        let e = self.bind(ParamKey::Embedding(concept))?;
        let cos = self.tape.cosine(v, e)?;
        let cfg = &self.registry.config;
        let z = self.tape.affine(cos, 1.0 / cfg.tau, -cfg.gamma / cfg.tau)?;
        Ok(self.tape.sigmoid(z)?)
    }

    /// Probability that the object with raw feature `feature` has `concept`.
    pub fn object_score(&mut self, feature: &[f64], concept: ConceptId) -> Result<NodeId> {
        let ns = self.registry.namespace_of(concept)?;
        let h = self.encode_object(feature)?;
        let z = self.project(h, ns)?;
        self.membership(z, concept)
    }

    /// Probability that `relation(i, j)` holds given the pair feature of `(i, j)`.
    pub fn relation_score(&mut self, pair_feature: &[f64], relation: ConceptId) -> Result<NodeId> {
        let entry = self.registry.concept(relation);
        if entry.kind != ConceptKind::Relation {
            return Err(ConceptError::WrongKind {
                name: entry.name.clone(),
                expected: "relation",
                found: entry.kind.label(),
            });
        }
        if pair_feature.len() != RAW_PAIR_DIM {
            return Err(ConceptError::FeatureLength { expected: RAW_PAIR_DIM, found: pair_feature.len() });
        }
        let g = self.tape.constant(pair_feature.to_vec())?;
        let w = self.bind(ParamKey::PairEncoder(relation))?;
        let u = self.tape.matvec(w, g, self.registry.config.dim)?;
        self.membership(u, relation)
    }

    /// Softmax over namespace members of `cos(v, e_c) / tau_query`.
    pub fn query_projected(&mut self, v: NodeId, attribute: AttributeId) -> Result<NodeId> {
        let ns = self.registry.namespace(attribute);
        if ns.members.is_empty() {
            return Err(ConceptError::EmptyNamespace(ns.name.clone()));
        }
        let mut cosines = Vec::with_capacity(ns.members.len());
        for &m in &ns.members {
            let e = self.bind(ParamKey::Embedding(m))?;
            cosines.push(self.tape.cosine(v, e)?);
        }
        let all = self.tape.concat(&cosines)?;
        let logits = self.tape.affine(all, 1.0 / self.registry.config.tau_query, 0.0)?;
        Ok(self.tape.softmax(logits)?)
    }

    pub fn query_distribution(&mut self, feature: &[f64], attribute: AttributeId) -> Result<NodeId> {
        let h = self.encode_object(feature)?;
        let z = self.project(h, attribute)?;
        self.query_projected(z, attribute)
    }

    /// Gradients of `root` for every bound trainable array, in key order.
    pub fn gradients(&self, root: NodeId) -> Result<Vec<(ParamKey, Vec<f64>)>> {
        let grads = self.tape.backward(root)?;
        let mut out: Vec<(ParamKey, Vec<f64>)> =
            self.bound.iter().filter_map(|(k, id)| grads.get(*id).map(|g| (*k, g.to_vec()))).collect();
        out.sort_by_key(|(k, _)| *k);
        Ok(out)
    }
}
