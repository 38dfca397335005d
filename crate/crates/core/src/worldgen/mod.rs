//! Synthetic scenes with exact ground truth, the feature synthesizer standing
//! in for perception, template question/caption generation with its inverse
//! parser, and the symbolic oracle.

pub mod domain;
mod generate;
pub mod io;
mod language;
mod oracle;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::concepts::FeatureSpec;
use domain::{Attribute, SpatialRelation, BLOCK, COLORS, MAX_OBJECTS, MIN_SEPARATION, RAW_OBJECT_DIM, RAW_PAIR_DIM};

pub use generate::{
    build_dataset, gen_caption, gen_captions, gen_question, gen_question_targeted, CaptionExample, CaptionSpec,
    Dataset, DatasetSpec, QAExample, StageSpec, Target, Template, DEFAULT_MAX_DEPTH,
};
pub use language::{parse_question, render_caption, render_question, LanguageError};
pub use oracle::{oracle_execute, Answer};

/// Color withheld from the base vocabulary and introduced by few-shot learning.
pub const NOVEL_COLOR: &str = "teal";

/// Ratio of pair-feature noise to object-feature noise.
pub const PAIR_NOISE_RATIO: f64 = 0.1;

const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

/// Independent sub-seed for stream `stream`, item `index` (splitmix64 finalizer).
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorldError {
    #[error("object count {0} outside 1..={MAX_OBJECTS}")]
    ObjectCount(usize),
    #[error("could not place objects with the required separation after {0} attempts")]
    Placement(usize),
    #[error("palette is empty")]
    EmptyPalette,
    #[error("scene with {objects} objects is too large for stage {stage}")]
    StageScene { stage: u8, objects: usize },
    #[error("unknown stage {0}")]
    Stage(u8),
    #[error("no valid instantiation of {0}")]
    NoInstantiation(String),
    #[error("positive fraction {0} outside [0, 1]")]
    Fraction(f64),
    #[error(transparent)]
    Language(#[from] LanguageError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub color: String,
    pub shape: String,
    pub size: String,
    pub material: String,
    pub x: f64,
    pub y: f64,
}

impl ObjectSpec {
    pub fn value(&self, attr: Attribute) -> &str {
        match attr {
            Attribute::Color => &self.color,
            Attribute::Shape => &self.shape,
            Attribute::Size => &self.size,
            Attribute::Material => &self.material,
        }
    }

    pub fn values(&self) -> [&str; 4] {
        [&self.color, &self.shape, &self.size, &self.material]
    }

    /// Whether the object carries the attribute value named `concept`.
    pub fn has(&self, concept: &str) -> bool {
        self.values().contains(&concept)
    }

    pub fn position(&self) -> (f64, f64) {
        (self.x, self.y)
    }
}

/// A generated scene: ground-truth objects plus synthesized features.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneRecord {
    pub id: u64,
    pub seed: u64,
    pub objects: Vec<ObjectSpec>,
    /// One `RAW_OBJECT_DIM` vector per object; empty until synthesized.
    pub object_features: Vec<Vec<f64>>,
    /// Row-major `n x n` grid of `RAW_PAIR_DIM` vectors; self pairs are zero.
    pub pair_features: Vec<Vec<f64>>,
    pub feature_spec: Option<FeatureSpec>,
}

impl SceneRecord {
    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn pair_feature(&self, i: usize, j: usize) -> &[f64] {
        &self.pair_features[i * self.objects.len() + j]
    }

    /// Ground-truth relation between distinct objects `i` and `j`.
    pub fn relation(&self, rel: SpatialRelation, i: usize, j: usize) -> bool {
        i != j && rel.holds(self.objects[i].position(), self.objects[j].position())
    }

    pub fn has_features(&self) -> bool {
        self.object_features.len() == self.objects.len() && !self.objects.is_empty()
    }

    /// Scene built from explicit objects, e.g. a tabletop state.
    pub fn from_objects(id: u64, seed: u64, objects: Vec<ObjectSpec>) -> Self {
        Self { id, seed, objects, object_features: Vec::new(), pair_features: Vec::new(), feature_spec: None }
    }
}

/// Which attribute values scenes may use.
///
/// `colors` may be named by questions and captions. `unnamed` colors appear
/// on objects but are never mentioned, queried or compared, so perception
/// sees them while the vocabulary stays without a word for them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Palette {
    pub colors: Vec<String>,
    #[serde(default)]
    pub unnamed: Vec<String>,
}

impl Palette {
    /// Every color on objects; the novel one stays unnamed.
    pub fn base() -> Self {
        Self {
            colors: COLORS.iter().filter(|c| **c != NOVEL_COLOR).map(|c| c.to_string()).collect(),
            unnamed: vec![NOVEL_COLOR.to_string()],
        }
    }

    /// Every color, all nameable.
    pub fn full() -> Self {
        Self { colors: COLORS.iter().map(|c| c.to_string()).collect(), unnamed: Vec::new() }
    }

    /// Nameable values of `attr`.
    pub fn values(&self, attr: Attribute) -> Vec<&str> {
        match attr {
            Attribute::Color => self.colors.iter().map(String::as_str).collect(),
            other => other.values().to_vec(),
        }
    }

    /// Colors objects may carry.
    pub fn scene_colors(&self) -> Vec<&str> {
        self.colors.iter().chain(&self.unnamed).map(String::as_str).collect()
    }

    pub fn is_unnamed(&self, value: &str) -> bool {
        self.unnamed.iter().any(|u| u == value)
    }
}

impl Default for Palette {
    fn default() -> Self {
        Self::base()
    }
}

/// Samples `n_objects` objects with uniform attributes and separated positions.
pub fn gen_scene(seed: u64, n_objects: usize, palette: &Palette) -> Result<SceneRecord, WorldError> {
    if !(1..=MAX_OBJECTS).contains(&n_objects) {
        return Err(WorldError::ObjectCount(n_objects));
    }
    if palette.colors.is_empty() {
        return Err(WorldError::EmptyPalette);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut objects: Vec<ObjectSpec> = Vec::with_capacity(n_objects);
    let mut attempts = 0;
    while objects.len() < n_objects {
        attempts += 1;
        if attempts > MAX_PLACEMENT_ATTEMPTS {
            return Err(WorldError::Placement(MAX_PLACEMENT_ATTEMPTS));
        }
        let (x, y): (f64, f64) = (rng.random(), rng.random());
        let clear = objects.iter().all(|o| (o.x - x).abs() >= MIN_SEPARATION && (o.y - y).abs() >= MIN_SEPARATION);
        if !clear {
            continue;
        }
        let pick = |rng: &mut ChaCha8Rng, values: &[&str]| values[rng.random_range(0..values.len())].to_string();
        let color = pick(&mut rng, &palette.scene_colors());
        let shape = pick(&mut rng, &domain::SHAPES);
        let size = pick(&mut rng, &domain::SIZES);
        let material = pick(&mut rng, &domain::MATERIALS);
        objects.push(ObjectSpec { color, shape, size, material, x, y });
    }
    Ok(SceneRecord::from_objects(0, seed, objects))
}

/// Fixed random orthogonal `BLOCK x BLOCK` matrix per attribute.
pub fn mixing_matrices(mixing_seed: u64) -> Vec<DMatrix<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(mixing_seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    Attribute::ALL
        .iter()
        .map(|_| {
            let g = DMatrix::from_fn(BLOCK, BLOCK, |_, _| normal.sample(&mut rng));
            g.qr().q()
        })
        .collect()
}

fn noise_seed(scene_seed: u64, mixing_seed: u64) -> u64 {
    scene_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ mixing_seed.rotate_left(17) ^ 0x5EED
}

/// Fills in object and pair features for `scene`.
///
/// Object feature: per attribute, the mixed one-hot value plus Gaussian noise
/// of standard deviation `spec.noise`, followed by the exact position. Pair
/// feature `(i, j)`: `[x_i - x_j, y_i - y_j, |d|, 1]` plus noise scaled by
/// [`PAIR_NOISE_RATIO`].
pub fn synth_features(scene: &mut SceneRecord, spec: &FeatureSpec) {
    let mixing = mixing_matrices(spec.mixing_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed(scene.seed, spec.mixing_seed));
    let sigma = spec.noise.max(0.0);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let draw = |rng: &mut ChaCha8Rng, s: f64| if s > 0.0 { s * normal.sample(rng) } else { 0.0 };
    let n = scene.objects.len();
    let mut object_features = Vec::with_capacity(n);
    for o in &scene.objects {
        let mut f = Vec::with_capacity(RAW_OBJECT_DIM);
        for attr in Attribute::ALL {
            let idx = attr.values().iter().position(|v| *v == o.value(attr)).unwrap_or(0);
            let q = &mixing[attr.index()];
            for r in 0..BLOCK {
                f.push(q[(r, idx)] + draw(&mut rng, sigma));
            }
        }
        f.push(o.x);
        f.push(o.y);
        object_features.push(f);
    }
    let pair_sigma = sigma * PAIR_NOISE_RATIO;
    let mut pair_features = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                pair_features.push(vec![0.0; RAW_PAIR_DIM]);
                continue;
            }
            let (a, b) = (&scene.objects[i], &scene.objects[j]);
            let (dx, dy) = (a.x - b.x, a.y - b.y);
            let base = [dx, dy, (dx * dx + dy * dy).sqrt(), 1.0];
            pair_features.push(base.iter().map(|v| v + draw(&mut rng, pair_sigma)).collect());
        }
    }
    scene.object_features = object_features;
    scene.pair_features = pair_features;
    scene.feature_spec = Some(spec.clone());
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenes_are_deterministic() {
        let a = gen_scene(7, 3, &Palette::base()).unwrap();
        let b = gen_scene(7, 3, &Palette::base()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, gen_scene(8, 3, &Palette::base()).unwrap());
    }

    #[test]
    fn object_count_bounds() {
        assert_eq!(gen_scene(0, 0, &Palette::base()), Err(WorldError::ObjectCount(0)));
        assert_eq!(gen_scene(0, 11, &Palette::base()), Err(WorldError::ObjectCount(11)));
    }

    #[test]
    fn ten_objects_have_a_total_left_right_order() {
        for seed in 0..20 {
            let s = gen_scene(seed, 10, &Palette::base()).unwrap();
            let mut pairs = 0;
            for i in 0..10 {
                for j in 0..10 {
                    if i == j {
                        continue;
                    }
                    pairs += 1;
                    let l = s.relation(SpatialRelation::LeftOf, i, j);
                    let r = s.relation(SpatialRelation::RightOf, i, j);
                    assert!(l ^ r);
                    assert!(s.relation(SpatialRelation::FrontOf, i, j) ^ s.relation(SpatialRelation::Behind, i, j));
                }
            }
            assert_eq!(pairs, 90);
            for (i, a) in s.objects.iter().enumerate() {
                for b in &s.objects[i + 1..] {
                    assert!((a.x - b.x).abs() >= MIN_SEPARATION && (a.y - b.y).abs() >= MIN_SEPARATION);
                }
            }
        }
    }

    #[test]
    fn base_palette_never_names_novel_color() {
        let p = Palette::base();
        assert!(!p.values(Attribute::Color).contains(&NOVEL_COLOR));
        assert!(p.scene_colors().contains(&NOVEL_COLOR));
        let data = build_dataset(&DatasetSpec::curriculum(5, 300, FeatureSpec::default())).unwrap();
        assert!(data.scenes.iter().any(|s| s.objects.iter().any(|o| o.color == NOVEL_COLOR)));
        for q in &data.questions {
            assert!(!q.question.contains(NOVEL_COLOR) && q.answer.to_string() != NOVEL_COLOR, "{}", q.question);
        }
    }

    #[test]
    fn noiseless_identical_objects_have_identical_features() {
        let o = ObjectSpec {
            color: "red".into(),
            shape: "cube".into(),
            size: "large".into(),
            material: "metal".into(),
            x: 0.3,
            y: 0.6,
        };
        let mut s = SceneRecord::from_objects(0, 4, vec![o.clone(), o]);
        synth_features(&mut s, &FeatureSpec { mixing_seed: 3, noise: 0.0 });
        assert_eq!(s.object_features[0], s.object_features[1]);
        for block in 0..4 {
            let b = &s.object_features[0][block * BLOCK..(block + 1) * BLOCK];
            let norm: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
        }
        assert_eq!(s.object_features[0].len(), RAW_OBJECT_DIM);
    }

    #[test]
    fn mixing_is_orthogonal() {
        for q in mixing_matrices(11) {
            let eye = q.transpose() * &q;
            for i in 0..BLOCK {
                for j in 0..BLOCK {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((eye[(i, j)] - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn features_are_deterministic_and_pairs_follow_geometry() {
        let mut a = gen_scene(5, 4, &Palette::base()).unwrap();
        let mut b = a.clone();
        let spec = FeatureSpec::default();
        synth_features(&mut a, &spec);
        synth_features(&mut b, &spec);
        assert_eq!(a, b);
        let mut clean = a.clone();
        synth_features(&mut clean, &FeatureSpec { noise: 0.0, ..spec });
        let f = clean.pair_feature(0, 1);
        assert_eq!(f[0], clean.objects[0].x - clean.objects[1].x);
        assert_eq!(f[3], 1.0);
        assert_eq!(clean.pair_feature(2, 2), &[0.0; 4]);
    }
}
