//! Attribute vocabulary and spatial relations of the synthetic tabletop world.

use serde::{Deserialize, Serialize};

/// Named colors; the last one is withheld from the base vocabulary for few-shot experiments.
pub const COLORS: [&str; 8] = ["gray", "red", "blue", "green", "brown", "purple", "yellow", "teal"];
pub const SHAPES: [&str; 3] = ["cube", "sphere", "cylinder"];
pub const SIZES: [&str; 2] = ["small", "large"];
pub const MATERIALS: [&str; 2] = ["rubber", "metal"];

/// Width of each attribute block in the object feature vector.
pub const BLOCK: usize = 8;
/// Four attribute blocks followed by the (x, y) position.
pub const RAW_OBJECT_DIM: usize = 4 * BLOCK + 2;
/// `[dx, dy, |d|, 1]`.
pub const RAW_PAIR_DIM: usize = 4;
pub const MAX_OBJECTS: usize = 10;
/// Minimum coordinate gap between any two objects, on both axes.
pub const MIN_SEPARATION: f64 = 0.05;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attribute {
    Color,
    Shape,
    Size,
    Material,
}

impl Attribute {
    pub const ALL: [Attribute; 4] = [Attribute::Color, Attribute::Shape, Attribute::Size, Attribute::Material];

    pub fn name(self) -> &'static str {
        match self {
            Attribute::Color => "color",
            Attribute::Shape => "shape",
            Attribute::Size => "size",
            Attribute::Material => "material",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s)
    }

    pub fn values(self) -> &'static [&'static str] {
        match self {
            Attribute::Color => &COLORS,
            Attribute::Shape => &SHAPES,
            Attribute::Size => &SIZES,
            Attribute::Material => &MATERIALS,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Attribute whose value set contains `value`.
    pub fn of_value(value: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.values().contains(&value))
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SpatialRelation {
    LeftOf,
    RightOf,
    FrontOf,
    Behind,
}

impl SpatialRelation {
    pub const ALL: [SpatialRelation; 4] =
        [SpatialRelation::LeftOf, SpatialRelation::RightOf, SpatialRelation::FrontOf, SpatialRelation::Behind];

    pub fn concept_name(self) -> &'static str {
        match self {
            SpatialRelation::LeftOf => "left-of",
            SpatialRelation::RightOf => "right-of",
            SpatialRelation::FrontOf => "front-of",
            SpatialRelation::Behind => "behind",
        }
    }

    pub fn from_concept(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.concept_name() == name)
    }

    /// Surface phrase used in questions and captions.
    pub fn phrase(self) -> &'static str {
        match self {
            SpatialRelation::LeftOf => "left of",
            SpatialRelation::RightOf => "right of",
            SpatialRelation::FrontOf => "in front of",
            SpatialRelation::Behind => "behind",
        }
    }

    /// Head word of [`Self::phrase`] as stored in the lexicon.
    pub fn word(self) -> &'static str {
        match self {
            SpatialRelation::LeftOf => "left",
            SpatialRelation::RightOf => "right",
            SpatialRelation::FrontOf => "front",
            SpatialRelation::Behind => "behind",
        }
    }

    /// Ground truth: `left-of(i, j)` iff `x_i < x_j`; `front-of(i, j)` iff `y_i < y_j`.
    pub fn holds(self, a: (f64, f64), b: (f64, f64)) -> bool {
        match self {
            SpatialRelation::LeftOf => a.0 < b.0,
            SpatialRelation::RightOf => a.0 > b.0,
            SpatialRelation::FrontOf => a.1 < b.1,
            SpatialRelation::Behind => a.1 > b.1,
        }
    }
}
