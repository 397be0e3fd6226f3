//! Spatial relation ontology and its geometric meaning over boxes.
//!
//! A relation is a conjunction of at most one directional part and at most
//! one distance part. Directional parts come in inverse pairs, distance
//! parts are symmetric. The truth of a relation between two boxes on a
//! canvas is decided by [`evaluate`].

mod consistency;
mod synonyms;

pub use consistency::{check_consistency, Axis, Consistency};
pub use synonyms::{canonicalize, SynonymTable, BUNDLED_SYNONYMS};

use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum RelationError {
    #[error("unknown relation phrase {0:?}")]
    UnknownRelation(String),
    #[error("relation phrase {0:?} carries two {1} parts")]
    ConflictingParts(String, &'static str),
    #[error("empty relation phrase")]
    EmptyPhrase,
    #[error("malformed synonym table line {line}: {reason}")]
    MalformedTable { line: usize, reason: String },
    #[error("invalid canvas: {0}")]
    InvalidCanvas(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionalRelation {
    LeftOf,
    RightOf,
    Above,
    Below,
    InFrontOf,
    Behind,
}

impl DirectionalRelation {
    pub const ALL: [DirectionalRelation; 6] = [
        Self::LeftOf,
        Self::RightOf,
        Self::Above,
        Self::Below,
        Self::InFrontOf,
        Self::Behind,
    ];

    pub fn inverse(self) -> Self {
        match self {
            Self::LeftOf => Self::RightOf,
            Self::RightOf => Self::LeftOf,
            Self::Above => Self::Below,
            Self::Below => Self::Above,
            Self::InFrontOf => Self::Behind,
            Self::Behind => Self::InFrontOf,
        }
    }

    pub fn axis(self) -> Axis {
        match self {
            Self::LeftOf | Self::RightOf => Axis::Horizontal,
            Self::Above | Self::Below => Axis::Vertical,
            Self::InFrontOf | Self::Behind => Axis::Depth,
        }
    }

    /// True for the member of each inverse pair that points "forward" along
    /// its axis (left_of, above, behind). Used to normalize axis graphs.
    pub fn is_forward(self) -> bool {
        matches!(self, Self::LeftOf | Self::Above | Self::Behind)
    }

    pub fn key(self) -> &'static str {
        match self {
            Self::LeftOf => "left_of",
            Self::RightOf => "right_of",
            Self::Above => "above",
            Self::Below => "below",
            Self::InFrontOf => "in_front_of",
            Self::Behind => "behind",
        }
    }

    pub fn from_key(key: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|d| d.key() == key)
    }

    pub fn phrase(self) -> &'static str {
        match self {
            Self::LeftOf => "to the left of",
            Self::RightOf => "to the right of",
            Self::Above => "above",
            Self::Below => "below",
            Self::InFrontOf => "in front of",
            Self::Behind => "behind",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceRelation {
    Near,
    Far,
}

impl DistanceRelation {
    pub const ALL: [DistanceRelation; 2] = [Self::Near, Self::Far];

    pub fn opposite(self) -> Self {
        match self {
            Self::Near => Self::Far,
            Self::Far => Self::Near,
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Self::Near => "near",
            Self::Far => "far",
        }
    }

    pub fn from_key(key: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|d| d.key() == key)
    }

    pub fn phrase(self) -> &'static str {
        match self {
            Self::Near => "near",
            Self::Far => "far from",
        }
    }
}

/// Relation-type slice used for ablations and evaluation strata.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationClass {
    Directional,
    Distance,
    Both,
}

impl RelationClass {
    pub fn key(self) -> &'static str {
        match self {
            Self::Directional => "directional",
            Self::Distance => "distance",
            Self::Both => "both",
        }
    }
}

impl fmt::Display for RelationClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// A canonical relation with the phrase it was read from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RelationSpec {
    pub direction: Option<DirectionalRelation>,
    pub distance: Option<DistanceRelation>,
    pub surface_phrase: String,
}

impl RelationSpec {
    /// Builds a spec whose surface phrase is the canonical rendering.
    /// Returns `None` when both parts are absent.
    pub fn new(
        direction: Option<DirectionalRelation>,
        distance: Option<DistanceRelation>,
    ) -> Option<Self> {
        if direction.is_none() && distance.is_none() {
            return None;
        }
        Some(Self {
            direction,
            distance,
            surface_phrase: canonical_phrase(direction, distance),
        })
    }

    pub fn directional(direction: DirectionalRelation) -> Self {
        Self::new(Some(direction), None).expect("direction present")
    }

    pub fn distance_only(distance: DistanceRelation) -> Self {
        Self::new(None, Some(distance)).expect("distance present")
    }

    /// Canonical phrase for the parts, ignoring the stored surface phrase.
    pub fn canonical_phrase(&self) -> String {
        canonical_phrase(self.direction, self.distance)
    }

    /// Two specs denote the same relation when their parts agree.
    pub fn same_parts(&self, other: &RelationSpec) -> bool {
        self.direction == other.direction && self.distance == other.distance
    }
}

fn canonical_phrase(
    direction: Option<DirectionalRelation>,
    distance: Option<DistanceRelation>,
) -> String {
    match (direction, distance) {
        (Some(d), Some(r)) => format!("{}, {}", d.phrase(), r.phrase()),
        (Some(d), None) => d.phrase().to_string(),
        (None, Some(r)) => r.phrase().to_string(),
        (None, None) => String::new(),
    }
}

/// Axis-aligned box in pixel units, origin at the canvas top-left.
///
/// Serialized as `[x, y, w, h]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[u32; 4]", into = "[u32; 4]")]
pub struct BoundingBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl From<[u32; 4]> for BoundingBox {
    fn from([x, y, w, h]: [u32; 4]) -> Self {
        Self { x, y, w, h }
    }
}

impl From<BoundingBox> for [u32; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl BoundingBox {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Self { x, y, w, h }
    }

    pub fn center(&self) -> (f64, f64) {
        (
            self.x as f64 + self.w as f64 / 2.0,
            self.y as f64 + self.h as f64 / 2.0,
        )
    }

    pub fn right(&self) -> u32 {
        self.x + self.w
    }

    pub fn bottom(&self) -> u32 {
        self.y + self.h
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn fits(&self, canvas: &Canvas) -> bool {
        self.w > 0 && self.h > 0 && self.right() <= canvas.width && self.bottom() <= canvas.height
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> u64 {
        let w = self.right().min(other.right()).saturating_sub(self.x.max(other.x));
        let h = self.bottom().min(other.bottom()).saturating_sub(self.y.max(other.y));
        w as u64 * h as u64
    }

    pub fn center_distance(&self, other: &BoundingBox) -> f64 {
        let (ax, ay) = self.center();
        let (bx, by) = other.center();
        (ax - bx).hypot(ay - by)
    }
}

/// Drawing surface plus the thresholds that give relations their meaning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Canvas {
    pub width: u32,
    pub height: u32,
    /// Minimum center separation for directional relations, in pixels.
    pub margin: f64,
    /// `near` holds when center distance ≤ `near_fraction` × diagonal.
    pub near_fraction: f64,
    /// `far` holds when center distance ≥ `far_fraction` × diagonal.
    pub far_fraction: f64,
}

impl Default for Canvas {
    fn default() -> Self {
        Self {
            width: 512,
            height: 512,
            margin: 0.05 * 512.0,
            near_fraction: 0.25,
            far_fraction: 0.45,
        }
    }
}

impl Canvas {
    pub fn validate(&self) -> Result<(), RelationError> {
        if self.width == 0 || self.height == 0 {
            return Err(RelationError::InvalidCanvas("zero-sized canvas".into()));
        }
        if !(self.margin > 0.0 && self.margin < self.width as f64 / 4.0) {
            return Err(RelationError::InvalidCanvas(format!(
                "margin {} must lie in (0, width/4)",
                self.margin
            )));
        }
        if !(self.near_fraction > 0.0 && self.near_fraction < self.far_fraction) {
            return Err(RelationError::InvalidCanvas(format!(
                "near threshold {} must be positive and below far threshold {}",
                self.near_fraction, self.far_fraction
            )));
        }
        Ok(())
    }

    pub fn diagonal(&self) -> f64 {
        (self.width as f64).hypot(self.height as f64)
    }

    pub fn near_distance(&self) -> f64 {
        self.near_fraction * self.diagonal()
    }

    pub fn far_distance(&self) -> f64 {
        self.far_fraction * self.diagonal()
    }
}

/// Truth of a single directional part.
pub fn evaluate_direction(
    dir: DirectionalRelation,
    a: &BoundingBox,
    b: &BoundingBox,
    canvas: &Canvas,
) -> bool {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    let m = canvas.margin;
    match dir {
        DirectionalRelation::LeftOf => ax + m <= bx,
        DirectionalRelation::RightOf => bx + m <= ax,
        DirectionalRelation::Above => ay <= by - m,
        DirectionalRelation::Below => by <= ay - m,
        // lower bottom edge reads as closer to the viewer
        DirectionalRelation::InFrontOf => a.bottom() as f64 >= b.bottom() as f64 + m,
        DirectionalRelation::Behind => b.bottom() as f64 >= a.bottom() as f64 + m,
    }
}

pub fn evaluate_distance(
    dist: DistanceRelation,
    a: &BoundingBox,
    b: &BoundingBox,
    canvas: &Canvas,
) -> bool {
    let d = a.center_distance(b);
    match dist {
        DistanceRelation::Near => d <= canvas.near_distance(),
        DistanceRelation::Far => d >= canvas.far_distance(),
    }
}

/// Whether `a rel b` holds: the conjunction of the present parts.
pub fn evaluate(rel: &RelationSpec, a: &BoundingBox, b: &BoundingBox, canvas: &Canvas) -> bool {
    rel.direction
        .is_none_or(|d| evaluate_direction(d, a, b, canvas))
        && rel.distance.is_none_or(|r| evaluate_distance(r, a, b, canvas))
}

pub fn invert(rel: &RelationSpec) -> RelationSpec {
    RelationSpec::new(rel.direction.map(DirectionalRelation::inverse), rel.distance)
        .expect("inverting keeps at least one part")
}

pub fn classify(rel: &RelationSpec) -> RelationClass {
    match (rel.direction, rel.distance) {
        (Some(_), None) => RelationClass::Directional,
        (None, Some(_)) => RelationClass::Distance,
        _ => RelationClass::Both,
    }
}
