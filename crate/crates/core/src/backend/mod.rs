//! Contracts for the text/vision generator and the layout-conditioned image
//! generator, with offline and remote implementations of each, plus the
//! external-knowledge fetcher.
//!
//! Offline implementations ([`CatalogBackend`], [`ProceduralRenderer`]) are
//! fully deterministic. Procedural images carry a legend (entity id → fill
//! color) in a PNG text chunk; geometry is always recovered from pixels, so
//! verification is grounded in what was actually drawn.

mod catalog;
mod knowledge;
pub mod oracle;
pub mod procedural;
mod remote;
mod templates;

pub use catalog::{CatalogBackend, SceneCatalog, BUNDLED_SCENES, COLOR_PALETTE};
pub use knowledge::{KnowledgeDoc, KnowledgeFetcher, KnowledgeMode};
pub use procedural::{GroundTruth, Legend, ProceduralRenderer, RenderStyle, Shape};
pub use remote::{BackendConfig, InFlightLimiter, RemoteImageBackend, RemoteTextBackend};
pub use templates::{PromptTemplates, TemplateError};

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::bitmap::Bitmap;
use crate::relation::{BoundingBox, Canvas};
use crate::skg::{CatalogObject, Entity, Scene, Triplet};

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("catalog holds {available} scenes, {requested} requested")]
    InsufficientCatalog { requested: usize, available: usize },
    #[error("scene {scene:?} has {found} objects, at least {floor} required")]
    TooFewObjects { scene: String, found: usize, floor: usize },
    #[error("{0} is not supported by this backend")]
    Unsupported(&'static str),
    #[error("render failed: {0}")]
    RenderFailed(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    GenScenes,
    GenObjects,
    SelectSubset,
    EnrichEntities,
    GenTriplets,
    GenCaption,
    GenQa,
    VerifyImage,
    VerifyQa,
}

impl Capability {
    pub const ALL: [Capability; 9] = [
        Self::GenScenes,
        Self::GenObjects,
        Self::SelectSubset,
        Self::EnrichEntities,
        Self::GenTriplets,
        Self::GenCaption,
        Self::GenQa,
        Self::VerifyImage,
        Self::VerifyQa,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BackendIdentity {
    pub backend: String,
    pub model: String,
}

impl fmt::Display for BackendIdentity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.backend, self.model)
    }
}

/// A yes/no judgement with an optional explanation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub accepted: bool,
    pub reason: Option<String>,
}

impl Verdict {
    pub fn yes() -> Self {
        Self { accepted: true, reason: None }
    }

    pub fn no(reason: impl Into<String>) -> Self {
        Self { accepted: false, reason: Some(reason.into()) }
    }
}

/// Proposed entity before ids are assigned.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityDraft {
    pub base_object: CatalogObject,
    pub description: String,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
}

/// Proposed triplet with a free-form relation phrase.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripletDraft {
    pub subject: String,
    pub phrase: String,
    pub object: String,
}

#[derive(Debug, Clone, Copy)]
pub struct CaptionRequest<'a> {
    pub scene: Option<&'a Scene>,
    pub entities: &'a [Entity],
    pub triplets: &'a [Triplet],
    pub negative: Option<&'a CatalogObject>,
}

/// The multimodal generator contract. Capabilities a backend cannot serve
/// answer [`BackendError::Unsupported`].
pub trait TextGenBackend: Send + Sync {
    fn identity(&self) -> BackendIdentity;

    fn capabilities(&self) -> BTreeSet<Capability>;

    fn gen_scenes(&self, _count: usize, _seed: u64) -> Result<Vec<Scene>, BackendError> {
        Err(BackendError::Unsupported("gen_scenes"))
    }

    fn gen_objects(
        &self,
        _scene: &Scene,
        _knowledge: &[KnowledgeDoc],
        _seed: u64,
    ) -> Result<Vec<CatalogObject>, BackendError> {
        Err(BackendError::Unsupported("gen_objects"))
    }

    /// Chooses a multiset of 2–4 objects from the scene's list.
    fn select_subset(
        &self,
        _scene: &Scene,
        _objects: &[CatalogObject],
        _seed: u64,
    ) -> Result<Vec<CatalogObject>, BackendError> {
        Err(BackendError::Unsupported("select_subset"))
    }

    fn enrich_entities(
        &self,
        _scene: &Scene,
        _chosen: &[CatalogObject],
        _max_entities: usize,
        _seed: u64,
    ) -> Result<Vec<EntityDraft>, BackendError> {
        Err(BackendError::Unsupported("enrich_entities"))
    }

    fn gen_triplets(
        &self,
        _scene: &Scene,
        _entities: &[Entity],
        _seed: u64,
    ) -> Result<Vec<TripletDraft>, BackendError> {
        Err(BackendError::Unsupported("gen_triplets"))
    }

    fn gen_caption(&self, _request: &CaptionRequest<'_>, _seed: u64) -> Result<String, BackendError> {
        Err(BackendError::Unsupported("gen_caption"))
    }

    /// Rewrites question surface text. Answers are never produced here.
    fn paraphrase_question(&self, _question: &str, _seed: u64) -> Result<String, BackendError> {
        Err(BackendError::Unsupported("paraphrase_question"))
    }

    fn verify_image(
        &self,
        _image: &Bitmap,
        _entities: &[Entity],
        _triplets: &[Triplet],
    ) -> Result<Verdict, BackendError> {
        Err(BackendError::Unsupported("verify_image"))
    }

    /// Judges an answer from the image alone; no graph is passed.
    fn verify_qa(&self, _image: &Bitmap, _question: &str, _answer: &str) -> Result<Verdict, BackendError> {
        Err(BackendError::Unsupported("verify_qa"))
    }

    /// Several judgements on one image. Backends that pay a per-image cost
    /// override this.
    fn verify_qa_many(&self, image: &Bitmap, pairs: &[(&str, &str)]) -> Vec<Result<Verdict, BackendError>> {
        pairs.iter().map(|(q, a)| self.verify_qa(image, q, a)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderItem {
    pub entity: Entity,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderRequest {
    pub scene_name: String,
    pub caption: String,
    pub canvas: Canvas,
    pub items: Vec<RenderItem>,
}

/// The layout-conditioned image generator contract.
pub trait ImageGenBackend: Send + Sync {
    fn identity(&self) -> BackendIdentity;

    /// Whether identical requests and seeds yield identical pixels.
    fn is_deterministic(&self) -> bool;

    fn render(&self, request: &RenderRequest, seed: u64) -> Result<Bitmap, BackendError>;
}

/// Interprets a one-word yes/no reply.
pub fn parse_yes_no(reply: &str) -> Result<bool, BackendError> {
    let word: String = reply
        .trim()
        .chars()
        .take_while(|c| c.is_alphabetic())
        .collect::<String>()
        .to_lowercase();
    match word.as_str() {
        "yes" | "true" => Ok(true),
        "no" | "false" => Ok(false),
        _ => Err(BackendError::MalformedResponse(format!("expected yes/no, got {reply:?}"))),
    }
}
