//! Spatial knowledge graph data model: attributed single-object entities
//! connected by pairwise spatial triplets.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet, HashSet};

use crate::relation::RelationSpec;

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum SkgError {
    #[error("triplet references unknown entity {0}")]
    DanglingEndpoint(String),
    #[error("two triplets on the pair ({0}, {1})")]
    DuplicatePair(String, String),
    #[error("entity {0} related to itself")]
    SelfRelation(String),
    #[error("a spatial graph needs at least 2 entities, got {0}")]
    TooFewEntities(usize),
    #[error("duplicate entity id {0}")]
    DuplicateEntity(String),
    #[error("entity {0} has an empty description")]
    EmptyDescription(String),
    #[error("scene name is empty")]
    EmptySceneName,
    #[error("empty corpus")]
    EmptyCorpus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneSource {
    Llm,
    Catalog,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Scene {
    pub id: String,
    pub name: String,
    pub source: SceneSource,
}

impl Scene {
    /// Scene with an id derived from its name.
    pub fn new(name: &str, source: SceneSource) -> Result<Self, SkgError> {
        let name = name.trim();
        if name.is_empty() {
            return Err(SkgError::EmptySceneName);
        }
        Ok(Self { id: format!("scene-{}", slug(name)), name: name.to_string(), source })
    }
}

/// Lowercase ASCII slug, safe for file paths.
pub fn slug(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut dash = false;
    for ch in text.chars() {
        if ch.is_ascii_alphanumeric() {
            out.push(ch.to_ascii_lowercase());
            dash = false;
        } else if !dash && !out.is_empty() {
            out.push('-');
            dash = true;
        }
    }
    while out.ends_with('-') {
        out.pop();
    }
    if out.is_empty() {
        out.push('x');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CatalogObject {
    pub scene_id: String,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disambiguator: Option<String>,
}

impl CatalogObject {
    pub fn new(scene_id: &str, label: &str) -> Self {
        Self { scene_id: scene_id.into(), label: label.trim().into(), disambiguator: None }
    }

    /// Label as it reads in text, qualifier first ("computer mouse").
    pub fn display_name(&self) -> String {
        match &self.disambiguator {
            Some(q) => format!("{q} {}", self.label),
            None => self.label.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub id: String,
    pub base_object: CatalogObject,
    pub description: String,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
}

impl Entity {
    /// Entity whose id is derived from the scene, description and index.
    pub fn new(
        scene_id: &str,
        index: usize,
        base_object: CatalogObject,
        description: &str,
        attributes: BTreeMap<String, String>,
    ) -> Self {
        Self {
            id: entity_id(scene_id, description, index),
            base_object,
            description: description.trim().to_string(),
            attributes,
        }
    }

    /// Description without its leading article ("blue balloon").
    pub fn bare_description(&self) -> &str {
        strip_article(&self.description)
    }

    pub fn color(&self) -> Option<&str> {
        self.attributes.get("color").map(String::as_str)
    }
}

pub fn strip_article(text: &str) -> &str {
    let t = text.trim();
    for article in ["a ", "an ", "the ", "A ", "An ", "The "] {
        if let Some(rest) = t.strip_prefix(article) {
            return rest.trim_start();
        }
    }
    t
}

pub fn entity_id(scene_id: &str, description: &str, index: usize) -> String {
    let mut h = Sha256::new();
    h.update(scene_id.as_bytes());
    h.update([0]);
    h.update(description.trim().as_bytes());
    h.update([0]);
    h.update((index as u64).to_le_bytes());
    format!("e-{}", &hex_digest(h)[..12])
}

pub(crate) fn hex_digest(h: Sha256) -> String {
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub subject: String,
    pub relation: RelationSpec,
    pub object: String,
}

impl Triplet {
    pub fn new(subject: &str, relation: RelationSpec, object: &str) -> Self {
        Self { subject: subject.into(), relation, object: object.into() }
    }

    pub fn pair_key(&self) -> (&str, &str) {
        if self.subject <= self.object {
            (&self.subject, &self.object)
        } else {
            (&self.object, &self.subject)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpatialKg {
    pub id: String,
    pub scene: Scene,
    pub entities: Vec<Entity>,
    pub triplets: Vec<Triplet>,
    pub provenance_seed: u64,
}

impl SpatialKg {
    pub fn entity(&self, id: &str) -> Option<&Entity> {
        self.entities.iter().find(|e| e.id == id)
    }

    pub fn entity_index(&self, id: &str) -> Option<usize> {
        self.entities.iter().position(|e| e.id == id)
    }
}

/// Validates the parts and assembles a graph.
pub fn new_skg(
    scene: Scene,
    entities: Vec<Entity>,
    triplets: Vec<Triplet>,
    seed: u64,
) -> Result<SpatialKg, SkgError> {
    if scene.name.trim().is_empty() {
        return Err(SkgError::EmptySceneName);
    }
    if entities.len() < 2 {
        return Err(SkgError::TooFewEntities(entities.len()));
    }
    let mut ids = HashSet::new();
    for e in &entities {
        if e.description.trim().is_empty() {
            return Err(SkgError::EmptyDescription(e.id.clone()));
        }
        if !ids.insert(e.id.as_str()) {
            return Err(SkgError::DuplicateEntity(e.id.clone()));
        }
    }
    let mut pairs = HashSet::new();
    for t in &triplets {
        for end in [&t.subject, &t.object] {
            if !ids.contains(end.as_str()) {
                return Err(SkgError::DanglingEndpoint(end.clone()));
            }
        }
        if t.subject == t.object {
            return Err(SkgError::SelfRelation(t.subject.clone()));
        }
        let (a, b) = t.pair_key();
        if !pairs.insert((a.to_string(), b.to_string())) {
            return Err(SkgError::DuplicatePair(a.into(), b.into()));
        }
    }
    let mut h = Sha256::new();
    h.update(scene.id.as_bytes());
    h.update(seed.to_le_bytes());
    let id = format!("skg-{}", &hex_digest(h)[..16]);
    Ok(SpatialKg { id, scene, entities, triplets, provenance_seed: seed })
}

/// Frequency tables over a corpus of graphs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistributionReport {
    /// Entity count per base object label.
    pub object_frequencies: BTreeMap<String, u64>,
    /// Triplet count per raw relation phrase.
    pub relation_frequencies: BTreeMap<String, u64>,
    /// Triplet count per canonical relation form.
    pub canonical_relation_frequencies: BTreeMap<String, u64>,
    pub graph_count: u64,
    /// Σ|entities| over the corpus.
    pub node_count: u64,
    pub triplet_count: u64,
    /// Distinct base object labels, the alternative reading of "nodes".
    pub distinct_object_labels: u64,
    pub distinct_relation_phrases: u64,
    pub distinct_canonical_relations: u64,
}

impl DistributionReport {
    pub fn top_objects(&self, k: usize) -> Vec<(String, u64)> {
        top_k(&self.object_frequencies, k)
    }

    pub fn top_relations(&self, k: usize) -> Vec<(String, u64)> {
        top_k(&self.relation_frequencies, k)
    }

    pub fn top_canonical_relations(&self, k: usize) -> Vec<(String, u64)> {
        top_k(&self.canonical_relation_frequencies, k)
    }
}

/// Descending by count, ties broken lexicographically.
pub fn top_k(freq: &BTreeMap<String, u64>, k: usize) -> Vec<(String, u64)> {
    let mut rows: Vec<(String, u64)> = freq.iter().map(|(l, c)| (l.clone(), *c)).collect();
    rows.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    rows.truncate(k);
    rows
}

pub fn corpus_stats(skgs: &[SpatialKg]) -> Result<DistributionReport, SkgError> {
    if skgs.is_empty() {
        return Err(SkgError::EmptyCorpus);
    }
    let mut objects: BTreeMap<String, u64> = BTreeMap::new();
    let mut relations: BTreeMap<String, u64> = BTreeMap::new();
    let mut canonical: BTreeMap<String, u64> = BTreeMap::new();
    let (mut nodes, mut triplets) = (0u64, 0u64);
    for g in skgs {
        nodes += g.entities.len() as u64;
        triplets += g.triplets.len() as u64;
        for e in &g.entities {
            *objects.entry(e.base_object.display_name()).or_default() += 1;
        }
        for t in &g.triplets {
            *relations.entry(t.relation.surface_phrase.trim().to_lowercase()).or_default() += 1;
            *canonical.entry(t.relation.canonical_phrase()).or_default() += 1;
        }
    }
    let labels: BTreeSet<&String> = objects.keys().collect();
    Ok(DistributionReport {
        distinct_object_labels: labels.len() as u64,
        distinct_relation_phrases: relations.len() as u64,
        distinct_canonical_relations: canonical.len() as u64,
        object_frequencies: objects,
        relation_frequencies: relations,
        canonical_relation_frequencies: canonical,
        graph_count: skgs.len() as u64,
        node_count: nodes,
        triplet_count: triplets,
    })
}
