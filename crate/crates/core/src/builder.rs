//! From scenes to validated spatial graphs: object lists, subset selection,
//! entity enrichment and triplet generation with consistency gating.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashSet};

use crate::backend::{BackendError, KnowledgeFetcher, TextGenBackend};
use crate::par;
use crate::relation::{check_consistency, Consistency, RelationError, SynonymTable};
use crate::seed;
use crate::skg::{new_skg, CatalogObject, Entity, Scene, SkgError, SpatialKg, Triplet};

/// Regenerations allowed after the first triplet proposal.
pub const TRIPLET_RETRIES: u64 = 3;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum BuilderError {
    #[error("need at least 2 objects to select from, got {0}")]
    TooFewObjects(usize),
    #[error("{proposed} entities proposed, cap is {cap}")]
    EntityCapExceeded { proposed: usize, cap: usize },
    #[error("{entities} entities cannot cover {selected} selected objects")]
    TooFewEntities { entities: usize, selected: usize },
    #[error("duplicate entity description {0:?}")]
    DuplicateDescription(String),
    #[error("selected object {0:?} has no entity")]
    UncoveredObject(String),
    #[error("inconsistent triplets: {0}")]
    InconsistentTriplets(String),
    #[error(transparent)]
    Relation(#[from] RelationError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Skg(#[from] SkgError),
    #[error("invalid builder config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetSelection {
    pub scene_id: String,
    /// Multiset; repeats allowed.
    pub chosen: Vec<CatalogObject>,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuilderConfig {
    pub scenes: usize,
    pub min_objects: usize,
    pub skgs_per_scene: usize,
    pub max_entities: usize,
    pub negative_probability: f64,
}

impl Default for BuilderConfig {
    fn default() -> Self {
        Self { scenes: 160, min_objects: 5, skgs_per_scene: 25, max_entities: 6, negative_probability: 0.5 }
    }
}

impl BuilderConfig {
    pub fn validate(&self) -> Result<(), BuilderError> {
        if self.scenes == 0 || self.skgs_per_scene == 0 || self.min_objects == 0 {
            return Err(BuilderError::InvalidConfig("counts must be at least 1".into()));
        }
        if self.max_entities < 4 {
            return Err(BuilderError::InvalidConfig("max_entities must be at least 4".into()));
        }
        if !(0.0..=1.0).contains(&self.negative_probability) {
            return Err(BuilderError::InvalidConfig("negative_probability must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Draws k ∈ {2, 3, 4} uniformly, then k members with replacement,
/// weighted linearly toward the front of the (commonality-ordered) list.
pub fn sample_members(objects: &[CatalogObject], seed: u64) -> Result<Vec<CatalogObject>, BuilderError> {
    if objects.len() < 2 {
        return Err(BuilderError::TooFewObjects(objects.len()));
    }
    let mut rng = seed::rng(seed);
    let k = rng.random_range(2..=4);
    let n = objects.len();
    let weights = WeightedIndex::new((0..n).map(|r| (n - r) as f64)).expect("positive weights");
    let mut chosen: Vec<CatalogObject> = (0..k).map(|_| objects[weights.sample(&mut rng)].clone()).collect();
    // keep the graph from being a single object repeated
    if chosen.iter().all(|o| *o == chosen[0]) {
        let other = objects.iter().find(|o| **o != chosen[0]).expect("two distinct objects");
        chosen[k - 1] = other.clone();
    }
    Ok(chosen)
}

pub fn select_subset(
    scene: &Scene,
    objects: &[CatalogObject],
    backend: &dyn TextGenBackend,
    seed: u64,
) -> Result<SubsetSelection, BuilderError> {
    if objects.len() < 2 {
        return Err(BuilderError::TooFewObjects(objects.len()));
    }
    let chosen = backend.select_subset(scene, objects, seed)?;
    if !(2..=4).contains(&chosen.len()) || chosen.iter().any(|c| !objects.contains(c)) {
        return Err(BackendError::MalformedResponse("selection outside the scene's objects or size".into()).into());
    }
    Ok(SubsetSelection { scene_id: scene.id.clone(), k: chosen.len(), chosen })
}

pub fn enrich_entities(
    scene: &Scene,
    selection: &SubsetSelection,
    backend: &dyn TextGenBackend,
    max_entities: usize,
    seed: u64,
) -> Result<Vec<Entity>, BuilderError> {
    let drafts = backend.enrich_entities(scene, &selection.chosen, max_entities, seed)?;
    if drafts.len() > max_entities {
        return Err(BuilderError::EntityCapExceeded { proposed: drafts.len(), cap: max_entities });
    }
    if drafts.len() < selection.k {
        return Err(BuilderError::TooFewEntities { entities: drafts.len(), selected: selection.k });
    }
    let mut seen = HashSet::new();
    for d in &drafts {
        if !seen.insert(d.description.trim().to_lowercase()) {
            return Err(BuilderError::DuplicateDescription(d.description.clone()));
        }
    }
    for c in &selection.chosen {
        if !drafts.iter().any(|d| d.base_object == *c) {
            return Err(BuilderError::UncoveredObject(c.display_name()));
        }
    }
    Ok(drafts
        .into_iter()
        .enumerate()
        .map(|(i, d)| Entity::new(&scene.id, i, d.base_object, &d.description, d.attributes))
        .collect())
}

fn propose_triplets(
    scene: &Scene,
    entities: &[Entity],
    backend: &dyn TextGenBackend,
    synonyms: &SynonymTable,
    seed: u64,
) -> Result<Vec<Triplet>, BuilderError> {
    let ids: HashSet<&str> = entities.iter().map(|e| e.id.as_str()).collect();
    let mut pairs = HashSet::new();
    let mut out = Vec::new();
    for d in backend.gen_triplets(scene, entities, seed)? {
        if !ids.contains(d.subject.as_str()) || !ids.contains(d.object.as_str()) {
            return Err(SkgError::DanglingEndpoint(format!("{} / {}", d.subject, d.object)).into());
        }
        if d.subject == d.object {
            return Err(SkgError::SelfRelation(d.subject).into());
        }
        let t = Triplet::new(&d.subject, synonyms.canonicalize(&d.phrase)?, &d.object);
        let (a, b) = t.pair_key();
        if !pairs.insert((a.to_string(), b.to_string())) {
            return Err(SkgError::DuplicatePair(a.into(), b.into()).into());
        }
        out.push(t);
    }
    if let Consistency::Contradiction { axis, witness } = check_consistency(&out) {
        return Err(BuilderError::InconsistentTriplets(format!("{axis:?} cycle of {} triplets", witness.len())));
    }
    Ok(out)
}

/// Proposes triplets, regenerating up to [`TRIPLET_RETRIES`] times when a
/// proposal is unusable. Nothing is repaired.
pub fn gen_triplets(
    scene: &Scene,
    entities: &[Entity],
    backend: &dyn TextGenBackend,
    synonyms: &SynonymTable,
    seed: u64,
) -> Result<Vec<Triplet>, BuilderError> {
    let mut last = None;
    for attempt in 0..=TRIPLET_RETRIES {
        match propose_triplets(scene, entities, backend, synonyms, seed::derive(seed, attempt, 1)) {
            Ok(t) => return Ok(t),
            Err(e @ BuilderError::Backend(BackendError::BackendUnavailable(_))) => return Err(e),
            Err(e) => {
                log::debug!("triplet proposal {attempt} for {} rejected: {e}", scene.name);
                last = Some(e);
            }
        }
    }
    Err(last.expect("at least one attempt"))
}

/// One graph from one scene, all randomness derived from `seed`.
pub fn build_skg(
    scene: &Scene,
    objects: &[CatalogObject],
    backend: &dyn TextGenBackend,
    synonyms: &SynonymTable,
    max_entities: usize,
    seed: u64,
) -> Result<SpatialKg, BuilderError> {
    let selection = select_subset(scene, objects, backend, seed::derive(seed, 0, 0))?;
    let entities = enrich_entities(scene, &selection, backend, max_entities, seed::derive(seed, 0, 1))?;
    let triplets = gen_triplets(scene, &entities, backend, synonyms, seed::derive(seed, 0, 2))?;
    Ok(new_skg(scene.clone(), entities, triplets, seed)?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: String,
    pub scene: String,
    pub reason: String,
}

/// A scene with its generated object list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneObjects {
    pub scene: Scene,
    pub objects: Vec<CatalogObject>,
    pub knowledge_docs: usize,
}

/// Scenes and their object lists. Scenes whose objects cannot be produced
/// are reported and left out.
pub fn gen_scene_objects(
    count: usize,
    backend: &dyn TextGenBackend,
    knowledge: &KnowledgeFetcher,
    master_seed: u64,
) -> Result<(Vec<SceneObjects>, Vec<StageFailure>), BuilderError> {
    let scenes = backend.gen_scenes(count, seed::stage(master_seed, "scenes"))?;
    let objects_seed = seed::stage(master_seed, "objects");
    let results = par::map_indexed(&scenes, |i, scene| {
        let docs = knowledge.fetch(scene);
        backend
            .gen_objects(scene, &docs, seed::derive(objects_seed, i as u64, 0))
            .map(|objects| SceneObjects { scene: scene.clone(), objects, knowledge_docs: docs.len() })
            .map_err(|e| StageFailure { stage: "gen-objects".into(), scene: scene.name.clone(), reason: e.to_string() })
    });
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for r in results {
        match r {
            Ok(s) => ok.push(s),
            Err(f) => failed.push(f),
        }
    }
    Ok((ok, failed))
}

/// Seed of the `skg_index`-th graph of the `scene_index`-th scene.
pub fn skg_seed(master_seed: u64, scene_index: usize, skg_index: usize) -> u64 {
    seed::derive(seed::stage(master_seed, "skg"), scene_index as u64, skg_index as u64)
}

/// Builds `skgs_per_scene` graphs per scene in parallel. Item failures are
/// collected, never fatal. Output is sorted by graph id.
pub fn build_skg_batch(
    config: &BuilderConfig,
    scenes: &[SceneObjects],
    backend: &dyn TextGenBackend,
    synonyms: &SynonymTable,
    master_seed: u64,
) -> (Vec<SpatialKg>, Vec<StageFailure>) {
    let per = config.skgs_per_scene;
    let results = par::map_range(scenes.len() * per, |job| {
        let (si, ki) = (job / per, job % per);
        let s = &scenes[si];
        build_skg(&s.scene, &s.objects, backend, synonyms, config.max_entities, skg_seed(master_seed, si, ki))
            .map_err(|e| StageFailure { stage: "build-skg".into(), scene: s.scene.name.clone(), reason: e.to_string() })
    });
    let mut skgs = Vec::new();
    let mut failures = Vec::new();
    let mut ids = BTreeSet::new();
    for r in results {
        match r {
            Ok(g) if ids.insert(g.id.clone()) => skgs.push(g),
            Ok(g) => failures.push(StageFailure {
                stage: "build-skg".into(),
                scene: g.scene.name,
                reason: format!("duplicate graph id {}", g.id),
            }),
            Err(f) => failures.push(f),
        }
    }
    skgs.sort_by(|a, b| a.id.cmp(&b.id));
    (skgs, failures)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{CatalogBackend, EntityDraft, TripletDraft, BackendIdentity, Capability};
    use crate::skg::SceneSource;
    use std::collections::BTreeMap;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn objects(scene: &Scene, n: usize) -> Vec<CatalogObject> {
        (0..n).map(|i| CatalogObject::new(&scene.id, &format!("thing{i}"))).collect()
    }

    #[test]
    fn subset_contract() {
        let s = Scene::new("lab", SceneSource::Catalog).unwrap();
        let objs = objects(&s, 10);
        let b = CatalogBackend::bundled();
        let sel = select_subset(&s, &objs, &b, 1).unwrap();
        assert!((2..=4).contains(&sel.k));
        assert!(sel.chosen.iter().all(|c| objs.contains(c)));
        assert!(matches!(select_subset(&s, &objs[..1], &b, 1), Err(BuilderError::TooFewObjects(1))));
    }

    #[test]
    fn subset_size_is_uniform() {
        let s = Scene::new("lab", SceneSource::Catalog).unwrap();
        let objs = objects(&s, 10);
        let mut counts = [0usize; 5];
        for seed in 0..1000 {
            counts[sample_members(&objs, seed).unwrap().len()] += 1;
        }
        for (k, &n) in counts.iter().enumerate().skip(2) {
            let f = n as f64 / 1000.0;
            assert!((f - 1.0 / 3.0).abs() <= 0.05, "k={k} f={f}");
        }
    }

    struct Scripted {
        drafts: Vec<EntityDraft>,
        triplets: Vec<Vec<TripletDraft>>,
        calls: AtomicUsize,
    }

    impl TextGenBackend for Scripted {
        fn identity(&self) -> BackendIdentity {
            BackendIdentity { backend: "scripted".into(), model: "test".into() }
        }
        fn capabilities(&self) -> BTreeSet<Capability> {
            BTreeSet::new()
        }
        fn enrich_entities(&self, _: &Scene, _: &[CatalogObject], _: usize, _: u64) -> Result<Vec<EntityDraft>, BackendError> {
            Ok(self.drafts.clone())
        }
        fn gen_triplets(&self, _: &Scene, _: &[Entity], _: u64) -> Result<Vec<TripletDraft>, BackendError> {
            let i = self.calls.fetch_add(1, Ordering::SeqCst);
            Ok(self.triplets[i.min(self.triplets.len() - 1)].clone())
        }
    }

    fn draft(scene: &Scene, label: &str, desc: &str) -> EntityDraft {
        EntityDraft { base_object: CatalogObject::new(&scene.id, label), description: desc.into(), attributes: BTreeMap::new() }
    }

    #[test]
    fn enrichment_guards() {
        let s = Scene::new("party", SceneSource::Catalog).unwrap();
        let chair = CatalogObject::new(&s.id, "chair");
        let sel = SubsetSelection { scene_id: s.id.clone(), chosen: vec![chair.clone(), chair.clone()], k: 2 };
        let seven = Scripted {
            drafts: (0..7).map(|i| draft(&s, "chair", &format!("chair {i}"))).collect(),
            triplets: vec![],
            calls: AtomicUsize::new(0),
        };
        assert!(matches!(
            enrich_entities(&s, &sel, &seven, 6, 0),
            Err(BuilderError::EntityCapExceeded { proposed: 7, cap: 6 })
        ));
        let dup = Scripted {
            drafts: vec![draft(&s, "chair", "a red chair"), draft(&s, "chair", "A red chair")],
            triplets: vec![],
            calls: AtomicUsize::new(0),
        };
        assert!(matches!(enrich_entities(&s, &sel, &dup, 6, 0), Err(BuilderError::DuplicateDescription(_))));
        let table = CatalogObject::new(&s.id, "table");
        let minimal = SubsetSelection { scene_id: s.id.clone(), chosen: vec![chair, table], k: 2 };
        let es = enrich_entities(&s, &minimal, &CatalogBackend::bundled(), 2, 4).unwrap();
        assert_eq!(es.len(), 2);
    }

    #[test]
    fn inconsistent_proposals_are_regenerated_then_discarded() {
        let s = Scene::new("party", SceneSource::Catalog).unwrap();
        let ds = [draft(&s, "cup", "a cup"), draft(&s, "plate", "a plate"), draft(&s, "bowl", "a bowl")];
        let es: Vec<Entity> = ds
            .iter()
            .enumerate()
            .map(|(i, d)| Entity::new(&s.id, i, d.base_object.clone(), &d.description, BTreeMap::new()))
            .collect();
        let t = |a: usize, r: &str, b: usize| TripletDraft { subject: es[a].id.clone(), phrase: r.into(), object: es[b].id.clone() };
        let cycle = vec![t(0, "left of", 1), t(1, "left of", 2), t(2, "left of", 0)];
        let good = vec![t(0, "left of", 1), t(1, "on top of", 2)];
        let table = SynonymTable::bundled();

        let eventually = Scripted { drafts: vec![], triplets: vec![cycle.clone(), vec![t(0, "orbiting", 1)], good], calls: AtomicUsize::new(0) };
        let out = gen_triplets(&s, &es, &eventually, table, 0).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(eventually.calls.load(Ordering::SeqCst), 3);

        let never = Scripted { drafts: vec![], triplets: vec![cycle], calls: AtomicUsize::new(0) };
        assert!(matches!(gen_triplets(&s, &es, &never, table, 0), Err(BuilderError::InconsistentTriplets(_))));
        assert_eq!(never.calls.load(Ordering::SeqCst), 1 + TRIPLET_RETRIES as usize);
    }

    fn batch(seed: u64) -> Vec<SpatialKg> {
        let b = CatalogBackend::bundled();
        let (scenes, failed) = gen_scene_objects(2, &b, &KnowledgeFetcher::offline(), seed).unwrap();
        assert!(failed.is_empty());
        let cfg = BuilderConfig { scenes: 2, skgs_per_scene: 3, ..Default::default() };
        let (skgs, failures) = build_skg_batch(&cfg, &scenes, &b, SynonymTable::bundled(), seed);
        assert!(failures.is_empty(), "{failures:?}");
        skgs
    }

    #[test]
    fn batch_is_consistent_and_deterministic() {
        let a = batch(11);
        assert!(a.len() <= 6 && !a.is_empty());
        for g in &a {
            assert!(check_consistency(&g.triplets).is_consistent());
            assert!(g.entities.len() >= 2 && g.entities.len() <= 6);
        }
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&batch(11)).unwrap());
    }

    #[test]
    fn catalog_triplets_always_consistent() {
        let b = CatalogBackend::bundled();
        let s = Scene::new("kitchen", SceneSource::Catalog).unwrap();
        let objs = b.catalog().objects_for(&s).unwrap();
        let mut n = 0;
        for seed in 0..2000u64 {
            let sel = select_subset(&s, &objs, &b, seed).unwrap();
            let es = enrich_entities(&s, &sel, &b, 6, seed).unwrap();
            if !(3..=4).contains(&es.len()) {
                continue;
            }
            let ts = gen_triplets(&s, &es, &b, SynonymTable::bundled(), seed).unwrap();
            assert!(ts.len() <= es.len() * (es.len() - 1) / 2);
            assert!(check_consistency(&ts).is_consistent());
            n += 1;
            if n == 500 {
                break;
            }
        }
        assert_eq!(n, 500);
    }

    #[test]
    fn seeds_collision_free_at_batch_scale() {
        let mut seen = HashSet::new();
        for si in 0..160 {
            for ki in 0..25 {
                assert!(seen.insert(skg_seed(7, si, ki)));
            }
        }
    }
}
