use rand::seq::SliceRandom;
use rand::Rng;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use super::{
    oracle, BackendError, BackendIdentity, CaptionRequest, Capability, EntityDraft, GroundTruth,
    KnowledgeDoc, TextGenBackend, TripletDraft, Verdict,
};
use crate::bitmap::Bitmap;
use crate::builder;
use crate::layout::template_caption;
use crate::relation::{Canvas, DirectionalRelation, DistanceRelation, RelationSpec};
use crate::seed;
use crate::skg::{CatalogObject, Entity, Scene, SceneSource, Triplet};

pub const BUNDLED_SCENES: &str = include_str!("../../data/scenes.tsv");

/// Color names usable as entity attributes, with their render colors.
pub const COLOR_PALETTE: [(&str, [u8; 3]); 10] = [
    ("red", [210, 40, 40]),
    ("blue", [40, 80, 215]),
    ("green", [40, 150, 60]),
    ("yellow", [235, 200, 30]),
    ("orange", [240, 130, 20]),
    ("purple", [135, 60, 175]),
    ("pink", [240, 120, 180]),
    ("brown", [125, 80, 40]),
    ("black", [30, 30, 30]),
    ("gray", [120, 120, 120]),
];

/// An object label with an optional qualifier.
type CatalogEntry = (String, Option<String>);

/// Scene names with their objects in commonality order.
#[derive(Debug, Clone, Default)]
pub struct SceneCatalog {
    rows: Vec<(String, Vec<CatalogEntry>)>,
}

impl SceneCatalog {
    /// Parses `scene<TAB>obj, obj (qualifier), ...` lines.
    pub fn parse(text: &str) -> Result<Self, BackendError> {
        let mut rows = Vec::new();
        let mut seen = BTreeSet::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (name, objs) = line.split_once('\t').unwrap_or((line, ""));
            let name = name.trim().to_string();
            if name.is_empty() || !seen.insert(name.clone()) {
                return Err(BackendError::MalformedResponse(format!(
                    "scene catalog line {}: empty or duplicate scene",
                    i + 1
                )));
            }
            let objects = objs
                .split(',')
                .map(str::trim)
                .filter(|o| !o.is_empty())
                .map(|o| match o.split_once('(') {
                    Some((label, q)) => {
                        (label.trim().to_string(), Some(q.trim_end_matches(')').trim().to_string()))
                    }
                    None => (o.to_string(), None),
                })
                .collect();
            rows.push((name, objects));
        }
        Ok(Self { rows })
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::InvalidRequest(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn bundled() -> Self {
        Self::parse(BUNDLED_SCENES).expect("bundled catalog parses")
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn scene_names(&self) -> impl Iterator<Item = &str> {
        self.rows.iter().map(|(n, _)| n.as_str())
    }

    pub fn objects_for(&self, scene: &Scene) -> Option<Vec<CatalogObject>> {
        let (_, objs) = self.rows.iter().find(|(n, _)| n.eq_ignore_ascii_case(&scene.name))?;
        Some(
            objs.iter()
                .map(|(label, q)| CatalogObject {
                    scene_id: scene.id.clone(),
                    label: label.clone(),
                    disambiguator: q.clone(),
                })
                .collect(),
        )
    }
}

/// Deterministic offline generator backed by the bundled catalog. Its
/// verification methods read ground truth from procedural images.
#[derive(Debug, Clone)]
pub struct CatalogBackend {
    catalog: Arc<SceneCatalog>,
    canvas: Canvas,
    min_objects: usize,
}

impl CatalogBackend {
    pub fn new(catalog: SceneCatalog, canvas: Canvas, min_objects: usize) -> Self {
        Self { catalog: Arc::new(catalog), canvas, min_objects }
    }

    pub fn bundled() -> Self {
        Self::new(SceneCatalog::bundled(), Canvas::default(), 5)
    }

    pub fn catalog(&self) -> &SceneCatalog {
        &self.catalog
    }
}

fn article(word: &str) -> &'static str {
    match word.chars().next() {
        Some(c) if "aeiouAEIOU".contains(c) => "an",
        _ => "a",
    }
}

fn describe(object: &CatalogObject, color: &str) -> String {
    if object.label == "person" {
        return format!("a person in {color}");
    }
    format!("{} {color} {}", article(color), object.display_name())
}

impl TextGenBackend for CatalogBackend {
    fn identity(&self) -> BackendIdentity {
        BackendIdentity { backend: "catalog".into(), model: "bundled".into() }
    }

    fn capabilities(&self) -> BTreeSet<Capability> {
        Capability::ALL.into_iter().collect()
    }

    fn gen_scenes(&self, count: usize, seed: u64) -> Result<Vec<Scene>, BackendError> {
        if count == 0 {
            return Err(BackendError::InvalidRequest("scene count must be positive".into()));
        }
        if count > self.catalog.len() {
            return Err(BackendError::InsufficientCatalog {
                requested: count,
                available: self.catalog.len(),
            });
        }
        let mut rng = seed::rng(seed);
        let names: Vec<&str> = self.catalog.scene_names().collect();
        rand::seq::index::sample(&mut rng, names.len(), count)
            .into_iter()
            .map(|i| {
                Scene::new(names[i], SceneSource::Catalog)
                    .map_err(|e| BackendError::MalformedResponse(e.to_string()))
            })
            .collect()
    }

    fn gen_objects(
        &self,
        scene: &Scene,
        _knowledge: &[KnowledgeDoc],
        _seed: u64,
    ) -> Result<Vec<CatalogObject>, BackendError> {
        let objects = self.catalog.objects_for(scene).unwrap_or_default();
        if objects.len() < self.min_objects {
            return Err(BackendError::TooFewObjects {
                scene: scene.name.clone(),
                found: objects.len(),
                floor: self.min_objects,
            });
        }
        Ok(objects)
    }

    fn select_subset(
        &self,
        _scene: &Scene,
        objects: &[CatalogObject],
        seed: u64,
    ) -> Result<Vec<CatalogObject>, BackendError> {
        builder::sample_members(objects, seed)
            .map_err(|e| BackendError::InvalidRequest(e.to_string()))
    }

    fn enrich_entities(
        &self,
        _scene: &Scene,
        chosen: &[CatalogObject],
        max_entities: usize,
        seed: u64,
    ) -> Result<Vec<EntityDraft>, BackendError> {
        let mut rng = seed::rng(seed);
        // group repeats, first-seen order
        let mut groups: Vec<(CatalogObject, usize)> = Vec::new();
        for obj in chosen {
            match groups.iter_mut().find(|(o, _)| o == obj) {
                Some((_, n)) => *n += 1,
                None => groups.push((obj.clone(), 1)),
            }
        }
        // occasionally a selected object turns out to be several instances
        if chosen.len() < max_entities && !groups.is_empty() && rng.random_bool(0.2) {
            let g = rng.random_range(0..groups.len());
            groups[g].1 += 1;
        }
        let mut drafts = Vec::new();
        for (object, n) in groups {
            let mut colors: Vec<&str> = COLOR_PALETTE.iter().map(|(c, _)| *c).collect();
            colors.shuffle(&mut rng);
            for color in colors.into_iter().take(n) {
                drafts.push(EntityDraft {
                    description: describe(&object, color),
                    attributes: BTreeMap::from([("color".to_string(), color.to_string())]),
                    base_object: object.clone(),
                });
            }
        }
        Ok(drafts)
    }

    /// Samples a random consistent relation set. Latent points fix one
    /// random order per axis (the vertical order serves both above/below
    /// and behind/in front); each included pair reads its direction off
    /// that order and a distance part only when the latent distance is
    /// clearly near or far.
    fn gen_triplets(
        &self,
        _scene: &Scene,
        entities: &[Entity],
        seed: u64,
    ) -> Result<Vec<TripletDraft>, BackendError> {
        let n = entities.len();
        if n < 2 {
            return Err(BackendError::InvalidRequest("need at least 2 entities".into()));
        }
        let mut rng = seed::rng(seed);
        let (w, h) = (self.canvas.width as f64, self.canvas.height as f64);
        let points: Vec<(f64, f64)> = (0..n)
            .map(|_| (rng.random_range(0.1 * w..0.9 * w), rng.random_range(0.1 * h..0.9 * h)))
            .collect();
        let mut pairs: Vec<(usize, usize)> =
            (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        pairs.shuffle(&mut rng);
        let mut include: Vec<bool> = pairs.iter().map(|_| rng.random_bool(0.5)).collect();
        if !include.iter().any(|&b| b) {
            include[0] = true;
        }
        let (near, far) = (self.canvas.near_distance(), self.canvas.far_distance());
        let mut out = Vec::new();
        for (&(i, j), _) in pairs.iter().zip(&include).filter(|(_, &inc)| inc) {
            let (a, b) = if rng.random_bool(0.5) { (i, j) } else { (j, i) };
            let (pa, pb) = (points[a], points[b]);
            let dist = (pa.0 - pb.0).hypot(pa.1 - pb.1);
            let distance = if dist <= near {
                Some(DistanceRelation::Near)
            } else if dist >= far {
                Some(DistanceRelation::Far)
            } else {
                None
            };
            // with a distance available: 35% distance only, 30% both
            let roll: f64 = rng.random();
            let want_direction = distance.is_none() || roll >= 0.35;
            let want_distance = distance.is_some() && roll < 0.65;
            let direction = want_direction.then(|| {
                let axis: f64 = rng.random();
                if axis < 0.45 {
                    if pa.0 < pb.0 { DirectionalRelation::LeftOf } else { DirectionalRelation::RightOf }
                } else if axis < 0.75 {
                    if pa.1 < pb.1 { DirectionalRelation::Above } else { DirectionalRelation::Below }
                } else if pa.1 < pb.1 {
                    DirectionalRelation::Behind
                } else {
                    DirectionalRelation::InFrontOf
                }
            });
            let spec = RelationSpec::new(direction, distance.filter(|_| want_distance))
                .expect("direction or distance chosen");
            out.push(TripletDraft {
                subject: entities[a].id.clone(),
                phrase: spec.surface_phrase,
                object: entities[b].id.clone(),
            });
        }
        Ok(out)
    }

    fn gen_caption(&self, request: &CaptionRequest<'_>, _seed: u64) -> Result<String, BackendError> {
        Ok(template_caption(request))
    }

    fn paraphrase_question(&self, question: &str, _seed: u64) -> Result<String, BackendError> {
        Ok(question.to_string())
    }

    fn verify_image(
        &self,
        image: &Bitmap,
        entities: &[Entity],
        triplets: &[Triplet],
    ) -> Result<Verdict, BackendError> {
        let truth = GroundTruth::from_bitmap(image)?;
        Ok(oracle::check_alignment(&truth, entities, triplets))
    }

    fn verify_qa(&self, image: &Bitmap, question: &str, answer: &str) -> Result<Verdict, BackendError> {
        let truth = GroundTruth::from_bitmap(image)?;
        Ok(oracle::judge_answer(&truth, question, answer))
    }

    fn verify_qa_many(&self, image: &Bitmap, pairs: &[(&str, &str)]) -> Vec<Result<Verdict, BackendError>> {
        match GroundTruth::from_bitmap(image) {
            Ok(truth) => pairs.iter().map(|(q, a)| Ok(oracle::judge_answer(&truth, q, a))).collect(),
            Err(e) => pairs.iter().map(|_| Err(e.clone())).collect(),
        }
    }
}
