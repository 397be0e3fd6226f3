//! Box layouts satisfying a graph, negative-object choice and captions.

mod caption;
mod solver;

pub use caption::{build_caption, mentions_word, sample_negative, template_caption};
pub use solver::{solve_layout, SideRange, SizePrior, SolverConfig};

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::backend::{BackendError, TextGenBackend};
use crate::images::ImageRecord;
use crate::relation::{evaluate, BoundingBox, Canvas};
use crate::seed;
use crate::skg::{CatalogObject, SpatialKg, Triplet};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum LayoutError {
    #[error("graph {0} failed the consistency check")]
    InconsistentInput(String),
    #[error("no layout found in {attempts} attempts")]
    Unsat { attempts: u32 },
    #[error("layout and graph disagree on entities")]
    EntityMismatch,
    #[error("caption omits {0:?}")]
    CaptionMissingEntity(String),
    #[error("caption mentions the absent object {0:?}")]
    CaptionMentionsNegative(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub skg_id: String,
    pub boxes: BTreeMap<String, BoundingBox>,
    pub canvas: Canvas,
    pub solver_seed: u64,
    pub attempts_used: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    Triplet { triplet: Triplet },
    Overlap { a: String, b: String },
    OutOfCanvas { entity: String },
}

/// Independent re-check of a layout against its graph.
pub fn verify_layout(layout: &Layout, skg: &SpatialKg) -> Result<Vec<Violation>, LayoutError> {
    if layout.boxes.len() != skg.entities.len()
        || skg.entities.iter().any(|e| !layout.boxes.contains_key(&e.id))
    {
        return Err(LayoutError::EntityMismatch);
    }
    let mut out = Vec::new();
    for (id, b) in &layout.boxes {
        if !b.fits(&layout.canvas) {
            out.push(Violation::OutOfCanvas { entity: id.clone() });
        }
    }
    for t in &skg.triplets {
        if !evaluate(&t.relation, &layout.boxes[&t.subject], &layout.boxes[&t.object], &layout.canvas) {
            out.push(Violation::Triplet { triplet: t.clone() });
        }
    }
    let ids: Vec<&String> = layout.boxes.keys().collect();
    for i in 0..ids.len() {
        for j in i + 1..ids.len() {
            if layout.boxes[ids[i]].intersection_area(&layout.boxes[ids[j]]) > 0 {
                out.push(Violation::Overlap { a: ids[i].clone(), b: ids[j].clone() });
            }
        }
    }
    Ok(out)
}

/// Unit of pipeline work: one graph realized as a layout and a caption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneInstance {
    pub id: String,
    pub skg: SpatialKg,
    pub layout: Layout,
    pub caption: String,
    pub negative_object: Option<CatalogObject>,
    /// The scene's full object list, kept for distractors.
    pub scene_objects: Vec<CatalogObject>,
    #[serde(default)]
    pub image_variants: Vec<ImageRecord>,
    pub seed: u64,
}

pub fn instance_id(skg: &SpatialKg) -> String {
    format!("inst-{}", skg.id.trim_start_matches("skg-"))
}

/// Solves, picks a negative object and captions one graph.
pub fn build_instance(
    skg: &SpatialKg,
    scene_objects: &[CatalogObject],
    solver: &SolverConfig,
    canvas: &Canvas,
    negative_probability: f64,
    backend: &dyn TextGenBackend,
) -> Result<SceneInstance, LayoutError> {
    let s = skg.provenance_seed;
    let layout = solve_layout(skg, canvas, &solver.sizes, seed::derive(s, 1, 0), solver.max_attempts)?;
    let chosen: Vec<CatalogObject> = skg.entities.iter().map(|e| e.base_object.clone()).collect();
    let negative =
        sample_negative(scene_objects, &chosen, &skg.scene.name, negative_probability, seed::derive(s, 1, 1));
    let caption = build_caption(skg, negative.as_ref(), backend, seed::derive(s, 1, 2))?;
    Ok(SceneInstance {
        id: instance_id(skg),
        skg: skg.clone(),
        layout,
        caption,
        negative_object: negative,
        scene_objects: scene_objects.to_vec(),
        image_variants: Vec::new(),
        seed: s,
    })
}
