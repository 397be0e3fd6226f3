use rand::seq::IndexedRandom;
use rand::Rng;

use super::LayoutError;
use crate::backend::{CaptionRequest, TextGenBackend};
use crate::question::relation_words;
use crate::seed;
use crate::skg::{CatalogObject, SpatialKg};

/// Case-insensitive whole-word search.
pub fn mentions_word(text: &str, word: &str) -> bool {
    let text = text.to_lowercase();
    let word = word.trim().to_lowercase();
    if word.is_empty() {
        return false;
    }
    let boundary = |c: Option<char>| c.is_none_or(|c| !c.is_alphanumeric());
    text.match_indices(&word).any(|(i, _)| {
        boundary(text[..i].chars().next_back()) && boundary(text[i + word.len()..].chars().next())
    })
}

fn shares_word(a: &str, b: &str) -> bool {
    a.split_whitespace().any(|w| mentions_word(b, w))
}

/// With probability `p_neg`, a scene object that was not chosen and whose
/// name shares no word with a chosen object or the scene name.
pub fn sample_negative(
    scene_objects: &[CatalogObject],
    chosen: &[CatalogObject],
    scene_name: &str,
    p_neg: f64,
    seed: u64,
) -> Option<CatalogObject> {
    let mut rng = seed::rng(seed);
    if !rng.random_bool(p_neg.clamp(0.0, 1.0)) {
        return None;
    }
    let pool: Vec<&CatalogObject> = scene_objects
        .iter()
        .filter(|o| !chosen.contains(o))
        .filter(|o| {
            let name = o.display_name();
            !shares_word(&name, scene_name) && chosen.iter().all(|c| !shares_word(&name, &c.display_name()))
        })
        .collect();
    pool.choose(&mut rng).map(|o| (*o).clone())
}

fn join_and(items: &[String]) -> String {
    match items {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

/// Deterministic caption naming every entity and relation.
pub fn template_caption(request: &CaptionRequest<'_>) -> String {
    let mut s = String::from("A realistic scene");
    if let Some(scene) = request.scene {
        s.push_str(&format!(" of {}", scene.name));
    }
    let descs: Vec<String> = request.entities.iter().map(|e| e.description.clone()).collect();
    if !descs.is_empty() {
        s.push_str(&format!(" with {}", join_and(&descs)));
    }
    let name = |id: &str| {
        request.entities.iter().find(|e| e.id == id).map_or(id.to_string(), |e| e.bare_description().to_string())
    };
    let rels: Vec<String> = request
        .triplets
        .iter()
        .map(|t| format!("the {} is {} the {}", name(&t.subject), relation_words(&t.relation), name(&t.object)))
        .collect();
    if !rels.is_empty() {
        s.push_str(&format!(", where {}", rels.join("; ")));
    }
    s.push('.');
    s
}

/// Captions a graph through the backend and checks the result mentions
/// every entity and never the negative object.
pub fn build_caption(
    skg: &SpatialKg,
    negative: Option<&CatalogObject>,
    backend: &dyn TextGenBackend,
    seed: u64,
) -> Result<String, LayoutError> {
    let req = CaptionRequest { scene: Some(&skg.scene), entities: &skg.entities, triplets: &skg.triplets, negative };
    let caption = backend.gen_caption(&req, seed)?;
    check_caption(&caption, skg, negative)?;
    Ok(caption)
}

fn check_caption(caption: &str, skg: &SpatialKg, negative: Option<&CatalogObject>) -> Result<(), LayoutError> {
    for e in &skg.entities {
        if !caption.to_lowercase().contains(&e.bare_description().to_lowercase()) {
            return Err(LayoutError::CaptionMissingEntity(e.description.clone()));
        }
    }
    if let Some(neg) = negative {
        for word in [neg.display_name(), neg.label.clone()] {
            if mentions_word(caption, &word) {
                return Err(LayoutError::CaptionMentionsNegative(word));
            }
        }
    }
    Ok(())
}
