//! Image variants per scene instance and their alignment filter.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::backend::{BackendError, BackendIdentity, ImageGenBackend, RenderItem, RenderRequest, TextGenBackend};
use crate::bitmap::Bitmap;
use crate::layout::SceneInstance;
use crate::seed;
use crate::skg::slug;

pub const DEFAULT_VARIANTS: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {reason}")]
    Decode { path: PathBuf, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterVerdict {
    Kept,
    Discarded,
    Pending,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub instance_id: String,
    pub variant_seed: u64,
    /// Relative to the run's output directory.
    pub path: String,
    pub backend: BackendIdentity,
    pub filter_verdict: FilterVerdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discard_reason: Option<String>,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> ImageError + '_ {
    move |source| ImageError::Io { path: path.to_path_buf(), source }
}

pub fn render_request(instance: &SceneInstance) -> RenderRequest {
    RenderRequest {
        scene_name: instance.skg.scene.name.clone(),
        caption: instance.caption.clone(),
        canvas: instance.layout.canvas,
        items: instance
            .skg
            .entities
            .iter()
            .map(|e| RenderItem { entity: e.clone(), bbox: instance.layout.boxes[&e.id] })
            .collect(),
    }
}

pub fn variant_seed(instance: &SceneInstance, variant: usize) -> u64 {
    seed::derive(instance.seed, 2, variant as u64)
}

fn variant_path(instance: &SceneInstance, variant: usize) -> String {
    format!("images/{}/{}/{variant}.png", slug(&instance.skg.scene.name), instance.id)
}

/// Renders `n_variants` images under `out_dir`. Per-variant render failures
/// are returned alongside the records rather than aborting the instance.
pub fn render_variants(
    instance: &SceneInstance,
    n_variants: usize,
    backend: &dyn ImageGenBackend,
    out_dir: &Path,
) -> Result<(Vec<ImageRecord>, Vec<BackendError>), ImageError> {
    let request = render_request(instance);
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for v in 0..n_variants {
        let vseed = variant_seed(instance, v);
        let img = match backend.render(&request, vseed) {
            Ok(img) => img,
            Err(e) => {
                log::warn!("render of {} variant {v} failed: {e}", instance.id);
                failures.push(e);
                continue;
            }
        };
        let rel = variant_path(instance, v);
        let path = out_dir.join(&rel);
        std::fs::create_dir_all(path.parent().expect("nested path")).map_err(io(&path))?;
        let bytes = img
            .encode_png()
            .map_err(|e| ImageError::Decode { path: path.clone(), reason: e.to_string() })?;
        std::fs::write(&path, bytes).map_err(io(&path))?;
        records.push(ImageRecord {
            instance_id: instance.id.clone(),
            variant_seed: vseed,
            path: rel,
            backend: backend.identity(),
            filter_verdict: FilterVerdict::Pending,
            discard_reason: None,
        });
    }
    Ok((records, failures))
}

pub fn load(out_dir: &Path, record: &ImageRecord) -> Result<Bitmap, ImageError> {
    let path = out_dir.join(&record.path);
    let bytes = std::fs::read(&path).map_err(io(&path))?;
    Bitmap::decode_png(&bytes).map_err(|e| ImageError::Decode { path, reason: e.to_string() })
}

/// Judges every non-discarded record. Rejected images move under
/// `images/discarded/`; an unreachable backend leaves a record pending.
pub fn filter_images(
    records: &[ImageRecord],
    instance: &SceneInstance,
    backend: &dyn TextGenBackend,
    out_dir: &Path,
) -> Result<Vec<ImageRecord>, ImageError> {
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let mut r = r.clone();
        if r.filter_verdict == FilterVerdict::Discarded {
            out.push(r);
            continue;
        }
        let img = load(out_dir, &r)?;
        let verdict = match backend.verify_image(&img, &instance.skg.entities, &instance.skg.triplets) {
            Ok(v) => Some(v),
            Err(BackendError::BackendUnavailable(e)) => {
                log::warn!("image filter for {} pending: {e}", r.path);
                None
            }
            Err(e) => Some(crate::backend::Verdict::no(e.to_string())),
        };
        match verdict {
            None => r.filter_verdict = FilterVerdict::Pending,
            Some(v) if v.accepted => {
                r.filter_verdict = FilterVerdict::Kept;
                r.discard_reason = None;
            }
            Some(v) => {
                let rel = r.path.replacen("images/", "images/discarded/", 1);
                let (from, to) = (out_dir.join(&r.path), out_dir.join(&rel));
                std::fs::create_dir_all(to.parent().expect("nested path")).map_err(io(&to))?;
                std::fs::rename(&from, &to).map_err(io(&from))?;
                r.path = rel;
                r.filter_verdict = FilterVerdict::Discarded;
                r.discard_reason = v.reason.or_else(|| Some("rejected".into()));
            }
        }
        out.push(r);
    }
    Ok(out)
}

/// Moves discarded files back to their original paths and marks their
/// records pending, so filtering can run again from scratch.
pub fn restore_discarded(records: &mut [ImageRecord], out_dir: &Path) -> Result<(), ImageError> {
    for r in records.iter_mut() {
        let original = r.path.replacen("images/discarded/", "images/", 1);
        let moved = r.path.replacen("images/", "images/discarded/", 1);
        let (orig_abs, moved_abs) = (out_dir.join(&original), out_dir.join(&moved));
        if !orig_abs.exists() && moved_abs.exists() {
            std::fs::rename(&moved_abs, &orig_abs).map_err(io(&moved_abs))?;
        }
        if r.path != original {
            r.path = original;
            r.filter_verdict = FilterVerdict::Pending;
            r.discard_reason = None;
        }
    }
    Ok(())
}

pub fn kept(records: &[ImageRecord]) -> impl Iterator<Item = &ImageRecord> {
    records.iter().filter(|r| r.filter_verdict == FilterVerdict::Kept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{CatalogBackend, ProceduralRenderer};
    use crate::layout::{build_instance, verify_layout, SolverConfig, Violation};
    use crate::relation::{BoundingBox, Canvas, DirectionalRelation, RelationSpec};
    use crate::skg::{new_skg, CatalogObject, Entity, Scene, SceneSource, Triplet};

    fn instance() -> SceneInstance {
        let s = Scene::new("party", SceneSource::Catalog).unwrap();
        let es = vec![
            Entity::new(&s.id, 0, CatalogObject::new(&s.id, "balloon"), "a blue balloon", [("color".to_string(), "blue".to_string())].into()),
            Entity::new(&s.id, 1, CatalogObject::new(&s.id, "cake"), "a pink cake", [("color".to_string(), "pink".to_string())].into()),
        ];
        let t = Triplet::new(&es[0].id, RelationSpec::directional(DirectionalRelation::Above), &es[1].id);
        let g = new_skg(s, es, vec![t], 5).unwrap();
        build_instance(&g, &[], &SolverConfig::default(), &Canvas::default(), 0.0, &CatalogBackend::bundled()).unwrap()
    }

    #[test]
    fn variants_are_deterministic_pngs() {
        let inst = instance();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let r = ProceduralRenderer::default();
        let (a, fa) = render_variants(&inst, 3, &r, d1.path()).unwrap();
        let (b, _) = render_variants(&inst, 3, &r, d2.path()).unwrap();
        assert!(fa.is_empty());
        assert_eq!(a.len(), 3);
        assert_eq!(a, b);
        let seeds: std::collections::BTreeSet<u64> = a.iter().map(|x| x.variant_seed).collect();
        assert_eq!(seeds.len(), 3);
        for rec in &a {
            let x = std::fs::read(d1.path().join(&rec.path)).unwrap();
            assert_eq!(x, std::fs::read(d2.path().join(&rec.path)).unwrap());
            let img = load(d1.path(), rec).unwrap();
            assert_eq!((img.width, img.height), (512, 512));
        }
        // procedural variants ignore the seed by default
        assert_eq!(load(d1.path(), &a[0]).unwrap(), load(d1.path(), &a[1]).unwrap());
        assert!(render_variants(&inst, 0, &r, d1.path()).unwrap().0.is_empty());
    }

    #[test]
    fn filter_keeps_valid_and_discards_corrupted() {
        let inst = instance();
        let dir = tempfile::tempdir().unwrap();
        let (recs, _) = render_variants(&inst, 2, &ProceduralRenderer::default(), dir.path()).unwrap();
        let cat = CatalogBackend::bundled();
        let filtered = filter_images(&recs, &inst, &cat, dir.path()).unwrap();
        assert!(filtered.iter().all(|r| r.filter_verdict == FilterVerdict::Kept));
        // idempotent
        assert_eq!(filter_images(&filtered, &inst, &cat, dir.path()).unwrap(), filtered);

        // corrupt: move the balloon below the cake and re-render variant 1
        let mut bad = inst.clone();
        let balloon = &inst.skg.entities[0].id;
        // a short box on the bottom edge cannot sit above anything
        let moved = BoundingBox::new(0, 512 - 40, 60, 40);
        bad.layout.boxes.insert(balloon.clone(), moved);
        let violations = verify_layout(&bad.layout, &bad.skg).unwrap();
        assert!(violations.iter().any(|v| matches!(v, Violation::Triplet { .. })));
        let img = ProceduralRenderer::default().render(&render_request(&bad), 0).unwrap();
        std::fs::write(dir.path().join(&filtered[1].path), img.encode_png().unwrap()).unwrap();
        let again = filter_images(&filtered, &inst, &cat, dir.path()).unwrap();
        assert_eq!(again[0].filter_verdict, FilterVerdict::Kept);
        assert_eq!(again[1].filter_verdict, FilterVerdict::Discarded);
        assert!(again[1].discard_reason.as_ref().unwrap().contains("a blue balloon above a pink cake"));
        assert!(again[1].path.starts_with("images/discarded/"));
        assert!(dir.path().join(&again[1].path).exists());
    }
}
