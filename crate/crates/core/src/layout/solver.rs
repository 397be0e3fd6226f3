//! Rejection-sampling placement. Each attempt samples sizes, orders the
//! entities along their directional constraints and places them one by one
//! inside the integer intervals their already-placed partners allow.

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use super::{verify_layout, Layout, LayoutError};
use crate::relation::{
    check_consistency, evaluate, invert, BoundingBox, Canvas, DirectionalRelation as D,
    DistanceRelation, RelationSpec,
};
use crate::seed;
use crate::skg::SpatialKg;

/// Position samples per entity before an attempt is abandoned.
const INNER_TRIES: usize = 24;
/// Attempts over which the sampled size ceiling shrinks to the floor.
const SHRINK_ATTEMPTS: f64 = 400.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SideRange {
    pub min: u32,
    pub max: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SizePrior {
    pub side: SideRange,
    /// Width/height ratio bounds.
    pub aspect: (f64, f64),
    /// Per-label overrides of the side range.
    pub per_label: BTreeMap<String, SideRange>,
}

impl Default for SizePrior {
    fn default() -> Self {
        Self { side: SideRange { min: 48, max: 160 }, aspect: (0.75, 1.33), per_label: BTreeMap::new() }
    }
}

impl SizePrior {
    pub fn validate(&self, canvas: &Canvas) -> Result<(), String> {
        let limit = canvas.width.min(canvas.height) / 2;
        for (name, r) in std::iter::once(("default", &self.side)).chain(self.per_label.iter().map(|(k, v)| (k.as_str(), v))) {
            if r.min == 0 || r.min > r.max || r.max > limit {
                return Err(format!("size range for {name} must satisfy 0 < min ≤ max ≤ {limit}"));
            }
        }
        if !(self.aspect.0 > 0.0 && self.aspect.0 <= self.aspect.1) {
            return Err("aspect bounds must satisfy 0 < lo ≤ hi".into());
        }
        Ok(())
    }

    fn sample(&self, label: &str, canvas: &Canvas, attempt: u32, rng: &mut ChaCha8Rng) -> (u32, u32) {
        let r = self.per_label.get(label).unwrap_or(&self.side);
        let shrink = (1.0 - attempt as f64 / SHRINK_ATTEMPTS).max(0.0);
        let hi = r.min as f64 + (r.max - r.min) as f64 * shrink;
        let side = if hi > r.min as f64 { rng.random_range(r.min as f64..=hi) } else { r.min as f64 };
        let aspect = rng.random_range(self.aspect.0..=self.aspect.1).sqrt();
        let limit = (canvas.width.min(canvas.height) / 2) as f64;
        let w = (side * aspect).round().clamp(1.0, limit) as u32;
        let h = (side / aspect).round().clamp(1.0, limit) as u32;
        (w, h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub max_attempts: u32,
    pub sizes: SizePrior,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { max_attempts: 1000, sizes: SizePrior::default() }
    }
}

/// Finds non-overlapping in-canvas boxes satisfying every triplet.
/// Attempt `a` draws from its own derived stream, so a success within N
/// attempts is reproduced by any larger budget.
pub fn solve_layout(
    skg: &SpatialKg,
    canvas: &Canvas,
    priors: &SizePrior,
    seed: u64,
    max_attempts: u32,
) -> Result<Layout, LayoutError> {
    if !check_consistency(&skg.triplets).is_consistent() {
        return Err(LayoutError::InconsistentInput(skg.id.clone()));
    }
    let n = skg.entities.len();
    // constraints as (i, spec, j) meaning "i spec j", listed for both ends
    let mut rels: Vec<Vec<(usize, RelationSpec)>> = vec![Vec::new(); n];
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
    for t in &skg.triplets {
        let (Some(i), Some(j)) = (skg.entity_index(&t.subject), skg.entity_index(&t.object)) else {
            return Err(LayoutError::EntityMismatch);
        };
        rels[i].push((j, t.relation.clone()));
        rels[j].push((i, invert(&t.relation)));
        if let Some(d) = t.relation.direction {
            if d.is_forward() { succ[i].push(j) } else { succ[j].push(i) }
        }
    }
    for attempt in 0..max_attempts {
        let mut rng = seed::rng(seed::derive(seed, attempt as u64, 0));
        if let Some(boxes) = attempt_once(skg, canvas, priors, attempt, &rels, &succ, &mut rng) {
            let layout = Layout {
                skg_id: skg.id.clone(),
                boxes: skg.entities.iter().map(|e| e.id.clone()).zip(boxes).collect(),
                canvas: *canvas,
                solver_seed: seed,
                attempts_used: attempt + 1,
            };
            if verify_layout(&layout, skg).is_ok_and(|v| v.is_empty()) {
                return Ok(layout);
            }
        }
    }
    Err(LayoutError::Unsat { attempts: max_attempts })
}

/// Kahn's algorithm over the union of directional edges with random
/// tie-breaks; a cross-axis cycle is broken at a random remaining node.
fn placement_order(succ: &[Vec<usize>], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = succ.len();
    let mut indeg = vec![0usize; n];
    for s in succ {
        for &j in s {
            indeg[j] += 1;
        }
    }
    let mut done = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        let free: Vec<usize> = (0..n).filter(|&i| !done[i] && indeg[i] == 0).collect();
        let rest: Vec<usize> = (0..n).filter(|&i| !done[i]).collect();
        let pick = *free.choose(rng).or_else(|| rest.choose(rng)).expect("nodes remain");
        done[pick] = true;
        order.push(pick);
        for &j in &succ[pick] {
            indeg[j] = indeg[j].saturating_sub(1);
        }
    }
    order
}

/// Integer interval narrowing for `x`/`y` of a w×h box that must stand in
/// `rel` to the placed box `p`.
fn narrow(rel: &RelationSpec, p: &BoundingBox, w: u32, h: u32, canvas: &Canvas, x: &mut (i64, i64), y: &mut (i64, i64)) {
    let (pcx, pcy) = p.center();
    let (hw, hh) = (w as f64 / 2.0, h as f64 / 2.0);
    let m = canvas.margin;
    let pb = p.bottom() as f64;
    if let Some(d) = rel.direction {
        match d {
            D::LeftOf => x.1 = x.1.min((pcx - m - hw).floor() as i64),
            D::RightOf => x.0 = x.0.max((pcx + m - hw).ceil() as i64),
            D::Above => y.1 = y.1.min((pcy - m - hh).floor() as i64),
            D::Below => y.0 = y.0.max((pcy + m - hh).ceil() as i64),
            D::InFrontOf => y.0 = y.0.max((pb + m - h as f64).ceil() as i64),
            D::Behind => y.1 = y.1.min((pb - m - h as f64).floor() as i64),
        }
    }
    if rel.distance == Some(DistanceRelation::Near) {
        let r = canvas.near_distance();
        x.0 = x.0.max((pcx - r - hw).ceil() as i64);
        x.1 = x.1.min((pcx + r - hw).floor() as i64);
        y.0 = y.0.max((pcy - r - hh).ceil() as i64);
        y.1 = y.1.min((pcy + r - hh).floor() as i64);
    }
}

fn attempt_once(
    skg: &SpatialKg,
    canvas: &Canvas,
    priors: &SizePrior,
    attempt: u32,
    rels: &[Vec<(usize, RelationSpec)>],
    succ: &[Vec<usize>],
    rng: &mut ChaCha8Rng,
) -> Option<Vec<BoundingBox>> {
    let n = skg.entities.len();
    let sizes: Vec<(u32, u32)> = skg
        .entities
        .iter()
        .map(|e| priors.sample(&e.base_object.label, canvas, attempt, rng))
        .collect();
    let order = placement_order(succ, rng);
    let mut placed: Vec<Option<BoundingBox>> = vec![None; n];
    for &i in &order {
        let (w, h) = sizes[i];
        let mut x = (0i64, canvas.width as i64 - w as i64);
        let mut y = (0i64, canvas.height as i64 - h as i64);
        for (j, rel) in &rels[i] {
            if let Some(p) = &placed[*j] {
                narrow(rel, p, w, h, canvas, &mut x, &mut y);
            }
        }
        if x.0 > x.1 || y.0 > y.1 {
            return None;
        }
        let fits = |b: &BoundingBox| {
            placed.iter().flatten().all(|p| p.intersection_area(b) == 0)
                && rels[i].iter().all(|(j, rel)| placed[*j].is_none_or(|p| evaluate(rel, b, &p, canvas)))
        };
        let found = (0..INNER_TRIES).find_map(|_| {
            let b = BoundingBox::new(rng.random_range(x.0..=x.1) as u32, rng.random_range(y.0..=y.1) as u32, w, h);
            fits(&b).then_some(b)
        });
        placed[i] = Some(found?);
    }
    placed.into_iter().collect()
}
