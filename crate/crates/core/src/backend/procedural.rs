//! Deterministic stand-in for a layout-conditioned diffusion model.
//!
//! Each entity is drawn as a flat-colored shape that touches all four edges
//! of its box, so the pixel footprint of an entity's color has exactly the
//! entity's box as its bounding rectangle. A legend mapping entity ids to
//! their unique fill colors rides along in a PNG text chunk.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};

use super::{BackendError, BackendIdentity, ImageGenBackend, RenderRequest, COLOR_PALETTE};
use crate::bitmap::{Bitmap, Rgb};
use crate::relation::{BoundingBox, Canvas};
use crate::seed;
use crate::skg::Entity;

pub const LEGEND_KEY: &str = "spatialkg:legend";
const BACKGROUND: Rgb = [236, 232, 222];
const INK: Rgb = [16, 16, 16];
const FALLBACK_COLOR: Rgb = [90, 160, 170];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Rectangle,
    Ellipse,
    Triangle,
}

/// Per-category drawing style.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderStyle {
    /// Shape overrides per object label; unlisted labels hash to a shape.
    pub shapes: BTreeMap<String, Shape>,
    /// Fill overrides per object label, used when an entity has no color.
    pub fills: BTreeMap<String, Rgb>,
    /// Print the object label inside its shape.
    pub labels: bool,
    /// Seeded background noise, the only place variant seeds show up.
    pub background_jitter: bool,
}

impl RenderStyle {
    pub fn shape_for(&self, label: &str) -> Shape {
        if let Some(s) = self.shapes.get(label) {
            return *s;
        }
        let h = label.bytes().fold(0u64, |acc, b| seed::mix64(acc ^ b as u64));
        [Shape::Rectangle, Shape::Ellipse, Shape::Triangle][(h % 3) as usize]
    }

    fn base_fill(&self, entity: &Entity) -> Rgb {
        entity
            .color()
            .and_then(|c| COLOR_PALETTE.iter().find(|(name, _)| *name == c).map(|(_, rgb)| *rgb))
            .or_else(|| self.fills.get(&entity.base_object.label).copied())
            .unwrap_or(FALLBACK_COLOR)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LegendEntry {
    pub id: String,
    pub description: String,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<String>,
    pub rgb: Rgb,
    pub shape: Shape,
}

/// What the renderer knows about an image besides its pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Legend {
    pub scene: String,
    pub canvas: Canvas,
    pub entities: Vec<LegendEntry>,
}

/// Assigns each entity a fill color unique within the image by nudging
/// repeated palette colors.
fn unique_fills(style: &RenderStyle, entities: &[&Entity]) -> Vec<Rgb> {
    let mut used: Vec<Rgb> = vec![BACKGROUND, INK];
    entities
        .iter()
        .map(|e| {
            let mut rgb = style.base_fill(e);
            let mut step = 0i16;
            while used.contains(&rgb) {
                step += 1;
                let base = style.base_fill(e);
                rgb = base.map(|c| {
                    let v = c as i16 + 6 * step;
                    if v > 255 { (c as i16 - 6 * step).clamp(0, 255) as u8 } else { v as u8 }
                });
            }
            used.push(rgb);
            rgb
        })
        .collect()
}

#[derive(Debug, Clone, Default)]
pub struct ProceduralRenderer {
    pub style: RenderStyle,
}

impl ProceduralRenderer {
    pub fn new(style: RenderStyle) -> Self {
        Self { style }
    }

    fn draw_shape(img: &mut Bitmap, b: &BoundingBox, shape: Shape, rgb: Rgb) {
        let (cx, cy) = b.center();
        let (rx, ry) = (b.w as f64 / 2.0, b.h as f64 / 2.0);
        for py in b.y..b.bottom() {
            let fy = py as f64 + 0.5;
            for px in b.x..b.right() {
                let fx = px as f64 + 0.5;
                let inside = match shape {
                    Shape::Rectangle => true,
                    Shape::Ellipse => {
                        let (dx, dy) = ((fx - cx) / rx, (fy - cy) / ry);
                        dx * dx + dy * dy <= 1.0
                    }
                    Shape::Triangle => {
                        // apex at top center, base on the bottom edge
                        let row = (py - b.y + 1) as f64 / b.h as f64;
                        (fx - cx).abs() <= (rx * row).max(1.0)
                    }
                };
                if inside {
                    img.put(px, py, rgb);
                }
            }
        }
    }

    fn draw_label(img: &mut Bitmap, b: &BoundingBox, text: &str) {
        let scale = 2u32;
        let glyph_w = 4 * scale;
        let max_chars = (b.w.saturating_sub(4 * scale) / glyph_w) as usize;
        let text: String = text.to_uppercase().chars().take(max_chars).collect();
        if text.is_empty() || b.h < 5 * scale + 8 {
            return;
        }
        let width = text.len() as u32 * glyph_w;
        let x0 = b.x + (b.w - width) / 2;
        let y0 = b.y + (b.h * 3 / 5).min(b.h - 5 * scale - 4);
        for (i, ch) in text.chars().enumerate() {
            let bits = glyph(ch);
            for gy in 0..5u32 {
                for gx in 0..3u32 {
                    if bits & (1 << (14 - (gy * 3 + gx))) == 0 {
                        continue;
                    }
                    for sy in 0..scale {
                        for sx in 0..scale {
                            img.put(x0 + i as u32 * glyph_w + gx * scale + sx, y0 + gy * scale + sy, INK);
                        }
                    }
                }
            }
        }
    }
}

impl ImageGenBackend for ProceduralRenderer {
    fn identity(&self) -> BackendIdentity {
        BackendIdentity { backend: "procedural".into(), model: "flat-shapes-v1".into() }
    }

    fn is_deterministic(&self) -> bool {
        true
    }

    fn render(&self, request: &RenderRequest, seed: u64) -> Result<Bitmap, BackendError> {
        let canvas = &request.canvas;
        for item in &request.items {
            if !item.bbox.fits(canvas) {
                return Err(BackendError::RenderFailed(format!(
                    "box {:?} for {} leaves the canvas",
                    item.bbox, item.entity.id
                )));
            }
        }
        let mut img = Bitmap::filled(canvas.width, canvas.height, BACKGROUND);
        if self.style.background_jitter {
            let mut state = seed::mix64(seed);
            for y in 0..canvas.height {
                for x in 0..canvas.width {
                    state = seed::mix64(state);
                    let d = (state % 7) as u8;
                    img.put(x, y, BACKGROUND.map(|c| c - d));
                }
            }
        }
        let entities: Vec<&Entity> = request.items.iter().map(|i| &i.entity).collect();
        let fills = unique_fills(&self.style, &entities);
        let mut legend =
            Legend { scene: request.scene_name.clone(), canvas: *canvas, entities: Vec::new() };
        for (item, rgb) in request.items.iter().zip(fills) {
            let shape = self.style.shape_for(&item.entity.base_object.label);
            Self::draw_shape(&mut img, &item.bbox, shape, rgb);
            if self.style.labels {
                Self::draw_label(&mut img, &item.bbox, &item.entity.base_object.label);
            }
            legend.entities.push(LegendEntry {
                id: item.entity.id.clone(),
                description: item.entity.description.clone(),
                label: item.entity.base_object.display_name(),
                color: item.entity.color().map(str::to_string),
                rgb,
                shape,
            });
        }
        let json = serde_json::to_string(&legend)
            .map_err(|e| BackendError::RenderFailed(e.to_string()))?;
        img.text.insert(LEGEND_KEY.into(), json);
        Ok(img)
    }
}

/// Legend plus the boxes recovered from pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub legend: Legend,
    /// Recovered box per legend entry, `None` when its color is absent.
    pub boxes: Vec<Option<BoundingBox>>,
}

impl GroundTruth {
    pub fn from_bitmap(image: &Bitmap) -> Result<Self, BackendError> {
        let raw = image.text.get(LEGEND_KEY).ok_or(BackendError::Unsupported(
            "verification of images without a procedural legend",
        ))?;
        let legend: Legend = serde_json::from_str(raw)
            .map_err(|e| BackendError::MalformedResponse(format!("legend: {e}")))?;
        let index: HashMap<Rgb, usize> =
            legend.entities.iter().enumerate().map(|(i, e)| (e.rgb, i)).collect();
        // (min_x, min_y, max_x, max_y)
        let mut extents: Vec<Option<(u32, u32, u32, u32)>> = vec![None; legend.entities.len()];
        let w = image.width as usize;
        let mut last: Option<(Rgb, Option<usize>)> = None;
        for (n, p) in image.rgb.chunks_exact(3).enumerate() {
            let p: Rgb = [p[0], p[1], p[2]];
            // runs of one color are the common case
            let hit = match last {
                Some((c, i)) if c == p => i,
                _ => {
                    let i = index.get(&p).copied();
                    last = Some((p, i));
                    i
                }
            };
            if let Some(i) = hit {
                let (x, y) = ((n % w) as u32, (n / w) as u32);
                extents[i] = Some(match extents[i] {
                    None => (x, y, x, y),
                    Some((a, b, c, d)) => (a.min(x), b.min(y), c.max(x), d.max(y)),
                });
            }
        }
        let boxes = extents
            .into_iter()
            .map(|e| e.map(|(x0, y0, x1, y1)| BoundingBox::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1)))
            .collect();
        Ok(Self { legend, boxes })
    }

    pub fn position(&self, entity_id: &str) -> Option<usize> {
        self.legend.entities.iter().position(|e| e.id == entity_id)
    }

    pub fn box_of(&self, entity_id: &str) -> Option<BoundingBox> {
        self.position(entity_id).and_then(|i| self.boxes[i])
    }
}

/// 3×5 bitmap glyphs, row-major, MSB first.
fn glyph(c: char) -> u16 {
    match c {
        'A' => 0b010_101_111_101_101,
        'B' => 0b110_101_110_101_110,
        'C' => 0b011_100_100_100_011,
        'D' => 0b110_101_101_101_110,
        'E' => 0b111_100_110_100_111,
        'F' => 0b111_100_110_100_100,
        'G' => 0b011_100_101_101_011,
        'H' => 0b101_101_111_101_101,
        'I' => 0b111_010_010_010_111,
        'J' => 0b001_001_001_101_010,
        'K' => 0b101_101_110_101_101,
        'L' => 0b100_100_100_100_111,
        'M' => 0b101_111_111_101_101,
        'N' => 0b110_101_101_101_101,
        'O' => 0b010_101_101_101_010,
        'P' => 0b110_101_110_100_100,
        'Q' => 0b010_101_101_110_011,
        'R' => 0b110_101_110_101_101,
        'S' => 0b011_100_010_001_110,
        'T' => 0b111_010_010_010_010,
        'U' => 0b101_101_101_101_111,
        'V' => 0b101_101_101_101_010,
        'W' => 0b101_101_111_111_101,
        'X' => 0b101_101_010_101_101,
        'Y' => 0b101_101_010_010_010,
        'Z' => 0b111_001_010_100_111,
        '0'..='9' => [
            0b111_101_101_101_111,
            0b010_110_010_010_111,
            0b110_001_010_100_111,
            0b110_001_010_001_110,
            0b101_101_111_001_001,
            0b111_100_110_001_110,
            0b011_100_111_101_111,
            0b111_001_010_010_010,
            0b111_101_111_101_111,
            0b111_101_111_001_110,
        ][c as usize - '0' as usize],
        _ => 0,
    }
}
