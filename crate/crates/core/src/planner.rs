//! Grid placement and multi-field layout.
//!
//! Each field is a rows × cols grid. Column `j` sits at `origin.x + j·plant_spacing`,
//! row `i` at `origin.y + i·row_spacing`. Fields run left to right along +x and
//! the bounding box of field n+1 starts `gap_m` past the end of field n, so
//! boxes never touch.
//!
//! Yaws come from ChaCha8 seeded with the scene seed, one stream per field
//! (stream id = field index), drawn in row-major order.

use std::path::Path;

use indexmap::IndexMap;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::knowledge::{KnowledgeEntry, SceneRecipe};
use crate::par::{self, Exec};
use crate::taxonomy::AssetPath;

pub const DEFAULT_PLANNER_JSON: &str = include_str!("../data/planner.json");
pub const SCALE_MIN: f64 = 0.05;
pub const SCALE_MAX: f64 = 20.0;
pub const SPACING_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("invalid field dimensions {rows}x{cols}")]
    InvalidDimension { rows: u32, cols: u32 },
    #[error("invalid spacing for `{entry}`: row {row} m, plant {plant} m")]
    InvalidSpacing { entry: String, row: f64, plant: f64 },
    #[error("recipe has no fields")]
    EmptyRecipe,
    #[error("no reference height configured for crop `{0}`")]
    MissingReferenceHeight(String),
    #[error("scale {scale} for `{entry}` outside [{SCALE_MIN}, {SCALE_MAX}]")]
    ScaleOutOfBounds { entry: String, scale: f64 },
    #[error("planner config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    /// Height (m) at which a crop's model renders at scale 1.
    pub reference_heights_m: IndexMap<String, f64>,
    pub rows: u32,
    pub cols: u32,
    pub gap_m: f64,
}

impl PlannerConfig {
    pub fn default_bundled() -> Self {
        Self::from_json(DEFAULT_PLANNER_JSON).expect("bundled planner config is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, PlannerError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| PlannerError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PlannerError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PlannerError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), PlannerError> {
        if self.rows == 0 || self.cols == 0 {
            return Err(PlannerError::InvalidDimension { rows: self.rows, cols: self.cols });
        }
        if !(self.gap_m.is_finite() && self.gap_m > 0.0) {
            return Err(PlannerError::Config(format!("gap_m must be positive, got {}", self.gap_m)));
        }
        for (crop, h) in &self.reference_heights_m {
            if !(h.is_finite() && *h > 0.0) {
                return Err(PlannerError::Config(format!("reference height for {crop} must be positive")));
            }
        }
        Ok(())
    }

    pub fn reference_height(&self, crop: &str) -> Result<f64, PlannerError> {
        self.reference_heights_m
            .iter()
            .find(|(c, _)| c.eq_ignore_ascii_case(crop))
            .map(|(_, h)| *h)
            .ok_or_else(|| PlannerError::MissingReferenceHeight(crop.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Rect {
    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min_x && x <= self.max_x && y >= self.min_y && y <= self.max_y
    }

    /// Closed-interval overlap; touching boxes intersect.
    pub fn intersects(&self, other: &Rect) -> bool {
        self.min_x <= other.max_x && other.min_x <= self.max_x && self.min_y <= other.max_y && other.min_y <= self.max_y
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub asset: AssetPath,
    pub position: [f64; 3],
    pub yaw_deg: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldPlan {
    pub asset: AssetPath,
    pub entry_id: String,
    pub rows: u32,
    pub cols: u32,
    pub origin: [f64; 2],
    pub row_spacing_m: f64,
    pub plant_spacing_m: f64,
    pub plant_height_m: f64,
    pub reference_height_m: f64,
    pub scale: f64,
    pub rendering_effects: Vec<String>,
    pub placements: Vec<Placement>,
    pub bbox: Rect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenePlan {
    pub seed: u64,
    pub units: String,
    pub fields: Vec<FieldPlan>,
}

impl ScenePlan {
    pub fn placement_count(&self) -> usize {
        self.fields.iter().map(|f| f.placements.len()).sum()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plan serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Bounding box of a grid anchored at `origin`, padded by half a plant spacing.
pub fn field_bbox(origin: [f64; 2], rows: u32, cols: u32, row_spacing: f64, plant_spacing: f64) -> Rect {
    let m = plant_spacing / 2.0;
    Rect {
        min_x: origin[0] - m,
        min_y: origin[1] - m,
        max_x: origin[0] + (cols - 1) as f64 * plant_spacing + m,
        max_y: origin[1] + (rows - 1) as f64 * row_spacing + m,
    }
}

/// Yaw in [0, 360) from the top 53 bits of one draw.
pub fn draw_yaw(rng: &mut ChaCha8Rng) -> f64 {
    let unit = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    unit * 360.0
}

pub fn field_rng(seed: u64, field_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(field_index);
    rng
}

fn check_spacing(entry: &KnowledgeEntry) -> Result<(), PlannerError> {
    let ok = |v: f64| v.is_finite() && v > 0.0;
    if ok(entry.row_spacing_m) && ok(entry.plant_spacing_m) {
        Ok(())
    } else {
        Err(PlannerError::InvalidSpacing {
            entry: entry.id.clone(),
            row: entry.row_spacing_m,
            plant: entry.plant_spacing_m,
        })
    }
}

pub fn entry_scale(entry: &KnowledgeEntry, config: &PlannerConfig) -> Result<f64, PlannerError> {
    let scale = entry.plant_height_m / config.reference_height(&entry.meta.crop)?;
    if !(SCALE_MIN..=SCALE_MAX).contains(&scale) {
        return Err(PlannerError::ScaleOutOfBounds { entry: entry.id.clone(), scale });
    }
    Ok(scale)
}

pub fn plan_field(
    asset: &AssetPath,
    entry: &KnowledgeEntry,
    rows: u32,
    cols: u32,
    origin: [f64; 2],
    rng: &mut ChaCha8Rng,
    config: &PlannerConfig,
) -> Result<FieldPlan, PlannerError> {
    if rows == 0 || cols == 0 {
        return Err(PlannerError::InvalidDimension { rows, cols });
    }
    check_spacing(entry)?;
    let scale = entry_scale(entry, config)?;
    let (rs, ps) = (entry.row_spacing_m, entry.plant_spacing_m);

    let mut placements = Vec::with_capacity(rows as usize * cols as usize);
    for i in 0..rows {
        for j in 0..cols {
            placements.push(Placement {
                asset: asset.clone(),
                position: [origin[0] + j as f64 * ps, origin[1] + i as f64 * rs, 0.0],
                yaw_deg: draw_yaw(rng),
                scale,
            });
        }
    }
    Ok(FieldPlan {
        asset: asset.clone(),
        entry_id: entry.id.clone(),
        rows,
        cols,
        origin,
        row_spacing_m: rs,
        plant_spacing_m: ps,
        plant_height_m: entry.plant_height_m,
        reference_height_m: config.reference_height(&entry.meta.crop)?,
        scale,
        rendering_effects: entry.rendering_effects.clone(),
        placements,
        bbox: field_bbox(origin, rows, cols, rs, ps),
    })
}

struct FieldJob<'a> {
    asset: &'a AssetPath,
    entry: &'a KnowledgeEntry,
    rows: u32,
    cols: u32,
    origin: [f64; 2],
}

/// Lays out every recipe line (expanded by quantity) and plans fields, possibly in parallel.
pub fn plan_scene(recipe: &SceneRecipe, seed: u64, config: &PlannerConfig, exec: Exec) -> Result<ScenePlan, PlannerError> {
    config.validate()?;
    let mut jobs = Vec::new();
    for f in &recipe.fields {
        let rows = f.rows.unwrap_or(config.rows);
        let cols = f.cols.unwrap_or(config.cols);
        if rows == 0 || cols == 0 {
            return Err(PlannerError::InvalidDimension { rows, cols });
        }
        check_spacing(&f.entry)?;
        for _ in 0..f.quantity.max(1) {
            jobs.push((f, rows, cols));
        }
    }
    if jobs.is_empty() {
        return Err(PlannerError::EmptyRecipe);
    }

    // origins are a prefix scan over widths, so they are fixed before any field is planned
    let mut layout = Vec::with_capacity(jobs.len());
    let mut prev_max_x: Option<f64> = None;
    for (f, rows, cols) in jobs {
        let ps = f.entry.plant_spacing_m;
        let x = match prev_max_x {
            None => 0.0,
            Some(max_x) => max_x + config.gap_m + ps / 2.0,
        };
        let origin = [x, 0.0];
        prev_max_x = Some(field_bbox(origin, rows, cols, f.entry.row_spacing_m, ps).max_x);
        layout.push(FieldJob { asset: &f.path, entry: &f.entry, rows, cols, origin });
    }

    let planned = par::map_indexed(exec, &layout, |idx, job| {
        let mut rng = field_rng(seed, idx as u64);
        plan_field(job.asset, job.entry, job.rows, job.cols, job.origin, &mut rng, config)
    });
    let fields = planned.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(ScenePlan { seed, units: "m".into(), fields })
}

/// Structural problems with a plan; empty when all invariants hold.
pub fn plan_violations(plan: &ScenePlan) -> Vec<String> {
    let mut out = Vec::new();
    if plan.units != "m" {
        out.push(format!("units must be \"m\", got {:?}", plan.units));
    }
    for (n, f) in plan.fields.iter().enumerate() {
        let expected = f.rows as usize * f.cols as usize;
        if f.rows == 0 || f.cols == 0 {
            out.push(format!("field {n}: zero dimension"));
            continue;
        }
        if f.placements.len() != expected {
            out.push(format!("field {n}: {} placements, expected {expected}", f.placements.len()));
            continue;
        }
        let bbox = field_bbox(f.origin, f.rows, f.cols, f.row_spacing_m, f.plant_spacing_m);
        let close = |a: f64, b: f64| (a - b).abs() <= SPACING_TOLERANCE;
        if !(close(bbox.min_x, f.bbox.min_x) && close(bbox.max_x, f.bbox.max_x) && close(bbox.min_y, f.bbox.min_y) && close(bbox.max_y, f.bbox.max_y)) {
            out.push(format!("field {n}: bbox does not match grid extent"));
        }
        for (k, p) in f.placements.iter().enumerate() {
            let (i, j) = (k / f.cols as usize, k % f.cols as usize);
            if p.asset != f.asset {
                out.push(format!("field {n} placement {k}: asset differs from field asset"));
            }
            if p.position[2] != 0.0 {
                out.push(format!("field {n} placement {k}: z = {}", p.position[2]));
            }
            if !f.bbox.contains(p.position[0], p.position[1]) {
                out.push(format!("field {n} placement {k}: outside bbox"));
            }
            if !(0.0..360.0).contains(&p.yaw_deg) {
                out.push(format!("field {n} placement {k}: yaw {} out of range", p.yaw_deg));
            }
            if !(SCALE_MIN..=SCALE_MAX).contains(&p.scale) {
                out.push(format!("field {n} placement {k}: scale {} out of bounds", p.scale));
            }
            if j > 0 {
                let dx = p.position[0] - f.placements[k - 1].position[0];
                if !close(dx, f.plant_spacing_m) {
                    out.push(format!("field {n} row {i}: dx {dx} != {}", f.plant_spacing_m));
                }
            }
            if i > 0 {
                let dy = p.position[1] - f.placements[k - f.cols as usize].position[1];
                if !close(dy, f.row_spacing_m) {
                    out.push(format!("field {n} col {j}: dy {dy} != {}", f.row_spacing_m));
                }
            }
        }
    }
    for a in 0..plan.fields.len() {
        for b in a + 1..plan.fields.len() {
            if plan.fields[a].bbox.intersects(&plan.fields[b].bbox) {
                out.push(format!("fields {a} and {b} overlap"));
            }
        }
    }
    out
}
