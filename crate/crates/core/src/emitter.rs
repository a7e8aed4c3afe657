//! Renders a [`ScenePlan`] as an engine editor script.
//!
//! Fields become entries of a `FIELDS` data table; `spawn_field` iterates a
//! table entry. Placement rows are `((x, y, z), yaw, (sx, sy, sz))` in engine
//! units (1 m = 100). Floats print in shortest round-trip form, so identical
//! plans give identical bytes.

use std::fmt::Write as _;

use thiserror::Error;

use crate::planner::{plan_violations, ScenePlan};
use crate::providers::{ChatMessage, ChatProvider, ProviderError};

pub const UNITS_PER_METER: f64 = 100.0;

#[derive(Debug, Error)]
pub enum EmitterError {
    #[error("invalid plan: {}", .0.join("; "))]
    InvalidPlan(Vec<String>),
    #[error("provider returned no script")]
    EmptyReply,
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmitMode {
    Template,
    Provider,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptText {
    pub source: String,
    pub plan_ref: String,
}

fn num(v: f64) -> String {
    // -0.0 would print as "-0.0"; normalize so mirrored plans stay byte-equal
    let v = if v == 0.0 { 0.0 } else { v };
    format!("{v:?}")
}

fn py_str(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '"' => out.push_str("\\\""),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

const BODY: &str = r#"

def setup_scene():
    assets = {}
    for field in FIELDS:
        path = field["asset"]
        if path not in assets:
            asset = unreal.EditorAssetLibrary.load_asset(path)
            if asset is None:
                raise RuntimeError("asset not found: " + path)
            assets[path] = asset
    return assets


def spawn_field(field, assets):
    asset = assets[field["asset"]]
    spawned = []
    for location, yaw, scale in field["placements"]:
        actor = unreal.EditorLevelLibrary.spawn_actor_from_object(
            asset,
            unreal.Vector(location[0], location[1], location[2]),
            unreal.Rotator(roll=0.0, pitch=0.0, yaw=yaw),
        )
        actor.set_actor_scale3d(unreal.Vector(scale[0], scale[1], scale[2]))
        spawned.append(actor)
    return spawned


def main():
    assets = setup_scene()
    total = 0
    for field in FIELDS:
        total += len(spawn_field(field, assets))
    print("spawned %d actors" % total)


if __name__ == "__main__":
    main()
"#;

pub fn emit_script(plan: &ScenePlan, plan_ref: &str) -> Result<ScriptText, EmitterError> {
    let violations = plan_violations(plan);
    if !violations.is_empty() {
        return Err(EmitterError::InvalidPlan(violations));
    }
    let mut s = String::with_capacity(128 + plan.placement_count() * 64);
    s.push_str("# Generated scene script.\n");
    s.push_str("# Units: 1 m = 100 engine units. Rows are ((x, y, z), yaw_deg, (sx, sy, sz)).\n");
    let _ = writeln!(s, "# Plan: {plan_ref}");
    let _ = writeln!(s, "# Seed: {}", plan.seed);
    s.push_str("import unreal\n\n");
    s.push_str("FIELDS = [\n");
    for f in &plan.fields {
        s.push_str("    {\n");
        let _ = writeln!(s, "        \"asset\": {},", py_str(f.asset.as_str()));
        let _ = writeln!(s, "        \"entry\": {},", py_str(&f.entry_id));
        let _ = writeln!(s, "        \"rows\": {},", f.rows);
        let _ = writeln!(s, "        \"cols\": {},", f.cols);
        let _ = writeln!(s, "        \"row_spacing\": {},", num(f.row_spacing_m * UNITS_PER_METER));
        let _ = writeln!(s, "        \"plant_spacing\": {},", num(f.plant_spacing_m * UNITS_PER_METER));
        s.push_str("        \"placements\": [\n");
        for p in &f.placements {
            let sc = num(p.scale);
            let _ = writeln!(
                s,
                "            (({}, {}, {}), {}, ({sc}, {sc}, {sc})),",
                num(p.position[0] * UNITS_PER_METER),
                num(p.position[1] * UNITS_PER_METER),
                num(p.position[2] * UNITS_PER_METER),
                num(p.yaw_deg),
            );
        }
        s.push_str("        ],\n");
        s.push_str("    },\n");
    }
    s.push_str("]\n");
    s.push_str(BODY);
    Ok(ScriptText { source: s, plan_ref: plan_ref.to_string() })
}

pub fn provider_messages(plan: &ScenePlan) -> Vec<ChatMessage> {
    vec![
        ChatMessage::system(
            "You write Unreal Engine editor Python scripts. Load each asset by its full /Game/ path, \
             spawn one actor per placement at position x100 (meters to engine units), apply yaw and \
             uniform scale. Define setup_scene, spawn_field and main. Reply with the script only.",
        ),
        ChatMessage::user(plan.to_json()),
    ]
}

/// Strips a fenced code block if the reply is wrapped in one.
fn unfence(reply: &str) -> String {
    let t = reply.trim();
    if let Some(rest) = t.strip_prefix("```") {
        let body = rest.split_once('\n').map(|(_, b)| b).unwrap_or("");
        let body = body.trim_end().strip_suffix("```").unwrap_or(body);
        return format!("{}\n", body.trim_end());
    }
    format!("{t}\n")
}

/// Asks a chat provider for the script; the caller validates it like any other.
pub fn emit_with_provider(plan: &ScenePlan, plan_ref: &str, provider: &dyn ChatProvider) -> Result<ScriptText, EmitterError> {
    let reply = provider.chat(&provider_messages(plan))?;
    let source = unfence(&reply);
    if source.trim().is_empty() {
        return Err(EmitterError::EmptyReply);
    }
    Ok(ScriptText { source, plan_ref: plan_ref.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::{field_bbox, FieldPlan, Placement};
    use crate::providers::MockProvider;
    use crate::taxonomy::AssetPath;

    const PATH: &str = "/Game/Fruits/Apple/PinkLady/Maturation/Summer/Healthy/PinkLady_Maturation_Summer_Healthy.fbx";

    fn unit_plan(position: [f64; 2]) -> ScenePlan {
        let asset = AssetPath::new_unchecked(PATH);
        ScenePlan {
            seed: 0,
            units: "m".into(),
            fields: vec![FieldPlan {
                asset: asset.clone(),
                entry_id: "apple".into(),
                rows: 1,
                cols: 1,
                origin: position,
                row_spacing_m: 4.0,
                plant_spacing_m: 2.0,
                plant_height_m: 4.0,
                reference_height_m: 4.0,
                scale: 1.0,
                rendering_effects: vec![],
                placements: vec![Placement { asset, position: [position[0], position[1], 0.0], yaw_deg: 0.0, scale: 1.0 }],
                bbox: field_bbox(position, 1, 1, 4.0, 2.0),
            }],
        }
    }

    #[test]
    fn unit_field_at_origin() {
        let s = emit_script(&unit_plan([0.0, 0.0]), "scene.plan.json").unwrap().source;
        assert!(s.contains("((0.0, 0.0, 0.0), 0.0, (1.0, 1.0, 1.0)),"));
        assert_eq!(s.matches("import unreal").count(), 1);
        for f in ["def setup_scene(", "def spawn_field(", "def main("] {
            assert!(s.contains(f), "{f}");
        }
        assert!(s.contains(PATH));
        assert!(!s.contains('\r'));
    }

    #[test]
    fn meters_to_engine_units() {
        let s = emit_script(&unit_plan([2.0, 4.0]), "p").unwrap().source;
        assert!(s.contains("((200.0, 400.0, 0.0), 0.0, (1.0, 1.0, 1.0)),"), "{s}");
    }

    #[test]
    fn deterministic_bytes() {
        let p = unit_plan([1.5, 0.25]);
        assert_eq!(emit_script(&p, "x").unwrap(), emit_script(&p, "x").unwrap());
    }

    #[test]
    fn invalid_plan_rejected() {
        let mut p = unit_plan([0.0, 0.0]);
        p.fields[0].placements.clear();
        assert!(matches!(emit_script(&p, "x"), Err(EmitterError::InvalidPlan(_))));
    }

    #[test]
    fn provider_mode_unfences_reply() {
        let plan = unit_plan([0.0, 0.0]);
        let mut mock = MockProvider::new("m", Default::default());
        mock.insert(&provider_messages(&plan), "```python\nimport unreal\nprint(1)\n```");
        let out = emit_with_provider(&plan, "x", &mock).unwrap();
        assert_eq!(out.source, "import unreal\nprint(1)\n");
        let empty = MockProvider::new("m", Default::default());
        assert!(matches!(emit_with_provider(&plan, "x", &empty), Err(EmitterError::Provider(_))));
    }
}
