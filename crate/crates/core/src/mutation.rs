//! Seeded faults for exercising the validator.
//!
//! Each mutant is a script that should be rejected when validated against
//! the original (unmutated) plan.

use crate::emitter::{emit_script, UNITS_PER_METER};
use crate::planner::ScenePlan;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mutant {
    pub name: &'static str,
    /// Rule expected to fire (at least).
    pub expect_rule: &'static str,
    pub script: String,
}

fn replace_nth_line(script: &str, pred: impl Fn(&str) -> bool, f: impl Fn(&str) -> Option<String>) -> String {
    let mut done = false;
    let mut out = String::with_capacity(script.len() + 64);
    for line in script.lines() {
        if !done && pred(line) {
            done = true;
            if let Some(new) = f(line) {
                out.push_str(&new);
                out.push('\n');
            }
            continue;
        }
        out.push_str(line);
        out.push('\n');
    }
    out
}

fn is_row(line: &str) -> bool {
    line.trim_start().starts_with("((")
}

fn respaced(plan: &ScenePlan, delta_m: f64) -> ScenePlan {
    let mut p = plan.clone();
    let f = &mut p.fields[0];
    f.plant_spacing_m += delta_m;
    let cols = f.cols as usize;
    for (k, pl) in f.placements.iter_mut().enumerate() {
        pl.position[0] = f.origin[0] + (k % cols) as f64 * f.plant_spacing_m;
    }
    f.bbox = crate::planner::field_bbox(f.origin, f.rows, f.cols, f.row_spacing_m, f.plant_spacing_m);
    p
}

/// Builds the corpus from a pristine emission. The plan needs at least two
/// fields with distinct assets and a first field with two or more columns and
/// plant spacing above 1 m.
pub fn corpus(plan: &ScenePlan, pristine: &str) -> Vec<Mutant> {
    assert!(plan.fields.len() >= 2 && plan.fields[0].asset != plan.fields[1].asset, "corpus needs two distinct fields");
    assert!(plan.fields[0].cols >= 2 && plan.fields[0].plant_spacing_m > 1.0, "corpus needs a respaceable first field");
    let a0 = plan.fields[0].asset.as_str();
    let a1 = plan.fields[1].asset.as_str();
    let plan_ref = "mutant.plan.json";
    let mut v = Vec::new();
    let mut add = |name, expect_rule, script: String| v.push(Mutant { name, expect_rule, script });

    add("prefix_strip", "R1", pristine.replacen(a0, a0.trim_start_matches("/Game/"), 1));
    add("suffix_strip", "R1", pristine.replacen(a0, a0.trim_end_matches(".fbx"), 1));
    let variety = &a0.rsplit('/').next().unwrap_or(a0)[..3];
    let typo = a0.replacen(&format!("/{variety}"), &format!("/{}x", &variety[..2]), 1);
    add("path_typo", "R1", pristine.replacen(a0, &typo, 1));
    add("dropped_spawn", "R5", replace_nth_line(pristine, is_row, |_| None));
    add("doubled_spawn", "R5", replace_nth_line(pristine, is_row, |l| Some(format!("{l}\n{l}"))));
    add(
        "scale_x2",
        "R4",
        pristine
            .lines()
            .map(|l| {
                if is_row(l) {
                    let (head, tail) = l.rsplit_once(", (").expect("row has a scale tuple");
                    let s: f64 = tail.split(',').next().and_then(|t| t.trim().parse().ok()).expect("scale literal");
                    let d = format!("{:?}", s * 2.0);
                    format!("{head}, ({d}, {d}, {d})),")
                } else {
                    l.to_string()
                }
            })
            .collect::<Vec<_>>()
            .join("\n")
            + "\n",
    );
    let emit = |p: &ScenePlan| emit_script(p, plan_ref).expect("respaced plan valid").source;
    add("spacing_plus_1", "R6", emit(&respaced(plan, 1.0)));
    add("spacing_minus_1", "R6", emit(&respaced(plan, -1.0)));
    add(
        "missing_attachment_rule",
        "R3",
        pristine.replacen(
            "        spawned.append(actor)\n",
            "        if spawned:\n            actor.attach_to_actor(spawned[0], \"\")\n        spawned.append(actor)\n",
            1,
        ),
    );
    add(
        "constructor_misuse",
        "R3",
        pristine.replacen("unreal.EditorLevelLibrary.spawn_actor_from_object(", "unreal.EditorLevelLibrary().spawn_actor_from_object(", 1),
    );
    let foreign = if a0.contains("/Healthy/") { a0.replace("Healthy", "Ill") } else { a0.replace("Ill", "Healthy") };
    add(
        "foreign_path_injection",
        "R2",
        pristine.replacen(
            "    return assets\n",
            &format!("    assets[\"extra\"] = unreal.EditorAssetLibrary.load_asset(\"{foreign}\")\n    return assets\n"),
            1,
        ),
    );
    add(
        "swapped_field_tables",
        "R2",
        pristine
            .replacen(&format!("\"asset\": \"{a0}\""), "\"asset\": \"__SWAP__\"", 1)
            .replacen(&format!("\"asset\": \"{a1}\""), &format!("\"asset\": \"{a0}\""), 1)
            .replacen("\"asset\": \"__SWAP__\"", &format!("\"asset\": \"{a1}\""), 1),
    );
    add("empty_script", "R5", String::new());
    add(
        "spawn_from_string",
        "R3",
        pristine.replacen(
            "spawn_actor_from_object(\n            asset,",
            "spawn_actor_from_object(\n            field[\"asset\"],",
            1,
        ),
    );
    add(
        "units_not_converted",
        "R6",
        replace_nth_line(
            pristine,
            |l| is_row(l) && !l.trim_start().starts_with("((0.0, 0.0,"),
            |l| {
                let inner = l.trim_start().trim_start_matches("((");
                let (xyz, rest) = inner.split_once(')').expect("row");
                let scaled: Vec<String> = xyz
                    .split(',')
                    .map(|t| format!("{:?}", t.trim().parse::<f64>().expect("coord") / UNITS_PER_METER))
                    .collect();
                Some(format!("            (({}){rest}", scaled.join(", ")))
            },
        ),
    );
    v
}
