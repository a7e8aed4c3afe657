//! Static checks on an emitted script against its plan sidecar.
//!
//! Inspection is lexical: string literals are lifted out line by line, the
//! remaining code is scanned for API call shapes, and the `FIELDS` table is
//! read back with line patterns. The plan is ground truth.
//!
//! | rule | checks |
//! |------|--------|
//! | R1 | every asset string parses as a taxonomy path |
//! | R2 | script paths and plan paths agree, field by field |
//! | R3 | engine API use: import, loaded-asset spawns, attachment rules, no singleton construction |
//! | R4 | script scale = plan scale = entry height / reference height |
//! | R5 | spawn rows match plan placement counts |
//! | R6 | spacing and positions recovered from the table match the plan and entry |
//! | P0 | plan invariants |
//! | S1 | script layout (warning) |

use std::collections::{BTreeSet, HashSet};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::emitter::UNITS_PER_METER;
use crate::knowledge::SceneRecipe;
use crate::planner::{plan_violations, ScenePlan};
use crate::taxonomy::{AssetPath, TaxonomyConfig};

pub const SCALE_TOLERANCE: f64 = 1e-6;
pub const SPACING_TOLERANCE_M: f64 = 1e-6;
pub const POSITION_TOLERANCE_M: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub rule_id: String,
    pub severity: Severity,
    pub message: String,
    pub location: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
    pub passed: bool,
}

impl ValidationReport {
    fn from_findings(findings: Vec<Finding>) -> Self {
        let passed = findings.iter().all(|f| f.severity != Severity::Error);
        Self { findings, passed }
    }

    pub fn errors(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| f.severity == Severity::Error)
    }

    pub fn has_error(&self, rule: &str) -> bool {
        self.errors().any(|f| f.rule_id == rule)
    }

    pub fn summary(&self) -> String {
        let errors = self.errors().count();
        let warnings = self.findings.len() - errors;
        let status = if self.passed { "PASSED" } else { "FAILED" };
        let mut s = format!("validation {status}: {errors} error(s), {warnings} warning(s)");
        for f in &self.findings {
            let sev = match f.severity {
                Severity::Error => "error",
                Severity::Warning => "warning",
            };
            s.push_str(&format!("\n  [{}] {sev} at {}: {}", f.rule_id, f.location, f.message));
        }
        s
    }
}

struct Sink(Vec<Finding>);

impl Sink {
    fn push(&mut self, rule: &str, severity: Severity, location: impl Into<String>, message: impl Into<String>) {
        self.0.push(Finding { rule_id: rule.into(), severity, message: message.into(), location: location.into() });
    }

    fn error(&mut self, rule: &str, location: impl Into<String>, message: impl Into<String>) {
        self.push(rule, Severity::Error, location, message);
    }
}

struct Literal {
    line: usize,
    value: String,
    /// Key of a `"key": <literal>` pair the literal is the value of.
    key: Option<String>,
}

/// Source with literals lifted out. `code` keeps line structure and replaces
/// each literal with `__S<n>__`; comments are dropped.
struct Lexed {
    code: String,
    literals: Vec<Literal>,
}

fn lex(source: &str) -> Lexed {
    let mut code = String::with_capacity(source.len());
    let mut literals = Vec::new();
    for (ln, line) in source.lines().enumerate() {
        let mut chars = line.char_indices().peekable();
        let mut out = String::new();
        while let Some((_, c)) = chars.next() {
            match c {
                '#' => break,
                '"' | '\'' => {
                    let mut value = String::new();
                    while let Some((_, d)) = chars.next() {
                        match d {
                            '\\' => {
                                if let Some((_, e)) = chars.next() {
                                    value.push(match e {
                                        'n' => '\n',
                                        't' => '\t',
                                        other => other,
                                    });
                                }
                            }
                            d if d == c => break,
                            d => value.push(d),
                        }
                    }
                    let key = KEY_BEFORE.captures(&out).map(|cap| {
                        let idx: usize = cap[1].parse().expect("digits");
                        literals.get::<usize>(idx).map(|l: &Literal| l.value.clone()).unwrap_or_default()
                    });
                    out.push_str(&format!("__S{}__", literals.len()));
                    literals.push(Literal { line: ln + 1, value, key });
                }
                c => out.push(c),
            }
        }
        code.push_str(&out);
        code.push('\n');
    }
    Lexed { code, literals }
}

static KEY_BEFORE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"__S(\d+)__\s*:\s*$").unwrap());
static LOAD_ASSIGN: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?m)^\s*([A-Za-z_]\w*)\s*=\s*[^=\n]*\bload_asset\s*\(").unwrap());
static STORE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?m)^\s*([A-Za-z_]\w*)\s*\[[^\]\n]*\]\s*=\s*([A-Za-z_]\w*)\s*$").unwrap());
static INDEX_LOAD: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?m)^\s*([A-Za-z_]\w*)\s*=\s*([A-Za-z_]\w*)\s*\[").unwrap());
static ALIAS: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?m)^\s*([A-Za-z_]\w*)\s*=\s*([A-Za-z_]\w*)\s*$").unwrap());
static SPAWN_CALL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\bspawn_actor_from_object\s*\(").unwrap());
static ATTACH_CALL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\b(attach_to_actor|attach_to_component|k2_attach_to_actor|k2_attach_to_component)\s*\(").unwrap());
static SINGLETON_CTOR: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\bunreal\s*\.\s*(Editor\w*|\w+Library|\w+Subsystem)\s*\(").unwrap());
static IMPORT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?m)^\s*(import\s+unreal\b|from\s+unreal\s+import\b)").unwrap());
static IDENT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^[A-Za-z_]\w*$").unwrap());

const NUM: &str = r"(-?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?)";
static ROW: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(
        r"^\s*\(\(\s*{NUM}\s*,\s*{NUM}\s*,\s*{NUM}\s*\)\s*,\s*{NUM}\s*,\s*\(\s*{NUM}\s*,\s*{NUM}\s*,\s*{NUM}\s*\)\s*\)\s*,?\s*$"
    ))
    .unwrap()
});
static HEADER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(&format!(r#"^\s*"(rows|cols|row_spacing|plant_spacing)"\s*:\s*{NUM}\s*,?\s*$"#)).unwrap());
static ASSET_KEY: LazyLock<Regex> = LazyLock::new(|| Regex::new(r#"^\s*"asset"\s*:"#).unwrap());

fn line_of(code: &str, byte: usize) -> usize {
    code[..byte].matches('\n').count() + 1
}

/// Text between the parenthesis that ends at `open_end` and its match.
fn call_args(code: &str, open_end: usize) -> &str {
    let mut depth = 1usize;
    for (i, c) in code[open_end..].char_indices() {
        match c {
            '(' | '[' | '{' => depth += 1,
            ')' | ']' | '}' => {
                depth -= 1;
                if depth == 0 {
                    return &code[open_end..open_end + i];
                }
            }
            _ => {}
        }
    }
    &code[open_end..]
}

fn first_arg(args: &str) -> &str {
    let mut depth = 0i32;
    for (i, c) in args.char_indices() {
        match c {
            '(' | '[' | '{' => depth += 1,
            ')' | ']' | '}' => depth -= 1,
            ',' if depth == 0 => return args[..i].trim(),
            _ => {}
        }
    }
    args.trim()
}

fn looks_like_asset(lit: &Literal) -> bool {
    if lit.key.as_deref() == Some("asset") {
        return true;
    }
    let v = lit.value.as_str();
    v.ends_with(".fbx") || v.contains("/Game/") || v.starts_with("Game/") || v.matches('/').count() >= 3
}

#[derive(Debug, Default)]
struct TableField {
    line: usize,
    asset: Option<String>,
    rows: Option<f64>,
    cols: Option<f64>,
    row_spacing: Option<f64>,
    plant_spacing: Option<f64>,
    placements: Vec<([f64; 3], f64, [f64; 3])>,
}

fn parse_table(source: &str, lexed: &Lexed) -> Vec<TableField> {
    let mut fields: Vec<TableField> = Vec::new();
    let by_line: Vec<Option<&Literal>> = {
        let mut v = vec![None; source.lines().count() + 1];
        for l in &lexed.literals {
            if l.key.as_deref() == Some("asset") && v[l.line].is_none() {
                v[l.line] = Some(l);
            }
        }
        v
    };
    let f = |s: &str| s.parse::<f64>().ok();
    for (ln, line) in source.lines().enumerate() {
        let ln = ln + 1;
        if ASSET_KEY.is_match(line) {
            fields.push(TableField { line: ln, asset: by_line[ln].map(|l| l.value.clone()), ..Default::default() });
            continue;
        }
        let Some(cur) = fields.last_mut() else { continue };
        if let Some(c) = HEADER.captures(line) {
            let v = f(&c[2]);
            match &c[1] {
                "rows" => cur.rows = v,
                "cols" => cur.cols = v,
                "row_spacing" => cur.row_spacing = v,
                _ => cur.plant_spacing = v,
            }
        } else if let Some(c) = ROW.captures(line) {
            let n: Vec<f64> = (1..=7).map(|i| f(&c[i]).unwrap_or(f64::NAN)).collect();
            cur.placements.push(([n[0], n[1], n[2]], n[3], [n[4], n[5], n[6]]));
        }
    }
    fields
}

fn check_r1_r2(lexed: &Lexed, plan: &ScenePlan, taxonomy: &TaxonomyConfig, out: &mut Sink) {
    let mut script_paths = BTreeSet::new();
    for lit in lexed.literals.iter().filter(|l| looks_like_asset(l)) {
        let loc = format!("line {}", lit.line);
        if let Err(e) = taxonomy.parse_path(&AssetPath::new_unchecked(lit.value.clone())) {
            out.error("R1", loc, format!("malformed asset path {:?}: {e}", lit.value));
        }
        script_paths.insert(lit.value.clone());
    }
    let plan_paths: BTreeSet<String> = plan.fields.iter().map(|f| f.asset.as_str().to_string()).collect();
    for p in script_paths.difference(&plan_paths) {
        out.error("R2", "script", format!("path {p:?} is not in the plan"));
    }
    for p in plan_paths.difference(&script_paths) {
        out.error("R2", "script", format!("plan path {p:?} never appears in the script"));
    }
}

fn tainted_names(code: &str) -> HashSet<String> {
    let mut t: HashSet<String> = LOAD_ASSIGN.captures_iter(code).map(|c| c[1].to_string()).collect();
    loop {
        let before = t.len();
        for c in STORE.captures_iter(code) {
            if t.contains(&c[2]) {
                t.insert(c[1].to_string());
            }
        }
        for c in INDEX_LOAD.captures_iter(code).chain(ALIAS.captures_iter(code)) {
            if t.contains(&c[2]) {
                t.insert(c[1].to_string());
            }
        }
        if t.len() == before {
            return t;
        }
    }
}

fn check_r3(lexed: &Lexed, plan: &ScenePlan, out: &mut Sink) {
    let code = &lexed.code;
    if !IMPORT.is_match(code) {
        out.error("R3", "script", "engine scripting module `unreal` is never imported");
    }
    let loaded = tainted_names(code);
    let mut spawns = 0;
    for m in SPAWN_CALL.find_iter(code) {
        spawns += 1;
        let arg = first_arg(call_args(code, m.end()));
        let ok = arg.contains("load_asset(") || (IDENT.is_match(arg) && loaded.contains(arg));
        if !ok {
            out.error(
                "R3",
                format!("line {}", line_of(code, m.start())),
                format!("spawn_actor_from_object must receive a loaded asset, got `{arg}`"),
            );
        }
    }
    if spawns == 0 && plan.placement_count() > 0 {
        out.error("R5", "script", "no spawn_actor_from_object call");
    }
    for m in ATTACH_CALL.find_iter(code) {
        let args = call_args(code, m.end());
        if !args.contains("AttachmentRule.") {
            out.error(
                "R3",
                format!("line {}", line_of(code, m.start())),
                "attachment call without an unreal.AttachmentRule constant",
            );
        }
    }
    for c in SINGLETON_CTOR.captures_iter(code) {
        let m = c.get(0).expect("match");
        out.error(
            "R3",
            format!("line {}", line_of(code, m.start())),
            format!("editor singleton `unreal.{}` must not be constructed", &c[1]),
        );
    }
}

fn check_table(source: &str, lexed: &Lexed, plan: &ScenePlan, recipe: Option<&SceneRecipe>, out: &mut Sink) {
    let table = parse_table(source, lexed);
    let total: usize = table.iter().map(|f| f.placements.len()).sum();
    if total != plan.placement_count() {
        out.error("R5", "script", format!("{total} spawn rows, plan has {} placements", plan.placement_count()));
    }
    if table.len() != plan.fields.len() {
        out.error("R5", "script", format!("{} field tables, plan has {} fields", table.len(), plan.fields.len()));
    }
    let close = |a: f64, b: f64, tol: f64| (a - b).abs() <= tol;

    for (n, (tf, pf)) in table.iter().zip(&plan.fields).enumerate() {
        let loc = format!("field {n} (line {})", tf.line);
        if tf.asset.as_deref() != Some(pf.asset.as_str()) {
            out.error("R2", loc.clone(), format!("table asset {:?} does not match plan asset {}", tf.asset, pf.asset));
        }
        let expected = pf.rows as usize * pf.cols as usize;
        if tf.placements.len() != expected {
            out.error("R5", loc.clone(), format!("{} spawn rows, field is {}x{}", tf.placements.len(), pf.rows, pf.cols));
        }
        for (key, v, want) in [("rows", tf.rows, pf.rows), ("cols", tf.cols, pf.cols)] {
            if v != Some(want as f64) {
                out.error("R5", loc.clone(), format!("{key} = {v:?}, plan has {want}"));
            }
        }

        // entry spacing: recipe when available, else what the planner recorded
        let entry = recipe.and_then(|r| r.entry(&pf.entry_id));
        let (row_sp, plant_sp) = entry.map_or((pf.row_spacing_m, pf.plant_spacing_m), |e| (e.row_spacing_m, e.plant_spacing_m));
        for (key, v, want) in [("row_spacing", tf.row_spacing, row_sp), ("plant_spacing", tf.plant_spacing, plant_sp)] {
            match v {
                Some(v) if close(v / UNITS_PER_METER, want, SPACING_TOLERANCE_M) => {}
                _ => out.error("R6", loc.clone(), format!("{key} {v:?} does not match entry spacing {want} m")),
            }
        }
        if !close(pf.row_spacing_m, row_sp, SPACING_TOLERANCE_M) || !close(pf.plant_spacing_m, plant_sp, SPACING_TOLERANCE_M) {
            out.error("R6", loc.clone(), "plan spacing differs from entry spacing");
        }

        let cols = pf.cols.max(1) as usize;
        let mut bad_dx = 0;
        let mut bad_dy = 0;
        let mut bad_pos = 0;
        let mut bad_scale = 0;
        let mut bad_yaw = 0;
        for (k, (pos, yaw, scale)) in tf.placements.iter().enumerate() {
            if k % cols > 0 && !close((pos[0] - tf.placements[k - 1].0[0]) / UNITS_PER_METER, plant_sp, SPACING_TOLERANCE_M) {
                bad_dx += 1;
            }
            if k >= cols && !close((pos[1] - tf.placements[k - cols].0[1]) / UNITS_PER_METER, row_sp, SPACING_TOLERANCE_M) {
                bad_dy += 1;
            }
            if !(close(scale[0], scale[1], SCALE_TOLERANCE) && close(scale[1], scale[2], SCALE_TOLERANCE))
                || !close(scale[0], pf.scale, SCALE_TOLERANCE)
            {
                bad_scale += 1;
            }
            if let Some(pp) = pf.placements.get(k) {
                if (0..3).any(|a| !close(pos[a] / UNITS_PER_METER, pp.position[a], POSITION_TOLERANCE_M)) {
                    bad_pos += 1;
                }
                if !close(*yaw, pp.yaw_deg, 1e-6) {
                    bad_yaw += 1;
                }
            }
        }
        if bad_dx + bad_dy > 0 {
            out.error("R6", loc.clone(), format!("recovered spacing off in {bad_dx} column and {bad_dy} row steps"));
        }
        if bad_pos > 0 {
            out.error("R6", loc.clone(), format!("{bad_pos} placement(s) not at plan position x100"));
        }
        if bad_scale > 0 {
            out.error("R4", loc.clone(), format!("incorrect scale in {bad_scale} placement(s); plan scale {}", pf.scale));
        }
        if bad_yaw > 0 {
            out.push("R6", Severity::Warning, loc.clone(), format!("{bad_yaw} yaw value(s) differ from plan"));
        }
    }
}

fn check_plan_scale(plan: &ScenePlan, recipe: Option<&SceneRecipe>, out: &mut Sink) {
    for (n, pf) in plan.fields.iter().enumerate() {
        let loc = format!("plan field {n}");
        let entry = recipe.and_then(|r| r.entry(&pf.entry_id));
        if recipe.is_some() && entry.is_none() {
            out.error("R4", loc.clone(), format!("entry `{}` not in recipe", pf.entry_id));
        }
        let height = entry.map_or(pf.plant_height_m, |e| e.plant_height_m);
        let derived = height / pf.reference_height_m;
        if !(derived.is_finite() && (pf.scale - derived).abs() <= SCALE_TOLERANCE) {
            out.error("R4", loc.clone(), format!("incorrect scale: plan {} but entry implies {derived}", pf.scale));
        }
        if pf.placements.iter().any(|p| (p.scale - pf.scale).abs() > SCALE_TOLERANCE) {
            out.error("R4", loc, "placement scale differs from field scale");
        }
    }
}

fn check_layout(lexed: &Lexed, out: &mut Sink) {
    for name in ["setup_scene", "spawn_field", "main"] {
        let re = Regex::new(&format!(r"(?m)^def\s+{name}\s*\(")).expect("static pattern");
        if !re.is_match(&lexed.code) {
            out.push("S1", Severity::Warning, "script", format!("missing function `{name}`"));
        }
    }
}

/// Never fails; every problem becomes a finding.
pub fn validate(script: &str, plan: &ScenePlan, recipe: Option<&SceneRecipe>, taxonomy: &TaxonomyConfig) -> ValidationReport {
    let mut out = Sink(Vec::new());
    for v in plan_violations(plan) {
        out.error("P0", "plan", v);
    }
    let lexed = lex(script);
    check_r1_r2(&lexed, plan, taxonomy, &mut out);
    check_r3(&lexed, plan, &mut out);
    check_plan_scale(plan, recipe, &mut out);
    check_table(script, &lexed, plan, recipe, &mut out);
    check_layout(&lexed, &mut out);
    ValidationReport::from_findings(out.0)
}
