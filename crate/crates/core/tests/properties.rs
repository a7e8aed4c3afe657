use std::sync::LazyLock;

use proptest::prelude::*;

use sceneforge::emitter::emit_script;
use sceneforge::eval_harness::{parse_cases, DEFAULT_BENCHMARK_JSONL};
use sceneforge::frontend::{apply_defaults, FrontendMode, SubQuery};
use sceneforge::knowledge::{FieldRequest, KbMode, KnowledgeBase, KnowledgeEntry, NullSink, RecipeField, Resolution, RetrieveContext, SceneRecipe, strict_match, DEFAULT_KB_K};
use sceneforge::pipeline::{generate, Engine, RunOptions, Sources};
use sceneforge::planner::{plan_scene, PlannerConfig};
use sceneforge::taxonomy::AssetMetadata;
use sceneforge::validator::validate;
use sceneforge::Exec;

static ENGINE: LazyLock<Engine> = LazyLock::new(|| Engine::bundled().expect("bundled engine"));
static ENTRIES: LazyLock<Vec<KnowledgeEntry>> = LazyLock::new(KnowledgeBase::bundled_entries);

static META: LazyLock<Vec<AssetMetadata>> = LazyLock::new(|| ENGINE.taxonomy.enumerate_metadata());

fn all_meta() -> &'static [AssetMetadata] {
    &META
}

/// A tuple from the default grid with each field independently dropped.
fn partial_subquery() -> impl Strategy<Value = SubQuery> {
    (0..672usize, any::<[bool; 5]>()).prop_map(|(i, keep)| {
        let m = &all_meta()[i];
        SubQuery {
            category: None,
            crop: Some(m.crop.clone()),
            variety: keep[0].then(|| m.variety.clone()),
            lifecycle: keep[1].then_some(m.lifecycle),
            season: keep[2].then_some(m.season),
            health: keep[3].then_some(m.health),
            quantity: keep[4].then_some(1 + (i % 3) as u32),
            residual_text: String::new(),
        }
    })
}

fn recipe_strategy() -> impl Strategy<Value = (SceneRecipe, u64)> {
    let line = (0..672usize, 1u32..4, 1u32..9, 1u32..9);
    (prop::collection::vec(line, 1..5), any::<u64>()).prop_map(|(lines, seed)| {
        let tax = &ENGINE.taxonomy;
        let fields = lines
            .into_iter()
            .map(|(i, quantity, rows, cols)| {
                let e = ENTRIES[i].clone();
                RecipeField {
                    path: tax.format_path(&e.meta).unwrap(),
                    entry: e,
                    quantity,
                    rows: Some(rows),
                    cols: Some(cols),
                    resolution: Resolution::Semantic { rank: 1 },
                    candidates_examined: 1,
                }
            })
            .collect();
        (SceneRecipe { fields, fallbacks: vec![] }, seed)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn defaults_are_idempotent_and_closed(q in partial_subquery()) {
        let tax = &ENGINE.taxonomy;
        let once = apply_defaults(&q, tax);
        prop_assert_eq!(&apply_defaults(&once, tax), &once);
        let meta = AssetMetadata::new(
            once.category.unwrap(),
            once.crop.clone().unwrap(),
            once.variety.clone().unwrap(),
            once.lifecycle.unwrap(),
            once.season.unwrap(),
            once.health.unwrap(),
        );
        prop_assert!(tax.format_path(&meta).is_ok());
    }

    #[test]
    fn retrieval_is_sound_and_field_faithful(q in partial_subquery()) {
        let tax = &ENGINE.taxonomy;
        let r = ENGINE.retriever().retrieve_paths(std::slice::from_ref(&q), 5).unwrap();
        prop_assert_eq!(r.paths.len(), 1);
        let meta = tax.parse_path(&r.paths[0]).unwrap();
        prop_assert_eq!(Some(&meta.crop), q.crop.as_ref());
        if let Some(v) = &q.variety { prop_assert_eq!(&meta.variety, v); }
        if let Some(l) = q.lifecycle { prop_assert_eq!(meta.lifecycle, l); }
        if let Some(s) = q.season { prop_assert_eq!(meta.season, s); }
        if let Some(h) = q.health { prop_assert_eq!(meta.health, h); }
        let again = ENGINE.retriever().retrieve_paths(std::slice::from_ref(&q), 5).unwrap();
        prop_assert_eq!(again.paths, r.paths);
    }

    #[test]
    fn sub_kb_never_pairs_mismatched_entries(keep in prop::collection::vec(any::<bool>(), 672), queries in prop::collection::vec(0..672usize, 1..12)) {
        let tax = &ENGINE.taxonomy;
        // keep at least one entry per crop so every request resolves
        let mut seen = std::collections::HashSet::new();
        let entries: Vec<KnowledgeEntry> = ENTRIES
            .iter()
            .zip(&keep)
            .filter(|(e, k)| **k || seen.insert(e.meta.crop.clone()))
            .map(|(e, _)| e.clone())
            .collect();
        let n = entries.len();
        let kb = KnowledgeBase::build(entries, tax, ENGINE.embedder.as_ref(), Exec::Sequential).unwrap();
        let requests: Vec<FieldRequest> = queries.iter().map(|&i| FieldRequest::from(tax.format_path(&all_meta()[i]).unwrap())).collect();
        let ctx = RetrieveContext { taxonomy: tax, embedder: ENGINE.embedder.as_ref(), mode: KbMode::Hybrid, k: DEFAULT_KB_K, sink: &NullSink, exec: Exec::Sequential };
        let recipe = kb.retrieve_entries(&requests, &ctx).unwrap();
        prop_assert_eq!(recipe.mismatched_pairs(tax), 0);
        for f in &recipe.fields {
            prop_assert!(f.candidates_examined <= DEFAULT_KB_K.min(n));
            if let Resolution::Semantic { .. } = f.resolution {
                prop_assert!(strict_match(&f.entry, &tax.parse_path(&f.path).unwrap()));
            }
        }
        let r1 = sceneforge::eval_harness::topk_recall(&requests.iter().map(|r| r.path.clone()).collect::<Vec<_>>(), &kb, tax, ENGINE.embedder.as_ref(), KbMode::Hybrid, &[1, 2, 3], Exec::Sequential);
        prop_assert!(r1[&1] <= r1[&2] && r1[&2] <= r1[&3]);
    }

    #[test]
    fn planner_geometry_holds((recipe, seed) in recipe_strategy()) {
        let cfg = PlannerConfig::default_bundled();
        let plan = plan_scene(&recipe, seed, &cfg, Exec::default()).unwrap();
        for f in &plan.fields {
            let cols = f.cols as usize;
            for (k, p) in f.placements.iter().enumerate() {
                if k % cols > 0 {
                    prop_assert!((p.position[0] - f.placements[k - 1].position[0] - f.plant_spacing_m).abs() <= 1e-9);
                }
                if k >= cols {
                    prop_assert!((p.position[1] - f.placements[k - cols].position[1] - f.row_spacing_m).abs() <= 1e-9);
                }
            }
        }
        for (i, a) in plan.fields.iter().enumerate() {
            for b in &plan.fields[i + 1..] {
                prop_assert!(!a.bbox.intersects(&b.bbox));
            }
        }
        let other = plan_scene(&recipe, seed.wrapping_add(1), &cfg, Exec::Sequential).unwrap();
        for (a, b) in plan.fields.iter().zip(&other.fields) {
            prop_assert_eq!(a.bbox, b.bbox);
            prop_assert_eq!(a.placements.len(), b.placements.len());
            for (p, q) in a.placements.iter().zip(&b.placements) {
                prop_assert_eq!(p.position, q.position);
                prop_assert_eq!(p.scale, q.scale);
            }
        }
    }

    #[test]
    fn emitter_closures((recipe, seed) in recipe_strategy()) {
        let tax = &ENGINE.taxonomy;
        let plan = plan_scene(&recipe, seed, &PlannerConfig::default_bundled(), Exec::default()).unwrap();
        let src = emit_script(&plan, "p.plan.json").unwrap().source;
        let rows = src.lines().filter(|l| l.trim_start().starts_with("((")).count();
        let expected: u32 = plan.fields.iter().map(|f| f.rows * f.cols).sum();
        prop_assert_eq!(rows, expected as usize);
        let script_paths: std::collections::BTreeSet<&str> = tax
            .enumerate_paths()
            .iter()
            .filter(|p| src.contains(&format!("\"{}\"", p.as_str())))
            .map(|p| plan.fields.iter().find(|f| f.asset == *p).map(|f| f.asset.as_str()).unwrap_or("foreign"))
            .collect();
        let plan_paths: std::collections::BTreeSet<&str> = plan.fields.iter().map(|f| f.asset.as_str()).collect();
        prop_assert_eq!(script_paths, plan_paths);
        let report = validate(&src, &plan, Some(&recipe), tax);
        prop_assert!(report.findings.is_empty(), "{}", report.summary());
    }
}

#[test]
fn rules_and_mock_provider_agree_on_benchmark() {
    let cases = parse_cases(DEFAULT_BENCHMARK_JSONL, &ENGINE.taxonomy).unwrap();
    let fe = ENGINE.frontend();
    for c in &cases {
        let rules = fe.decompose(&c.prompt, FrontendMode::Rules).unwrap();
        let provider = fe.decompose(&c.prompt, FrontendMode::Provider).unwrap();
        assert_eq!(provider.mode, FrontendMode::Provider, "{}: {:?}", c.prompt, provider.warnings);
        assert_eq!(rules.subqueries, provider.subqueries, "{}", c.prompt);
    }
}

#[test]
fn replay_reproduces_recorded_run() {
    let sessions = tempfile::tempdir().unwrap();
    let opts = RunOptions { frontend_mode: FrontendMode::Provider, seed: 5, ..Default::default() };
    let prompt = "Generate a healthy Pink Lady apple orchard in summer.";
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let recording = Engine::load(&Sources { record: Some(sessions.path().to_path_buf()), ..Default::default() }).unwrap();
    generate(&recording, prompt, &opts, a.path(), "s", false).unwrap();
    assert!(std::fs::read_dir(sessions.path()).unwrap().count() > 0);
    let replay = Engine::load(&Sources { replay: Some(sessions.path().to_path_buf()), ..Default::default() }).unwrap();
    generate(&replay, prompt, &opts, b.path(), "s", false).unwrap();
    for f in ["s.py", "s.plan.json", "s.report.json"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}
