use std::path::Path;

use sceneforge::pipeline::{generate, ConfigFile, Engine, RunOptions, Sources, INDEX_META_FILE, KB_INDEX_FILE, PATH_INDEX_FILE};
use sceneforge::taxonomy::AssetPath;
use sceneforge::{Error, Exec};

const PINK_LADY: &str = "Generate a healthy Pink Lady apple orchard in summer.";

fn engine() -> Engine {
    Engine::bundled().expect("bundled engine")
}

#[test]
fn pink_lady_generates_passing_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = generate(&engine(), PINK_LADY, &RunOptions::default(), dir.path(), "scene", false).unwrap();
    assert!(out.report.passed, "{}", out.report.summary());
    for f in &out.files {
        assert!(f.exists(), "{} missing", f.display());
    }
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out.manifest).unwrap()).unwrap();
    let listed: Vec<&str> = manifest["outputs"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert_eq!(listed.len(), 5);
    for t in manifest["timings_ms"].as_object().unwrap().values() {
        assert!(t.as_f64().unwrap() >= 0.0);
    }
    let script = std::fs::read_to_string(dir.path().join("scene.py")).unwrap();
    assert!(script.contains("/Game/Fruits/Apple/PinkLady/Maturation/Summer/Healthy/PinkLady_Maturation_Summer_Healthy.fbx"));
}

#[test]
fn pink_lady_retrieves_single_canonical_path() {
    let e = engine();
    let (_, r) = e.retrieve(PINK_LADY, &RunOptions::default()).unwrap();
    assert_eq!(
        r.paths,
        vec![AssetPath::new_unchecked("/Game/Fruits/Apple/PinkLady/Maturation/Summer/Healthy/PinkLady_Maturation_Summer_Healthy.fbx")]
    );
}

#[test]
fn same_seed_same_bytes() {
    let e = engine();
    let opts = RunOptions { seed: 7, ..Default::default() };
    let prompt = "an orchard of Gala apples next to a field of Roma tomatoes";
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    generate(&e, prompt, &opts, a.path(), "s", false).unwrap();
    generate(&e, prompt, &opts, b.path(), "s", false).unwrap();
    for f in ["s.py", "s.plan.json", "s.report.json", "s.fallbacks.jsonl"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn unknown_crop_fails_with_stage_tag_and_leaves_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let err = generate(&engine(), "Generate a durian plantation in spring.", &RunOptions::default(), dir.path(), "x", false).unwrap_err();
    assert_ne!(err.exit_code(), 0);
    assert!(matches!(err.stage(), "frontend" | "retrieval"), "stage {}", err.stage());
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

fn sources_with_index(dir: &Path) -> Sources {
    Sources { index_dir: Some(dir.to_path_buf()), ..Default::default() }
}

#[test]
fn index_rebuild_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let e = Engine::load(&sources_with_index(dir.path())).unwrap();
    assert_eq!(e.path_index.len(), 672);
    let read = |d: &Path| [PATH_INDEX_FILE, KB_INDEX_FILE, INDEX_META_FILE].map(|f| std::fs::read(d.join(f)).unwrap());
    let first = read(dir.path());
    let other = tempfile::tempdir().unwrap();
    e.write_indexes(other.path()).unwrap();
    assert_eq!(first, read(other.path()));
    // cached load reuses the files unchanged
    Engine::load(&sources_with_index(dir.path())).unwrap();
    assert_eq!(first, read(dir.path()));
}

#[test]
fn sequential_and_parallel_indexes_agree() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    Engine::load(&Sources { exec: Exec::Sequential, ..Default::default() }).unwrap().write_indexes(a.path()).unwrap();
    Engine::load(&Sources::default()).unwrap().write_indexes(b.path()).unwrap();
    for f in [PATH_INDEX_FILE, KB_INDEX_FILE] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
    }
}

#[test]
fn missing_kb_file_is_format_error() {
    let src = Sources {
        config: ConfigFile { kb: Some("/nonexistent/kb.json".into()), ..Default::default() },
        ..Default::default()
    };
    let err = Engine::load(&src).err().expect("load must fail");
    assert!(matches!(err, Error::Knowledge(_)), "{err:?}");
    assert!(err.to_string().contains("kb.json"));
}

#[test]
fn stale_index_cache_is_rebuilt() {
    let dir = tempfile::tempdir().unwrap();
    Engine::load(&sources_with_index(dir.path())).unwrap();
    std::fs::write(dir.path().join(INDEX_META_FILE), "{}").unwrap();
    std::fs::write(dir.path().join(PATH_INDEX_FILE), b"garbage").unwrap();
    let e = Engine::load(&sources_with_index(dir.path())).unwrap();
    assert_eq!(e.path_index.len(), 672);
}

#[test]
fn config_file_resolves_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("cfg.json"), r#"{"kb": "kb.json"}"#).unwrap();
    let cfg = ConfigFile::load(&dir.path().join("cfg.json")).unwrap();
    assert_eq!(cfg.kb.unwrap(), dir.path().join("kb.json"));
    std::fs::write(dir.path().join("bad.json"), r#"{"bogus": 1}"#).unwrap();
    assert_eq!(ConfigFile::load(&dir.path().join("bad.json")).unwrap_err().exit_code(), 3);
}
