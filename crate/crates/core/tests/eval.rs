use std::collections::HashSet;
use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};

use proptest::prelude::*;

use sceneforge::embed_index::LocalEmbedder;
use sceneforge::eval_harness::{
    parse_cases, run_benchmark, set_metrics, topk_recall, CaseCategory, EvalError, Execution, DEFAULT_BENCHMARK_JSONL,
};
use sceneforge::knowledge::{KbMode, KnowledgeBase};
use sceneforge::pipeline::{Engine, RunOptions};
use sceneforge::taxonomy::{AssetPath, TaxonomyConfig};
use sceneforge::Exec;

const ADVERSARIAL_KB: &str = include_str!("../data/adversarial_kb.json");
const ADVERSARIAL_QUERIES: &str = include_str!("../data/adversarial_queries.txt");

fn adversarial() -> (TaxonomyConfig, KnowledgeBase, Vec<AssetPath>) {
    let tax = TaxonomyConfig::default_bundled();
    let kb = KnowledgeBase::build(KnowledgeBase::parse_entries(ADVERSARIAL_KB).unwrap(), &tax, &LocalEmbedder::default(), Exec::default()).unwrap();
    let q = ADVERSARIAL_QUERIES.lines().filter(|l| !l.is_empty()).map(AssetPath::new_unchecked).collect();
    (tax, kb, q)
}

#[test]
fn self_retrieval_gives_top1_one() {
    let tax = TaxonomyConfig::default_bundled();
    let emb = LocalEmbedder::default();
    let kb = KnowledgeBase::build(KnowledgeBase::bundled_entries(), &tax, &emb, Exec::default()).unwrap();
    let r = topk_recall(&tax.enumerate_paths(), &kb, &tax, &emb, KbMode::Hybrid, &[1, 2, 3], Exec::default());
    assert_eq!(r[&1], 1.0);
}

#[test]
fn adversarial_fixture_has_one_rank_two_case() {
    let (tax, kb, queries) = adversarial();
    assert_eq!(queries.len(), 10);
    let emb = LocalEmbedder::default();
    let ranks: Vec<Option<usize>> = queries.iter().map(|q| kb.match_rank(q, &tax, &emb, KbMode::Hybrid, 3).unwrap()).collect();
    assert_eq!(ranks.iter().filter(|r| **r == Some(2)).count(), 1, "{ranks:?}");
    assert!(ranks.iter().all(|r| matches!(r, Some(1 | 2))));
    let r = topk_recall(&queries, &kb, &tax, &emb, KbMode::Hybrid, &[1, 2, 3], Exec::default());
    assert_eq!((r[&1], r[&2], r[&3]), (0.9, 1.0, 1.0));
}

#[test]
fn empty_benchmark_is_format_error() {
    let tax = TaxonomyConfig::default_bundled();
    assert!(matches!(parse_cases("", &tax), Err(EvalError::BenchmarkFormat(_))));
    let engine = Engine::bundled().unwrap();
    assert!(matches!(run_benchmark(&[], &engine, &RunOptions::default(), None), Err(EvalError::BenchmarkFormat(_))));
}

#[test]
fn categories_partition_the_cases() {
    let engine = Engine::bundled().unwrap();
    let cases = parse_cases(DEFAULT_BENCHMARK_JSONL, &engine.taxonomy).unwrap();
    let report = run_benchmark(&cases, &engine, &RunOptions::default(), None).unwrap();
    assert_eq!(report.categories.values().map(|c| c.cases).sum::<usize>(), report.total_cases);
    assert_eq!(report.category(CaseCategory::SingleDetailed).unwrap().accuracy, 1.0);
    assert!(report.category(CaseCategory::MultiGeneric).unwrap().precision.is_none());
    assert!(report.codegen.executability.is_none());
    let top = &report.topk_recall;
    assert!(top[&1] <= top[&2] && top[&2] <= top[&3]);
}

fn fake_runner(dir: &Path, exit: i32) -> PathBuf {
    let p = dir.join(format!("runner{exit}.sh"));
    let body = format!(
        "#!/bin/sh\n\
         [ \"$2\" = --manifest ] && [ \"$4\" = --dump ] || exit 9\n\
         grep -q 'import unreal' \"$1\" || exit 8\n\
         [ \"$(wc -l < \"$3\")\" -eq 672 ] || exit 7\n\
         echo \"$@\" >> \"{}\"\n\
         echo '{{\"actors\": [], \"load_calls\": [], \"api_errors\": []}}' > \"$5\"\n\
         exit {exit}\n",
        dir.join("calls.log").display()
    );
    std::fs::write(&p, body).unwrap();
    std::fs::set_permissions(&p, std::fs::Permissions::from_mode(0o755)).unwrap();
    p
}

fn few_cases(engine: &Engine) -> Vec<sceneforge::eval_harness::BenchmarkCase> {
    parse_cases(DEFAULT_BENCHMARK_JSONL, &engine.taxonomy).unwrap().into_iter().step_by(20).collect()
}

#[test]
fn execution_shells_out_per_case() {
    let dir = tempfile::tempdir().unwrap();
    let engine = Engine::bundled().unwrap();
    let cases = few_cases(&engine);
    let exec = Execution { runner: fake_runner(dir.path(), 0), work_dir: dir.path().join("work") };
    let report = run_benchmark(&cases, &engine, &RunOptions::default(), Some(&exec)).unwrap();
    assert_eq!(report.codegen.executability, Some(1.0));
    let log = std::fs::read_to_string(dir.path().join("calls.log")).unwrap();
    let mut lines: Vec<&str> = log.lines().collect();
    lines.sort();
    assert_eq!(lines.len(), cases.len());
    let work = exec.work_dir.display();
    assert_eq!(lines[0], format!("{work}/case000.py --manifest {work}/assets.txt --dump {work}/case000.dump.json"));
    assert!(exec.work_dir.join("case000.plan.json").exists());
}

#[test]
fn failing_runner_is_recorded_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let engine = Engine::bundled().unwrap();
    let cases = few_cases(&engine);
    let exec = Execution { runner: fake_runner(dir.path(), 1), work_dir: dir.path().join("work") };
    let report = run_benchmark(&cases, &engine, &RunOptions::default(), Some(&exec)).unwrap();
    assert_eq!(report.codegen.executability, Some(0.0));
    assert_eq!(report.failures.len(), cases.len());
    assert!(report.failures.iter().all(|f| f.executed == Some(false)));

    let missing = Execution { runner: dir.path().join("no-such-runner"), work_dir: dir.path().join("w2") };
    let report = run_benchmark(&cases, &engine, &RunOptions::default(), Some(&missing)).unwrap();
    assert_eq!(report.codegen.executability, Some(0.0));
    assert!(report.failures.iter().all(|f| f.error.as_deref().is_some_and(|e| e.contains("no-such-runner"))));
}

fn naive(p: &[u8], e: &[u8]) -> (f64, f64, f64) {
    let hit = p.iter().filter(|x| e.contains(x)).count() as f64;
    let precision = if p.is_empty() { 1.0 } else { hit / p.len() as f64 };
    let recall = hit / e.len() as f64;
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    (precision, recall, f1)
}

proptest! {
    #[test]
    fn set_metrics_matches_counting(p in prop::collection::hash_set(0u8..16, 0..10), e in prop::collection::hash_set(0u8..16, 1..10)) {
        let m = set_metrics(&p, &e);
        let pv: Vec<u8> = p.iter().copied().collect();
        let ev: Vec<u8> = e.iter().copied().collect();
        let (np, nr, nf) = naive(&pv, &ev);
        prop_assert!((m.precision - np).abs() <= 1e-9);
        prop_assert!((m.recall - nr).abs() <= 1e-9);
        prop_assert!((m.f1 - nf).abs() <= 1e-9);
        let same: HashSet<u8> = e.clone();
        prop_assert_eq!(set_metrics(&same, &e).f1, 1.0);
    }
}
