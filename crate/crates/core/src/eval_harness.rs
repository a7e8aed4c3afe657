//! Benchmark runner and metric suites.
//!
//! Accuracy is exact set equality between predicted and expected paths per
//! case. Precision, recall and F1 are computed per prompt and averaged over
//! the category. Multi-field cases report accuracy only, since the pipeline
//! returns the minimal path set per field.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed_index::Embedder;
use crate::knowledge::{KbMode, KnowledgeBase};
use crate::par;
use crate::pipeline::{Engine, RunOptions};
use crate::taxonomy::{AssetPath, TaxonomyConfig};

pub const DEFAULT_BENCHMARK_JSONL: &str = include_str!("../data/benchmark.jsonl");
pub const DEFAULT_RUNNER: &str = "mock-runner";
pub const AGGREGATION_NOTE: &str = "accuracy: exact predicted/expected path-set equality per case; \
precision/recall/f1: computed per prompt then averaged within the category; \
multi_generic: accuracy only";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("benchmark format error: {0}")]
    BenchmarkFormat(String),
    #[error("runner `{runner}` could not be started: {message}")]
    Runner { runner: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseCategory {
    SingleDetailed,
    SingleGeneric,
    MultiGeneric,
}

impl CaseCategory {
    pub const ALL: [CaseCategory; 3] = [CaseCategory::SingleDetailed, CaseCategory::SingleGeneric, CaseCategory::MultiGeneric];

    pub fn as_str(self) -> &'static str {
        match self {
            CaseCategory::SingleDetailed => "single_detailed",
            CaseCategory::SingleGeneric => "single_generic",
            CaseCategory::MultiGeneric => "multi_generic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkCase {
    pub prompt: String,
    pub category: CaseCategory,
    pub expected_paths: Vec<AssetPath>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_entry_ids: Option<Vec<String>>,
}

pub fn parse_cases(text: &str, taxonomy: &TaxonomyConfig) -> Result<Vec<BenchmarkCase>, EvalError> {
    let mut cases = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let c: BenchmarkCase =
            serde_json::from_str(line).map_err(|e| EvalError::BenchmarkFormat(format!("line {}: {e}", i + 1)))?;
        if c.expected_paths.is_empty() {
            return Err(EvalError::BenchmarkFormat(format!("line {}: no expected paths", i + 1)));
        }
        for p in &c.expected_paths {
            taxonomy
                .parse_path(p)
                .map_err(|e| EvalError::BenchmarkFormat(format!("line {}: {e}", i + 1)))?;
        }
        cases.push(c);
    }
    if cases.is_empty() {
        return Err(EvalError::BenchmarkFormat("no cases".into()));
    }
    Ok(cases)
}

pub fn load_cases(path: &Path, taxonomy: &TaxonomyConfig) -> Result<Vec<BenchmarkCase>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|e| EvalError::BenchmarkFormat(format!("{}: {e}", path.display())))?;
    parse_cases(&text, taxonomy)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SetMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision is 1 for an empty prediction; F1 is 0 when both terms are 0.
/// Panics on an empty expected set.
pub fn set_metrics<T: Eq + std::hash::Hash>(predicted: &HashSet<T>, expected: &HashSet<T>) -> SetMetrics {
    assert!(!expected.is_empty(), "expected set must be non-empty");
    let hit = predicted.intersection(expected).count() as f64;
    let precision = if predicted.is_empty() { 1.0 } else { hit / predicted.len() as f64 };
    let recall = hit / expected.len() as f64;
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    SetMetrics { precision, recall, f1 }
}

pub fn accuracy(correct: &[bool]) -> f64 {
    if correct.is_empty() {
        return 0.0;
    }
    correct.iter().filter(|&&c| c).count() as f64 / correct.len() as f64
}

/// For each k, the share of queries whose strict match sits in the first k
/// pre-filter candidates. One ranking of depth max(ks) per query serves every k.
pub fn topk_recall(
    queries: &[AssetPath],
    kb: &KnowledgeBase,
    taxonomy: &TaxonomyConfig,
    embedder: &dyn Embedder,
    mode: KbMode,
    ks: &[usize],
    exec: par::Exec,
) -> BTreeMap<usize, f64> {
    let depth = ks.iter().copied().max().unwrap_or(1);
    let ranks = par::map(exec, queries, |q| kb.match_rank(q, taxonomy, embedder, mode, depth).ok().flatten());
    ks.iter()
        .map(|&k| {
            let hits = ranks.iter().filter(|r| r.is_some_and(|r| r <= k)).count();
            let rate = if queries.is_empty() { 0.0 } else { hits as f64 / queries.len() as f64 };
            (k, rate)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryMetrics {
    pub cases: usize,
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodegenMetrics {
    /// Share of scripts the external runner executed cleanly; absent without execution.
    pub executability: Option<f64>,
    /// No R1/R2 findings.
    pub correct_paths: f64,
    /// No R4/R6 findings.
    pub domain_match: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub index: usize,
    pub category: CaseCategory,
    pub correct: bool,
    pub predicted: Vec<AssetPath>,
    pub expected: Vec<AssetPath>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub executed: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub aggregation: String,
    pub total_cases: usize,
    pub categories: BTreeMap<CaseCategory, CategoryMetrics>,
    pub topk_recall: BTreeMap<usize, f64>,
    pub codegen: CodegenMetrics,
    pub failures: Vec<CaseResult>,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("serializable");
        s.push('\n');
        s
    }

    pub fn category(&self, c: CaseCategory) -> Option<&CategoryMetrics> {
        self.categories.get(&c)
    }
}

/// Execution of emitted scripts by an external runner:
/// `<runner> <script.py> --manifest <paths.txt> --dump <out.json>`.
#[derive(Debug, Clone)]
pub struct Execution {
    pub runner: PathBuf,
    pub work_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecOutcome {
    pub success: bool,
    pub dump: Option<PathBuf>,
    pub stderr: String,
}

/// Writes the asset manifest (one path per line) used by the runner.
pub fn write_asset_manifest(path: &Path, taxonomy: &TaxonomyConfig) -> std::io::Result<()> {
    let body: String = taxonomy.enumerate_paths().iter().map(|p| format!("{p}\n")).collect();
    crate::io::write_atomic(path, body.as_bytes())
}

pub fn run_script(runner: &Path, script: &Path, manifest: &Path, dump: &Path) -> Result<ExecOutcome, EvalError> {
    let out = Command::new(runner)
        .arg(script)
        .arg("--manifest")
        .arg(manifest)
        .arg("--dump")
        .arg(dump)
        .output()
        .map_err(|e| EvalError::Runner { runner: runner.display().to_string(), message: e.to_string() })?;
    Ok(ExecOutcome {
        success: out.status.success(),
        dump: dump.exists().then(|| dump.to_path_buf()),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    })
}

struct CaseRun {
    result: CaseResult,
    metrics: SetMetrics,
    correct_paths: bool,
    domain_match: bool,
}

fn run_case(engine: &Engine, opts: &RunOptions, index: usize, case: &BenchmarkCase, exec: Option<&Execution>, manifest: Option<&Path>) -> CaseRun {
    let expected: HashSet<AssetPath> = case.expected_paths.iter().cloned().collect();
    let plan_ref = format!("case{index:03}.plan.json");
    let mut result = CaseResult {
        index,
        category: case.category,
        correct: false,
        predicted: vec![],
        expected: case.expected_paths.clone(),
        error: None,
        executed: None,
    };
    let g = match engine.run(&case.prompt, opts, &plan_ref) {
        Ok(g) => g,
        Err(e) => {
            result.error = Some(format!("[{}] {e}", e.stage()));
            let metrics = set_metrics(&HashSet::new(), &expected);
            let metrics = SetMetrics { precision: 0.0, f1: 0.0, ..metrics };
            return CaseRun { result, metrics, correct_paths: false, domain_match: false };
        }
    };
    let predicted: HashSet<AssetPath> = g.retrieval.paths.iter().cloned().collect();
    result.predicted = g.retrieval.paths.clone();
    result.correct = predicted == expected;
    let metrics = set_metrics(&predicted, &expected);
    let correct_paths = !(g.report.has_error("R1") || g.report.has_error("R2"));
    let domain_match = !(g.report.has_error("R4") || g.report.has_error("R6"));

    if let (Some(x), Some(m)) = (exec, manifest) {
        let script = x.work_dir.join(format!("case{index:03}.py"));
        let dump = x.work_dir.join(format!("case{index:03}.dump.json"));
        let ran = crate::io::write_atomic(&script, g.script.source.as_bytes())
            .and_then(|_| crate::io::write_atomic(&x.work_dir.join(&plan_ref), g.plan.to_json().as_bytes()))
            .map_err(EvalError::from)
            .and_then(|_| run_script(&x.runner, &script, m, &dump));
        result.executed = Some(match ran {
            Ok(o) => o.success,
            Err(e) => {
                result.error.get_or_insert(e.to_string());
                false
            }
        });
    }
    CaseRun { result, metrics, correct_paths, domain_match }
}

/// Per-case failures are recorded, never fatal. Output is order-stable by case index.
pub fn run_benchmark(
    cases: &[BenchmarkCase],
    engine: &Engine,
    opts: &RunOptions,
    execution: Option<&Execution>,
) -> Result<MetricReport, EvalError> {
    if cases.is_empty() {
        return Err(EvalError::BenchmarkFormat("no cases".into()));
    }
    let manifest = match execution {
        Some(x) => {
            std::fs::create_dir_all(&x.work_dir)?;
            let m = x.work_dir.join("assets.txt");
            write_asset_manifest(&m, &engine.taxonomy)?;
            Some(m)
        }
        None => None,
    };
    let runs = par::map_indexed(engine.exec, cases, |i, c| run_case(engine, opts, i, c, execution, manifest.as_deref()));

    let mut categories = BTreeMap::new();
    for cat in CaseCategory::ALL {
        let rs: Vec<&CaseRun> = runs.iter().filter(|r| r.result.category == cat).collect();
        if rs.is_empty() {
            continue;
        }
        let n = rs.len() as f64;
        let acc = accuracy(&rs.iter().map(|r| r.result.correct).collect::<Vec<_>>());
        let mean = |f: fn(&SetMetrics) -> f64| rs.iter().map(|r| f(&r.metrics)).sum::<f64>() / n;
        let (p, r, f) = if cat == CaseCategory::MultiGeneric {
            (None, None, None)
        } else {
            (Some(mean(|m| m.precision)), Some(mean(|m| m.recall)), Some(mean(|m| m.f1)))
        };
        categories.insert(cat, CategoryMetrics { cases: rs.len(), accuracy: acc, precision: p, recall: r, f1: f });
    }

    let mut seen = BTreeSet::new();
    let queries: Vec<AssetPath> = cases
        .iter()
        .flat_map(|c| c.expected_paths.iter().cloned())
        .filter(|p| seen.insert(p.clone()))
        .collect();
    let topk = topk_recall(&queries, &engine.kb, &engine.taxonomy, engine.embedder.as_ref(), opts.kb_mode, &[1, 2, 3], engine.exec);

    let n = runs.len() as f64;
    let rate = |f: fn(&CaseRun) -> bool| runs.iter().filter(|r| f(r)).count() as f64 / n;
    let codegen = CodegenMetrics {
        executability: execution.map(|_| rate(|r| r.result.executed == Some(true))),
        correct_paths: rate(|r| r.correct_paths),
        domain_match: rate(|r| r.domain_match),
    };
    let failures = runs
        .iter()
        .filter(|r| !r.result.correct || r.result.executed == Some(false))
        .map(|r| r.result.clone())
        .collect();
    Ok(MetricReport {
        aggregation: AGGREGATION_NOTE.into(),
        total_cases: cases.len(),
        categories,
        topk_recall: topk,
        codegen,
        failures,
    })
}
