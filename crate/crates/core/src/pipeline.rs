//! End-to-end orchestration: prompt → paths → recipe → plan → script → report.

use std::path::{Path, PathBuf};
use std::time::Instant;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embed_index::{Embedder, LocalEmbedder, VectorIndex};
use crate::emitter::{emit_script, emit_with_provider, EmitMode, ScriptText};
use crate::frontend::{Decomposition, Frontend, FrontendMode, NormalizationTable, DEFAULT_SYNONYMS_JSON};
use crate::io::write_atomic;
use crate::knowledge::{
    FieldRequest, KbMode, KnowledgeBase, KnowledgeEntry, MemorySink, RetrieveContext, SceneRecipe, DEFAULT_KB_JSON,
    DEFAULT_KB_K,
};
use crate::par::Exec;
use crate::planner::{plan_scene, PlannerConfig, ScenePlan, DEFAULT_PLANNER_JSON};
use crate::providers::{
    ChatProvider, EmbeddingProvider, HttpProvider, MockProvider, ProviderConfig, Recording, RemoteEmbedder, Replay,
    DEFAULT_CHAT_MODEL, DEFAULT_EMBEDDING_MODEL, DEFAULT_MOCK_FIXTURES_JSON,
};
use crate::retrieval::{build_path_index, PathRetriever, RetrievalResult, DEFAULT_PATH_K};
use crate::taxonomy::{TaxonomyConfig, DEFAULT_TAXONOMY_JSON};
use crate::validator::{validate, ValidationReport};
use crate::Error;

/// Optional `--config` document. Relative paths resolve against the file's directory.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub taxonomy: Option<PathBuf>,
    pub synonyms: Option<PathBuf>,
    pub kb: Option<PathBuf>,
    pub planner: Option<PathBuf>,
    pub mock_fixtures: Option<PathBuf>,
    pub providers: ProvidersSection,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProvidersSection {
    pub chat: Option<ProviderConfig>,
    pub embedding: Option<ProviderConfig>,
    /// Dimension of remote embeddings.
    pub embedding_dimension: Option<usize>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.taxonomy, &mut cfg.synonyms, &mut cfg.kb, &mut cfg.planner, &mut cfg.mock_fixtures]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    Local,
    Remote,
}

/// Where every input comes from. `None` means the bundled default.
#[derive(Debug, Clone)]
pub struct Sources {
    pub config: ConfigFile,
    pub provider: ProviderKind,
    pub embedder: EmbedderKind,
    pub record: Option<PathBuf>,
    pub replay: Option<PathBuf>,
    pub index_dir: Option<PathBuf>,
    pub exec: Exec,
}

impl Default for Sources {
    fn default() -> Self {
        Self {
            config: ConfigFile::default(),
            provider: ProviderKind::Mock,
            embedder: EmbedderKind::Local,
            record: None,
            replay: None,
            index_dir: None,
            exec: Exec::default(),
        }
    }
}

fn read_or(path: &Option<PathBuf>, bundled: &str) -> Result<String, Error> {
    match path {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display()))),
        None => Ok(bundled.to_string()),
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Everything a run needs, loaded once.
pub struct Engine {
    pub taxonomy: TaxonomyConfig,
    pub table: NormalizationTable,
    pub planner: PlannerConfig,
    pub embedder: Box<dyn Embedder>,
    pub embedder_id: String,
    pub path_index: VectorIndex,
    pub kb: KnowledgeBase,
    pub chat: Box<dyn ChatProvider>,
    pub exec: Exec,
    /// sha256 of each config document, keyed by role.
    pub config_hashes: IndexMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct IndexMeta {
    embedder: String,
    taxonomy: String,
    kb: String,
}

pub const PATH_INDEX_FILE: &str = "paths.vidx";
pub const KB_INDEX_FILE: &str = "kb.vidx";
pub const INDEX_META_FILE: &str = "index.meta.json";

impl Engine {
    /// Bundled data, local embedder, bundled mock fixtures.
    pub fn bundled() -> Result<Self, Error> {
        Self::load(&Sources::default())
    }

    pub fn load(src: &Sources) -> Result<Self, Error> {
        let cfg = &src.config;
        let tax_text = read_or(&cfg.taxonomy, DEFAULT_TAXONOMY_JSON)?;
        let syn_text = read_or(&cfg.synonyms, DEFAULT_SYNONYMS_JSON)?;
        let kb_text = match &cfg.kb {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| crate::knowledge::KnowledgeError::Format(format!("{}: {e}", p.display())))?,
            None => DEFAULT_KB_JSON.to_string(),
        };
        let planner_text = read_or(&cfg.planner, DEFAULT_PLANNER_JSON)?;

        let taxonomy = TaxonomyConfig::from_json(&tax_text)?;
        let table = NormalizationTable::from_json(&syn_text, &taxonomy)?;
        let planner = PlannerConfig::from_json(&planner_text).map_err(|e| Error::Config(e.to_string()))?;
        let entries = KnowledgeBase::parse_entries(&kb_text)?;

        let (embedder, embedder_id) = Self::make_embedder(src)?;
        let chat = Self::make_chat(src)?;

        let mut config_hashes = IndexMap::new();
        for (k, t) in [("taxonomy", &tax_text), ("synonyms", &syn_text), ("kb", &kb_text), ("planner", &planner_text)] {
            config_hashes.insert(k.to_string(), sha256_hex(t.as_bytes()));
        }
        let meta = IndexMeta {
            embedder: embedder_id.clone(),
            taxonomy: config_hashes["taxonomy"].clone(),
            kb: config_hashes["kb"].clone(),
        };
        let (path_index, kb) = match &src.index_dir {
            Some(dir) => Self::cached_indexes(dir, &meta, &taxonomy, entries, embedder.as_ref(), src.exec)?,
            None => {
                let pi = build_path_index(&taxonomy, embedder.as_ref(), src.exec)?;
                let kb = KnowledgeBase::build(entries, &taxonomy, embedder.as_ref(), src.exec)?;
                (pi, kb)
            }
        };
        Ok(Self { taxonomy, table, planner, embedder, embedder_id, path_index, kb, chat, exec: src.exec, config_hashes })
    }

    fn make_embedder(src: &Sources) -> Result<(Box<dyn Embedder>, String), Error> {
        if src.embedder == EmbedderKind::Local {
            let e = LocalEmbedder::default();
            let id = format!("local-trigram-{}", e.dimension());
            return Ok((Box::new(e), id));
        }
        let p = &src.config.providers;
        let dim = p.embedding_dimension.unwrap_or(1536);
        let config = p.embedding.clone().unwrap_or_else(|| ProviderConfig { model: DEFAULT_EMBEDDING_MODEL.into(), ..Default::default() });
        let id = format!("remote-{}-{dim}", config.model);
        let provider: Box<dyn EmbeddingProvider> = if let Some(dir) = &src.replay {
            Box::new(Replay::new(config.model.clone(), dir))
        } else {
            let http = HttpProvider::new(config)?;
            match &src.record {
                Some(dir) => Box::new(Recording::new(http, dir)),
                None => Box::new(http),
            }
        };
        Ok((Box::new(RemoteEmbedder::new(provider, dim)), id))
    }

    fn make_chat(src: &Sources) -> Result<Box<dyn ChatProvider>, Error> {
        let cfg = &src.config;
        let model = cfg.providers.chat.as_ref().map_or(DEFAULT_CHAT_MODEL.to_string(), |c| c.model.clone());
        if let Some(dir) = &src.replay {
            return Ok(Box::new(Replay::new(model, dir)));
        }
        let inner: Box<dyn ChatProvider> = match src.provider {
            ProviderKind::Mock => {
                let text = read_or(&cfg.mock_fixtures, DEFAULT_MOCK_FIXTURES_JSON)?;
                Box::new(MockProvider::from_json(model, &text)?)
            }
            ProviderKind::Http => Box::new(HttpProvider::new(cfg.providers.chat.clone().unwrap_or_default())?),
        };
        Ok(match &src.record {
            Some(dir) => Box::new(Recording::new(inner, dir)),
            None => inner,
        })
    }

    fn cached_indexes(
        dir: &Path,
        meta: &IndexMeta,
        taxonomy: &TaxonomyConfig,
        entries: Vec<KnowledgeEntry>,
        embedder: &dyn Embedder,
        exec: Exec,
    ) -> Result<(VectorIndex, KnowledgeBase), Error> {
        let meta_path = dir.join(INDEX_META_FILE);
        let fresh = std::fs::read_to_string(&meta_path)
            .ok()
            .and_then(|t| serde_json::from_str::<IndexMeta>(&t).ok())
            .is_some_and(|m| &m == meta);
        if fresh {
            let loaded = VectorIndex::load(&dir.join(PATH_INDEX_FILE)).and_then(|pi| Ok((pi, VectorIndex::load(&dir.join(KB_INDEX_FILE))?)));
            match loaded {
                Ok((pi, ki)) => {
                    if let Ok(kb) = KnowledgeBase::with_index(entries.clone(), taxonomy, ki) {
                        return Ok((pi, kb));
                    }
                    log::warn!("cached KB index does not match entries; rebuilding");
                }
                Err(e) => log::warn!("cached index unreadable ({e}); rebuilding"),
            }
        }
        let (pi, kb) = build_indexes(taxonomy, entries, embedder, exec)?;
        pi.save(&dir.join(PATH_INDEX_FILE))?;
        kb.index().save(&dir.join(KB_INDEX_FILE))?;
        let mut m = serde_json::to_string_pretty(meta).expect("serializable");
        m.push('\n');
        write_atomic(&meta_path, m.as_bytes())?;
        Ok((pi, kb))
    }

    /// Builds and persists both indexes under `dir`, returning the files written.
    pub fn write_indexes(&self, dir: &Path) -> Result<Vec<PathBuf>, Error> {
        let meta = IndexMeta {
            embedder: self.embedder_id.clone(),
            taxonomy: self.config_hashes["taxonomy"].clone(),
            kb: self.config_hashes["kb"].clone(),
        };
        let files = vec![dir.join(PATH_INDEX_FILE), dir.join(KB_INDEX_FILE), dir.join(INDEX_META_FILE)];
        self.path_index.save(&files[0])?;
        self.kb.index().save(&files[1])?;
        let mut m = serde_json::to_string_pretty(&meta).expect("serializable");
        m.push('\n');
        write_atomic(&files[2], m.as_bytes())?;
        Ok(files)
    }

    pub fn frontend(&self) -> Frontend<'_> {
        Frontend { table: &self.table, provider: Some(self.chat.as_ref()) }
    }

    pub fn retriever(&self) -> PathRetriever<'_> {
        let mut r = PathRetriever::new(&self.taxonomy, &self.path_index, self.embedder.as_ref());
        r.exec = self.exec;
        r
    }

    pub fn retrieve(&self, prompt: &str, opts: &RunOptions) -> Result<(Decomposition, RetrievalResult), Error> {
        let d = self.frontend().decompose(prompt, opts.frontend_mode)?;
        let r = self.retriever();
        let result = r.retrieve_paths(&d.subqueries, opts.path_k)?;
        Ok((d, r.validate_consistency(result, opts.path_k)))
    }

    pub fn enrich(&self, requests: &[FieldRequest], opts: &RunOptions, sink: &dyn crate::knowledge::FallbackSink) -> Result<SceneRecipe, Error> {
        let ctx = RetrieveContext {
            taxonomy: &self.taxonomy,
            embedder: self.embedder.as_ref(),
            mode: opts.kb_mode,
            k: opts.kb_k,
            sink,
            exec: self.exec,
        };
        Ok(self.kb.retrieve_entries(requests, &ctx)?)
    }

    pub fn planner_config(&self, opts: &RunOptions) -> PlannerConfig {
        let mut c = self.planner.clone();
        if let Some(r) = opts.rows {
            c.rows = r;
        }
        if let Some(n) = opts.cols {
            c.cols = n;
        }
        if let Some(g) = opts.gap_m {
            c.gap_m = g;
        }
        c
    }

    pub fn plan(&self, recipe: &SceneRecipe, opts: &RunOptions) -> Result<ScenePlan, Error> {
        Ok(plan_scene(recipe, opts.seed, &self.planner_config(opts), self.exec)?)
    }

    pub fn emit(&self, plan: &ScenePlan, plan_ref: &str, mode: EmitMode) -> Result<ScriptText, Error> {
        Ok(match mode {
            EmitMode::Template => emit_script(plan, plan_ref)?,
            EmitMode::Provider => emit_with_provider(plan, plan_ref, self.chat.as_ref())?,
        })
    }

    /// All stages in memory.
    pub fn run(&self, prompt: &str, opts: &RunOptions, plan_ref: &str) -> Result<Generation, Error> {
        let mut timings = IndexMap::new();
        let mut clock = Instant::now();
        let mut lap = |name: &str, t: &mut IndexMap<String, f64>| {
            t.insert(name.to_string(), clock.elapsed().as_secs_f64() * 1e3);
            clock = Instant::now();
        };
        let d = self.frontend().decompose(prompt, opts.frontend_mode)?;
        lap("frontend", &mut timings);
        let r = self.retriever();
        let retrieval = r.validate_consistency(r.retrieve_paths(&d.subqueries, opts.path_k)?, opts.path_k);
        lap("retrieval", &mut timings);
        let requests: Vec<FieldRequest> = retrieval
            .selections
            .iter()
            .map(|s| FieldRequest { path: s.path.clone(), quantity: s.quantity, rows: opts.rows, cols: opts.cols })
            .collect();
        let sink = MemorySink::default();
        let recipe = self.enrich(&requests, opts, &sink)?;
        lap("knowledge", &mut timings);
        let plan = self.plan(&recipe, opts)?;
        lap("planner", &mut timings);
        let script = self.emit(&plan, plan_ref, opts.emit_mode)?;
        lap("emitter", &mut timings);
        let report = validate(&script.source, &plan, Some(&recipe), &self.taxonomy);
        lap("validator", &mut timings);
        Ok(Generation {
            decomposition: d,
            retrieval,
            recipe,
            fallback_events: sink.events(),
            plan,
            script,
            report,
            timings_ms: timings,
        })
    }
}

pub fn build_indexes(
    taxonomy: &TaxonomyConfig,
    entries: Vec<KnowledgeEntry>,
    embedder: &dyn Embedder,
    exec: Exec,
) -> Result<(VectorIndex, KnowledgeBase), Error> {
    let pi = build_path_index(taxonomy, embedder, exec)?;
    let kb = KnowledgeBase::build(entries, taxonomy, embedder, exec)?;
    Ok((pi, kb))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunOptions {
    pub seed: u64,
    pub frontend_mode: FrontendMode,
    pub kb_mode: KbMode,
    pub emit_mode: EmitMode,
    pub path_k: usize,
    pub kb_k: usize,
    pub rows: Option<u32>,
    pub cols: Option<u32>,
    pub gap_m: Option<f64>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            frontend_mode: FrontendMode::Rules,
            kb_mode: KbMode::Hybrid,
            emit_mode: EmitMode::Template,
            path_k: DEFAULT_PATH_K,
            kb_k: DEFAULT_KB_K,
            rows: None,
            cols: None,
            gap_m: None,
        }
    }
}

pub struct Generation {
    pub decomposition: Decomposition,
    pub retrieval: RetrievalResult,
    pub recipe: SceneRecipe,
    pub fallback_events: Vec<crate::knowledge::FallbackEvent>,
    pub plan: ScenePlan,
    pub script: ScriptText,
    pub report: ValidationReport,
    pub timings_ms: IndexMap<String, f64>,
}

/// Deterministic run report written next to the script.
#[derive(Debug, Serialize)]
pub struct RunReport<'a> {
    pub prompt: &'a str,
    pub seed: u64,
    pub options: &'a RunOptions,
    pub decomposition: &'a Decomposition,
    pub retrieval: &'a RetrievalResult,
    pub recipe: &'a SceneRecipe,
    pub validation: &'a ValidationReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub prompt: String,
    pub config_hashes: IndexMap<String, String>,
    pub seed: u64,
    pub timings_ms: IndexMap<String, f64>,
    pub outputs: Vec<String>,
}

#[derive(Debug)]
pub struct GenerateOutcome {
    pub files: Vec<PathBuf>,
    pub manifest: PathBuf,
    pub report: ValidationReport,
}

fn pretty<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s.into_bytes()
}

/// Runs the pipeline and writes `<name>.py`, `<name>.plan.json`,
/// `<name>.report.json`, `<name>.fallbacks.jsonl` and `<name>.manifest.json`.
///
/// A validation failure returns [`Error::Validation`] after writing; any
/// error removes the outputs unless `keep_partial`.
pub fn generate(
    engine: &Engine,
    prompt: &str,
    opts: &RunOptions,
    out_dir: &Path,
    name: &str,
    keep_partial: bool,
) -> Result<GenerateOutcome, Error> {
    let plan_name = format!("{name}.plan.json");
    let paths = [
        out_dir.join(format!("{name}.py")),
        out_dir.join(&plan_name),
        out_dir.join(format!("{name}.report.json")),
        out_dir.join(format!("{name}.fallbacks.jsonl")),
        out_dir.join(format!("{name}.manifest.json")),
    ];
    let mut written: Vec<PathBuf> = Vec::new();
    let result = (|| -> Result<GenerateOutcome, Error> {
        let start = Instant::now();
        let g = engine.run(prompt, opts, &plan_name)?;
        let fallbacks: String = g
            .fallback_events
            .iter()
            .map(|e| serde_json::to_string(e).expect("serializable") + "\n")
            .collect();
        let report = RunReport {
            prompt,
            seed: opts.seed,
            options: opts,
            decomposition: &g.decomposition,
            retrieval: &g.retrieval,
            recipe: &g.recipe,
            validation: &g.report,
        };
        let bodies: [Vec<u8>; 4] = [g.script.source.clone().into_bytes(), g.plan.to_json().into_bytes(), pretty(&report), fallbacks.into_bytes()];
        for (p, b) in paths.iter().zip(bodies.iter()) {
            write_atomic(p, b)?;
            written.push(p.clone());
        }
        let mut timings = g.timings_ms.clone();
        timings.insert("total".into(), start.elapsed().as_secs_f64() * 1e3);
        let manifest = RunManifest {
            prompt: prompt.to_string(),
            config_hashes: engine.config_hashes.clone(),
            seed: opts.seed,
            timings_ms: timings,
            outputs: paths.iter().map(|p| p.display().to_string()).collect(),
        };
        write_atomic(&paths[4], &pretty(&manifest))?;
        written.push(paths[4].clone());
        if !g.report.passed {
            return Err(Error::Validation(g.report.summary()));
        }
        Ok(GenerateOutcome { files: paths.to_vec(), manifest: paths[4].clone(), report: g.report })
    })();
    if result.is_err() && !keep_partial {
        for p in &written {
            let _ = std::fs::remove_file(p);
        }
    }
    result
}
