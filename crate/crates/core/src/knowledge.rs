//! Agronomic knowledge base and hybrid retrieval.
//!
//! Hybrid mode: parse path → descriptor string → embed → top-k over the KB
//! index → first candidate passing [`strict_match`]. When nothing passes,
//! the miss is logged to a [`FallbackSink`] and resolved by exact metadata
//! lookup, then by the crop's default entry.
//!
//! Rag mode embeds the raw path text and takes the top hit unfiltered. It
//! exists as the baseline for comparison and can pair paths with
//! mismatched entries.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed_index::{EmbedError, Embedder, IndexError, VectorIndex};
use crate::par::{self, Exec};
use crate::taxonomy::{
    compact, display_name, AssetMetadata, AssetPath, Health, Lifecycle, TaxonomyConfig, TaxonomyError,
};

pub const DEFAULT_KB_JSON: &str = include_str!("../data/knowledge.json");
pub const DEFAULT_KB_K: usize = 3;
pub const DENSITY_TOLERANCE: f64 = 0.10;

#[derive(Debug, Error)]
pub enum KnowledgeError {
    #[error("knowledge base is empty")]
    EmptyKnowledgeBase,
    #[error("knowledge base format error: {0}")]
    Format(String),
    #[error("invalid knowledge entry `{id}`: {reason}")]
    InvalidEntry { id: String, reason: String },
    #[error("no entry, exact match or crop default for {0}")]
    Unresolved(AssetPath),
    #[error(transparent)]
    Path(#[from] TaxonomyError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Index(#[from] IndexError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Susceptibility {
    Low,
    Medium,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Irrigation {
    Drip,
    Sprinkler,
    Rainfed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KbMode {
    Hybrid,
    Rag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeEntry {
    pub id: String,
    pub meta: AssetMetadata,
    pub plant_height_m: f64,
    pub row_spacing_m: f64,
    pub plant_spacing_m: f64,
    pub density_per_ha: f64,
    pub disease_susceptibility: Susceptibility,
    pub irrigation: Irrigation,
    #[serde(default)]
    pub rendering_effects: Vec<String>,
    /// Free-text description; when present it is what gets embedded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

impl KnowledgeEntry {
    pub fn embedding_text(&self) -> String {
        match &self.description {
            Some(d) => d.clone(),
            None => descriptor_for(&self.meta).0,
        }
    }

    /// Plants per hectare implied by the two spacings.
    pub fn implied_density(&self) -> f64 {
        10_000.0 / (self.row_spacing_m * self.plant_spacing_m)
    }

    pub fn validate(&self, taxonomy: &TaxonomyConfig) -> Result<(), KnowledgeError> {
        let bad = |reason: String| Err(KnowledgeError::InvalidEntry { id: self.id.clone(), reason });
        for (name, v) in [
            ("plant_height_m", self.plant_height_m),
            ("row_spacing_m", self.row_spacing_m),
            ("plant_spacing_m", self.plant_spacing_m),
            ("density_per_ha", self.density_per_ha),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        let rel = (self.density_per_ha - self.implied_density()).abs() / self.density_per_ha;
        if rel > DENSITY_TOLERANCE {
            return bad(format!(
                "density {} deviates {:.1}% from spacing-implied {:.1}",
                self.density_per_ha,
                rel * 100.0,
                self.implied_density()
            ));
        }
        if let Err(e) = taxonomy.check(&self.meta) {
            return bad(e.to_string());
        }
        Ok(())
    }
}

/// Natural-language rendering of a metadata tuple.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Descriptor(pub String);

pub fn lifecycle_adjective(l: Lifecycle) -> &'static str {
    match l {
        Lifecycle::Vegetative => "young",
        Lifecycle::Reproductive => "flowering",
        Lifecycle::Maturation => "mature",
    }
}

pub fn health_adjective(h: Health) -> &'static str {
    match h {
        Health::Healthy => "healthy",
        Health::Ill => "diseased",
    }
}

/// `"<health> <lifecycle> <Variety> <crop> in <season>"`, e.g.
/// "healthy young Pink Lady apple in fall".
pub fn descriptor_for(meta: &AssetMetadata) -> Descriptor {
    Descriptor(format!(
        "{} {} {} {} in {}",
        health_adjective(meta.health),
        lifecycle_adjective(meta.lifecycle),
        display_name(&meta.variety),
        meta.crop.to_lowercase(),
        meta.season.as_str().to_lowercase()
    ))
}

/// Exact on category, crop, lifecycle, season and health (case-insensitive);
/// fuzzy on variety: equal after normalization or Levenshtein distance ≤ 1.
pub fn strict_match(entry: &KnowledgeEntry, meta: &AssetMetadata) -> bool {
    let e = &entry.meta;
    e.category == meta.category
        && e.crop.eq_ignore_ascii_case(&meta.crop)
        && e.lifecycle == meta.lifecycle
        && e.season == meta.season
        && e.health == meta.health
        && varieties_match(&e.variety, &meta.variety)
}

pub fn varieties_match(a: &str, b: &str) -> bool {
    let (a, b) = (compact(a), compact(b));
    a == b || strsim::levenshtein(&a, &b) <= 1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Resolution {
    /// Selected from the semantic candidates at this 1-based rank.
    Semantic { rank: usize },
    ExactLookup,
    CropDefault,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldRequest {
    pub path: AssetPath,
    pub quantity: u32,
    pub rows: Option<u32>,
    pub cols: Option<u32>,
}

impl From<AssetPath> for FieldRequest {
    fn from(path: AssetPath) -> Self {
        Self { path, quantity: 1, rows: None, cols: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecipeField {
    pub path: AssetPath,
    pub entry: KnowledgeEntry,
    pub quantity: u32,
    pub rows: Option<u32>,
    pub cols: Option<u32>,
    pub resolution: Resolution,
    pub candidates_examined: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecipe {
    pub fields: Vec<RecipeField>,
    /// Paths for which no semantic candidate passed the strict filter.
    pub fallbacks: Vec<AssetPath>,
}

impl SceneRecipe {
    /// Pairs whose entry fails the strict predicate (always zero in hybrid mode,
    /// except for flagged crop defaults).
    pub fn mismatched_pairs(&self, taxonomy: &TaxonomyConfig) -> usize {
        self.fields
            .iter()
            .filter(|f| f.resolution != Resolution::CropDefault)
            .filter(|f| match taxonomy.parse_path(&f.path) {
                Ok(meta) => !strict_match(&f.entry, &meta),
                Err(_) => true,
            })
            .count()
    }

    pub fn entry(&self, id: &str) -> Option<&KnowledgeEntry> {
        self.fields.iter().map(|f| &f.entry).find(|e| e.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FallbackEvent {
    pub path: AssetPath,
    pub descriptor: String,
    pub candidates: Vec<String>,
    pub resolution: Option<Resolution>,
}

/// Append-only destination for fallback events.
pub trait FallbackSink: Send + Sync {
    fn record(&self, event: &FallbackEvent);
}

pub struct NullSink;

impl FallbackSink for NullSink {
    fn record(&self, _: &FallbackEvent) {}
}

#[derive(Default)]
pub struct MemorySink(Mutex<Vec<FallbackEvent>>);

impl MemorySink {
    pub fn events(&self) -> Vec<FallbackEvent> {
        self.0.lock().expect("sink poisoned").clone()
    }
}

impl FallbackSink for MemorySink {
    fn record(&self, event: &FallbackEvent) {
        self.0.lock().expect("sink poisoned").push(event.clone());
    }
}

/// JSON-lines file sink.
pub struct JsonLinesSink(Mutex<BufWriter<File>>);

impl JsonLinesSink {
    pub fn create(path: &Path) -> std::io::Result<Self> {
        Ok(Self(Mutex::new(BufWriter::new(File::create(path)?))))
    }
}

impl FallbackSink for JsonLinesSink {
    fn record(&self, event: &FallbackEvent) {
        let mut w = self.0.lock().expect("sink poisoned");
        let line = serde_json::to_string(event).expect("serializable");
        if let Err(e) = writeln!(w, "{line}").and_then(|_| w.flush()) {
            log::error!("could not write fallback log: {e}");
        }
    }
}

pub struct KnowledgeBase {
    entries: Vec<KnowledgeEntry>,
    index: VectorIndex,
    by_meta: HashMap<AssetMetadata, usize>,
}

impl KnowledgeBase {
    pub fn parse_entries(text: &str) -> Result<Vec<KnowledgeEntry>, KnowledgeError> {
        serde_json::from_str(text).map_err(|e| KnowledgeError::Format(e.to_string()))
    }

    pub fn load_entries(path: &Path) -> Result<Vec<KnowledgeEntry>, KnowledgeError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| KnowledgeError::Format(format!("{}: {e}", path.display())))?;
        Self::parse_entries(&text)
    }

    pub fn bundled_entries() -> Vec<KnowledgeEntry> {
        Self::parse_entries(DEFAULT_KB_JSON).expect("bundled knowledge base parses")
    }

    /// Validates entries and embeds them.
    pub fn build(
        entries: Vec<KnowledgeEntry>,
        taxonomy: &TaxonomyConfig,
        embedder: &dyn Embedder,
        exec: Exec,
    ) -> Result<Self, KnowledgeError> {
        let items: Vec<(String, String)> = entries.iter().map(|e| (e.id.clone(), e.embedding_text())).collect();
        let index = match VectorIndex::from_texts(embedder, &items, exec) {
            Ok(i) => i,
            Err(crate::Error::Embed(e)) => return Err(e.into()),
            Err(crate::Error::Index(e)) => return Err(e.into()),
            Err(other) => return Err(KnowledgeError::Format(other.to_string())),
        };
        Self::with_index(entries, taxonomy, index)
    }

    /// Pairs entries with a prebuilt (e.g. loaded) index; ids must line up.
    pub fn with_index(
        entries: Vec<KnowledgeEntry>,
        taxonomy: &TaxonomyConfig,
        index: VectorIndex,
    ) -> Result<Self, KnowledgeError> {
        if entries.is_empty() {
            return Err(KnowledgeError::EmptyKnowledgeBase);
        }
        let mut by_meta = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            e.validate(taxonomy)?;
            by_meta.entry(e.meta.clone()).or_insert(i);
        }
        let aligned = index.len() == entries.len()
            && index.records().iter().zip(&entries).all(|(r, e)| r.id == e.id);
        if !aligned {
            return Err(KnowledgeError::Format("index records do not match entry ids".into()));
        }
        Ok(Self { entries, index, by_meta })
    }

    pub fn entries(&self) -> &[KnowledgeEntry] {
        &self.entries
    }

    pub fn index(&self) -> &VectorIndex {
        &self.index
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn entry_by_id(&self, id: &str) -> &KnowledgeEntry {
        let pos = self.index.records().iter().position(|r| r.id == id).expect("index ids are entry ids");
        &self.entries[pos]
    }

    fn query_text(mode: KbMode, path: &AssetPath, meta: &AssetMetadata) -> String {
        match mode {
            KbMode::Hybrid => descriptor_for(meta).0,
            KbMode::Rag => path.as_str().to_string(),
        }
    }

    /// Pre-filter semantic ranking for `path`: candidate ids in rank order.
    pub fn candidates(
        &self,
        path: &AssetPath,
        taxonomy: &TaxonomyConfig,
        embedder: &dyn Embedder,
        mode: KbMode,
        k: usize,
    ) -> Result<Vec<String>, KnowledgeError> {
        let meta = taxonomy.parse_path(path)?;
        let query = embedder.embed(&Self::query_text(mode, path, &meta))?;
        Ok(self
            .index
            .search_with(Exec::Sequential, &query, k)?
            .into_iter()
            .map(|h| h.id)
            .collect())
    }

    /// 1-based rank of the first strictly matching entry among the first `max_k` candidates.
    pub fn match_rank(
        &self,
        path: &AssetPath,
        taxonomy: &TaxonomyConfig,
        embedder: &dyn Embedder,
        mode: KbMode,
        max_k: usize,
    ) -> Result<Option<usize>, KnowledgeError> {
        let meta = taxonomy.parse_path(path)?;
        let ids = self.candidates(path, taxonomy, embedder, mode, max_k)?;
        Ok(ids
            .iter()
            .position(|id| strict_match(self.entry_by_id(id), &meta))
            .map(|p| p + 1))
    }

    fn crop_default(&self, meta: &AssetMetadata, taxonomy: &TaxonomyConfig) -> Option<&KnowledgeEntry> {
        let first = taxonomy.first_variety(&meta.crop).unwrap_or(&meta.variety);
        let canonical = AssetMetadata::new(
            meta.category,
            meta.crop.clone(),
            first,
            crate::frontend::DEFAULT_LIFECYCLE,
            crate::frontend::DEFAULT_SEASON,
            crate::frontend::DEFAULT_HEALTH,
        );
        self.by_meta
            .get(&canonical)
            .map(|&i| &self.entries[i])
            .or_else(|| self.entries.iter().find(|e| e.meta.crop.eq_ignore_ascii_case(&meta.crop)))
    }

    pub fn retrieve_entries(
        &self,
        requests: &[FieldRequest],
        ctx: &RetrieveContext<'_>,
    ) -> Result<SceneRecipe, KnowledgeError> {
        if self.entries.is_empty() {
            return Err(KnowledgeError::EmptyKnowledgeBase);
        }
        let k = ctx.k.max(1);
        let outcomes = par::map(ctx.exec, requests, |req| self.retrieve_one(req, ctx, k));

        let mut fields = Vec::with_capacity(requests.len());
        let mut fallbacks = Vec::new();
        // sink writes happen here, in request order
        for outcome in outcomes {
            let (field, event) = outcome?;
            if let Some(ev) = event {
                log::warn!("no strict knowledge match for {}; resolved by {:?}", ev.path, ev.resolution);
                ctx.sink.record(&ev);
                fallbacks.push(ev.path.clone());
                match field {
                    Some(f) => fields.push(f),
                    None => return Err(KnowledgeError::Unresolved(ev.path)),
                }
            } else if let Some(f) = field {
                fields.push(f);
            }
        }
        Ok(SceneRecipe { fields, fallbacks })
    }

    fn retrieve_one(
        &self,
        req: &FieldRequest,
        ctx: &RetrieveContext<'_>,
        k: usize,
    ) -> Result<(Option<RecipeField>, Option<FallbackEvent>), KnowledgeError> {
        let meta = ctx.taxonomy.parse_path(&req.path)?;
        let text = Self::query_text(ctx.mode, &req.path, &meta);
        let query = ctx.embedder.embed(&text)?;
        let hits = self.index.search_with(Exec::Sequential, &query, k)?;
        let make = |entry: &KnowledgeEntry, resolution, examined| RecipeField {
            path: req.path.clone(),
            entry: entry.clone(),
            quantity: req.quantity,
            rows: req.rows,
            cols: req.cols,
            resolution,
            candidates_examined: examined,
        };

        if ctx.mode == KbMode::Rag {
            let top = &hits[0];
            let entry = self.entry_by_id(&top.id);
            return Ok((Some(make(entry, Resolution::Semantic { rank: 1 }, 1)), None));
        }

        for (i, hit) in hits.iter().enumerate() {
            let entry = self.entry_by_id(&hit.id);
            if strict_match(entry, &meta) {
                return Ok((Some(make(entry, Resolution::Semantic { rank: i + 1 }, i + 1)), None));
            }
        }

        let (field, resolution) = if let Some(&i) = self.by_meta.get(&meta) {
            (Some(make(&self.entries[i], Resolution::ExactLookup, hits.len())), Some(Resolution::ExactLookup))
        } else if let Some(entry) = self.crop_default(&meta, ctx.taxonomy) {
            (Some(make(entry, Resolution::CropDefault, hits.len())), Some(Resolution::CropDefault))
        } else {
            (None, None)
        };
        let event = FallbackEvent {
            path: req.path.clone(),
            descriptor: text,
            candidates: hits.into_iter().map(|h| h.id).collect(),
            resolution,
        };
        Ok((field, Some(event)))
    }
}

pub struct RetrieveContext<'a> {
    pub taxonomy: &'a TaxonomyConfig,
    pub embedder: &'a dyn Embedder,
    pub mode: KbMode,
    pub k: usize,
    pub sink: &'a dyn FallbackSink,
    pub exec: Exec,
}
