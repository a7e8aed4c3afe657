//! Hybrid asset-path retrieval: defaults, semantic search over the path
//! index, then an exact-field filter so only paths that agree with every
//! populated subquery field can be returned.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed_index::{EmbedError, Embedder, IndexError, VectorIndex};
use crate::frontend::{apply_defaults, SubQuery};
use crate::par::{self, Exec};
use crate::providers::{ChatMessage, ChatProvider};
use crate::taxonomy::{display_name, AssetMetadata, AssetPath, TaxonomyConfig};

pub const DEFAULT_PATH_K: usize = 5;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("no asset path matches subquery {subquery}: {detail}")]
    NoMatch { subquery: usize, detail: String },
    #[error("path index is missing or empty")]
    IndexMissing,
    #[error("no subqueries to retrieve")]
    NoSubqueries,
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Index(#[from] IndexError),
}

/// Text embedded for a metadata tuple in the path index. Subqueries render
/// through the same function, so a fully specified subquery embeds
/// identically to its path.
pub fn path_descriptor(meta: &AssetMetadata) -> String {
    format!(
        "{} {} {} {} {} {}",
        meta.category,
        meta.crop,
        display_name(&meta.variety),
        meta.lifecycle,
        meta.season,
        meta.health
    )
    .to_lowercase()
}

/// Descriptor for a (possibly partial) subquery: populated fields only.
pub fn subquery_descriptor(q: &SubQuery) -> String {
    let mut parts: Vec<String> = Vec::new();
    if let Some(c) = q.category {
        parts.push(c.to_string());
    }
    parts.extend(q.crop.clone());
    parts.extend(q.variety.as_deref().map(display_name));
    parts.extend(q.lifecycle.map(|v| v.to_string()));
    parts.extend(q.season.map(|v| v.to_string()));
    parts.extend(q.health.map(|v| v.to_string()));
    parts.join(" ").to_lowercase()
}

/// Embeds every taxonomy path; record ids are the path strings in sorted order.
pub fn build_path_index(
    taxonomy: &TaxonomyConfig,
    embedder: &dyn Embedder,
    exec: Exec,
) -> Result<VectorIndex, crate::Error> {
    let items: Vec<(String, String)> = taxonomy
        .enumerate_paths()
        .into_iter()
        .map(|p| {
            let meta = taxonomy.parse_path(&p).expect("enumerated paths parse");
            (p.into_string(), path_descriptor(&meta))
        })
        .collect();
    VectorIndex::from_texts(embedder, &items, exec)
}

/// True when every populated field of `q` equals the corresponding field of `meta`.
pub fn fields_match(q: &SubQuery, meta: &AssetMetadata) -> bool {
    let eq = |a: &Option<String>, b: &str| a.as_deref().is_none_or(|a| a.eq_ignore_ascii_case(b));
    q.category.is_none_or(|c| c == meta.category)
        && eq(&q.crop, &meta.crop)
        && eq(&q.variety, &meta.variety)
        && q.lifecycle.is_none_or(|v| v == meta.lifecycle)
        && q.season.is_none_or(|v| v == meta.season)
        && q.health.is_none_or(|v| v == meta.health)
}

/// One selected path for one subquery.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub subquery: usize,
    /// Subquery as decomposed from the prompt.
    pub request: SubQuery,
    /// Subquery after category expansion and defaults.
    pub resolved: SubQuery,
    pub path: AssetPath,
    pub score: f64,
    /// 1-based rank of the chosen candidate in the semantic result list.
    pub rank: usize,
    pub quantity: u32,
    #[serde(default)]
    pub expanded_from_category: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    /// Unique paths in order of first selection.
    pub paths: Vec<AssetPath>,
    /// Per-subquery provenance, in subquery order.
    pub selections: Vec<Selection>,
    pub warnings: Vec<String>,
}

impl RetrievalResult {
    fn from_selections(selections: Vec<Selection>, warnings: Vec<String>) -> Self {
        let mut seen = HashSet::new();
        let paths = selections
            .iter()
            .filter(|s| seen.insert(s.path.clone()))
            .map(|s| s.path.clone())
            .collect();
        Self { paths, selections, warnings }
    }
}

pub struct PathRetriever<'a> {
    pub taxonomy: &'a TaxonomyConfig,
    pub index: &'a VectorIndex,
    pub embedder: &'a dyn Embedder,
    /// Optional validator that may only reject exact-match candidates.
    pub refiner: Option<&'a dyn ChatProvider>,
    pub exec: Exec,
}

impl<'a> PathRetriever<'a> {
    pub fn new(taxonomy: &'a TaxonomyConfig, index: &'a VectorIndex, embedder: &'a dyn Embedder) -> Self {
        Self { taxonomy, index, embedder, refiner: None, exec: Exec::default() }
    }

    pub fn retrieve_paths(&self, subqueries: &[SubQuery], k: usize) -> Result<RetrievalResult, RetrievalError> {
        if subqueries.is_empty() {
            return Err(RetrievalError::NoSubqueries);
        }
        if self.index.is_empty() {
            return Err(RetrievalError::IndexMissing);
        }
        let outcomes = par::map_indexed(self.exec, subqueries, |i, q| self.retrieve_one(i, q, k));
        let mut selections = Vec::with_capacity(outcomes.len());
        let mut warnings = Vec::new();
        for o in outcomes {
            let (sel, w) = o?;
            selections.push(sel);
            warnings.extend(w);
        }
        Ok(RetrievalResult::from_selections(selections, warnings))
    }

    fn retrieve_one(&self, i: usize, request: &SubQuery, k: usize) -> Result<(Selection, Vec<String>), RetrievalError> {
        let mut warnings = Vec::new();
        let mut q = request.clone();
        let mut expanded = false;
        if q.crop.is_none() {
            let Some(cat) = q.category else {
                return Err(RetrievalError::NoMatch {
                    subquery: i,
                    detail: format!("`{}` names no known crop or category", request.residual_text),
                });
            };
            let crop = self.taxonomy.first_crop(cat).ok_or_else(|| RetrievalError::NoMatch {
                subquery: i,
                detail: format!("category {cat} has no crops"),
            })?;
            warnings.push(format!(
                "subquery {i}: category-only request `{cat}` expanded to first crop `{crop}`"
            ));
            q.crop = Some(crop.to_string());
            expanded = true;
        }
        let resolved = apply_defaults(&q, self.taxonomy);
        let query = self.embedder.embed(&subquery_descriptor(&resolved))?;

        let mut k_eff = k.max(1);
        for attempt in 0..2 {
            let hits = self.index.search_with(Exec::Sequential, &query, k_eff)?;
            for (rank, hit) in hits.iter().enumerate() {
                let path = AssetPath::new_unchecked(hit.id.clone());
                let Ok(meta) = self.taxonomy.parse_path(&path) else { continue };
                if !fields_match(&resolved, &meta) {
                    continue;
                }
                if let Some(refiner) = self.refiner {
                    match self.refine(refiner, request, &path) {
                        Some(false) => continue,
                        Some(true) => {}
                        None => warnings.push(format!("subquery {i}: refiner gave no usable verdict for {path}")),
                    }
                }
                let sel = Selection {
                    subquery: i,
                    request: request.clone(),
                    resolved: resolved.clone(),
                    path,
                    score: hit.score,
                    rank: rank + 1,
                    quantity: resolved.quantity.unwrap_or(1),
                    expanded_from_category: expanded,
                };
                return Ok((sel, warnings));
            }
            if attempt == 0 {
                k_eff *= 2;
            }
        }
        Err(RetrievalError::NoMatch {
            subquery: i,
            detail: format!(
                "no candidate among top-{k_eff} matches {}",
                subquery_descriptor(&resolved)
            ),
        })
    }

    /// Some(true) accept, Some(false) reject, None when the provider failed or was unclear.
    fn refine(&self, provider: &dyn ChatProvider, request: &SubQuery, path: &AssetPath) -> Option<bool> {
        let messages = vec![
            ChatMessage::system(
                "Answer `yes` if the asset path satisfies the field request (variety, lifecycle, season, health), otherwise `no`.",
            ),
            ChatMessage::user(format!("request: {}\npath: {}", request.residual_text, path)),
        ];
        let reply = provider.chat(&messages).ok()?;
        let reply = reply.trim().to_ascii_lowercase();
        if reply.starts_with("yes") {
            Some(true)
        } else if reply.starts_with("no") {
            Some(false)
        } else {
            None
        }
    }

    /// Aligns seasons across fields: when the prompt set exactly one season
    /// explicitly, fields that left it unspecified are re-retrieved in that
    /// season. Several distinct explicit seasons pass through with a warning.
    pub fn validate_consistency(&self, result: RetrievalResult, k: usize) -> RetrievalResult {
        let explicit: BTreeSet<_> = result.selections.iter().filter_map(|s| s.request.season).collect();
        let mut warnings = result.warnings;
        if explicit.len() > 1 {
            let names: Vec<String> = explicit.iter().map(|s| s.to_string()).collect();
            warnings.push(format!("fields specify different seasons: {}", names.join(", ")));
            return RetrievalResult::from_selections(result.selections, warnings);
        }
        let Some(&season) = explicit.iter().next() else {
            return RetrievalResult::from_selections(result.selections, warnings);
        };
        let mut selections = Vec::with_capacity(result.selections.len());
        for sel in result.selections {
            if sel.request.season.is_some() || sel.resolved.season == Some(season) {
                selections.push(sel);
                continue;
            }
            let mut request = sel.request.clone();
            request.season = Some(season);
            match self.retrieve_one(sel.subquery, &request, k) {
                Ok((mut aligned, w)) => {
                    for m in w {
                        if !warnings.contains(&m) {
                            warnings.push(m);
                        }
                    }
                    warnings.push(format!(
                        "subquery {}: season aligned to {season} ({} -> {})",
                        sel.subquery, sel.path, aligned.path
                    ));
                    // keep the original request so the alignment stays visible
                    aligned.request = sel.request;
                    selections.push(aligned);
                }
                Err(e) => {
                    warnings.push(format!("subquery {}: could not align season: {e}", sel.subquery));
                    selections.push(sel);
                }
            }
        }
        RetrievalResult::from_selections(selections, warnings)
    }
}
