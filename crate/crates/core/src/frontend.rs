//! Prompt decomposition into per-field subqueries.
//!
//! The rules engine lowercases and tokenizes the prompt, splits it into
//! segments on commas, semicolons, `&`, "and" and "plus", then scans each
//! segment with longest-match lookup against a phrase lexicon built from the
//! taxonomy's canonical names and the synonym table. Number words and digits
//! set the field quantity. Segments that name no crop or category donate
//! their attributes to the neighbouring subquery.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::providers::{ChatMessage, ChatProvider, ProviderError};
use crate::taxonomy::{compact, display_name, Category, Health, Lifecycle, Season, TaxonomyConfig};

pub const DEFAULT_SYNONYMS_JSON: &str = include_str!("../data/synonyms.json");

pub const DEFAULT_LIFECYCLE: Lifecycle = Lifecycle::Maturation;
pub const DEFAULT_SEASON: Season = Season::Summer;
pub const DEFAULT_HEALTH: Health = Health::Healthy;

#[derive(Debug, Error)]
pub enum FrontendError {
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("unknown {class} term `{term}`")]
    UnknownTerm { term: String, class: FieldClass },
    #[error("synonym table error: {0}")]
    Config(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldClass {
    Category,
    Crop,
    Variety,
    Lifecycle,
    Season,
    Health,
}

impl fmt::Display for FieldClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FieldClass::Category => "category",
            FieldClass::Crop => "crop",
            FieldClass::Variety => "variety",
            FieldClass::Lifecycle => "lifecycle",
            FieldClass::Season => "season",
            FieldClass::Health => "health",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrontendMode {
    Rules,
    Provider,
}

/// Structured partial description of one requested field.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SubQuery {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<Category>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crop: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variety: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lifecycle: Option<Lifecycle>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub season: Option<Season>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub health: Option<Health>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantity: Option<u32>,
    #[serde(default)]
    pub residual_text: String,
}

impl SubQuery {
    pub fn for_crop(crop: &str) -> Self {
        Self {
            crop: Some(crop.to_string()),
            ..Default::default()
        }
    }

    pub fn has_target(&self) -> bool {
        self.crop.is_some() || self.category.is_some()
    }

    fn absorb_attributes(&mut self, other: &SubQuery) {
        self.lifecycle = self.lifecycle.or(other.lifecycle);
        self.season = self.season.or(other.season);
        self.health = self.health.or(other.health);
        self.quantity = self.quantity.or(other.quantity);
    }
}

/// Fills unspecified fields of a subquery that names a crop:
/// variety → first in config order, lifecycle → Maturation,
/// season → Summer, health → Healthy, quantity → 1.
pub fn apply_defaults(q: &SubQuery, taxonomy: &TaxonomyConfig) -> SubQuery {
    let Some(crop) = q.crop.as_deref() else {
        return q.clone();
    };
    let mut out = q.clone();
    if out.category.is_none() {
        out.category = taxonomy.category_of(crop);
    }
    if out.variety.is_none() {
        out.variety = taxonomy.first_variety(crop).map(str::to_string);
    }
    out.lifecycle.get_or_insert(DEFAULT_LIFECYCLE);
    out.season.get_or_insert(DEFAULT_SEASON);
    out.health.get_or_insert(DEFAULT_HEALTH);
    out.quantity.get_or_insert(1);
    out
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default)]
struct SynonymFile {
    lifecycle: IndexMap<String, String>,
    season: IndexMap<String, String>,
    health: IndexMap<String, String>,
    crop: IndexMap<String, String>,
    variety: IndexMap<String, String>,
    category: IndexMap<String, String>,
    structural: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
enum Term {
    Category(Category),
    Crop(String),
    Variety(String),
    Lifecycle(Lifecycle),
    Season(Season),
    Health(Health),
    Structural,
    Number(u32),
    Conjunction,
}

/// Synonym tables validated against a taxonomy, plus the phrase lexicon
/// derived from them.
#[derive(Debug, Clone)]
pub struct NormalizationTable {
    taxonomy: TaxonomyConfig,
    synonyms: HashMap<FieldClass, HashMap<String, String>>,
    lexicon: HashMap<Vec<String>, Vec<Term>>,
    max_phrase: usize,
}

const NUMBER_WORDS: &[(&str, u32)] = &[
    ("one", 1),
    ("two", 2),
    ("three", 3),
    ("four", 4),
    ("five", 5),
    ("six", 6),
    ("seven", 7),
    ("eight", 8),
    ("nine", 9),
    ("ten", 10),
    ("eleven", 11),
    ("twelve", 12),
    ("single", 1),
    ("pair", 2),
];

const CONJUNCTIONS: &[&str] = &["and", "plus"];

impl NormalizationTable {
    pub fn default_bundled(taxonomy: &TaxonomyConfig) -> Self {
        Self::from_json(DEFAULT_SYNONYMS_JSON, taxonomy).expect("bundled synonyms are valid")
    }

    pub fn load(path: &Path, taxonomy: &TaxonomyConfig) -> Result<Self, FrontendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| FrontendError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text, taxonomy)
    }

    pub fn from_json(text: &str, taxonomy: &TaxonomyConfig) -> Result<Self, FrontendError> {
        let file: SynonymFile =
            serde_json::from_str(text).map_err(|e| FrontendError::Config(e.to_string()))?;
        let mut table = Self {
            taxonomy: taxonomy.clone(),
            synonyms: HashMap::new(),
            lexicon: HashMap::new(),
            max_phrase: 1,
        };

        let classes = [
            (FieldClass::Lifecycle, &file.lifecycle),
            (FieldClass::Season, &file.season),
            (FieldClass::Health, &file.health),
            (FieldClass::Crop, &file.crop),
            (FieldClass::Variety, &file.variety),
            (FieldClass::Category, &file.category),
        ];
        for (class, entries) in classes {
            let mut map = HashMap::new();
            for (syn, canonical) in entries {
                let canonical = table.canonical_form(canonical, class).ok_or_else(|| {
                    FrontendError::Config(format!(
                        "synonym `{syn}` maps to unknown {class} `{canonical}`"
                    ))
                })?;
                map.insert(syn.trim().to_lowercase(), canonical);
            }
            table.synonyms.insert(class, map);
        }

        // canonical vocabulary first, synonyms layered on top
        for &l in Lifecycle::ALL {
            table.add_phrase(l.as_str(), Term::Lifecycle(l));
        }
        for &s in Season::ALL {
            table.add_phrase(s.as_str(), Term::Season(s));
        }
        for &h in Health::ALL {
            table.add_phrase(h.as_str(), Term::Health(h));
        }
        for &c in Category::ALL {
            table.add_phrase(c.as_str(), Term::Category(c));
        }
        let crops: Vec<String> = taxonomy.crops().map(|(_, c)| c.clone()).collect();
        for crop in &crops {
            table.add_phrase(crop, Term::Crop(crop.clone()));
            for variety in &taxonomy.varieties[crop] {
                table.add_phrase(&display_name(variety), Term::Variety(variety.clone()));
                table.add_phrase(variety, Term::Variety(variety.clone()));
            }
        }
        for (class, entries) in classes {
            for (syn, _) in entries {
                let canonical = &table.synonyms[&class][&syn.trim().to_lowercase()];
                let term = table.term_for(class, canonical);
                table.add_phrase(syn, term);
            }
        }
        for word in &file.structural {
            table.add_phrase(word, Term::Structural);
        }
        for &(word, n) in NUMBER_WORDS {
            table.add_phrase(word, Term::Number(n));
        }
        for &word in CONJUNCTIONS {
            table.add_phrase(word, Term::Conjunction);
        }
        Ok(table)
    }

    pub fn taxonomy(&self) -> &TaxonomyConfig {
        &self.taxonomy
    }

    fn add_phrase(&mut self, phrase: &str, term: Term) {
        let key: Vec<String> = tokenize(phrase)
            .into_iter()
            .filter_map(|t| match t.kind {
                TokenKind::Word(w) => Some(w),
                TokenKind::Separator => None,
            })
            .collect();
        if key.is_empty() {
            return;
        }
        self.max_phrase = self.max_phrase.max(key.len());
        let terms = self.lexicon.entry(key).or_default();
        if !terms.contains(&term) {
            terms.push(term);
        }
    }

    fn term_for(&self, class: FieldClass, canonical: &str) -> Term {
        match class {
            FieldClass::Lifecycle => Term::Lifecycle(canonical.parse().expect("validated")),
            FieldClass::Season => Term::Season(canonical.parse().expect("validated")),
            FieldClass::Health => Term::Health(canonical.parse().expect("validated")),
            FieldClass::Category => Term::Category(canonical.parse().expect("validated")),
            FieldClass::Crop => Term::Crop(canonical.to_string()),
            FieldClass::Variety => Term::Variety(canonical.to_string()),
        }
    }

    /// Case- and spacing-insensitive match against the canonical vocabulary.
    fn canonical_form(&self, raw: &str, class: FieldClass) -> Option<String> {
        let t = &self.taxonomy;
        match class {
            FieldClass::Lifecycle => Lifecycle::ALL
                .iter()
                .find(|l| compact(l.as_str()) == compact(raw))
                .map(|l| l.to_string()),
            FieldClass::Season => Season::ALL
                .iter()
                .find(|l| compact(l.as_str()) == compact(raw))
                .map(|l| l.to_string()),
            FieldClass::Health => Health::ALL
                .iter()
                .find(|l| compact(l.as_str()) == compact(raw))
                .map(|l| l.to_string()),
            FieldClass::Category => Category::ALL
                .iter()
                .find(|l| compact(l.as_str()) == compact(raw))
                .map(|l| l.to_string()),
            FieldClass::Crop => t.canonical_crop(raw).map(str::to_string),
            FieldClass::Variety => t.crops_with_variety(raw).first().map(|(_, v)| v.to_string()),
        }
    }

    /// Maps a loose term onto its canonical identifier for `class`.
    pub fn normalize_term(&self, raw: &str, class: FieldClass) -> Result<String, FrontendError> {
        let key = raw.trim().to_lowercase();
        if let Some(c) = self.synonyms.get(&class).and_then(|m| m.get(&key)) {
            return Ok(c.clone());
        }
        self.canonical_form(&key, class)
            .ok_or_else(|| FrontendError::UnknownTerm { term: raw.to_string(), class })
    }

    /// Rules-mode decomposition; a pure function of (prompt, tables, taxonomy).
    pub fn decompose_rules(&self, prompt: &str) -> Result<Vec<SubQuery>, FrontendError> {
        if prompt.trim().is_empty() {
            return Err(FrontendError::EmptyPrompt);
        }
        let tokens = tokenize(prompt);
        let matches = self.scan(&tokens);

        let mut segments: Vec<Vec<&Match>> = vec![Vec::new()];
        for m in &matches {
            if m.is_separator() {
                segments.push(Vec::new());
            } else {
                segments.last_mut().expect("non-empty").push(m);
            }
        }

        let mut out: Vec<SubQuery> = Vec::new();
        let mut pending: Option<SubQuery> = None;
        for seg in segments.iter().filter(|s| !s.is_empty()) {
            let span = (seg[0].start, seg[seg.len() - 1].end);
            let residual = prompt[span.0..span.1].to_string();
            let built = self.build_segment(seg, residual);
            if built.iter().any(SubQuery::has_target) {
                for mut q in built {
                    if let Some(p) = pending.take() {
                        q.absorb_attributes(&p);
                    }
                    out.push(q);
                }
            } else if let Some(attrs) = built.into_iter().next() {
                match out.last_mut() {
                    Some(prev) => prev.absorb_attributes(&attrs),
                    None => match pending.as_mut() {
                        Some(p) => p.absorb_attributes(&attrs),
                        None => pending = Some(attrs),
                    },
                }
            }
        }
        if out.is_empty() {
            let mut q = pending.unwrap_or_default();
            q.residual_text = prompt.trim().to_string();
            out.push(q);
        }
        Ok(out)
    }

    fn scan(&self, tokens: &[Token]) -> Vec<Match> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            let TokenKind::Word(ref w) = tokens[i].kind else {
                out.push(Match { start: tokens[i].start, end: tokens[i].end, terms: vec![Term::Conjunction] });
                i += 1;
                continue;
            };
            let mut matched = false;
            let max = self.max_phrase.min(tokens.len() - i);
            for len in (1..=max).rev() {
                let window = &tokens[i..i + len];
                let words: Option<Vec<String>> = window
                    .iter()
                    .map(|t| match &t.kind {
                        TokenKind::Word(w) => Some(w.clone()),
                        TokenKind::Separator => None,
                    })
                    .collect();
                let Some(words) = words else { continue };
                if let Some(terms) = self.lexicon.get(&words) {
                    out.push(Match { start: window[0].start, end: window[len - 1].end, terms: terms.clone() });
                    i += len;
                    matched = true;
                    break;
                }
            }
            if !matched {
                if let Ok(n) = w.parse::<u32>() {
                    if n > 0 {
                        out.push(Match { start: tokens[i].start, end: tokens[i].end, terms: vec![Term::Number(n)] });
                    }
                }
                i += 1;
            }
        }
        out
    }

    fn build_segment(&self, seg: &[&Match], residual: String) -> Vec<SubQuery> {
        let tax = &self.taxonomy;
        let mut attrs = SubQuery { residual_text: residual, ..Default::default() };
        let mut categories = Vec::new();
        // crops named unambiguously (used to resolve crop/variety homonyms)
        let explicit_crops: Vec<String> = seg
            .iter()
            .filter(|m| m.terms.len() == 1)
            .filter_map(|m| match &m.terms[0] {
                Term::Crop(c) => Some(c.clone()),
                _ => None,
            })
            .collect();

        // (crop, variety) targets in order of appearance
        let mut targets: Vec<(Option<String>, Option<String>)> = Vec::new();
        let push_crop = |targets: &mut Vec<(Option<String>, Option<String>)>, crop: String| {
            if let Some(t) = targets.iter_mut().find(|t| t.0.as_deref() == Some(&crop) || t.0.is_none()) {
                t.0 = Some(crop);
            } else {
                targets.push((Some(crop), None));
            }
        };

        for m in seg {
            let term = resolve(&m.terms, &explicit_crops, tax);
            match term {
                Term::Crop(c) => push_crop(&mut targets, c),
                Term::Variety(v) => {
                    let owners = tax.crops_with_variety(&v);
                    let crop = owners
                        .iter()
                        .find(|(c, _)| explicit_crops.iter().any(|e| e == c))
                        .or(owners.first())
                        .map(|(c, _)| c.to_string());
                    let slot = targets.iter_mut().find(|t| {
                        t.1.is_none() && (t.0.is_none() || t.0 == crop || !explicit_crops.is_empty())
                    });
                    match slot {
                        Some(t) => {
                            t.1 = Some(v);
                            if t.0.is_none() {
                                t.0 = crop;
                            }
                        }
                        None => targets.push((crop, Some(v))),
                    }
                }
                Term::Category(c) => categories.push(c),
                Term::Lifecycle(l) => {
                    attrs.lifecycle.get_or_insert(l);
                }
                Term::Season(s) => {
                    attrs.season.get_or_insert(s);
                }
                Term::Health(h) => {
                    attrs.health.get_or_insert(h);
                }
                Term::Number(n) => {
                    attrs.quantity.get_or_insert(n);
                }
                Term::Structural | Term::Conjunction => {}
            }
        }

        if targets.is_empty() {
            attrs.category = categories.first().copied();
            return vec![attrs];
        }
        targets
            .into_iter()
            .map(|(crop, variety)| {
                let mut q = attrs.clone();
                q.category = crop.as_deref().and_then(|c| tax.category_of(c));
                q.crop = crop;
                q.variety = variety;
                q
            })
            .collect()
    }
}

/// Picks one interpretation of an ambiguous phrase: a variety reading wins
/// only when its owning crop is named elsewhere in the segment.
fn resolve(terms: &[Term], explicit_crops: &[String], tax: &TaxonomyConfig) -> Term {
    if terms.len() == 1 {
        return terms[0].clone();
    }
    for t in terms {
        if let Term::Variety(v) = t {
            if tax
                .crops_with_variety(v)
                .iter()
                .any(|(c, _)| explicit_crops.iter().any(|e| e == c))
            {
                return t.clone();
            }
        }
    }
    terms
        .iter()
        .find(|t| matches!(t, Term::Crop(_)))
        .unwrap_or(&terms[0])
        .clone()
}

#[derive(Debug, Clone)]
struct Match {
    start: usize,
    end: usize,
    terms: Vec<Term>,
}

impl Match {
    fn is_separator(&self) -> bool {
        self.terms == [Term::Conjunction]
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TokenKind {
    Word(String),
    Separator,
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokenKind,
    start: usize,
    end: usize,
}

/// Words are maximal alphanumeric runs (lowercased); `,` `;` `&` are separators.
fn tokenize(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut word_start: Option<usize> = None;
    let flush = |out: &mut Vec<Token>, start: Option<usize>, end: usize| {
        if let Some(s) = start {
            out.push(Token { kind: TokenKind::Word(text[s..end].to_lowercase()), start: s, end });
        }
    };
    for (i, c) in text.char_indices() {
        if c.is_alphanumeric() {
            if word_start.is_none() {
                word_start = Some(i);
            }
            continue;
        }
        flush(&mut out, word_start.take(), i);
        if matches!(c, ',' | ';' | '&') {
            out.push(Token { kind: TokenKind::Separator, start: i, end: i + c.len_utf8() });
        }
    }
    flush(&mut out, word_start, text.len());
    out
}

/// Where a decomposition came from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Decomposition {
    pub subqueries: Vec<SubQuery>,
    pub mode: FrontendMode,
    pub warnings: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct ProviderReply {
    subqueries: Vec<ProviderSubQuery>,
}

#[derive(Debug, Deserialize)]
struct ProviderSubQuery {
    category: Option<String>,
    crop: Option<String>,
    variety: Option<String>,
    lifecycle: Option<String>,
    season: Option<String>,
    health: Option<String>,
    quantity: Option<u32>,
    residual_text: String,
}

/// Front end combining the rules engine with an optional provider pass.
pub struct Frontend<'a> {
    pub table: &'a NormalizationTable,
    pub provider: Option<&'a dyn ChatProvider>,
}

impl<'a> Frontend<'a> {
    pub fn rules(table: &'a NormalizationTable) -> Self {
        Self { table, provider: None }
    }

    /// Messages sent to the chat provider for `prompt`.
    pub fn provider_messages(&self, prompt: &str) -> Vec<ChatMessage> {
        let tax = self.table.taxonomy();
        let join = |xs: Vec<String>| xs.join(", ");
        let crops = join(tax.crops().map(|(_, c)| c.clone()).collect());
        let varieties = join(
            tax.crops()
                .map(|(_, c)| format!("{c}: {}", tax.varieties[c].join("/")))
                .collect(),
        );
        let system = format!(
            "Split the user's scene request into one JSON object per requested field. \
             Reply with JSON only: {{\"subqueries\": [{{\"category\", \"crop\", \"variety\", \
             \"lifecycle\", \"season\", \"health\", \"quantity\", \"residual_text\"}}]}}. \
             Omit fields the user did not state. residual_text must be copied verbatim from the request. \
             Categories: {}. Crops: {crops}. Varieties: {varieties}. Lifecycles: {}. Seasons: {}. Health: {}.",
            join(tax.categories.keys().map(|c| c.to_string()).collect()),
            join(tax.lifecycles.iter().map(|c| c.to_string()).collect()),
            join(tax.seasons.iter().map(|c| c.to_string()).collect()),
            join(tax.healths.iter().map(|c| c.to_string()).collect()),
        );
        vec![ChatMessage::system(system), ChatMessage::user(prompt.trim())]
    }

    /// Serializes subqueries in the reply format the provider is asked for.
    pub fn render_provider_reply(subqueries: &[SubQuery]) -> String {
        serde_json::to_string(&serde_json::json!({ "subqueries": subqueries })).expect("serializable")
    }

    pub fn decompose(&self, prompt: &str, mode: FrontendMode) -> Result<Decomposition, FrontendError> {
        if prompt.trim().is_empty() {
            return Err(FrontendError::EmptyPrompt);
        }
        if mode == FrontendMode::Provider {
            let attempt = match self.provider {
                Some(p) => p
                    .chat(&self.provider_messages(prompt))
                    .map_err(FrontendError::from)
                    .and_then(|reply| self.parse_reply(prompt, &reply)),
                None => Err(FrontendError::Config("provider mode without a chat provider".into())),
            };
            match attempt {
                Ok(subqueries) => {
                    return Ok(Decomposition { subqueries, mode: FrontendMode::Provider, warnings: vec![] })
                }
                Err(e) => {
                    let msg = format!("provider decomposition failed ({e}); using rules engine");
                    log::warn!("{msg}");
                    return Ok(Decomposition {
                        subqueries: self.table.decompose_rules(prompt)?,
                        mode: FrontendMode::Rules,
                        warnings: vec![msg],
                    });
                }
            }
        }
        Ok(Decomposition {
            subqueries: self.table.decompose_rules(prompt)?,
            mode: FrontendMode::Rules,
            warnings: vec![],
        })
    }

    fn parse_reply(&self, prompt: &str, reply: &str) -> Result<Vec<SubQuery>, FrontendError> {
        let bad = |m: String| {
            FrontendError::Provider(ProviderError::MalformedResponse { message: m, attempts: 1 })
        };
        let parsed: ProviderReply = serde_json::from_str(reply.trim()).map_err(|e| bad(e.to_string()))?;
        if parsed.subqueries.is_empty() {
            return Err(bad("no subqueries".into()));
        }
        let t = self.table;
        let norm = |v: &Option<String>, class| -> Result<Option<String>, FrontendError> {
            v.as_deref().map(|s| t.normalize_term(s, class)).transpose()
        };
        parsed
            .subqueries
            .into_iter()
            .map(|p| {
                if !prompt.contains(&p.residual_text) {
                    return Err(bad(format!("residual text `{}` not in prompt", p.residual_text)));
                }
                Ok(SubQuery {
                    category: norm(&p.category, FieldClass::Category)?.map(|s| s.parse().expect("canonical")),
                    crop: norm(&p.crop, FieldClass::Crop)?,
                    variety: norm(&p.variety, FieldClass::Variety)?,
                    lifecycle: norm(&p.lifecycle, FieldClass::Lifecycle)?.map(|s| s.parse().expect("canonical")),
                    season: norm(&p.season, FieldClass::Season)?.map(|s| s.parse().expect("canonical")),
                    health: norm(&p.health, FieldClass::Health)?.map(|s| s.parse().expect("canonical")),
                    quantity: p.quantity.filter(|&q| q > 0),
                    residual_text: p.residual_text,
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::MockProvider;

    fn table() -> NormalizationTable {
        NormalizationTable::default_bundled(&TaxonomyConfig::default_bundled())
    }

    fn sq(cat: Category, crop: &str) -> SubQuery {
        SubQuery { category: Some(cat), crop: Some(crop.into()), ..Default::default() }
    }

    #[test]
    fn detailed_prompt() {
        let t = table();
        let prompt = "Generate a healthy Pink Lady apple orchard in summer.";
        let out = t.decompose_rules(prompt).unwrap();
        assert_eq!(out.len(), 1);
        let q = &out[0];
        assert_eq!(q.category, Some(Category::Fruits));
        assert_eq!(q.crop.as_deref(), Some("Apple"));
        assert_eq!(q.variety.as_deref(), Some("PinkLady"));
        assert_eq!(q.lifecycle, None);
        assert_eq!(q.season, Some(Season::Summer));
        assert_eq!(q.health, Some(Health::Healthy));
        assert!(prompt.contains(&q.residual_text));
    }

    #[test]
    fn generic_prompt() {
        let out = table().decompose_rules("Generate an apple field.").unwrap();
        assert_eq!(out.len(), 1);
        let mut expected = sq(Category::Fruits, "Apple");
        expected.residual_text = out[0].residual_text.clone();
        assert_eq!(out[0], expected);
    }

    #[test]
    fn conjunction_split() {
        let prompt = "Generate a tomato field and a carrot field.";
        let out = table().decompose_rules(prompt).unwrap();
        let crops: Vec<_> = out.iter().map(|q| q.crop.as_deref().unwrap()).collect();
        assert_eq!(crops, ["Tomato", "Carrot"]);
        assert_eq!(out[0].residual_text, "tomato field");
        assert_eq!(out[1].residual_text, "carrot field");
    }

    #[test]
    fn orchard_type_prompt() {
        let out = table()
            .decompose_rules("Generate an apple orchard of the type Pink Lady during summer in a mature growth stage.")
            .unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].variety.as_deref(), Some("PinkLady"));
        assert_eq!(out[0].lifecycle, Some(Lifecycle::Maturation));
        assert_eq!(out[0].season, Some(Season::Summer));
    }

    #[test]
    fn category_only_and_quantities() {
        let out = table().decompose_rules("Generate some fruit and vegetable fields.").unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!((out[0].category, out[0].crop.as_ref()), (Some(Category::Fruits), None));
        assert_eq!((out[1].category, out[1].crop.as_ref()), (Some(Category::Vegetables), None));

        let out = table().decompose_rules("Create three young Gala apple orchards, 2 lettuce plots").unwrap();
        assert_eq!(out[0].quantity, Some(3));
        assert_eq!(out[0].lifecycle, Some(Lifecycle::Vegetative));
        assert_eq!(out[1].quantity, Some(2));
        assert_eq!(out[1].crop.as_deref(), Some("Lettuce"));
    }

    #[test]
    fn homonyms_and_synonyms() {
        let t = table();
        let out = t.decompose_rules("a cherry orchard in autumn").unwrap();
        assert_eq!(out[0].crop.as_deref(), Some("Cherry"));
        assert_eq!(out[0].season, Some(Season::Fall));
        let out = t.decompose_rules("a field of diseased cherry tomatoes").unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!((out[0].crop.as_deref(), out[0].variety.as_deref()), (Some("Tomato"), Some("Cherry")));
        assert_eq!(out[0].health, Some(Health::Ill));
        let out = t.decompose_rules("flowering Pink-Lady trees").unwrap();
        assert_eq!(out[0].crop.as_deref(), Some("Apple"));
        assert_eq!(out[0].lifecycle, Some(Lifecycle::Reproductive));
    }

    #[test]
    fn attribute_only_segments_attach() {
        let out = table().decompose_rules("an apple orchard, in winter and sick").unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].season, Some(Season::Winter));
        assert_eq!(out[0].health, Some(Health::Ill));
    }

    #[test]
    fn no_target_still_yields_one_subquery() {
        let out = table().decompose_rules("Generate a mango orchard in spring").unwrap();
        assert_eq!(out.len(), 1);
        assert!(!out[0].has_target());
        assert_eq!(out[0].season, Some(Season::Spring));
        assert!(matches!(table().decompose_rules("   "), Err(FrontendError::EmptyPrompt)));
    }

    #[test]
    fn normalize_terms() {
        let t = table();
        assert_eq!(t.normalize_term("early stage", FieldClass::Lifecycle).unwrap(), "Vegetative");
        assert_eq!(t.normalize_term("flowering", FieldClass::Lifecycle).unwrap(), "Reproductive");
        assert_eq!(t.normalize_term("Maturation", FieldClass::Lifecycle).unwrap(), "Maturation");
        assert_eq!(t.normalize_term("MATURATION", FieldClass::Lifecycle).unwrap(), "Maturation");
        assert_eq!(t.normalize_term("Autumn", FieldClass::Season).unwrap(), "Fall");
        assert_eq!(t.normalize_term("pink lady", FieldClass::Variety).unwrap(), "PinkLady");
        assert!(matches!(
            t.normalize_term("dormant", FieldClass::Lifecycle),
            Err(FrontendError::UnknownTerm { .. })
        ));
    }

    #[test]
    fn bad_synonym_table_rejected() {
        let tax = TaxonomyConfig::default_bundled();
        let r = NormalizationTable::from_json(r#"{"lifecycle":{"old":"Senescence"}}"#, &tax);
        assert!(matches!(r, Err(FrontendError::Config(_))));
    }

    #[test]
    fn defaults() {
        let tax = TaxonomyConfig::default_bundled();
        let q = SubQuery {
            crop: Some("Apple".into()),
            variety: Some("PinkLady".into()),
            season: Some(Season::Summer),
            health: Some(Health::Healthy),
            ..Default::default()
        };
        let d = apply_defaults(&q, &tax);
        assert_eq!(d.lifecycle, Some(Lifecycle::Maturation));
        assert_eq!(d.category, Some(Category::Fruits));
        assert_eq!(d.quantity, Some(1));
        assert_eq!(apply_defaults(&d, &tax), d);

        let c = apply_defaults(&SubQuery::for_crop("Carrot"), &tax);
        assert_eq!(c.variety.as_deref(), Some("Nantes"));
        assert_eq!((c.lifecycle, c.season, c.health), (Some(Lifecycle::Maturation), Some(Season::Summer), Some(Health::Healthy)));

        let none = SubQuery { season: Some(Season::Fall), ..Default::default() };
        assert_eq!(apply_defaults(&none, &tax), none);
    }

    #[test]
    fn provider_mode_uses_reply_and_falls_back() {
        let t = table();
        let prompt = "Generate an apple field.";
        let mut mock = MockProvider::new("m", HashMap::new());
        let fe = Frontend { table: &t, provider: None };
        let reply = r#"{"subqueries":[{"crop":"apple","variety":"gala","season":"autumn","residual_text":"an apple field"}]}"#;
        mock.insert(&fe.provider_messages(prompt), reply);
        let fe = Frontend { table: &t, provider: Some(&mock) };
        let d = fe.decompose(prompt, FrontendMode::Provider).unwrap();
        assert_eq!(d.mode, FrontendMode::Provider);
        assert_eq!(d.subqueries[0].variety.as_deref(), Some("Gala"));
        assert_eq!(d.subqueries[0].season, Some(Season::Fall));

        // unknown request → rules fallback with a warning
        let d = fe.decompose("Generate a carrot field.", FrontendMode::Provider).unwrap();
        assert_eq!(d.mode, FrontendMode::Rules);
        assert_eq!(d.warnings.len(), 1);
        assert_eq!(d.subqueries[0].crop.as_deref(), Some("Carrot"));
    }

    #[test]
    fn malformed_provider_reply_falls_back() {
        let t = table();
        let prompt = "Generate an apple field.";
        let mut mock = MockProvider::new("m", HashMap::new());
        let messages = Frontend::rules(&t).provider_messages(prompt);
        mock.insert(&messages, r#"{"subqueries":[{"crop":"mango","residual_text":"apple"}]}"#);
        let fe = Frontend { table: &t, provider: Some(&mock) };
        let d = fe.decompose(prompt, FrontendMode::Provider).unwrap();
        assert_eq!(d.mode, FrontendMode::Rules);
        assert_eq!(d.subqueries, t.decompose_rules(prompt).unwrap());
    }
}
