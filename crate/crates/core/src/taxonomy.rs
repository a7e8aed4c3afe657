//! Asset-path grammar and the enumerable crop hierarchy.
//!
//! Every asset lives at
//! `/Game/<Category>/<Crop>/<Variety>/<Lifecycle>/<Season>/<Health>/<Variety>_<Lifecycle>_<Season>_<Health>.fbx`.
//! Identifiers inside paths are case-sensitive PascalCase; lookups through
//! [`TaxonomyConfig`] helpers are case-insensitive.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PATH_PREFIX: &str = "/Game/";
pub const PATH_SUFFIX: &str = ".fbx";

/// Default taxonomy shipped with the crate (`crates/core/data/taxonomy.json`).
pub const DEFAULT_TAXONOMY_JSON: &str = include_str!("../data/taxonomy.json");

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TaxonomyError {
    #[error("taxonomy config error: {0}")]
    Config(String),
    #[error("malformed asset path `{path}`: {reason}")]
    MalformedPath { path: String, reason: String },
    #[error("unknown {field} `{value}`")]
    UnknownTaxon { field: &'static str, value: String },
}

macro_rules! taxon_enum {
    ($(#[$m:meta])* $name:ident, $field:literal, [$($variant:ident),+]) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => stringify!($variant)),+
                }
            }

            /// Case-insensitive lookup of the canonical name.
            pub fn from_name_ci(s: &str) -> Option<Self> {
                Self::ALL.iter().copied().find(|v| v.as_str().eq_ignore_ascii_case(s.trim()))
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = TaxonomyError;

            /// Exact (case-sensitive) parse, as used inside asset paths.
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                Self::ALL
                    .iter()
                    .copied()
                    .find(|v| v.as_str() == s)
                    .ok_or_else(|| TaxonomyError::UnknownTaxon { field: $field, value: s.to_string() })
            }
        }
    };
}

taxon_enum!(Category, "category", [Fruits, Vegetables]);
taxon_enum!(
    /// Growth stage.
    Lifecycle,
    "lifecycle",
    [Vegetative, Reproductive, Maturation]
);
taxon_enum!(Season, "season", [Spring, Summer, Fall, Winter]);
taxon_enum!(Health, "health", [Healthy, Ill]);

/// Fully populated six-field descriptor of one asset variant.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AssetMetadata {
    pub category: Category,
    pub crop: String,
    pub variety: String,
    pub lifecycle: Lifecycle,
    pub season: Season,
    pub health: Health,
}

impl AssetMetadata {
    pub fn new(
        category: Category,
        crop: impl Into<String>,
        variety: impl Into<String>,
        lifecycle: Lifecycle,
        season: Season,
        health: Health,
    ) -> Self {
        Self {
            category,
            crop: crop.into(),
            variety: variety.into(),
            lifecycle,
            season,
            health,
        }
    }
}

/// Canonical engine path of one asset.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AssetPath(String);

impl AssetPath {
    /// Wraps a raw string without checking it; use [`TaxonomyConfig::parse_path`] to validate.
    pub fn new_unchecked(raw: impl Into<String>) -> Self {
        Self(raw.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }
}

impl fmt::Display for AssetPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for AssetPath {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

/// The active hierarchy: categories → crops → varieties, plus the enum axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaxonomyConfig {
    pub categories: IndexMap<Category, Vec<String>>,
    pub varieties: IndexMap<String, Vec<String>>,
    pub lifecycles: Vec<Lifecycle>,
    pub seasons: Vec<Season>,
    pub healths: Vec<Health>,
}

impl TaxonomyConfig {
    pub fn default_bundled() -> Self {
        Self::from_json(DEFAULT_TAXONOMY_JSON).expect("bundled taxonomy is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, TaxonomyError> {
        let cfg: TaxonomyConfig =
            serde_json::from_str(text).map_err(|e| TaxonomyError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, TaxonomyError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TaxonomyError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Checks well-formedness: non-empty lists, no duplicates, every crop
    /// has varieties and belongs to exactly one category.
    pub fn validate(&self) -> Result<(), TaxonomyError> {
        let err = |m: String| Err(TaxonomyError::Config(m));
        if self.categories.is_empty() {
            return err("no categories".into());
        }
        fn no_dups<T: fmt::Display>(what: &str, items: &[T]) -> Result<(), TaxonomyError> {
            if items.is_empty() {
                return Err(TaxonomyError::Config(format!("empty {what} list")));
            }
            let mut seen = HashSet::new();
            for it in items {
                if !seen.insert(it.to_string().to_ascii_lowercase()) {
                    return Err(TaxonomyError::Config(format!("duplicate {what} `{it}`")));
                }
            }
            Ok(())
        }
        no_dups("lifecycle", &self.lifecycles)?;
        no_dups("season", &self.seasons)?;
        no_dups("health", &self.healths)?;

        let mut all_crops = Vec::new();
        for (cat, crops) in &self.categories {
            no_dups(&format!("{cat} crop"), crops)?;
            all_crops.extend(crops.iter().cloned());
        }
        no_dups("crop", &all_crops)?;
        for crop in &all_crops {
            check_identifier(crop)?;
            match self.varieties.get(crop) {
                None => return err(format!("crop `{crop}` has no variety list")),
                Some(v) => {
                    no_dups(&format!("{crop} variety"), v)?;
                    for name in v {
                        check_identifier(name)?;
                    }
                }
            }
        }
        for crop in self.varieties.keys() {
            if !all_crops.contains(crop) {
                return err(format!("variety list for `{crop}` which is in no category"));
            }
        }
        Ok(())
    }

    pub fn combination_count(&self) -> usize {
        let varieties: usize = self.crops().map(|(_, c)| self.varieties[c].len()).sum();
        varieties * self.lifecycles.len() * self.seasons.len() * self.healths.len()
    }

    /// `(category, crop)` pairs in config order.
    pub fn crops(&self) -> impl Iterator<Item = (Category, &String)> {
        self.categories
            .iter()
            .flat_map(|(cat, crops)| crops.iter().map(move |c| (*cat, c)))
    }

    pub fn category_of(&self, crop: &str) -> Option<Category> {
        self.crops().find(|(_, c)| c.as_str() == crop).map(|(cat, _)| cat)
    }

    /// Case-insensitive crop lookup returning the canonical identifier.
    pub fn canonical_crop(&self, name: &str) -> Option<&str> {
        let key = compact(name);
        self.crops().map(|(_, c)| c.as_str()).find(|c| compact(c) == key)
    }

    /// Case-insensitive variety lookup within a crop.
    pub fn canonical_variety(&self, crop: &str, name: &str) -> Option<&str> {
        let key = compact(name);
        self.varieties
            .get(crop)?
            .iter()
            .map(String::as_str)
            .find(|v| compact(v) == key)
    }

    /// All `(crop, variety)` pairs whose variety matches `name` case-insensitively.
    pub fn crops_with_variety(&self, name: &str) -> Vec<(&str, &str)> {
        let key = compact(name);
        self.varieties
            .iter()
            .flat_map(|(crop, vs)| vs.iter().map(move |v| (crop.as_str(), v.as_str())))
            .filter(|(_, v)| compact(v) == key)
            .collect()
    }

    pub fn first_crop(&self, category: Category) -> Option<&str> {
        self.categories.get(&category)?.first().map(String::as_str)
    }

    pub fn first_variety(&self, crop: &str) -> Option<&str> {
        self.varieties.get(crop)?.first().map(String::as_str)
    }

    /// Checks every field of `meta` against this config (case-sensitive).
    pub fn check(&self, meta: &AssetMetadata) -> Result<(), TaxonomyError> {
        let unknown = |field, value: &str| TaxonomyError::UnknownTaxon {
            field,
            value: value.to_string(),
        };
        match self.categories.get(&meta.category) {
            None => return Err(unknown("category", meta.category.as_str())),
            Some(crops) if !crops.contains(&meta.crop) => return Err(unknown("crop", &meta.crop)),
            _ => {}
        }
        if !self.varieties[&meta.crop].contains(&meta.variety) {
            return Err(unknown("variety", &meta.variety));
        }
        if !self.lifecycles.contains(&meta.lifecycle) {
            return Err(unknown("lifecycle", meta.lifecycle.as_str()));
        }
        if !self.seasons.contains(&meta.season) {
            return Err(unknown("season", meta.season.as_str()));
        }
        if !self.healths.contains(&meta.health) {
            return Err(unknown("health", meta.health.as_str()));
        }
        Ok(())
    }

    pub fn format_path(&self, meta: &AssetMetadata) -> Result<AssetPath, TaxonomyError> {
        self.check(meta)?;
        Ok(render_path(meta))
    }

    pub fn parse_path(&self, path: &AssetPath) -> Result<AssetMetadata, TaxonomyError> {
        let meta = parse_path_syntax(path.as_str())?;
        self.check(&meta)?;
        Ok(meta)
    }

    /// Every metadata tuple, in config order.
    pub fn enumerate_metadata(&self) -> Vec<AssetMetadata> {
        let mut out = Vec::with_capacity(self.combination_count());
        for (category, crop) in self.crops() {
            for variety in &self.varieties[crop] {
                for &lifecycle in &self.lifecycles {
                    for &season in &self.seasons {
                        for &health in &self.healths {
                            out.push(AssetMetadata::new(
                                category, crop, variety, lifecycle, season, health,
                            ));
                        }
                    }
                }
            }
        }
        out
    }

    /// All valid asset paths, sorted lexicographically.
    pub fn enumerate_paths(&self) -> Vec<AssetPath> {
        let mut paths: Vec<AssetPath> = self.enumerate_metadata().iter().map(render_path).collect();
        paths.sort();
        paths
    }
}

fn check_identifier(s: &str) -> Result<(), TaxonomyError> {
    let ok = !s.is_empty()
        && s.chars().all(|c| c.is_ascii_alphanumeric())
        && s.chars().next().is_some_and(|c| c.is_ascii_uppercase());
    if ok {
        Ok(())
    } else {
        Err(TaxonomyError::Config(format!(
            "identifier `{s}` is not PascalCase alphanumeric"
        )))
    }
}

/// Lowercase with non-alphanumerics removed; used for case/spacing-insensitive matching.
pub fn compact(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

/// Splits a PascalCase identifier into words: `PinkLady` → `Pink Lady`.
pub fn display_name(ident: &str) -> String {
    let mut out = String::with_capacity(ident.len() + 4);
    let mut prev_lower = false;
    for c in ident.chars() {
        if c.is_uppercase() && prev_lower {
            out.push(' ');
        }
        prev_lower = c.is_lowercase() || c.is_ascii_digit();
        out.push(c);
    }
    out
}

fn render_path(m: &AssetMetadata) -> AssetPath {
    AssetPath(format!(
        "{PATH_PREFIX}{cat}/{crop}/{var}/{lc}/{season}/{health}/{var}_{lc}_{season}_{health}{PATH_SUFFIX}",
        cat = m.category,
        crop = m.crop,
        var = m.variety,
        lc = m.lifecycle,
        season = m.season,
        health = m.health,
    ))
}

/// Grammar-level parse without consulting a config (crop/variety unchecked).
pub fn parse_path_syntax(raw: &str) -> Result<AssetMetadata, TaxonomyError> {
    let malformed = |reason: &str| TaxonomyError::MalformedPath {
        path: raw.to_string(),
        reason: reason.to_string(),
    };
    let body = raw
        .strip_prefix(PATH_PREFIX)
        .ok_or_else(|| malformed("missing `/Game/` prefix"))?;
    let body = body
        .strip_suffix(PATH_SUFFIX)
        .ok_or_else(|| malformed("missing `.fbx` suffix"))?;
    let segs: Vec<&str> = body.split('/').collect();
    if segs.len() != 7 {
        return Err(malformed(&format!("expected 7 segments, found {}", segs.len())));
    }
    if segs.iter().any(|s| s.is_empty()) {
        return Err(malformed("empty segment"));
    }
    let expected_file = segs[2..6].join("_");
    if segs[6] != expected_file {
        return Err(malformed("file name does not match directory segments"));
    }
    Ok(AssetMetadata {
        category: segs[0].parse()?,
        crop: segs[1].to_string(),
        variety: segs[2].to_string(),
        lifecycle: segs[3].parse()?,
        season: segs[4].parse()?,
        health: segs[5].parse()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pink_lady() -> AssetMetadata {
        AssetMetadata::new(
            Category::Fruits,
            "Apple",
            "PinkLady",
            Lifecycle::Maturation,
            Season::Summer,
            Health::Healthy,
        )
    }

    #[test]
    fn default_has_672_combinations() {
        let cfg = TaxonomyConfig::default_bundled();
        assert_eq!(cfg.combination_count(), 672);
        let paths = cfg.enumerate_paths();
        assert_eq!(paths.len(), 672);
        let unique: HashSet<_> = paths.iter().collect();
        assert_eq!(unique.len(), 672);
        assert!(paths.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn single_variety_config_gives_24() {
        let cfg = TaxonomyConfig::from_json(
            r#"{"categories":{"Fruits":["Apple"]},"varieties":{"Apple":["Gala"]},
                "lifecycles":["Vegetative","Reproductive","Maturation"],
                "seasons":["Spring","Summer","Fall","Winter"],"healths":["Healthy","Ill"]}"#,
        )
        .unwrap();
        assert_eq!(cfg.enumerate_paths().len(), 24);
    }

    #[test]
    fn apple_restriction_gives_120() {
        let mut cfg = TaxonomyConfig::default_bundled();
        cfg.categories = [(Category::Fruits, vec!["Apple".to_string()])].into_iter().collect();
        cfg.varieties.retain(|k, _| k == "Apple");
        cfg.validate().unwrap();
        // brute-force count over the full default enumeration
        let full = TaxonomyConfig::default_bundled().enumerate_paths();
        let apple = full.iter().filter(|p| p.as_str().starts_with("/Game/Fruits/Apple/")).count();
        assert_eq!(apple, 120);
        assert_eq!(cfg.enumerate_paths().len(), apple);
    }

    #[test]
    fn rejects_bad_configs() {
        let dup = r#"{"categories":{"Fruits":["Apple"]},"varieties":{"Apple":["Gala","Gala"]},
            "lifecycles":["Vegetative"],"seasons":["Spring"],"healths":["Healthy"]}"#;
        assert!(matches!(TaxonomyConfig::from_json(dup), Err(TaxonomyError::Config(_))));
        let empty = r#"{"categories":{"Fruits":["Apple"]},"varieties":{"Apple":[]},
            "lifecycles":["Vegetative"],"seasons":["Spring"],"healths":["Healthy"]}"#;
        assert!(matches!(TaxonomyConfig::from_json(empty), Err(TaxonomyError::Config(_))));
        let missing = r#"{"categories":{"Fruits":["Apple","Pear"]},"varieties":{"Apple":["Gala"]},
            "lifecycles":["Vegetative"],"seasons":["Spring"],"healths":["Healthy"]}"#;
        assert!(TaxonomyConfig::from_json(missing).is_err());
        let bad_ident = r#"{"categories":{"Fruits":["Apple"]},"varieties":{"Apple":["Pink_Lady"]},
            "lifecycles":["Vegetative"],"seasons":["Spring"],"healths":["Healthy"]}"#;
        assert!(TaxonomyConfig::from_json(bad_ident).is_err());
    }

    #[test]
    fn format_examples() {
        let cfg = TaxonomyConfig::default_bundled();
        assert_eq!(
            cfg.format_path(&pink_lady()).unwrap().as_str(),
            "/Game/Fruits/Apple/PinkLady/Maturation/Summer/Healthy/PinkLady_Maturation_Summer_Healthy.fbx"
        );
        let carrot = AssetMetadata::new(
            Category::Vegetables,
            "Carrot",
            "Nantes",
            Lifecycle::Vegetative,
            Season::Spring,
            Health::Ill,
        );
        assert_eq!(
            cfg.format_path(&carrot).unwrap().as_str(),
            "/Game/Vegetables/Carrot/Nantes/Vegetative/Spring/Ill/Nantes_Vegetative_Spring_Ill.fbx"
        );
    }

    #[test]
    fn format_rejects_unknown_taxa() {
        let cfg = TaxonomyConfig::default_bundled();
        let mut m = pink_lady();
        m.variety = "Braeburn".into();
        assert!(matches!(cfg.format_path(&m), Err(TaxonomyError::UnknownTaxon { field: "variety", .. })));
        let mut m = pink_lady();
        m.category = Category::Vegetables;
        assert!(matches!(cfg.format_path(&m), Err(TaxonomyError::UnknownTaxon { field: "crop", .. })));
    }

    #[test]
    fn exhaustive_round_trip() {
        let cfg = TaxonomyConfig::default_bundled();
        for meta in cfg.enumerate_metadata() {
            let p = cfg.format_path(&meta).unwrap();
            assert_eq!(cfg.parse_path(&p).unwrap(), meta);
            assert_eq!(cfg.format_path(&cfg.parse_path(&p).unwrap()).unwrap(), p);
        }
    }

    #[test]
    fn parse_rejections() {
        let cfg = TaxonomyConfig::default_bundled();
        let no_prefix = AssetPath::new_unchecked(
            "Fruits/Apple/PinkLady/Maturation/Summer/Healthy/PinkLady_Maturation_Summer_Healthy.fbx",
        );
        assert!(matches!(cfg.parse_path(&no_prefix), Err(TaxonomyError::MalformedPath { .. })));
        let season_mismatch = AssetPath::new_unchecked(
            "/Game/Fruits/Apple/PinkLady/Maturation/Summer/Healthy/PinkLady_Maturation_Fall_Healthy.fbx",
        );
        assert!(matches!(cfg.parse_path(&season_mismatch), Err(TaxonomyError::MalformedPath { .. })));
        let unknown = AssetPath::new_unchecked(
            "/Game/Fruits/Apple/Braeburn/Maturation/Summer/Healthy/Braeburn_Maturation_Summer_Healthy.fbx",
        );
        assert!(matches!(cfg.parse_path(&unknown), Err(TaxonomyError::UnknownTaxon { .. })));
        let lowercase = AssetPath::new_unchecked(
            "/Game/Fruits/Apple/PinkLady/maturation/Summer/Healthy/PinkLady_maturation_Summer_Healthy.fbx",
        );
        assert!(cfg.parse_path(&lowercase).is_err());
    }

    #[test]
    fn prefix_and_suffix_deletions_rejected() {
        let cfg = TaxonomyConfig::default_bundled();
        for p in cfg.enumerate_paths().iter().step_by(37) {
            let s = p.as_str();
            let n = s.len();
            let positions = (0..PATH_PREFIX.len()).chain(n - PATH_SUFFIX.len()..n);
            for i in positions {
                let mut mutated = s.to_string();
                mutated.remove(i);
                assert!(
                    cfg.parse_path(&AssetPath::new_unchecked(mutated.clone())).is_err(),
                    "accepted {mutated}"
                );
            }
        }
    }

    #[test]
    fn lookup_helpers() {
        let cfg = TaxonomyConfig::default_bundled();
        assert_eq!(cfg.canonical_crop("apple"), Some("Apple"));
        assert_eq!(cfg.canonical_variety("Apple", "pink lady"), Some("PinkLady"));
        assert_eq!(cfg.canonical_variety("Apple", "Pink-Lady"), Some("PinkLady"));
        assert_eq!(cfg.crops_with_variety("cherry"), vec![("Tomato", "Cherry")]);
        assert_eq!(cfg.first_crop(Category::Vegetables), Some("Carrot"));
        assert_eq!(display_name("PinkLady"), "Pink Lady");
        assert_eq!(display_name("Roma"), "Roma");
    }
}
