//! Regenerates the bundled data files.
//!
//! ```text
//! cargo run -p sceneforge --example generate_fixtures -- [data-dir]
//! ```
//!
//! Writes `knowledge.json`, `benchmark.jsonl`, `adversarial_kb.json`,
//! `adversarial_queries.txt` and `mock_fixtures.json`. Expected benchmark
//! paths are built from tuples and the documented default rules, not by
//! running the front end. Run twice after editing the benchmark templates:
//! the mock fixtures embed the compiled-in synonym table.

use std::collections::BTreeMap;
use std::path::PathBuf;

use sceneforge::embed_index::LocalEmbedder;
use sceneforge::frontend::{Frontend, NormalizationTable, DEFAULT_HEALTH, DEFAULT_LIFECYCLE, DEFAULT_SEASON};
use sceneforge::knowledge::{
    descriptor_for, health_adjective, KbMode, KnowledgeBase, KnowledgeEntry, Irrigation, Susceptibility,
};
use sceneforge::providers::{chat_request_key, DEFAULT_CHAT_MODEL};
use sceneforge::taxonomy::{display_name, AssetMetadata, AssetPath, Category, Health, Lifecycle, Season, TaxonomyConfig};
use sceneforge::Exec;
use serde_json::json;

struct CropBase {
    height: f64,
    row: f64,
    plant: f64,
    susceptibility: Susceptibility,
    irrigation: Irrigation,
}

fn base(crop: &str) -> CropBase {
    use Irrigation::*;
    use Susceptibility::*;
    let (height, row, plant, susceptibility, irrigation) = match crop {
        "Apple" => (4.0, 4.0, 2.0, Medium, Drip),
        "Banana" => (4.5, 3.0, 2.5, High, Sprinkler),
        "Cherry" => (5.0, 5.0, 3.0, Medium, Drip),
        "Carrot" => (0.3, 0.4, 0.05, Low, Sprinkler),
        "Lettuce" => (0.25, 0.4, 0.3, Medium, Sprinkler),
        "Tomato" => (1.5, 1.2, 0.5, High, Drip),
        other => panic!("no base values for {other}"),
    };
    CropBase { height, row, plant, susceptibility, irrigation }
}

fn round(v: f64, digits: i32) -> f64 {
    let p = 10f64.powi(digits);
    (v * p).round() / p
}

fn entry_id(m: &AssetMetadata) -> String {
    format!(
        "{}-{}-{}-{}-{}",
        m.crop.to_lowercase(),
        m.variety.to_lowercase(),
        m.lifecycle.as_str().to_lowercase(),
        m.season.as_str().to_lowercase(),
        m.health.as_str().to_lowercase()
    )
}

fn effects(m: &AssetMetadata) -> Vec<String> {
    let mut v = vec![match m.season {
        Season::Spring => "fresh_green",
        Season::Summer => "full_foliage",
        Season::Fall => "autumn_tint",
        Season::Winter => "frost",
    }];
    match m.lifecycle {
        Lifecycle::Vegetative => v.push("sparse_canopy"),
        Lifecycle::Reproductive => v.push("flowers"),
        Lifecycle::Maturation => v.push("produce_visible"),
    }
    if m.health == Health::Ill {
        v.extend(["wilt", "leaf_spot"]);
    }
    v.into_iter().map(String::from).collect()
}

fn make_entry(tax: &TaxonomyConfig, m: &AssetMetadata) -> KnowledgeEntry {
    let b = base(&m.crop);
    let vi = tax.varieties[&m.crop].iter().position(|v| *v == m.variety).expect("variety") as f64;
    let stage = match m.lifecycle {
        Lifecycle::Vegetative => 0.4,
        Lifecycle::Reproductive => 0.8,
        Lifecycle::Maturation => 1.0,
    };
    let variety_factor = 0.92 + 0.04 * (vi % 5.0);
    let health_factor = if m.health == Health::Ill { 0.85 } else { 1.0 };
    let plant = round(b.plant * (1.0 + 0.05 * (vi % 3.0)), 3);
    let row = b.row;
    let susceptibility = if m.health == Health::Ill { Susceptibility::High } else { b.susceptibility };
    let irrigation = if m.season == Season::Winter && b.irrigation == Irrigation::Sprinkler { Irrigation::Rainfed } else { b.irrigation };
    KnowledgeEntry {
        id: entry_id(m),
        meta: m.clone(),
        plant_height_m: round(b.height * stage * variety_factor * health_factor, 3),
        row_spacing_m: row,
        plant_spacing_m: plant,
        density_per_ha: round(10_000.0 / (row * plant), 1),
        disease_susceptibility: susceptibility,
        irrigation,
        rendering_effects: effects(m),
        description: None,
    }
}

fn lifecycle_word(l: Lifecycle, alt: usize) -> &'static str {
    match (l, alt % 2) {
        (Lifecycle::Vegetative, 0) => "young",
        (Lifecycle::Vegetative, _) => "seedling",
        (Lifecycle::Reproductive, 0) => "flowering",
        (Lifecycle::Reproductive, _) => "blooming",
        (Lifecycle::Maturation, 0) => "mature",
        (Lifecycle::Maturation, _) => "harvest-ready",
    }
}

fn place_noun(crop: &str) -> &'static str {
    match crop {
        "Apple" | "Cherry" => "orchard",
        "Banana" => "plantation",
        _ => "field",
    }
}

fn article(word: &str) -> &'static str {
    if word.starts_with(['a', 'e', 'i', 'o', 'u', 'A', 'E', 'I', 'O', 'U']) {
        "an"
    } else {
        "a"
    }
}

fn case(prompt: String, category: &str, tax: &TaxonomyConfig, metas: &[AssetMetadata]) -> serde_json::Value {
    let mut paths: Vec<String> = Vec::new();
    for m in metas {
        let p = tax.format_path(m).expect("valid tuple").into_string();
        if !paths.contains(&p) {
            paths.push(p);
        }
    }
    let ids: Vec<String> = metas.iter().map(entry_id).collect();
    json!({"prompt": prompt, "category": category, "expected_paths": paths, "expected_entry_ids": ids})
}

fn defaults(tax: &TaxonomyConfig, crop: &str) -> AssetMetadata {
    AssetMetadata::new(
        tax.category_of(crop).expect("crop"),
        crop,
        tax.first_variety(crop).expect("variety"),
        DEFAULT_LIFECYCLE,
        DEFAULT_SEASON,
        DEFAULT_HEALTH,
    )
}

fn detailed(tax: &TaxonomyConfig) -> Vec<serde_json::Value> {
    let all = tax.enumerate_metadata();
    (0..40)
        .map(|i| {
            let m = &all[(i * 17 + 5) % all.len()];
            let crop = m.crop.to_lowercase();
            let variety = display_name(&m.variety);
            let season = m.season.as_str().to_lowercase();
            let health = health_adjective(m.health);
            let life = lifecycle_word(m.lifecycle, i / 4);
            let prompt = match i % 4 {
                0 => format!("Generate {} {health} {variety} {crop} {} in {season} at the {life} stage.", article(health), place_noun(&m.crop)),
                1 => format!("Create a {life}, {health} {variety} {crop} {} during {season}.", place_noun(&m.crop)),
                2 => format!("I need {health} {variety} {crop} plants that are {life}, in {season}."),
                _ => format!("Show a {season} scene of {life} {variety} {crop} that are {health}."),
            };
            case(prompt, "single_detailed", tax, std::slice::from_ref(m))
        })
        .collect()
}

fn generic(tax: &TaxonomyConfig) -> Vec<serde_json::Value> {
    let crops: Vec<String> = tax.crops().map(|(_, c)| c.clone()).collect();
    let plural = |c: &str| match c {
        "Cherry" => "cherries".to_string(),
        "Tomato" => "tomatoes".to_string(),
        "Lettuce" => "lettuce".to_string(),
        other => format!("{}s", other.to_lowercase()),
    };
    let mut out = Vec::new();
    for i in 0..40 {
        let crop = &crops[i % crops.len()];
        let lc = crop.to_lowercase();
        let noun = place_noun(crop);
        let mut m = defaults(tax, crop);
        let prompt = match i / crops.len() {
            0 => format!("Create {} {lc} {noun}.", article(&lc)),
            1 => {
                m.season = Season::ALL[i % 4];
                format!("Make {} {lc} {noun} in {}.", article(&lc), m.season.as_str().to_lowercase())
            }
            2 => {
                m.health = Health::Ill;
                let word = ["sick", "diseased", "unhealthy", "blighted"][i % 4];
                format!("Generate some {word} {}.", plural(crop))
            }
            3 => {
                m.lifecycle = Lifecycle::ALL[i % 3];
                let word = lifecycle_word(m.lifecycle, i);
                format!("A {word} {lc} {noun}, please.")
            }
            4 => {
                m.variety = tax.varieties[crop][1 + i % (tax.varieties[crop].len() - 1)].clone();
                format!("Plant a {noun} of {} {}.", display_name(&m.variety), plural(crop))
            }
            5 => {
                m.season = Season::Fall;
                let art = if article(&lc) == "an" { "An" } else { "A" };
                format!("{art} {lc} {noun} in autumn")
            }
            _ => {
                let cat = tax.category_of(crop).expect("crop");
                let first = tax.first_crop(cat).expect("crop");
                m = defaults(tax, first);
                let word = if cat == Category::Fruits { "fruit" } else { "vegetable" };
                format!("Generate a generic {word} {}.", if cat == Category::Fruits { "orchard" } else { "garden" })
            }
        };
        out.push(case(prompt, "single_generic", tax, &[m]));
    }
    out
}

fn multi(tax: &TaxonomyConfig) -> Vec<serde_json::Value> {
    let crops: Vec<String> = tax.crops().map(|(_, c)| c.clone()).collect();
    let mut out = Vec::new();
    for i in 0..20 {
        let a = &crops[i % crops.len()];
        let b = &crops[(i + 1 + i / crops.len()) % crops.len()];
        let (la, lb) = (a.to_lowercase(), b.to_lowercase());
        let (na, nb) = (place_noun(a), place_noun(b));
        let mut ma = defaults(tax, a);
        let mut mb = defaults(tax, b);
        let prompt = match i % 4 {
            0 => format!("Create {} {la} {na} next to {} {lb} {nb}.", article(&la), article(&lb)),
            1 => {
                let s = Season::ALL[i % 4];
                ma.season = s;
                mb.season = s;
                // one explicit season propagates to the other field
                format!("Generate {} {la} {na} in {} and {} {lb} {nb}.", article(&la), s.as_str().to_lowercase(), article(&lb))
            }
            2 => {
                ma.health = Health::Ill;
                ma.lifecycle = Lifecycle::Vegetative;
                format!("Make a young diseased {la} {na}, plus {} {lb} {nb}.", article(&lb))
            }
            _ => {
                ma.season = Season::Spring;
                mb.season = Season::Winter;
                format!("Two {la} {na}s in spring and one {lb} {nb} in winter.")
            }
        };
        out.push(case(prompt, "multi_generic", tax, &[ma, mb]));
    }
    out
}

/// Ten queries whose entries embed exactly like their descriptors, except the
/// first: its nearest neighbour is a wrong-season decoy carrying the query's
/// descriptor text, so the correct entry sits at rank 2.
fn adversarial(tax: &TaxonomyConfig, emb: &LocalEmbedder) -> (Vec<KnowledgeEntry>, Vec<AssetPath>) {
    let all = tax.enumerate_metadata();
    let picks: Vec<AssetMetadata> = (0..10).map(|i| all[(i * 67 + 3) % all.len()].clone()).collect();
    let mut entries: Vec<KnowledgeEntry> = picks.iter().map(|m| make_entry(tax, m)).collect();
    let target = &picks[0];
    let mut decoy_meta = target.clone();
    decoy_meta.season = if target.season == Season::Fall { Season::Spring } else { Season::Fall };
    let mut decoy = make_entry(tax, &decoy_meta);
    decoy.id = format!("{}-decoy", decoy.id);
    decoy.description = Some(descriptor_for(target).0);
    entries[0].description = Some(format!("{} orchard rows", descriptor_for(target).0));
    entries.push(decoy);

    let queries: Vec<AssetPath> = picks.iter().map(|m| tax.format_path(m).expect("valid")).collect();
    let kb = KnowledgeBase::build(entries.clone(), tax, emb, Exec::Sequential).expect("fixture builds");
    let ranks: Vec<Option<usize>> =
        queries.iter().map(|q| kb.match_rank(q, tax, emb, KbMode::Hybrid, 3).expect("ranks")).collect();
    let mut want = vec![Some(1); 10];
    want[0] = Some(2);
    assert_eq!(ranks, want, "adversarial fixture ranks");
    let rag_wrong = queries
        .iter()
        .filter(|q| {
            let meta = tax.parse_path(q).expect("valid");
            let top = &kb.candidates(q, tax, emb, KbMode::Rag, 1).expect("candidates")[0];
            let e = kb.entries().iter().find(|e| &e.id == top).expect("entry");
            !sceneforge::knowledge::strict_match(e, &meta)
        })
        .count();
    assert!(rag_wrong >= 1, "raw-path baseline should mis-pair at least one query");
    eprintln!("adversarial: ranks {ranks:?}, raw-path mismatches {rag_wrong}/10");
    (entries, queries)
}

fn main() {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/data")));
    let tax = TaxonomyConfig::default_bundled();
    let emb = LocalEmbedder::default();

    let kb: Vec<KnowledgeEntry> = tax.enumerate_metadata().iter().map(|m| make_entry(&tax, m)).collect();
    for e in &kb {
        e.validate(&tax).expect("generated entry valid");
    }
    let write = |name: &str, body: String| {
        std::fs::write(dir.join(name), body).expect("write");
        eprintln!("wrote {}", dir.join(name).display());
    };
    write("knowledge.json", serde_json::to_string_pretty(&kb).unwrap() + "\n");

    let cases: Vec<serde_json::Value> = detailed(&tax).into_iter().chain(generic(&tax)).chain(multi(&tax)).collect();
    write("benchmark.jsonl", cases.iter().map(|c| c.to_string() + "\n").collect());

    let (adv, queries) = adversarial(&tax, &emb);
    write("adversarial_kb.json", serde_json::to_string_pretty(&adv).unwrap() + "\n");
    write("adversarial_queries.txt", queries.iter().map(|q| format!("{q}\n")).collect());

    // provider replies mirror the rules engine so both front-end modes agree
    let table = NormalizationTable::default_bundled(&tax);
    let fe = Frontend::rules(&table);
    let mut prompts: Vec<String> = cases.iter().map(|c| c["prompt"].as_str().unwrap().to_string()).collect();
    prompts.push("Generate a healthy Pink Lady apple orchard in summer.".into());
    let mut fixtures = BTreeMap::new();
    for p in prompts {
        let Ok(subqueries) = table.decompose_rules(&p) else { continue };
        let key = chat_request_key(DEFAULT_CHAT_MODEL, &fe.provider_messages(&p));
        fixtures.insert(key, Frontend::render_provider_reply(&subqueries));
    }
    write("mock_fixtures.json", serde_json::to_string_pretty(&fixtures).unwrap() + "\n");
}
