//! Regenerates `fixtures/`: the 20-item mini catalog, its question sets and
//! the frozen transcript cache for every prompt variant of the ablation grid.
//!
//!     cargo run -p aesthete-core --example make_fixtures -- crates/core/fixtures
//!
//! Output is deterministic; rerunning rewrites byte-identical files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use aesthete::attribute::AestheticAttribute;
use aesthete::datastore::{
    write_embeddings, write_ldj, A100Question, Catalog, CirQuery, EmbeddingRecord, FitbQuestion, ManifestRecord,
    TestKind,
};
use aesthete::embedder::HashingEmbedder;
use aesthete::evaluation::{run_ablation, Datasets, EvalOptions};
use aesthete::pipeline::{Engine, PipelineConfig, ReasoningTask};
use aesthete::reasoning::{parse_reasoning, prepare, CacheMode, MllmConfig, ReasoningRecord, TranscriptCache};
use chrono::TimeZone;
use serde_json::json;

const DIM: usize = 64;

struct ItemDef {
    id: &'static str,
    category: &'static str,
    color: &'static str,
    material: &'static str,
    noun: &'static str,
    style: &'static str,
    occasion: &'static str,
    season: &'static str,
    fill: &'static str,
}

#[allow(clippy::too_many_arguments)]
const fn it(
    id: &'static str,
    category: &'static str,
    color: &'static str,
    material: &'static str,
    noun: &'static str,
    style: &'static str,
    occasion: &'static str,
    season: &'static str,
    fill: &'static str,
) -> ItemDef {
    ItemDef { id, category, color, material, noun, style, occasion, season, fill }
}

const ITEMS: &[ItemDef] = &[
    it("t01", "tops", "navy", "wool", "blazer", "tailored", "office", "autumn", "#1f2a44"),
    it("t02", "tops", "white", "cotton", "tee", "casual", "weekend", "summer", "#f4f4f4"),
    it("t03", "tops", "cream", "cashmere", "sweater", "classic", "dinner", "winter", "#efe6d2"),
    it("t04", "tops", "olive", "linen", "shirt", "relaxed", "travel", "spring", "#6b6b3a"),
    it("t05", "tops", "black", "silk", "blouse", "elegant", "evening", "autumn", "#111111"),
    it("b01", "bottoms", "charcoal", "flannel", "trousers", "tailored", "office", "autumn", "#36454f"),
    it("b02", "bottoms", "indigo", "denim", "jeans", "casual", "weekend", "summer", "#3f4a8a"),
    it("b03", "bottoms", "camel", "corduroy", "skirt", "vintage", "brunch", "autumn", "#c19a6b"),
    it("b04", "bottoms", "khaki", "chino", "shorts", "relaxed", "beach", "summer", "#c3b091"),
    it("b05", "bottoms", "black", "leather", "miniskirt", "edgy", "party", "winter", "#0b0b0b"),
    it("s01", "shoes", "brown", "calfskin", "loafers", "classic", "office", "autumn", "#6b4423"),
    it("s02", "shoes", "white", "canvas", "sneakers", "casual", "weekend", "summer", "#fafafa"),
    it("s03", "shoes", "black", "suede", "boots", "edgy", "party", "winter", "#1a1a1a"),
    it("s04", "shoes", "tan", "raffia", "sandals", "relaxed", "beach", "summer", "#d2b48c"),
    it("s05", "shoes", "burgundy", "patent", "pumps", "elegant", "evening", "spring", "#800020"),
    it("g01", "bags", "black", "pebbled", "tote", "tailored", "office", "autumn", "#222222"),
    it("g02", "bags", "natural", "straw", "basket", "relaxed", "beach", "summer", "#e4c590"),
    it("g03", "bags", "silver", "metallic", "clutch", "elegant", "evening", "winter", "#c0c0c0"),
    it("g04", "bags", "green", "nylon", "backpack", "casual", "travel", "spring", "#2e8b57"),
    it("g05", "bags", "cognac", "nubuck", "crossbody", "vintage", "brunch", "autumn", "#9a463d"),
];

fn item_def(id: &str) -> &'static ItemDef {
    ITEMS.iter().find(|s| s.id == id).unwrap_or_else(|| panic!("no fixture item {id}"))
}

fn description(s: &ItemDef) -> String {
    format!("{} {} {}, {} {} look for {}", s.color, s.material, s.noun, s.style, s.occasion, s.season)
}

fn image_text(s: &ItemDef) -> String {
    format!("{} {} {} {}", s.color, s.material, s.noun, s.style)
}

fn svg(s: &ItemDef) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"96\" height=\"96\" viewBox=\"0 0 96 96\">\n  \
         <rect width=\"96\" height=\"96\" rx=\"8\" fill=\"{}\"/>\n  \
         <text x=\"48\" y=\"52\" font-size=\"10\" text-anchor=\"middle\" fill=\"#888\">{} {}</text>\n</svg>\n",
        s.fill, s.color, s.noun
    )
}

/// What the scripted model says about one question: the item its target
/// description points at.
struct Script {
    outfit: Vec<&'static str>,
    task: ReasoningTask,
    describes: &'static str,
}

fn ids(v: &[&'static str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn response(script: &Script, variant: &PipelineConfig) -> String {
    let t = item_def(script.describes);
    let outfit_words: Vec<String> = script.outfit.iter().map(|id| format!("{} {}", item_def(id).color, item_def(id).noun)).collect();
    let mut obj = serde_json::Map::new();
    if variant.identify_step {
        obj.insert(
            "identification".into(),
            json!(format!("The outfit has a {}; the missing piece should complete it.", outfit_words.join(", a "))),
        );
    }
    if variant.aesthetic_thoughts {
        obj.insert(
            "attributes".into(),
            json!({
                "color": {"keyword": t.color, "reason": format!("{} works with the {}", t.color, outfit_words.join(" and "))},
                "style": {"keyword": t.style, "reason": format!("keeps the {} mood", t.style)},
                "occasion": {"keyword": t.occasion, "reason": format!("suited to {} wear", t.occasion)},
                "season": {"keyword": t.season, "reason": format!("weight right for {}", t.season)},
                "material": {"keyword": t.material, "reason": format!("{} adds texture", t.material)},
                "balance": {"keyword": t.noun, "reason": format!("a {} balances the proportions", t.noun)},
            }),
        );
    }
    obj.insert(
        "target_description".into(),
        json!(format!("A {} {} {} with a {} feel", t.color, t.material, t.noun, t.style)),
    );
    let body = serde_json::to_string_pretty(&serde_json::Value::Object(obj)).unwrap();
    format!("Here is my analysis.\n```json\n{body}\n```\n")
}

fn fitb_set() -> (Vec<FitbQuestion>, Vec<Script>) {
    #[allow(clippy::type_complexity)]
    let rows: [(&str, &[&str], &[&str], usize, &str); 5] = [
        ("fitb-01", &["t01", "b01", "g01"], &["s02", "s01", "s03", "s04"], 1, "s01"),
        ("fitb-02", &["t02", "b02", "s02"], &["g04", "g01", "g02", "g03"], 0, "g04"),
        ("fitb-03", &["t04", "b04", "g02"], &["s04", "s05", "s01", "s02"], 0, "s04"),
        // The model describes a distractor in the last two.
        ("fitb-04", &["t05", "b05", "s03"], &["g01", "g05", "g03", "g04"], 2, "g01"),
        ("fitb-05", &["b03", "s01", "g05"], &["t02", "t03", "t04", "t01"], 1, "t01"),
    ];
    rows.iter()
        .map(|(qid, outfit, cands, answer, describes)| {
            (
                FitbQuestion {
                    question_id: qid.to_string(),
                    outfit_item_ids: ids(outfit),
                    candidate_item_ids: ids(cands),
                    answer_index: *answer,
                },
                Script {
                    outfit: outfit.to_vec(),
                    task: ReasoningTask::Fitb { candidate_item_ids: ids(cands) },
                    describes,
                },
            )
        })
        .unzip()
}

fn cir_set() -> (Vec<CirQuery>, Vec<Script>) {
    let rows: [(&str, &[&str], &str, &str); 5] = [
        ("cir-01", &["t01", "b01"], "shoes", "s01"),
        ("cir-02", &["t02", "s02"], "bottoms", "b02"),
        ("cir-03", &["b04", "s04"], "bags", "g02"),
        ("cir-04", &["t05", "s03"], "bottoms", "b05"),
        ("cir-05", &["t03", "b03", "s01"], "bags", "g05"),
    ];
    rows.iter()
        .map(|(qid, outfit, cat, gt)| {
            (
                CirQuery {
                    query_id: qid.to_string(),
                    outfit_item_ids: ids(outfit),
                    target_category: cat.to_string(),
                    ground_truth_item_id: gt.to_string(),
                },
                Script { outfit: outfit.to_vec(), task: ReasoningTask::Cir { category: cat.to_string() }, describes: gt },
            )
        })
        .unzip()
}

fn a100_set() -> (Vec<A100Question>, Vec<Script>) {
    use AestheticAttribute as A;
    type Row = (&'static str, Option<A>, &'static [&'static str], &'static [&'static str], usize, Option<&'static [f64]>, &'static str);
    let rows: [Row; 10] = [
        ("lat-01", None, &["t01", "b01"], &["s01", "s02", "s03"], 0, Some(&[0.6, 0.1, 0.3]), "s01"),
        ("lat-02", None, &["t02", "b02"], &["g02", "g04"], 1, Some(&[0.45, 0.55]), "g04"),
        ("lat-03", None, &["b05", "s03"], &["t05", "t02", "t04"], 0, Some(&[0.7, 0.2, 0.1]), "t02"),
        ("lat-04", None, &["t04", "b04"], &["s04", "s05"], 0, Some(&[0.8, 0.2]), "s04"),
        ("aat-01", Some(A::Color), &["t03", "b03"], &["s01", "s02"], 0, None, "s01"),
        ("aat-02", Some(A::Color), &["t01", "b01"], &["g03", "g01"], 1, None, "g01"),
        ("aat-03", Some(A::Style), &["t05", "b05"], &["s03", "s02"], 0, None, "s03"),
        ("aat-04", Some(A::Season), &["t04", "b04"], &["g02", "g03"], 0, None, "g02"),
        ("aat-05", Some(A::Material), &["t02", "s02"], &["b02", "b05"], 0, None, "b05"),
        ("aat-06", Some(A::Occasion), &["b01", "s01"], &["t01", "t02", "t04"], 0, None, "t01"),
    ];
    rows.iter()
        .map(|(qid, tag, outfit, cands, answer, shares, describes)| {
            let kind = if tag.is_some() { TestKind::Aat } else { TestKind::Lat };
            (
                A100Question {
                    question_id: qid.to_string(),
                    test_kind: kind,
                    attribute_tag: *tag,
                    outfit_item_ids: ids(outfit),
                    candidate_item_ids: ids(cands),
                    answer_index: *answer,
                    vote_shares: shares.map(|s| s.to_vec()),
                },
                Script {
                    outfit: outfit.to_vec(),
                    task: ReasoningTask::Fitb { candidate_item_ids: ids(cands) },
                    describes,
                },
            )
        })
        .unzip()
}

fn write_catalog(dir: &Path) {
    let images = dir.join("images");
    std::fs::create_dir_all(&images).unwrap();
    let enc = HashingEmbedder::new(DIM);
    let mut manifest = Vec::new();
    let mut rows = Vec::new();
    for s in ITEMS {
        let rel = format!("images/{}.svg", s.id);
        std::fs::write(dir.join(&rel), svg(s)).unwrap();
        manifest.push(ManifestRecord {
            item_id: s.id.into(),
            category: s.category.into(),
            description: description(s),
            image_ref: rel,
        });
        let v = aesthete::fusion::normalize(&enc.embed(&image_text(s))).unwrap();
        rows.push(EmbeddingRecord::new(s.id, v.into_inner()));
    }
    write_ldj(dir.join("manifest.ldj"), &manifest).unwrap();
    write_embeddings(dir.join("images.aemb"), DIM, &rows).unwrap();
}

fn write_bad_manifest(dir: &Path) {
    std::fs::create_dir_all(dir).unwrap();
    let enc = HashingEmbedder::new(8);
    let manifest: Vec<ManifestRecord> = ["x01", "x02", "x01"]
        .iter()
        .map(|id| ManifestRecord {
            item_id: id.to_string(),
            category: "tops".into(),
            description: String::new(),
            image_ref: format!("images/{id}.svg"),
        })
        .collect();
    let rows: Vec<EmbeddingRecord> = ["x01", "x02"]
        .iter()
        .map(|id| EmbeddingRecord::new(*id, aesthete::fusion::normalize(&enc.embed(id)).unwrap().into_inner()))
        .collect();
    write_ldj(dir.join("manifest.ldj"), &manifest).unwrap();
    write_embeddings(dir.join("images.aemb"), 8, &rows).unwrap();
}

fn main() {
    let root: PathBuf = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| "fixtures".into());
    let cat_dir = root.join("cat");
    let cache_dir = cat_dir.join("cache");
    write_catalog(&cat_dir);
    write_bad_manifest(&root.join("bad_manifest"));

    let (fitb, fitb_scripts) = fitb_set();
    let (cir, cir_scripts) = cir_set();
    let (a100, a100_scripts) = a100_set();
    write_ldj(root.join("fitb.ldj"), &fitb).unwrap();
    write_ldj(root.join("cir.ldj"), &cir).unwrap();
    write_ldj(root.join("a100.ldj"), &a100).unwrap();

    let catalog = Arc::new(Catalog::load_dir(&cat_dir).unwrap());
    let mllm_config = MllmConfig::default();
    let engine = Engine::new(catalog.clone(), Arc::new(HashingEmbedder::new(DIM)), None, mllm_config.clone(), &cache_dir);

    if cache_dir.exists() {
        std::fs::remove_dir_all(&cache_dir).unwrap();
    }
    let cache = TranscriptCache::new(&cache_dir, CacheMode::Live);
    let created_at = chrono::Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap();
    let base = PipelineConfig { mode: CacheMode::Replay, ..PipelineConfig::default() };
    let grid = PipelineConfig::ablation_grid(&base);
    let mut written = 0;
    for variant in &grid {
        for script in fitb_scripts.iter().chain(&cir_scripts).chain(&a100_scripts) {
            let outfit = ids(&script.outfit);
            let request = engine.reasoning_request(&outfit, &script.task, variant).unwrap();
            let (prompt, key) = prepare(&request, &mllm_config).unwrap();
            if cache.get(&key).unwrap().is_some() {
                continue;
            }
            let raw = response(script, variant);
            let parsed = parse_reasoning(&raw).unwrap();
            let record = ReasoningRecord {
                identification_summary: parsed.identification_summary,
                target_description: parsed.target_description,
                profile: parsed.profile,
                model_id: mllm_config.model.clone(),
                prompt_hash: prompt.prompt_hash(),
                raw_response: raw,
                created_at,
            };
            cache.put(&key, &record).unwrap();
            written += 1;
        }
    }
    println!("wrote {written} transcripts");

    let datasets = Datasets { fitb, cir, a100 };
    let table = run_ablation(&engine, &grid, &datasets, &EvalOptions::default()).unwrap();
    print!("{}", table.render());

    // Hand-countable outcomes the tests rely on.
    let full = table.rows.iter().find(|r| r.config.name == "full").unwrap();
    let correct: BTreeMap<&str, bool> = full.records.iter().map(|r| (r.question_id.as_str(), r.correct)).collect();
    let expect = [
        ("fitb-01", true),
        ("fitb-02", true),
        ("fitb-03", true),
        ("fitb-04", false),
        ("fitb-05", false),
        ("lat-03", false),
        ("aat-05", false),
    ];
    for (qid, want) in expect {
        assert_eq!(correct[qid], want, "{qid}");
    }
    assert_eq!(full.fitb_accuracy, Some(0.6));
}
