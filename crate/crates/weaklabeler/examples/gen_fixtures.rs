//! Regenerates the bundled mini-corpus fixture under fixtures/mini/.
//!
//! The corpus is synthetic: 200 abstracts assembled from per-category token
//! pools so that hashed-embedding similarities spread usefully around the
//! default 0.4 threshold. Deterministic for a fixed seed; prints audit
//! statistics so fixture drift is visible in review.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use weaklabeler::corpus::{tokenize, CategoryDefinition, Taxonomy};
use weaklabeler::embed::{cosine_similarity, hash_embed, ProviderSpec};
use weaklabeler::rng::SplitMix64;

const SEED: u64 = 99;
const N_DOCS: usize = 200;

const HAZARDS: [(&str, &str, [&str; 10]); 5] = [
    (
        "drought",
        "Drought",
        [
            "drought",
            "aridity",
            "rainfall",
            "deficit",
            "reservoir",
            "depletion",
            "moisture",
            "scarcity",
            "irrigation",
            "shortage",
        ],
    ),
    (
        "flood",
        "Flood",
        [
            "flood",
            "inundation",
            "levee",
            "floodplain",
            "runoff",
            "surge",
            "embankment",
            "overflow",
            "stormwater",
            "submergence",
        ],
    ),
    (
        "wildfire",
        "Wildfire",
        [
            "wildfire",
            "burn",
            "smoke",
            "ignition",
            "fuel",
            "vegetation",
            "ember",
            "blaze",
            "firefighting",
            "charred",
        ],
    ),
    (
        "heatwave",
        "Heatwave",
        [
            "heatwave",
            "heat",
            "temperature",
            "cooling",
            "mortality",
            "humidity",
            "sweltering",
            "thermal",
            "hyperthermia",
            "scorching",
        ],
    ),
    (
        "winter_storm",
        "Winter Storm",
        [
            "blizzard", "snowfall", "ice", "frost", "sleet", "freezing", "snowpack", "whiteout",
            "hail", "icing",
        ],
    ),
];

const NCFS: [(&str, &str, [&str; 10]); 6] = [
    (
        "supply_water",
        "Supply Water",
        [
            "water",
            "supply",
            "drinking",
            "aquifer",
            "purification",
            "pipeline",
            "utility",
            "groundwater",
            "potable",
            "distribution",
        ],
    ),
    (
        "generate_electricity",
        "Generate Electricity",
        [
            "electricity",
            "power",
            "generation",
            "turbine",
            "grid",
            "plant",
            "megawatt",
            "generator",
            "hydropower",
            "capacity",
        ],
    ),
    (
        "manage_wastewater",
        "Manage Wastewater",
        [
            "wastewater",
            "sewage",
            "sewer",
            "sanitation",
            "effluent",
            "sludge",
            "drainage",
            "reclamation",
            "outfall",
            "discharge",
        ],
    ),
    (
        "provide_medical_care",
        "Provide Medical Care",
        [
            "hospital",
            "patient",
            "medical",
            "clinic",
            "physician",
            "nursing",
            "emergency",
            "healthcare",
            "ambulance",
            "triage",
        ],
    ),
    (
        "agriculture_products",
        "Agricultural Products",
        [
            "crop",
            "farming",
            "harvest",
            "livestock",
            "agriculture",
            "yield",
            "farmland",
            "grain",
            "cultivation",
            "agronomy",
        ],
    ),
    (
        "transport_road",
        "Road Transport",
        [
            "highway", "road", "traffic", "vehicle", "freight", "transit", "bridge", "pavement",
            "trucking", "roadway",
        ],
    ),
];

const CLIMATE: [&str; 12] = [
    "climate",
    "warming",
    "weather",
    "extreme",
    "event",
    "adaptation",
    "resilience",
    "risk",
    "projection",
    "variability",
    "anthropogenic",
    "mitigation",
];

const FILLER: [&str; 60] = [
    "study",
    "analysis",
    "results",
    "method",
    "approach",
    "paper",
    "research",
    "framework",
    "evaluation",
    "assessment",
    "findings",
    "experiment",
    "observed",
    "proposed",
    "novel",
    "significant",
    "region",
    "regional",
    "system",
    "impact",
    "effect",
    "response",
    "development",
    "management",
    "planning",
    "policy",
    "strategy",
    "design",
    "process",
    "application",
    "measurement",
    "estimation",
    "comparison",
    "literature",
    "review",
    "survey",
    "dataset",
    "scenario",
    "simulation",
    "uncertainty",
    "robust",
    "dynamic",
    "spatial",
    "temporal",
    "annual",
    "seasonal",
    "historical",
    "future",
    "potential",
    "improvement",
    "performance",
    "quality",
    "implementation",
    "decision",
    "information",
    "knowledge",
    "technology",
    "community",
    "population",
    "economic",
];

const COMMON_PAIRS: [(usize, usize); 3] = [(0, 0), (1, 2), (2, 1)];

fn definition_text(pool: &[&str], is_hazard: bool) -> String {
    let mut toks: Vec<&str> = Vec::new();
    toks.extend_from_slice(pool);
    toks.extend_from_slice(pool);
    if is_hazard {
        toks.extend_from_slice(&CLIMATE[..3]);
    }
    toks.join(" ")
}

fn draw<'a>(rng: &mut SplitMix64, pool: &[&'a str], n: usize, out: &mut Vec<&'a str>) {
    for _ in 0..n {
        out.push(pool[rng.next_range(pool.len())]);
    }
}

fn pick_themes(rng: &mut SplitMix64, n_cats: usize) -> Vec<usize> {
    if rng.next_f64() < 0.12 {
        return Vec::new();
    }
    let count = if rng.next_f64() < 0.25 { 2 } else { 1 };
    let mut picked = Vec::new();
    while picked.len() < count {
        let c = rng.next_range(n_cats);
        if !picked.contains(&c) {
            picked.push(c);
        }
    }
    picked
}

fn main() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/mini");
    fs::create_dir_all(&root).expect("create fixtures dir");

    let mut rng = SplitMix64::new(SEED);
    let mut docs_jsonl = String::new();
    let mut doc_meta: Vec<(Vec<usize>, Vec<usize>, String)> = Vec::new();

    for i in 0..N_DOCS {
        let (hz, nc) = if rng.next_f64() < 0.45 {
            let (h, n) = COMMON_PAIRS[rng.next_range(COMMON_PAIRS.len())];
            (vec![h], vec![n])
        } else {
            (
                pick_themes(&mut rng, HAZARDS.len()),
                pick_themes(&mut rng, NCFS.len()),
            )
        };

        let mut tokens: Vec<&str> = Vec::new();
        for &h in &hz {
            draw(&mut rng, &HAZARDS[h].2, 22, &mut tokens);
            draw(&mut rng, &CLIMATE, 4, &mut tokens);
        }
        for &n in &nc {
            draw(&mut rng, &NCFS[n].2, 22, &mut tokens);
        }
        draw(&mut rng, &FILLER, 10, &mut tokens);
        rng.shuffle(&mut tokens);

        let themes: Vec<&str> = hz
            .iter()
            .map(|&h| HAZARDS[h].0)
            .chain(nc.iter().map(|&n| NCFS[n].0))
            .collect();
        let title = if themes.is_empty() {
            format!("Mini corpus document {i:03}")
        } else {
            format!("Mini corpus document {i:03} on {}", themes.join(" and "))
        };
        let abstract_text = format!("{}.", tokens.join(" "));
        let record = serde_json::json!({
            "paper_id": format!("mini-{i:03}"),
            "title": title,
            "abstract": abstract_text,
            "year": 1995 + (i % 30) as i64,
            "fields_of_study": ["Environmental Science"],
        });
        docs_jsonl.push_str(&record.to_string());
        docs_jsonl.push('\n');
        doc_meta.push((hz, nc, abstract_text));
    }

    fs::write(root.join("docs.jsonl"), &docs_jsonl).expect("write docs");

    let hazard_defs: Vec<CategoryDefinition> = HAZARDS
        .iter()
        .map(|(id, name, pool)| CategoryDefinition {
            cat_id: id.to_string(),
            name: name.to_string(),
            taxonomy: Taxonomy::Hazard,
            group: None,
            definition: definition_text(pool, true),
            threshold: None,
        })
        .collect();
    let ncf_defs: Vec<CategoryDefinition> = NCFS
        .iter()
        .map(|(id, name, pool)| CategoryDefinition {
            cat_id: id.to_string(),
            name: name.to_string(),
            taxonomy: Taxonomy::Ncf,
            group: None,
            definition: definition_text(pool, false),
            threshold: None,
        })
        .collect();
    fs::write(
        root.join("hazards.json"),
        serde_json::to_string_pretty(&hazard_defs).unwrap(),
    )
    .expect("write hazards");
    fs::write(
        root.join("ncfs.json"),
        serde_json::to_string_pretty(&ncf_defs).unwrap(),
    )
    .expect("write ncfs");

    audit(&doc_meta, &hazard_defs, &ncf_defs);
}

/// Print the similarity geometry the tests rely on.
fn audit(
    docs: &[(Vec<usize>, Vec<usize>, String)],
    hazard_defs: &[CategoryDefinition],
    ncf_defs: &[CategoryDefinition],
) {
    let stopwords = weaklabeler::corpus::default_stopwords();
    let spec = ProviderSpec::hashed("audit", 256, 42);
    let embed = |text: &str| hash_embed(&tokenize(text, stopwords), &spec).unwrap();

    let hz_vecs: Vec<_> = hazard_defs.iter().map(|c| embed(&c.definition)).collect();
    let nc_vecs: Vec<_> = ncf_defs.iter().map(|c| embed(&c.definition)).collect();

    let mut kept4 = 0;
    let mut kept5 = 0;
    let mut final_docs: Vec<&(Vec<usize>, Vec<usize>, String)> = Vec::new();
    let mut pair_count = vec![vec![0usize; ncf_defs.len()]; hazard_defs.len()];
    for doc in docs {
        let (hz, nc, text) = doc;
        let e = embed(text);
        let max_h = hz_vecs
            .iter()
            .map(|d| cosine_similarity(&e, d).unwrap())
            .fold(f64::MIN, f64::max);
        let max_n = nc_vecs
            .iter()
            .map(|d| cosine_similarity(&e, d).unwrap())
            .fold(f64::MIN, f64::max);
        if max_h > 0.4 {
            kept4 += 1;
            if max_n > 0.4 {
                final_docs.push(doc);
                for &h in hz {
                    for &n in nc {
                        pair_count[h][n] += 1;
                    }
                }
            }
        }
        if max_h > 0.5 {
            kept5 += 1;
        }
    }
    println!(
        "stage1 kept@0.4={kept4} kept@0.5={kept5} both@0.4={}",
        final_docs.len()
    );

    let mut cells: Vec<(usize, &str, &str)> = Vec::new();
    for (h, row) in pair_count.iter().enumerate() {
        for (n, c) in row.iter().enumerate() {
            if *c > 0 {
                cells.push((
                    *c,
                    hazard_defs[h].cat_id.as_str(),
                    ncf_defs[n].cat_id.as_str(),
                ));
            }
        }
    }
    cells.sort_by_key(|&(c, _, _)| std::cmp::Reverse(c));
    println!("top pairs: {:?}", &cells[..cells.len().min(4)]);

    // Vote-row diversity per category across three provider seeds, over the
    // docs that pass both stages (the label jobs' actual input). Every
    // category must show mixed rows or the label model is unidentifiable.
    for (cats, is_hazard) in [(hazard_defs, true), (ncf_defs, false)] {
        for cat in cats {
            let mut rows: HashSet<Vec<u8>> = HashSet::new();
            for (_, _, text) in &final_docs {
                let specs: Vec<ProviderSpec> = (1001..=1003)
                    .map(|s| ProviderSpec::hashed(format!("h{s}"), 256, s))
                    .collect();
                let row: Vec<u8> = specs
                    .iter()
                    .map(|sp| {
                        let d = hash_embed(&tokenize(&cat.definition, stopwords), sp).unwrap();
                        let e = hash_embed(&tokenize(text, stopwords), sp).unwrap();
                        u8::from(cosine_similarity(&e, &d).unwrap() > 0.4)
                    })
                    .collect();
                rows.insert(row);
            }
            let tag = if is_hazard { "hazard" } else { "ncf" };
            println!("{tag} {}: {} distinct vote rows", cat.cat_id, rows.len());
        }
    }
}
