//! Document and category ingestion plus text tokenization.
//!
//! Documents arrive as JSON-lines (one object per line, `paper_id` / `title` /
//! `abstract` keys); categories as a JSON array. Collections are immutable
//! after load and safe to share across threads.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One corpus record. The abstract is the text unit embedded downstream;
/// the title is carried along for reports only.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Document {
    #[serde(rename = "paper_id")]
    pub doc_id: String,
    #[serde(default)]
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub year: Option<i32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fields_of_study: Vec<String>,
}

/// Immutable set of documents with unique ids, in file order.
#[derive(Debug, Clone, Default)]
pub struct DocumentCollection {
    docs: Vec<Document>,
    /// Malformed lines dropped under `LoadPolicy::SkipBad`.
    pub skipped_count: usize,
}

impl DocumentCollection {
    pub fn new(docs: Vec<Document>) -> Result<Self> {
        let mut seen = HashSet::new();
        for d in &docs {
            if !seen.insert(d.doc_id.clone()) {
                return Err(Error::DuplicateId {
                    doc_id: d.doc_id.clone(),
                });
            }
        }
        Ok(Self {
            docs,
            skipped_count: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Document> {
        self.docs.iter()
    }

    pub fn get(&self, idx: usize) -> &Document {
        &self.docs[idx]
    }

    pub fn doc_ids(&self) -> Vec<String> {
        self.docs.iter().map(|d| d.doc_id.clone()).collect()
    }

    /// Subset preserving order; unknown ids are ignored.
    pub fn subset(&self, keep: &HashSet<String>) -> DocumentCollection {
        DocumentCollection {
            docs: self
                .docs
                .iter()
                .filter(|d| keep.contains(&d.doc_id))
                .cloned()
                .collect(),
            skipped_count: 0,
        }
    }
}

/// What to do with lines that fail to parse.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadPolicy {
    /// Count and drop malformed lines.
    SkipBad,
    /// Abort on the first malformed line.
    FailFast,
}

/// Load a JSON-lines document file. Records without a `paper_id` or with an
/// empty abstract count as malformed; duplicate ids are always fatal.
pub fn load_documents(path: &Path, policy: LoadPolicy) -> Result<DocumentCollection> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);

    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    let mut skipped = 0usize;

    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: std::result::Result<Document, _> = serde_json::from_str(&line);
        let doc = match parsed {
            Ok(d) if !d.doc_id.is_empty() && !d.abstract_text.trim().is_empty() => d,
            Ok(_) => match policy {
                LoadPolicy::SkipBad => {
                    skipped += 1;
                    continue;
                }
                LoadPolicy::FailFast => {
                    return Err(Error::MalformedLine {
                        path: path.to_path_buf(),
                        line: idx + 1,
                        reason: "empty paper_id or abstract".into(),
                    })
                }
            },
            Err(e) => match policy {
                LoadPolicy::SkipBad => {
                    skipped += 1;
                    continue;
                }
                LoadPolicy::FailFast => {
                    return Err(Error::MalformedLine {
                        path: path.to_path_buf(),
                        line: idx + 1,
                        reason: e.to_string(),
                    })
                }
            },
        };
        if !seen.insert(doc.doc_id.clone()) {
            return Err(Error::DuplicateId { doc_id: doc.doc_id });
        }
        docs.push(doc);
    }

    Ok(DocumentCollection {
        docs,
        skipped_count: skipped,
    })
}

/// The two labeling taxonomies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Taxonomy {
    Hazard,
    Ncf,
}

impl fmt::Display for Taxonomy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Taxonomy::Hazard => write!(f, "hazard"),
            Taxonomy::Ncf => write!(f, "ncf"),
        }
    }
}

impl std::str::FromStr for Taxonomy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hazard" => Ok(Taxonomy::Hazard),
            "ncf" => Ok(Taxonomy::Ncf),
            other => Err(Error::InvalidConfig {
                reason: format!("unknown taxonomy {other:?} (expected hazard|ncf)"),
            }),
        }
    }
}

/// A labeled category with its prose definition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CategoryDefinition {
    #[serde(rename = "id")]
    pub cat_id: String,
    pub name: String,
    pub taxonomy: Taxonomy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    pub definition: String,
    /// Optional per-category labeling threshold override.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

/// Categories in file order. File order is load-bearing: it fixes the
/// classifier-chain order and all tie-breaks downstream.
#[derive(Debug, Clone, Default)]
pub struct CategorySet {
    cats: Vec<CategoryDefinition>,
}

impl CategorySet {
    pub fn new(cats: Vec<CategoryDefinition>) -> Result<Self> {
        let mut seen: HashSet<(Taxonomy, String)> = HashSet::new();
        for c in &cats {
            if c.definition.trim().is_empty() {
                return Err(Error::EmptyDefinition {
                    cat_id: c.cat_id.clone(),
                });
            }
            if !seen.insert((c.taxonomy, c.cat_id.clone())) {
                return Err(Error::DuplicateCategory {
                    cat_id: c.cat_id.clone(),
                    taxonomy: c.taxonomy.to_string(),
                });
            }
        }
        Ok(Self { cats })
    }

    pub fn len(&self) -> usize {
        self.cats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cats.is_empty()
    }

    /// All categories, file order.
    pub fn iter(&self) -> impl Iterator<Item = &CategoryDefinition> {
        self.cats.iter()
    }

    /// Categories of one taxonomy, file order preserved.
    pub fn of_taxonomy(&self, taxonomy: Taxonomy) -> Vec<&CategoryDefinition> {
        self.cats
            .iter()
            .filter(|c| c.taxonomy == taxonomy)
            .collect()
    }

    pub fn ids_of_taxonomy(&self, taxonomy: Taxonomy) -> Vec<String> {
        self.of_taxonomy(taxonomy)
            .iter()
            .map(|c| c.cat_id.clone())
            .collect()
    }

    pub fn get(&self, taxonomy: Taxonomy, cat_id: &str) -> Result<&CategoryDefinition> {
        self.cats
            .iter()
            .find(|c| c.taxonomy == taxonomy && c.cat_id == cat_id)
            .ok_or_else(|| Error::UnknownCategory {
                cat_id: cat_id.to_string(),
            })
    }
}

/// Load a JSON array of category definitions.
pub fn load_categories(path: &Path) -> Result<CategorySet> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cats: Vec<CategoryDefinition> =
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    CategorySet::new(cats)
}

/// Ordered lowercase tokens with stopwords, short tokens, and all-digit
/// tokens removed.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenList(pub Vec<String>);

impl TokenList {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn join(&self) -> String {
        self.0.join(" ")
    }
}

/// Lowercase, split on any non-alphanumeric character, then drop tokens
/// shorter than 2 chars, all-digit tokens, and stopwords.
pub fn tokenize(text: &str, stopwords: &HashSet<String>) -> TokenList {
    let lower = text.to_lowercase();
    let tokens = lower
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= 2)
        .filter(|t| !t.chars().all(|c| c.is_ascii_digit()))
        .filter(|t| !stopwords.contains(*t))
        .map(str::to_string)
        .collect();
    TokenList(tokens)
}

/// The bundled English stopword list.
pub fn default_stopwords() -> &'static HashSet<String> {
    static STOPWORDS: OnceLock<HashSet<String>> = OnceLock::new();
    STOPWORDS.get_or_init(|| {
        include_str!("../data/stopwords_en.txt")
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect()
    })
}

/// Load a stopword file: plain text, one token per line.
pub fn load_stopwords(path: &Path) -> Result<HashSet<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn stops(words: &[&str]) -> HashSet<String> {
        words.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn tokenize_applies_all_rules() {
        let got = tokenize("The flood-risk, and THE dams!", &stops(&["the", "and"]));
        assert_eq!(got.0, vec!["flood", "risk", "dams"]);
    }

    #[test]
    fn tokenize_empty_input() {
        assert!(tokenize("", &stops(&[])).is_empty());
    }

    #[test]
    fn tokenize_drops_digits_and_short_tokens() {
        let got = tokenize("2021 a CO2", &stops(&["a"]));
        assert_eq!(got.0, vec!["co2"]);
    }

    #[test]
    fn tokenize_idempotent_on_joined_output() {
        let sw = stops(&["the", "of"]);
        for text in [
            "The Impact of Flooding on 42 water-supply systems",
            "drought & wildfire; risk assessment (2020)",
            "",
        ] {
            let once = tokenize(text, &sw);
            let twice = tokenize(&once.join(), &sw);
            assert_eq!(once, twice);
        }
    }

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn load_documents_well_formed() {
        let f = write_lines(&[
            r#"{"paper_id":"d1","title":"t1","abstract":"flood damage"}"#,
            r#"{"paper_id":"d2","title":"t2","abstract":"drought impact","year":2020}"#,
            r#"{"paper_id":"d3","title":"t3","abstract":"wildfire smoke","fields_of_study":["geo"]}"#,
        ]);
        let coll = load_documents(f.path(), LoadPolicy::FailFast).unwrap();
        assert_eq!(coll.len(), 3);
        assert_eq!(coll.skipped_count, 0);
        assert_eq!(coll.get(1).year, Some(2020));
    }

    #[test]
    fn load_documents_skip_bad_counts_malformed() {
        let f = write_lines(&[
            r#"{"paper_id":"d1","abstract":"flood"}"#,
            r#"{"paper_id":"d2","abstract":""}"#,
            r#"{"paper_id":"d3","abstract":"drought"}"#,
        ]);
        let coll = load_documents(f.path(), LoadPolicy::SkipBad).unwrap();
        assert_eq!(coll.len(), 2);
        assert_eq!(coll.skipped_count, 1);
    }

    #[test]
    fn load_documents_fail_fast_aborts() {
        let f = write_lines(&[r#"{"paper_id":"d1","abstract":"flood"}"#, "not json"]);
        let err = load_documents(f.path(), LoadPolicy::FailFast).unwrap_err();
        assert!(matches!(err, Error::MalformedLine { line: 2, .. }));
    }

    #[test]
    fn load_documents_duplicate_id_is_always_fatal() {
        let f = write_lines(&[
            r#"{"paper_id":"d1","abstract":"flood"}"#,
            r#"{"paper_id":"d1","abstract":"drought"}"#,
        ]);
        let err = load_documents(f.path(), LoadPolicy::SkipBad).unwrap_err();
        assert!(matches!(err, Error::DuplicateId { .. }));
    }

    #[test]
    fn skip_bad_is_subset_of_clean_load() {
        let f = write_lines(&[
            r#"{"paper_id":"d1","abstract":"flood"}"#,
            "garbage",
            r#"{"paper_id":"d2","abstract":"drought"}"#,
        ]);
        let skip = load_documents(f.path(), LoadPolicy::SkipBad).unwrap();
        let clean = write_lines(&[
            r#"{"paper_id":"d1","abstract":"flood"}"#,
            r#"{"paper_id":"d2","abstract":"drought"}"#,
        ]);
        let full = load_documents(clean.path(), LoadPolicy::FailFast).unwrap();
        assert_eq!(skip.doc_ids(), full.doc_ids());
    }

    #[test]
    fn load_categories_rejects_duplicates_and_empty_definitions() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        write!(
            f,
            r#"[{{"id":"c1","name":"A","taxonomy":"hazard","definition":"x"}},
                {{"id":"c1","name":"B","taxonomy":"hazard","definition":"y"}}]"#
        )
        .unwrap();
        assert!(matches!(
            load_categories(f.path()).unwrap_err(),
            Error::DuplicateCategory { .. }
        ));

        let mut g = tempfile::NamedTempFile::new().unwrap();
        write!(
            g,
            r#"[{{"id":"c1","name":"A","taxonomy":"ncf","definition":"  "}}]"#
        )
        .unwrap();
        assert!(matches!(
            load_categories(g.path()).unwrap_err(),
            Error::EmptyDefinition { .. }
        ));
    }

    #[test]
    fn category_iteration_preserves_file_order() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        write!(
            f,
            r#"[{{"id":"z","name":"Z","taxonomy":"hazard","definition":"z def"}},
                {{"id":"a","name":"A","taxonomy":"hazard","definition":"a def"}},
                {{"id":"m","name":"M","taxonomy":"ncf","definition":"m def"}}]"#
        )
        .unwrap();
        let set = load_categories(f.path()).unwrap();
        let ids: Vec<_> = set.iter().map(|c| c.cat_id.as_str()).collect();
        assert_eq!(ids, vec!["z", "a", "m"]);
        assert_eq!(set.ids_of_taxonomy(Taxonomy::Hazard), vec!["z", "a"]);
    }

    #[test]
    fn bundled_sample_taxonomies_have_expected_sizes() {
        let base = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data/categories");
        let hazards = load_categories(&base.join("hazards_sample.json")).unwrap();
        assert_eq!(hazards.of_taxonomy(Taxonomy::Hazard).len(), 18);
        let ncfs = load_categories(&base.join("ncfs_sample.json")).unwrap();
        assert_eq!(ncfs.of_taxonomy(Taxonomy::Ncf).len(), 55);
        let groups: std::collections::HashSet<_> =
            ncfs.iter().filter_map(|c| c.group.clone()).collect();
        assert_eq!(groups.len(), 4, "connect/distribute/manage/supply");
    }

    #[test]
    fn default_stopwords_nonempty_and_contains_common_words() {
        let sw = default_stopwords();
        assert!(sw.len() >= 150);
        for w in ["the", "and", "of", "is"] {
            assert!(sw.contains(w), "missing {w}");
        }
    }

    proptest::proptest! {
        #[test]
        fn tokenize_idempotent_for_arbitrary_text(text in "\\PC{0,200}") {
            let sw = default_stopwords();
            let once = tokenize(&text, sw);
            let twice = tokenize(&once.join(), sw);
            proptest::prop_assert_eq!(&once, &twice);
        }

        #[test]
        fn tokens_always_satisfy_invariants(text in "\\PC{0,200}") {
            let sw = default_stopwords();
            for token in tokenize(&text, sw).0 {
                proptest::prop_assert!(token.chars().count() >= 2);
                proptest::prop_assert!(!token.chars().all(|c| c.is_ascii_digit()));
                proptest::prop_assert!(!sw.contains(&token));
                proptest::prop_assert!(token.chars().all(char::is_alphanumeric));
            }
        }
    }
}
