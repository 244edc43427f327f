//! Rule-based corpus subsetting.
//!
//! A document is flagged category-relevant when its maximum definition
//! similarity strictly exceeds a threshold. Applied twice (hazards, then
//! NCFs over the kept set) this produces the doubly-filtered corpus.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{CategoryDefinition, DocumentCollection};
use crate::embed::{score_against_categories, EmbeddingProvider};
use crate::error::{Error, Result};

/// Document-by-category similarity scores.
#[derive(Debug, Clone)]
pub struct ScoreMatrix {
    doc_ids: Vec<String>,
    cat_ids: Vec<String>,
    scores: Vec<f64>,
    provider_id: String,
}

impl ScoreMatrix {
    pub fn new(
        doc_ids: Vec<String>,
        cat_ids: Vec<String>,
        scores: Vec<f64>,
        provider_id: String,
    ) -> Result<Self> {
        if scores.len() != doc_ids.len() * cat_ids.len() {
            return Err(Error::DimMismatch {
                left: scores.len(),
                right: doc_ids.len() * cat_ids.len(),
            });
        }
        for (i, s) in scores.iter().enumerate() {
            if !s.is_finite() || *s < -1.0 - 1e-9 || *s > 1.0 + 1e-9 {
                return Err(Error::InvalidConfig {
                    reason: format!("score {s} at index {i} outside [-1, 1]"),
                });
            }
        }
        Ok(Self {
            doc_ids,
            cat_ids,
            scores,
            provider_id,
        })
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn cat_ids(&self) -> &[String] {
        &self.cat_ids
    }

    pub fn provider_id(&self) -> &str {
        &self.provider_id
    }

    pub fn score(&self, doc: usize, cat: usize) -> f64 {
        self.scores[doc * self.cat_ids.len() + cat]
    }

    pub fn row(&self, doc: usize) -> &[f64] {
        let w = self.cat_ids.len();
        &self.scores[doc * w..(doc + 1) * w]
    }
}

/// Outcome of the max-score rule for one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterDecision {
    pub doc_id: String,
    pub max_score: f64,
    pub argmax_cat: String,
    pub flag: u8,
    pub threshold: f64,
    pub provider: String,
}

/// Maximum score in a row and the first category (file order) attaining it.
pub fn max_category_score<'a>(row: &[f64], cat_ids: &'a [String]) -> Result<(f64, &'a str)> {
    if row.is_empty() || cat_ids.is_empty() {
        return Err(Error::EmptyScoreRow);
    }
    let mut best = 0usize;
    for (i, s) in row.iter().enumerate() {
        if *s > row[best] {
            best = i;
        }
    }
    Ok((row[best], cat_ids[best].as_str()))
}

/// Eq-style flag rule: 1 iff `max_score` strictly exceeds the threshold.
pub fn apply_flag(max_score: f64, threshold: f64) -> u8 {
    u8::from(max_score > threshold)
}

/// Score every document against every definition under one provider, flag by
/// the max-score rule, and return the kept subset plus a decision per input
/// document (rejections included, so threshold re-runs replay without
/// re-embedding).
pub fn filter_corpus(
    docs: &DocumentCollection,
    defs: &[&CategoryDefinition],
    provider: &dyn EmbeddingProvider,
    threshold: f64,
) -> Result<(DocumentCollection, Vec<FilterDecision>)> {
    let doc_refs: Vec<_> = docs.iter().collect();
    let doc_matrix = provider.embed_documents(&doc_refs)?;
    let def_matrix = provider.embed_categories(defs)?;
    let scores = score_against_categories(&doc_matrix, &def_matrix)?;

    let mut decisions = Vec::with_capacity(docs.len());
    let mut kept_ids = HashSet::new();
    for (i, doc_id) in scores.doc_ids().iter().enumerate() {
        let (max_score, argmax_cat) = max_category_score(scores.row(i), scores.cat_ids())?;
        let flag = apply_flag(max_score, threshold);
        if flag == 1 {
            kept_ids.insert(doc_id.clone());
        }
        decisions.push(FilterDecision {
            doc_id: doc_id.clone(),
            max_score,
            argmax_cat: argmax_cat.to_string(),
            flag,
            threshold,
            provider: provider.spec().provider_id.clone(),
        });
    }
    decisions.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    Ok((docs.subset(&kept_ids), decisions))
}

/// Persist decisions as JSON-lines, one decision per line.
pub fn write_decisions(decisions: &[FilterDecision], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for d in decisions {
        serde_json::to_writer(&mut out, d).map_err(|e| Error::json(path, e))?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn read_decisions(path: &Path) -> Result<Vec<FilterDecision>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decisions = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        decisions.push(serde_json::from_str(&line).map_err(|e| Error::json(path, e))?);
    }
    Ok(decisions)
}
