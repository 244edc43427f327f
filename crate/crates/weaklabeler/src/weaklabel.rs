//! Programmatic labeling for one category at a time.
//!
//! Each labeling function (LF) thresholds the cosine similarity between a
//! document and the category definition under one embedding provider, giving
//! a binary vote. A two-class generative model with conditionally
//! independent LFs is fit by EM on the vote matrix alone, without ground
//! truth, and its posteriors become the probabilistic labels. Per-category
//! results union into multi-label assignments.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embed::{cosine_similarity, EmbeddingMatrix, EmbeddingVector};
use crate::error::{Error, Result};

/// Parameters clamp; keeps every log in the posterior finite.
const PARAM_CLAMP: f64 = 1e-3;

/// One labeling function: a (provider, category, threshold) triple.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelingFunctionSpec {
    pub lf_id: String,
    pub provider_id: String,
    pub cat_id: String,
    pub threshold: f64,
}

/// Documents-by-LFs binary votes. No abstain state: every LF decides
/// whether or not the document fits the category.
#[derive(Debug, Clone)]
pub struct VoteMatrix {
    doc_ids: Vec<String>,
    lf_ids: Vec<String>,
    votes: Vec<u8>,
}

impl VoteMatrix {
    pub fn new(doc_ids: Vec<String>, lf_ids: Vec<String>, votes: Vec<u8>) -> Result<Self> {
        if lf_ids.len() < 2 {
            return Err(Error::InvalidConfig {
                reason: format!("need at least 2 labeling functions, got {}", lf_ids.len()),
            });
        }
        if votes.len() != doc_ids.len() * lf_ids.len() {
            return Err(Error::DimMismatch {
                left: votes.len(),
                right: doc_ids.len() * lf_ids.len(),
            });
        }
        if votes.iter().any(|v| *v > 1) {
            return Err(Error::InvalidConfig {
                reason: "votes must be 0 or 1".into(),
            });
        }
        Ok(Self {
            doc_ids,
            lf_ids,
            votes,
        })
    }

    pub fn n_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn n_lfs(&self) -> usize {
        self.lf_ids.len()
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn lf_ids(&self) -> &[String] {
        &self.lf_ids
    }

    pub fn vote(&self, doc: usize, lf: usize) -> u8 {
        self.votes[doc * self.lf_ids.len() + lf]
    }

    pub fn row(&self, doc: usize) -> &[u8] {
        let w = self.lf_ids.len();
        &self.votes[doc * w..(doc + 1) * w]
    }

    /// Same votes with LF columns reordered by `perm[new] = old`.
    pub fn permute_lfs(&self, perm: &[usize]) -> Result<VoteMatrix> {
        if perm.len() != self.n_lfs() {
            return Err(Error::LfCountMismatch {
                params: perm.len(),
                votes: self.n_lfs(),
            });
        }
        let lf_ids = perm.iter().map(|&j| self.lf_ids[j].clone()).collect();
        let mut votes = Vec::with_capacity(self.votes.len());
        for i in 0..self.n_docs() {
            for &j in perm {
                votes.push(self.vote(i, j));
            }
        }
        VoteMatrix::new(self.doc_ids.clone(), lf_ids, votes)
    }
}

/// Fitted generative-model parameters for one category.
///
/// `prior` is P(y=1); `s[j]` = P(vote=1 | y=1) and `t[j]` = P(vote=0 | y=0)
/// per LF, all clamped to [1e-3, 1-1e-3].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelModelParams {
    pub cat_id: String,
    pub prior: f64,
    pub s: Vec<f64>,
    pub t: Vec<f64>,
    pub log_likelihood_trace: Vec<f64>,
}

/// Posterior label for one (document, category) pair; `hard` is 1 iff
/// p >= 0.5 (exact ties resolve to 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilisticLabel {
    pub doc_id: String,
    pub cat_id: String,
    pub p: f64,
    pub hard: u8,
}

/// Per-document label set for one taxonomy, categories in file order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiLabelAssignment {
    pub doc_id: String,
    pub labels: Vec<String>,
}

fn hard_of(p: f64) -> u8 {
    u8::from(p >= 0.5)
}

/// Build the vote matrix for one category: vote[i][j] = 1 iff the cosine
/// similarity between document i and the definition under LF j's provider
/// strictly exceeds LF j's threshold.
///
/// `doc_embeddings` and `definitions` are keyed by provider id; all
/// document matrices must list the same doc ids in the same order.
pub fn apply_labeling_functions(
    doc_embeddings: &BTreeMap<String, EmbeddingMatrix>,
    definitions: &BTreeMap<String, EmbeddingVector>,
    lfs: &[LabelingFunctionSpec],
) -> Result<VoteMatrix> {
    let first = lfs.first().ok_or_else(|| Error::InvalidConfig {
        reason: "no labeling functions given".into(),
    })?;
    let reference =
        doc_embeddings
            .get(&first.provider_id)
            .ok_or_else(|| Error::MissingProvider {
                provider_id: first.provider_id.clone(),
                reason: "no document embeddings".into(),
            })?;
    let doc_ids = reference.ids().to_vec();

    let mut votes = vec![0u8; doc_ids.len() * lfs.len()];
    for (j, lf) in lfs.iter().enumerate() {
        let docs = doc_embeddings
            .get(&lf.provider_id)
            .ok_or_else(|| Error::MissingProvider {
                provider_id: lf.provider_id.clone(),
                reason: "no document embeddings".into(),
            })?;
        if docs.ids() != doc_ids.as_slice() {
            return Err(Error::InconsistentCoverage {
                reason: format!("provider {:?} lists different doc ids", lf.provider_id),
            });
        }
        let def = definitions
            .get(&lf.provider_id)
            .ok_or_else(|| Error::MissingProvider {
                provider_id: lf.provider_id.clone(),
                reason: "no definition embedding".into(),
            })?;
        for i in 0..docs.len() {
            let sim = cosine_similarity(&EmbeddingVector::new(docs.row(i).to_vec()), def)?;
            votes[i * lfs.len() + j] = u8::from(sim > lf.threshold);
        }
    }
    VoteMatrix::new(
        doc_ids,
        lfs.iter().map(|l| l.lf_id.clone()).collect(),
        votes,
    )
}

/// Baseline combiner: p = fraction of 1-votes in the row. Also the EM
/// initializer.
pub fn majority_vote(votes: &VoteMatrix, cat_id: &str) -> Vec<ProbabilisticLabel> {
    let m = votes.n_lfs() as f64;
    (0..votes.n_docs())
        .map(|i| {
            let p = votes.row(i).iter().map(|v| f64::from(*v)).sum::<f64>() / m;
            ProbabilisticLabel {
                doc_id: votes.doc_ids()[i].clone(),
                cat_id: cat_id.to_string(),
                p,
                hard: hard_of(p),
            }
        })
        .collect()
}

fn clamp(p: f64) -> f64 {
    p.clamp(PARAM_CLAMP, 1.0 - PARAM_CLAMP)
}

/// Log joint for both label values given a vote row, under (prior, s, t).
fn log_joint(row: &[u8], prior: f64, s: &[f64], t: &[f64]) -> (f64, f64) {
    let mut lp1 = prior.ln();
    let mut lp0 = (1.0 - prior).ln();
    for (j, &v) in row.iter().enumerate() {
        if v == 1 {
            lp1 += s[j].ln();
            lp0 += (1.0 - t[j]).ln();
        } else {
            lp1 += (1.0 - s[j]).ln();
            lp0 += t[j].ln();
        }
    }
    (lp1, lp0)
}

fn posterior_from_joint(lp1: f64, lp0: f64) -> f64 {
    1.0 / (1.0 + (lp0 - lp1).exp())
}

/// Fit the two-class conditionally-independent model by EM.
///
/// Posteriors initialize from majority vote; each iteration runs the M-step
/// (clamped) then the E-step, recording the observed-data log-likelihood.
/// Stops at `max_iters` or when the largest parameter change drops below
/// `tol`. The label-swap ambiguity is resolved at the end by flipping
/// (prior, s, t) to the orientation where the LFs are better than chance on
/// average.
pub fn fit_label_model(
    votes: &VoteMatrix,
    cat_id: &str,
    max_iters: usize,
    tol: f64,
) -> Result<LabelModelParams> {
    let n = votes.n_docs();
    let m = votes.n_lfs();
    if n < 10 {
        return Err(Error::TooFewDocuments { min: 10, got: n });
    }
    let first = votes.row(0);
    if (1..n).all(|i| votes.row(i) == first) {
        return Err(Error::Unidentifiable);
    }

    // Majority-vote posteriors start the chain.
    let mut r: Vec<f64> = (0..n)
        .map(|i| votes.row(i).iter().map(|v| f64::from(*v)).sum::<f64>() / m as f64)
        .collect();

    let mut prior = 0.5;
    let mut s = vec![0.5; m];
    let mut t = vec![0.5; m];
    let mut trace = Vec::new();
    let mut have_params = false;

    for _ in 0..max_iters {
        // M-step: closed-form maximizers of the expected complete
        // log-likelihood, projected onto the clamp box.
        let sum_r: f64 = r.iter().sum();
        let sum_nr = n as f64 - sum_r;
        let new_prior = clamp(sum_r / n as f64);
        let mut new_s = vec![0.0f64; m];
        let mut new_t = vec![0.0f64; m];
        for (i, ri) in r.iter().enumerate() {
            for (j, &v) in votes.row(i).iter().enumerate() {
                if v == 1 {
                    new_s[j] += ri;
                } else {
                    new_t[j] += 1.0 - ri;
                }
            }
        }
        for j in 0..m {
            new_s[j] = clamp(if sum_r > 0.0 { new_s[j] / sum_r } else { 0.5 });
            new_t[j] = clamp(if sum_nr > 0.0 { new_t[j] / sum_nr } else { 0.5 });
        }

        let delta = if have_params {
            let mut d = (new_prior - prior).abs();
            for j in 0..m {
                d = d.max((new_s[j] - s[j]).abs()).max((new_t[j] - t[j]).abs());
            }
            d
        } else {
            f64::INFINITY
        };
        prior = new_prior;
        s = new_s;
        t = new_t;
        have_params = true;

        // E-step plus observed log-likelihood, in log space.
        let mut ll = 0.0;
        for (i, ri) in r.iter_mut().enumerate() {
            let (lp1, lp0) = log_joint(votes.row(i), prior, &s, &t);
            let mx = lp1.max(lp0);
            ll += mx + ((lp1 - mx).exp() + (lp0 - mx).exp()).ln();
            *ri = posterior_from_joint(lp1, lp0);
        }
        trace.push(ll);

        if delta < tol {
            break;
        }
    }

    // Sign resolution: prefer the labeling where mean((s+t)/2) >= 0.5.
    let mean_acc: f64 = (0..m).map(|j| (s[j] + t[j]) / 2.0).sum::<f64>() / m as f64;
    if mean_acc < 0.5 {
        prior = 1.0 - prior;
        let flipped_s: Vec<f64> = t.iter().map(|v| 1.0 - v).collect();
        let flipped_t: Vec<f64> = s.iter().map(|v| 1.0 - v).collect();
        s = flipped_s;
        t = flipped_t;
    }

    Ok(LabelModelParams {
        cat_id: cat_id.to_string(),
        prior,
        s,
        t,
        log_likelihood_trace: trace,
    })
}

/// Posterior labels for every document under fitted parameters.
pub fn infer_probabilistic_labels(
    params: &LabelModelParams,
    votes: &VoteMatrix,
    cat_id: &str,
) -> Result<Vec<ProbabilisticLabel>> {
    if params.s.len() != votes.n_lfs() || params.t.len() != votes.n_lfs() {
        return Err(Error::LfCountMismatch {
            params: params.s.len(),
            votes: votes.n_lfs(),
        });
    }
    Ok((0..votes.n_docs())
        .map(|i| {
            let (lp1, lp0) = log_joint(votes.row(i), params.prior, &params.s, &params.t);
            let p = posterior_from_joint(lp1, lp0);
            ProbabilisticLabel {
                doc_id: votes.doc_ids()[i].clone(),
                cat_id: cat_id.to_string(),
                p,
                hard: hard_of(p),
            }
        })
        .collect())
}

/// Union per-category hard labels into one assignment per document.
/// `category_order` fixes the label ordering; every category list must
/// cover the same documents.
pub fn union_multilabel(
    per_category: &[Vec<ProbabilisticLabel>],
    category_order: &[String],
) -> Result<Vec<MultiLabelAssignment>> {
    if per_category.len() != category_order.len() {
        return Err(Error::OrderMismatch {
            reason: format!(
                "{} category lists vs {} categories in order",
                per_category.len(),
                category_order.len()
            ),
        });
    }
    if per_category.is_empty() {
        return Ok(Vec::new());
    }

    let mut doc_ids: Vec<String> = per_category[0].iter().map(|l| l.doc_id.clone()).collect();
    doc_ids.sort();
    let mut assignments: BTreeMap<String, Vec<String>> =
        doc_ids.iter().map(|d| (d.clone(), Vec::new())).collect();

    for (labels, cat_id) in per_category.iter().zip(category_order) {
        let mut covered: Vec<String> = labels.iter().map(|l| l.doc_id.clone()).collect();
        covered.sort();
        if covered != doc_ids {
            return Err(Error::InconsistentCoverage {
                reason: format!("category {cat_id:?} covers a different doc set"),
            });
        }
        for l in labels {
            if l.hard == 1 {
                assignments
                    .get_mut(&l.doc_id)
                    .expect("doc id present")
                    .push(cat_id.clone());
            }
        }
    }

    Ok(assignments
        .into_iter()
        .map(|(doc_id, labels)| MultiLabelAssignment { doc_id, labels })
        .collect())
}

/// Combined hazard + NCF labels for one document; the predictions-file row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentLabels {
    pub doc_id: String,
    pub hazard: Vec<String>,
    pub ncf: Vec<String>,
}

pub fn write_labels(labels: &[ProbabilisticLabel], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for l in labels {
        serde_json::to_writer(&mut out, l).map_err(|e| Error::json(path, e))?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: &Path) -> Result<Vec<ProbabilisticLabel>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut labels = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        labels.push(serde_json::from_str(&line).map_err(|e| Error::json(path, e))?);
    }
    Ok(labels)
}

pub fn write_params(params: &LabelModelParams, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(params).map_err(|e| Error::json(path, e))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_params(path: &Path) -> Result<LabelModelParams> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TokenList;
    use crate::embed::{hash_embed, EmbeddingMatrix, ProviderSpec};

    fn matrix(doc_ids: &[&str], lf_ids: &[&str], rows: &[&[u8]]) -> VoteMatrix {
        VoteMatrix::new(
            doc_ids.iter().map(|s| s.to_string()).collect(),
            lf_ids.iter().map(|s| s.to_string()).collect(),
            rows.iter().flat_map(|r| r.iter().copied()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn majority_vote_examples() {
        let v = matrix(
            &["d1", "d2", "d3"],
            &["l1", "l2", "l3", "l4", "l5", "l6", "l7"],
            &[
                &[1, 1, 1, 0, 0, 0, 0],
                &[1, 1, 1, 1, 1, 1, 1],
                &[0, 0, 0, 0, 0, 0, 0],
            ],
        );
        let labels = majority_vote(&v, "c");
        assert!((labels[0].p - 3.0 / 7.0).abs() < 1e-12);
        assert_eq!(labels[0].hard, 0);
        assert_eq!((labels[1].p, labels[1].hard), (1.0, 1));
        assert_eq!((labels[2].p, labels[2].hard), (0.0, 0));
    }

    #[test]
    fn fit_rejects_degenerate_inputs() {
        let rows: Vec<&[u8]> = vec![&[1, 0]; 12];
        let ids: Vec<String> = (0..12).map(|i| format!("d{i}")).collect();
        let idrefs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let v = matrix(&idrefs, &["a", "b"], &rows);
        assert!(matches!(
            fit_label_model(&v, "c", 100, 1e-6).unwrap_err(),
            Error::Unidentifiable
        ));

        let small = matrix(&["d1", "d2"], &["a", "b"], &[&[1, 0], &[0, 1]]);
        assert!(matches!(
            fit_label_model(&small, "c", 100, 1e-6).unwrap_err(),
            Error::TooFewDocuments { .. }
        ));
    }

    #[test]
    fn perfectly_correlated_accurate_lfs_match_majority_vote() {
        // Separable set: identical accurate columns, both row kinds present.
        let mut rows: Vec<&[u8]> = Vec::new();
        for i in 0..20 {
            rows.push(if i % 3 == 0 { &[1, 1, 1] } else { &[0, 0, 0] });
        }
        let ids: Vec<String> = (0..20).map(|i| format!("d{i}")).collect();
        let idrefs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let v = matrix(&idrefs, &["a", "b", "c"], &rows);
        let params = fit_label_model(&v, "cat", 100, 1e-6).unwrap();
        let lm = infer_probabilistic_labels(&params, &v, "cat").unwrap();
        let mv = majority_vote(&v, "cat");
        for (a, b) in lm.iter().zip(mv.iter()) {
            assert_eq!(a.hard, b.hard);
        }
    }

    #[test]
    fn fit_sign_resolution_invariant() {
        let mut rng = crate::rng::SplitMix64::new(4);
        let ids: Vec<String> = (0..200).map(|i| format!("d{i}")).collect();
        let idrefs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let rows: Vec<Vec<u8>> = (0..200)
            .map(|_| {
                let y = rng.next_f64() < 0.4;
                (0..3)
                    .map(|_| {
                        let acc = 0.8;
                        let correct = rng.next_f64() < acc;
                        u8::from(y == correct)
                    })
                    .collect()
            })
            .collect();
        let rowrefs: Vec<&[u8]> = rows.iter().map(Vec::as_slice).collect();
        let v = matrix(&idrefs, &["a", "b", "c"], &rowrefs);
        let params = fit_label_model(&v, "c", 100, 1e-6).unwrap();
        let mean_acc: f64 = params
            .s
            .iter()
            .zip(&params.t)
            .map(|(s, t)| (s + t) / 2.0)
            .sum::<f64>()
            / 3.0;
        assert!(mean_acc >= 0.5);
    }

    #[test]
    fn uniform_params_posterior_monotone_in_vote_count() {
        let params = LabelModelParams {
            cat_id: "c".into(),
            prior: 0.5,
            s: vec![0.7; 4],
            t: vec![0.7; 4],
            log_likelihood_trace: vec![],
        };
        let v = matrix(
            &["d0", "d1", "d2", "d3", "d4"],
            &["a", "b", "c", "d"],
            &[
                &[0, 0, 0, 0],
                &[1, 0, 0, 0],
                &[1, 1, 0, 0],
                &[1, 1, 1, 0],
                &[1, 1, 1, 1],
            ],
        );
        let labels = infer_probabilistic_labels(&params, &v, "c").unwrap();
        for w in labels.windows(2) {
            assert!(w[1].p > w[0].p);
        }
        // Two of four votes is an exact posterior tie at these params; the
        // 0.5 rule sends it to 1, like majority vote.
        assert!((labels[2].p - 0.5).abs() < 1e-12);
        assert_eq!(labels[2].hard, 1);
    }

    #[test]
    fn near_perfect_lf_dominates_posterior() {
        let eps = 1e-3;
        let params = LabelModelParams {
            cat_id: "c".into(),
            prior: 0.5,
            s: vec![1.0 - eps, 0.5, 0.5],
            t: vec![1.0 - eps, 0.5, 0.5],
            log_likelihood_trace: vec![],
        };
        let v = matrix(
            &["d0", "d1"],
            &["strong", "w1", "w2"],
            &[&[1, 0, 0], &[0, 1, 1]],
        );
        let labels = infer_probabilistic_labels(&params, &v, "c").unwrap();
        assert_eq!(labels[0].hard, 1);
        assert_eq!(labels[1].hard, 0);
    }

    #[test]
    fn all_zero_row_with_accurate_lfs_is_negative() {
        let params = LabelModelParams {
            cat_id: "c".into(),
            prior: 0.5,
            s: vec![0.8, 0.8],
            t: vec![0.8, 0.8],
            log_likelihood_trace: vec![],
        };
        let v = matrix(&["d0"], &["a", "b"], &[&[0, 0]]);
        let labels = infer_probabilistic_labels(&params, &v, "c").unwrap();
        assert!(labels[0].p < 0.5);
        assert_eq!(labels[0].hard, 0);
    }

    #[test]
    fn infer_rejects_lf_count_mismatch() {
        let params = LabelModelParams {
            cat_id: "c".into(),
            prior: 0.5,
            s: vec![0.8; 3],
            t: vec![0.8; 3],
            log_likelihood_trace: vec![],
        };
        let v = matrix(&["d0"], &["a", "b"], &[&[0, 0]]);
        assert!(matches!(
            infer_probabilistic_labels(&params, &v, "c").unwrap_err(),
            Error::LfCountMismatch { .. }
        ));
    }

    #[test]
    fn permuting_lf_columns_permutes_params_and_keeps_posteriors() {
        let mut rng = crate::rng::SplitMix64::new(77);
        let n = 120;
        let ids: Vec<String> = (0..n).map(|i| format!("d{i}")).collect();
        let idrefs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let accs = [(0.9, 0.8), (0.7, 0.9), (0.6, 0.6)];
        let rows: Vec<Vec<u8>> = (0..n)
            .map(|_| {
                let y = rng.next_f64() < 0.4;
                accs.iter()
                    .map(|&(s, t)| {
                        if y {
                            u8::from(rng.next_f64() < s)
                        } else {
                            u8::from(rng.next_f64() >= t)
                        }
                    })
                    .collect()
            })
            .collect();
        let rowrefs: Vec<&[u8]> = rows.iter().map(Vec::as_slice).collect();
        let v = matrix(&idrefs, &["a", "b", "c"], &rowrefs);
        let perm = [2usize, 0, 1];
        let vp = v.permute_lfs(&perm).unwrap();

        let p1 = fit_label_model(&v, "c", 100, 1e-6).unwrap();
        let p2 = fit_label_model(&vp, "c", 100, 1e-6).unwrap();
        for (new, &old) in perm.iter().enumerate() {
            assert!((p2.s[new] - p1.s[old]).abs() < 1e-12);
            assert!((p2.t[new] - p1.t[old]).abs() < 1e-12);
        }
        let l1 = infer_probabilistic_labels(&p1, &v, "c").unwrap();
        let l2 = infer_probabilistic_labels(&p2, &vp, "c").unwrap();
        for (a, b) in l1.iter().zip(l2.iter()) {
            assert!((a.p - b.p).abs() < 1e-12);
        }
    }

    #[test]
    fn union_examples() {
        let mk = |cat: &str, hard: &[(&str, u8)]| -> Vec<ProbabilisticLabel> {
            hard.iter()
                .map(|(d, h)| ProbabilisticLabel {
                    doc_id: d.to_string(),
                    cat_id: cat.into(),
                    p: f64::from(*h),
                    hard: *h,
                })
                .collect()
        };
        let drought = mk("drought", &[("d1", 1), ("d2", 0)]);
        let wildfire = mk("wildfire", &[("d1", 1), ("d2", 0)]);
        let got =
            union_multilabel(&[drought, wildfire], &["drought".into(), "wildfire".into()]).unwrap();
        assert_eq!(got[0].labels, vec!["drought", "wildfire"]);
        assert!(got[1].labels.is_empty());
    }

    #[test]
    fn union_rejects_inconsistent_coverage() {
        let a = vec![ProbabilisticLabel {
            doc_id: "d1".into(),
            cat_id: "x".into(),
            p: 1.0,
            hard: 1,
        }];
        let b = vec![ProbabilisticLabel {
            doc_id: "d2".into(),
            cat_id: "y".into(),
            p: 1.0,
            hard: 1,
        }];
        assert!(matches!(
            union_multilabel(&[a, b], &["x".into(), "y".into()]).unwrap_err(),
            Error::InconsistentCoverage { .. }
        ));
    }

    #[test]
    fn apply_lfs_matches_brute_force() {
        let stop = crate::corpus::default_stopwords();
        let texts = [
            "flood water river dam flood",
            "volcano lava magma",
            "flood inundation water levee",
            "grain harvest tractor",
        ];
        let def_text = "flood water inundation river";
        let mut doc_embeddings = BTreeMap::new();
        let mut definitions = BTreeMap::new();
        let mut lfs = Vec::new();
        for seed in 1..=3u64 {
            let pid = format!("h{seed}");
            let spec = ProviderSpec::hashed(&pid, 64, seed);
            let rows: Vec<_> = texts
                .iter()
                .map(|t| hash_embed(&crate::corpus::tokenize(t, stop), &spec).unwrap())
                .collect();
            let ids: Vec<String> = (0..texts.len()).map(|i| format!("d{i}")).collect();
            doc_embeddings.insert(
                pid.clone(),
                EmbeddingMatrix::new(ids, rows, spec.clone()).unwrap(),
            );
            definitions.insert(
                pid.clone(),
                hash_embed(&crate::corpus::tokenize(def_text, stop), &spec).unwrap(),
            );
            lfs.push(LabelingFunctionSpec {
                lf_id: format!("lf-{pid}"),
                provider_id: pid,
                cat_id: "flood".into(),
                threshold: 0.3,
            });
        }
        let votes = apply_labeling_functions(&doc_embeddings, &definitions, &lfs).unwrap();
        for (i, _) in texts.iter().enumerate() {
            for (j, lf) in lfs.iter().enumerate() {
                let docs = &doc_embeddings[&lf.provider_id];
                let sim = cosine_similarity(
                    &EmbeddingVector::new(docs.row(i).to_vec()),
                    &definitions[&lf.provider_id],
                )
                .unwrap();
                assert_eq!(votes.vote(i, j), u8::from(sim > lf.threshold));
            }
        }
    }

    #[test]
    fn apply_lfs_vacuous_thresholds() {
        let stop = crate::corpus::default_stopwords();
        let spec = ProviderSpec::hashed("h1", 64, 1);
        let def = hash_embed(&crate::corpus::tokenize("flood water", stop), &spec).unwrap();
        let rows = vec![def.clone(), def.clone()];
        let mut doc_embeddings = BTreeMap::new();
        doc_embeddings.insert(
            "h1".to_string(),
            EmbeddingMatrix::new(vec!["a".into(), "b".into()], rows, spec).unwrap(),
        );
        let mut definitions = BTreeMap::new();
        definitions.insert("h1".to_string(), def);
        let mk_lfs = |thr: f64| {
            vec![
                LabelingFunctionSpec {
                    lf_id: "l1".into(),
                    provider_id: "h1".into(),
                    cat_id: "c".into(),
                    threshold: thr,
                },
                LabelingFunctionSpec {
                    lf_id: "l2".into(),
                    provider_id: "h1".into(),
                    cat_id: "c".into(),
                    threshold: thr,
                },
            ]
        };
        // Every doc identical to the definition: all ones below 1.0.
        let v = apply_labeling_functions(&doc_embeddings, &definitions, &mk_lfs(0.4)).unwrap();
        assert!((0..2).all(|i| (0..2).all(|j| v.vote(i, j) == 1)));
        let v = apply_labeling_functions(&doc_embeddings, &definitions, &mk_lfs(1.1)).unwrap();
        assert!((0..2).all(|i| (0..2).all(|j| v.vote(i, j) == 0)));
    }

    #[test]
    fn tokenlist_hash_embed_smoke() {
        // hash_embed rejects non-hashed specs
        let spec = ProviderSpec::file_backed("f", 8);
        assert!(hash_embed(&TokenList::default(), &spec).is_err());
    }

    proptest::proptest! {
        // Posteriors stay inside [0, 1] and match hard labels at the 0.5
        // rule, whatever the (clamped) parameters and votes.
        #[test]
        fn posteriors_are_probabilities(
            prior in 0.001f64..0.999,
            accs in proptest::collection::vec((0.001f64..0.999, 0.001f64..0.999), 2..6),
            row_bits in proptest::collection::vec(0u8..=1, 2..6),
        ) {
            let m = accs.len().min(row_bits.len());
            let params = LabelModelParams {
                cat_id: "c".into(),
                prior,
                s: accs.iter().take(m).map(|a| a.0).collect(),
                t: accs.iter().take(m).map(|a| a.1).collect(),
                log_likelihood_trace: vec![],
            };
            let lf_ids: Vec<String> = (0..m).map(|j| format!("l{j}")).collect();
            let v = VoteMatrix::new(
                vec!["d".into()],
                lf_ids,
                row_bits[..m].to_vec(),
            ).unwrap();
            let labels = infer_probabilistic_labels(&params, &v, "c").unwrap();
            let p = labels[0].p;
            proptest::prop_assert!((0.0..=1.0).contains(&p));
            proptest::prop_assert_eq!(labels[0].hard, u8::from(p >= 0.5));
        }
    }
}
