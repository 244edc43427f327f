//! Category-pair analytics and the topic pipeline.
//!
//! Counts documents per (hazard, NCF) label pair, and for a selected pair
//! runs embedding -> dimensionality reduction -> density clustering ->
//! c-TF-IDF. The reduction is a deterministic seeded power-iteration PCA and
//! the clustering a flat density rule; both stand behind small interfaces so
//! heavier algorithms can be swapped in.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::TokenList;
use crate::embed::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::weaklabel::DocumentLabels;

/// Document counts per (hazard, NCF) label pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairCountMatrix {
    pub hazard_ids: Vec<String>,
    pub ncf_ids: Vec<String>,
    counts: Vec<u64>,
}

impl PairCountMatrix {
    pub fn count(&self, hazard: usize, ncf: usize) -> u64 {
        self.counts[hazard * self.ncf_ids.len() + ncf]
    }

    pub fn row(&self, hazard: usize) -> &[u64] {
        let w = self.ncf_ids.len();
        &self.counts[hazard * w..(hazard + 1) * w]
    }

    pub fn is_empty(&self) -> bool {
        self.hazard_ids.is_empty() || self.ncf_ids.is_empty()
    }

    /// Cell with the largest count; ties break by row then column order.
    pub fn max_cell(&self) -> Option<(String, String, u64)> {
        let mut best: Option<(usize, usize, u64)> = None;
        for h in 0..self.hazard_ids.len() {
            for n in 0..self.ncf_ids.len() {
                let c = self.count(h, n);
                if best.is_none_or(|(_, _, b)| c > b) {
                    best = Some((h, n, c));
                }
            }
        }
        best.map(|(h, n, c)| (self.hazard_ids[h].clone(), self.ncf_ids[n].clone(), c))
    }
}

/// Count documents labeled with both members of every (hazard, NCF) pair.
/// Returns the full matrix plus a filtered view that drops any row or
/// column whose every cell is below `min_cell`.
pub fn pair_count_matrix(
    rows: &[DocumentLabels],
    hazard_order: &[String],
    ncf_order: &[String],
    min_cell: u64,
) -> (PairCountMatrix, PairCountMatrix) {
    let h_idx: HashMap<&str, usize> = hazard_order
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let n_idx: HashMap<&str, usize> = ncf_order
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();

    let mut counts = vec![0u64; hazard_order.len() * ncf_order.len()];
    for row in rows {
        for h in &row.hazard {
            let Some(&hi) = h_idx.get(h.as_str()) else {
                continue;
            };
            for n in &row.ncf {
                if let Some(&ni) = n_idx.get(n.as_str()) {
                    counts[hi * ncf_order.len() + ni] += 1;
                }
            }
        }
    }
    let full = PairCountMatrix {
        hazard_ids: hazard_order.to_vec(),
        ncf_ids: ncf_order.to_vec(),
        counts,
    };

    let keep_rows: Vec<usize> = (0..hazard_order.len())
        .filter(|&h| full.row(h).iter().any(|c| *c >= min_cell))
        .collect();
    let keep_cols: Vec<usize> = (0..ncf_order.len())
        .filter(|&n| (0..hazard_order.len()).any(|h| full.count(h, n) >= min_cell))
        .collect();
    let mut kept_counts = Vec::with_capacity(keep_rows.len() * keep_cols.len());
    for &h in &keep_rows {
        for &n in &keep_cols {
            kept_counts.push(full.count(h, n));
        }
    }
    let filtered = PairCountMatrix {
        hazard_ids: keep_rows.iter().map(|&h| hazard_order[h].clone()).collect(),
        ncf_ids: keep_cols.iter().map(|&n| ncf_order[n].clone()).collect(),
        counts: kept_counts,
    };
    (full, filtered)
}

/// Documents labeled with both categories, sorted by doc_id.
pub fn select_pair_subset(
    rows: &[DocumentLabels],
    hazard_order: &[String],
    ncf_order: &[String],
    hazard: &str,
    ncf: &str,
) -> Result<Vec<String>> {
    if !hazard_order.iter().any(|c| c == hazard) {
        return Err(Error::UnknownCategory {
            cat_id: hazard.to_string(),
        });
    }
    if !ncf_order.iter().any(|c| c == ncf) {
        return Err(Error::UnknownCategory {
            cat_id: ncf.to_string(),
        });
    }
    let mut ids: Vec<String> = rows
        .iter()
        .filter(|r| r.hazard.iter().any(|l| l == hazard) && r.ncf.iter().any(|l| l == ncf))
        .map(|r| r.doc_id.clone())
        .collect();
    ids.sort();
    Ok(ids)
}

/// Rows projected onto the top principal directions.
#[derive(Debug, Clone)]
pub struct ReducedMatrix {
    pub ids: Vec<String>,
    pub dim: usize,
    data: Vec<f64>,
    /// Fraction of total variance captured by the kept components.
    pub variance_ratio: f64,
}

impl ReducedMatrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

const POWER_TOL: f64 = 1e-9;
const POWER_MAX_ITERS: usize = 1000;

/// Center rows and project onto the top `target_dim` principal directions,
/// computed by seeded power iteration with deflation. Component signs are
/// fixed so each component's largest-magnitude loading is positive.
pub fn reduce_dimensions(
    matrix: &EmbeddingMatrix,
    target_dim: usize,
    seed: u64,
) -> Result<ReducedMatrix> {
    let n = matrix.len();
    let d = matrix.dim();
    if target_dim >= d {
        return Err(Error::InvalidConfig {
            reason: format!("target_dim {target_dim} must be below input dim {d}"),
        });
    }
    if n < target_dim {
        return Err(Error::TooFewDocuments {
            min: target_dim,
            got: n,
        });
    }

    // Centered data in f64.
    let mut mean = vec![0.0f64; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(matrix.row(i)) {
            *m += f64::from(*v);
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut centered = vec![0.0f64; n * d];
    for i in 0..n {
        for (j, v) in matrix.row(i).iter().enumerate() {
            centered[i * d + j] = f64::from(*v) - mean[j];
        }
    }

    let total_var: f64 = centered.iter().map(|v| v * v).sum::<f64>() / (n as f64 - 1.0).max(1.0);

    let mut rng = SplitMix64::new(seed);
    let mut components: Vec<Vec<f64>> = Vec::with_capacity(target_dim);
    let mut eigenvalues = Vec::with_capacity(target_dim);

    for _ in 0..target_dim {
        let mut v: Vec<f64> = (0..d).map(|_| rng.next_f64() - 0.5).collect();
        orthogonalize(&mut v, &components);
        normalize(&mut v);

        let mut lambda = 0.0f64;
        for _ in 0..POWER_MAX_ITERS {
            // w = X^T (X v), with deflation against found components.
            let mut xv = vec![0.0f64; n];
            for i in 0..n {
                let row = &centered[i * d..(i + 1) * d];
                xv[i] = row.iter().zip(&v).map(|(a, b)| a * b).sum();
            }
            let mut w = vec![0.0f64; d];
            for i in 0..n {
                let row = &centered[i * d..(i + 1) * d];
                for (wj, rj) in w.iter_mut().zip(row) {
                    *wj += xv[i] * rj;
                }
            }
            orthogonalize(&mut w, &components);
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-12 {
                // Remaining variance is (numerically) zero in this direction.
                lambda = 0.0;
                break;
            }
            for x in &mut w {
                *x /= norm;
            }
            // Align sign with previous iterate before measuring the change.
            let dot: f64 = w.iter().zip(&v).map(|(a, b)| a * b).sum();
            if dot < 0.0 {
                for x in &mut w {
                    *x = -*x;
                }
            }
            let delta = w
                .iter()
                .zip(&v)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            v = w;
            lambda = norm / (n as f64 - 1.0).max(1.0);
            if delta < POWER_TOL {
                break;
            }
        }

        fix_sign(&mut v);
        components.push(v);
        eigenvalues.push(lambda);
    }

    let mut data = vec![0.0f64; n * target_dim];
    for i in 0..n {
        let row = &centered[i * d..(i + 1) * d];
        for (k, comp) in components.iter().enumerate() {
            data[i * target_dim + k] = row.iter().zip(comp).map(|(a, b)| a * b).sum();
        }
    }

    let variance_ratio = if total_var > 0.0 {
        (eigenvalues.iter().sum::<f64>() / total_var).min(1.0)
    } else {
        1.0
    };

    Ok(ReducedMatrix {
        ids: matrix.ids().to_vec(),
        dim: target_dim,
        data,
        variance_ratio,
    })
}

fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let dot: f64 = v.iter().zip(b).map(|(a, c)| a * c).sum();
        for (x, c) in v.iter_mut().zip(b) {
            *x -= dot * c;
        }
    }
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v {
            *x /= norm;
        }
    }
}

/// Flip so the largest-magnitude loading is positive; first index wins ties.
fn fix_sign(v: &mut [f64]) {
    let mut best = 0usize;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        for x in v {
            *x = -*x;
        }
    }
}

/// One density cluster; `topic_id` -1 is reserved for noise.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cluster {
    pub topic_id: i32,
    pub member_doc_ids: Vec<String>,
}

/// Clustering outcome: disjoint clusters plus the noise set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Clustering {
    pub clusters: Vec<Cluster>,
    pub noise_doc_ids: Vec<String>,
}

/// Flat density clustering with Euclidean eps-neighborhoods: a point is a
/// core point when at least `min_pts` points (itself included) lie within
/// `eps`; clusters grow from core points; everything unreachable is noise.
/// Points are processed in doc_id order, so cluster ids and the result as a
/// whole are independent of input row order.
pub fn cluster_documents(reduced: &ReducedMatrix, eps: f64, min_pts: usize) -> Result<Clustering> {
    let n = reduced.len();
    if n < min_pts {
        return Err(Error::TooFewDocuments {
            min: min_pts,
            got: n,
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| reduced.ids[a].cmp(&reduced.ids[b]));

    let eps2 = eps * eps;
    let dist2 = |a: usize, b: usize| -> f64 {
        reduced
            .row(a)
            .iter()
            .zip(reduced.row(b))
            .map(|(x, y)| (x - y) * (x - y))
            .sum()
    };

    // Neighbor lists in doc_id order.
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            order
                .iter()
                .copied()
                .filter(|&j| dist2(i, j) <= eps2)
                .collect()
        })
        .collect();
    let is_core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_pts).collect();

    let mut assignment = vec![-1i32; n];
    let mut visited = vec![false; n];
    let mut next_id = 0i32;

    for &start in &order {
        if visited[start] || !is_core[start] {
            continue;
        }
        let id = next_id;
        next_id += 1;
        let mut queue = std::collections::VecDeque::from([start]);
        visited[start] = true;
        assignment[start] = id;
        while let Some(p) = queue.pop_front() {
            if !is_core[p] {
                continue;
            }
            for &q in &neighbors[p] {
                if assignment[q] == -1 {
                    assignment[q] = id;
                }
                if !visited[q] {
                    visited[q] = true;
                    if is_core[q] {
                        queue.push_back(q);
                    }
                }
            }
        }
    }

    let mut clusters: Vec<Cluster> = (0..next_id)
        .map(|id| Cluster {
            topic_id: id,
            member_doc_ids: Vec::new(),
        })
        .collect();
    let mut noise = Vec::new();
    for &i in &order {
        match assignment[i] {
            -1 => noise.push(reduced.ids[i].clone()),
            id => clusters[id as usize]
                .member_doc_ids
                .push(reduced.ids[i].clone()),
        }
    }
    Ok(Clustering {
        clusters,
        noise_doc_ids: noise,
    })
}

/// Term weights for one cluster.
#[derive(Debug, Clone)]
pub struct ClusterTermWeights {
    pub topic_id: i32,
    /// Present terms only; absent terms weigh 0.
    pub weights: BTreeMap<String, f64>,
}

/// Class-based TF-IDF: each cluster's documents concatenate into one
/// pseudo-document, and W(t, c) = tf(t, c) * ln(1 + A / tf(t)) where tf(t, c)
/// counts t in cluster c, tf(t) counts t across all clusters, and A is the
/// average token count per cluster. Noise documents are excluded.
pub fn compute_ctfidf(
    clusters: &[Cluster],
    tokenized: &BTreeMap<String, TokenList>,
) -> Result<Vec<ClusterTermWeights>> {
    let real: Vec<&Cluster> = clusters.iter().filter(|c| c.topic_id >= 0).collect();
    if real.is_empty() {
        return Err(Error::InvalidConfig {
            reason: "need at least one non-noise cluster".into(),
        });
    }

    let mut per_cluster: Vec<BTreeMap<&str, u64>> = Vec::with_capacity(real.len());
    let mut totals: BTreeMap<&str, u64> = BTreeMap::new();
    let mut total_tokens = 0u64;
    for cluster in &real {
        let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
        for doc_id in &cluster.member_doc_ids {
            let tokens = tokenized
                .get(doc_id)
                .ok_or_else(|| Error::InconsistentCoverage {
                    reason: format!("no tokens for doc {doc_id:?}"),
                })?;
            for t in &tokens.0 {
                *counts.entry(t.as_str()).or_insert(0) += 1;
                *totals.entry(t.as_str()).or_insert(0) += 1;
                total_tokens += 1;
            }
        }
        per_cluster.push(counts);
    }
    if total_tokens == 0 {
        return Err(Error::EmptyVocabulary);
    }

    let avg_cluster_tokens = total_tokens as f64 / real.len() as f64;
    Ok(real
        .iter()
        .zip(per_cluster)
        .map(|(cluster, counts)| ClusterTermWeights {
            topic_id: cluster.topic_id,
            weights: counts
                .into_iter()
                .map(|(term, tf_tc)| {
                    let tf_t = totals[term] as f64;
                    let w = tf_tc as f64 * (1.0 + avg_cluster_tokens / tf_t).ln();
                    (term.to_string(), w)
                })
                .collect(),
        })
        .collect())
}

/// Ranked topic with its top terms.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopicSummary {
    pub topic_id: i32,
    pub doc_count: usize,
    pub top_terms: Vec<(String, f64)>,
    pub member_doc_ids: Vec<String>,
}

/// Renumber topics by descending document count (ties keep original id
/// order) and keep the top `k` terms per topic, weight-descending with
/// lexicographic tie-break.
pub fn summarize_topics(
    weights: &[ClusterTermWeights],
    clusters: &[Cluster],
    k: usize,
) -> Vec<TopicSummary> {
    let by_id: HashMap<i32, &Cluster> = clusters.iter().map(|c| (c.topic_id, c)).collect();
    let mut ranked: Vec<&ClusterTermWeights> = weights.iter().collect();
    ranked.sort_by(|a, b| {
        let ca = by_id[&a.topic_id].member_doc_ids.len();
        let cb = by_id[&b.topic_id].member_doc_ids.len();
        cb.cmp(&ca).then(a.topic_id.cmp(&b.topic_id))
    });

    ranked
        .into_iter()
        .enumerate()
        .map(|(new_id, w)| {
            let cluster = by_id[&w.topic_id];
            let mut terms: Vec<(String, f64)> =
                w.weights.iter().map(|(t, v)| (t.clone(), *v)).collect();
            terms.sort_by(|a, b| {
                b.1.partial_cmp(&a.1)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then_with(|| a.0.cmp(&b.0))
            });
            terms.truncate(k);
            TopicSummary {
                topic_id: new_id as i32,
                doc_count: cluster.member_doc_ids.len(),
                top_terms: terms,
                member_doc_ids: cluster.member_doc_ids.clone(),
            }
        })
        .collect()
}

/// Full pair report written by the topics command.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopicReport {
    pub hazard: String,
    pub ncf: String,
    pub subset_size: usize,
    pub noise_count: usize,
    pub variance_ratio: f64,
    pub topics: Vec<TopicSummary>,
}

/// Topic-pipeline knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopicParams {
    pub target_dim: usize,
    pub eps: f64,
    pub min_pts: usize,
    pub top_k: usize,
}

impl Default for TopicParams {
    fn default() -> Self {
        Self {
            target_dim: 5,
            eps: 0.5,
            min_pts: 5,
            top_k: 10,
        }
    }
}

/// Run reduce -> cluster -> c-TF-IDF -> summarize for one pair subset.
pub fn run_topic_pipeline(
    hazard: &str,
    ncf: &str,
    subset_embeddings: &EmbeddingMatrix,
    tokenized: &BTreeMap<String, TokenList>,
    params: &TopicParams,
    seed: u64,
) -> Result<TopicReport> {
    let reduced = reduce_dimensions(subset_embeddings, params.target_dim, seed)?;
    let clustering = cluster_documents(&reduced, params.eps, params.min_pts)?;
    let topics = if clustering.clusters.is_empty() {
        Vec::new()
    } else {
        let weights = compute_ctfidf(&clustering.clusters, tokenized)?;
        summarize_topics(&weights, &clustering.clusters, params.top_k)
    };
    Ok(TopicReport {
        hazard: hazard.to_string(),
        ncf: ncf.to_string(),
        subset_size: subset_embeddings.len(),
        noise_count: clustering.noise_doc_ids.len(),
        variance_ratio: reduced.variance_ratio,
        topics,
    })
}

/// Minimal CSV cell escaping for the pair/histogram emitters.
pub(crate) fn csv_cell(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Pair matrix as CSV: hazard rows, NCF columns.
pub fn pair_matrix_csv(matrix: &PairCountMatrix) -> String {
    let mut out = String::from("hazard");
    for n in &matrix.ncf_ids {
        out.push(',');
        out.push_str(&csv_cell(n));
    }
    out.push('\n');
    for (h, hid) in matrix.hazard_ids.iter().enumerate() {
        out.push_str(&csv_cell(hid));
        for c in matrix.row(h) {
            out.push(',');
            out.push_str(&c.to_string());
        }
        out.push('\n');
    }
    out
}

/// Per-class histogram as CSV (category, count), already sorted descending.
pub fn per_class_csv(counts: &[(String, usize)]) -> String {
    let mut out = String::from("category,count\n");
    for (cat, n) in counts {
        out.push_str(&csv_cell(cat));
        out.push(',');
        out.push_str(&n.to_string());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{EmbeddingVector, ProviderSpec};

    fn labels(doc: &str, hz: &[&str], nc: &[&str]) -> DocumentLabels {
        DocumentLabels {
            doc_id: doc.into(),
            hazard: hz.iter().map(|s| s.to_string()).collect(),
            ncf: nc.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn ids(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn pair_counts_empty_and_hand_cases() {
        let hz = ids(&["H1", "H2"]);
        let nc = ids(&["N1"]);
        let (full, filtered) = pair_count_matrix(&[], &hz, &nc, 1);
        assert!(full.counts.iter().all(|c| *c == 0));
        assert!(filtered.is_empty());

        let rows = vec![
            labels("d1", &["H1"], &["N1"]),
            labels("d2", &["H1", "H2"], &["N1"]),
        ];
        let (full, _) = pair_count_matrix(&rows, &hz, &nc, 1);
        assert_eq!(full.count(0, 0), 2);
        assert_eq!(full.count(1, 0), 1);
    }

    #[test]
    fn pair_counts_match_brute_force_and_filter_drops_sparse() {
        let hz = ids(&["H1", "H2", "H3"]);
        let nc = ids(&["N1", "N2"]);
        let mut rows = Vec::new();
        for i in 0..10 {
            rows.push(labels(&format!("a{i}"), &["H1"], &["N1"]));
        }
        rows.push(labels("b", &["H2"], &["N2"]));
        rows.push(labels("c", &["H3"], &[]));
        let (full, filtered) = pair_count_matrix(&rows, &hz, &nc, 3);

        for (h, hid) in hz.iter().enumerate() {
            for (n, nid) in nc.iter().enumerate() {
                let brute = rows
                    .iter()
                    .filter(|r| r.hazard.contains(hid) && r.ncf.contains(nid))
                    .count() as u64;
                assert_eq!(full.count(h, n), brute);
            }
        }
        assert_eq!(filtered.hazard_ids, vec!["H1"]);
        assert_eq!(filtered.ncf_ids, vec!["N1"]);
        assert_eq!(filtered.count(0, 0), 10);
    }

    #[test]
    fn pair_subset_selection() {
        let hz = ids(&["H1"]);
        let nc = ids(&["N1"]);
        let rows = vec![
            labels("d2", &["H1"], &["N1"]),
            labels("d1", &["H1"], &["N1"]),
            labels("d3", &["H1"], &[]),
        ];
        let subset = select_pair_subset(&rows, &hz, &nc, "H1", "N1").unwrap();
        assert_eq!(subset, vec!["d1", "d2"]);
        assert!(select_pair_subset(&rows, &hz, &nc, "H9", "N1").is_err());

        let (full, _) = pair_count_matrix(&rows, &hz, &nc, 1);
        assert_eq!(full.count(0, 0) as usize, subset.len());
    }

    fn matrix_from_rows(rows: Vec<Vec<f32>>, dim: usize) -> EmbeddingMatrix {
        let ids = (0..rows.len()).map(|i| format!("d{i:03}")).collect();
        EmbeddingMatrix::new(
            ids,
            rows.into_iter().map(EmbeddingVector::new).collect(),
            ProviderSpec::file_backed("p", dim),
        )
        .unwrap()
    }

    #[test]
    fn reduction_recovers_planar_data() {
        // Points on a 2-D plane inside R^6: projecting to 2 components and
        // reconstructing distances should be near-exact.
        let mut rng = SplitMix64::new(31);
        let a = [1.0, 0.5, -0.3, 0.0, 0.2, 0.7];
        let b = [-0.2, 0.9, 0.4, -0.5, 0.1, 0.0];
        let rows: Vec<Vec<f32>> = (0..40)
            .map(|_| {
                let u = rng.next_gaussian();
                let w = rng.next_gaussian();
                (0..6).map(|j| (u * a[j] + w * b[j]) as f32).collect()
            })
            .collect();
        let m = matrix_from_rows(rows, 6);
        let red = reduce_dimensions(&m, 2, 7).unwrap();
        assert!(red.variance_ratio > 1.0 - 1e-6, "{}", red.variance_ratio);

        // Residual identity: the squared reconstruction error equals the
        // variance the kept components miss.
        let n = m.len();
        let mut mean = vec![0.0f64; 6];
        for i in 0..n {
            for (s, v) in mean.iter_mut().zip(m.row(i)) {
                *s += f64::from(*v);
            }
        }
        for s in &mut mean {
            *s /= n as f64;
        }
        let total_var: f64 = (0..n)
            .flat_map(|i| {
                m.row(i)
                    .iter()
                    .zip(mean.clone())
                    .map(|(v, mu)| (f64::from(*v) - mu).powi(2))
            })
            .sum::<f64>()
            / (n as f64 - 1.0);
        let recon_mse =
            total_var * (1.0 - red.variance_ratio) * (n as f64 - 1.0) / (n as f64 * 6.0);
        assert!(recon_mse < 1e-6, "reconstruction mse {recon_mse}");

        // Pairwise distances must be preserved (rigid projection of a plane).
        let full_dist = |i: usize, k: usize| -> f64 {
            m.row(i)
                .iter()
                .zip(m.row(k))
                .map(|(x, y)| (f64::from(*x) - f64::from(*y)).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        let red_dist = |i: usize, k: usize| -> f64 {
            red.row(i)
                .iter()
                .zip(red.row(k))
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt()
        };
        for i in 0..10 {
            for k in (i + 1)..10 {
                assert!((full_dist(i, k) - red_dist(i, k)).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn reduction_preconditions() {
        let m = matrix_from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]], 2);
        assert!(reduce_dimensions(&m, 2, 1).is_err());
        assert!(reduce_dimensions(&m, 3, 1).is_err());

        let m3 = matrix_from_rows(vec![vec![1.0, 0.0, 0.0]], 3);
        assert!(matches!(
            reduce_dimensions(&m3, 2, 1).unwrap_err(),
            Error::TooFewDocuments { .. }
        ));
    }

    #[test]
    fn reduction_is_deterministic_for_fixed_seed() {
        let mut rng = SplitMix64::new(5);
        let rows: Vec<Vec<f32>> = (0..30)
            .map(|_| (0..8).map(|_| rng.next_gaussian() as f32).collect())
            .collect();
        let m = matrix_from_rows(rows, 8);
        let a = reduce_dimensions(&m, 3, 11).unwrap();
        let b = reduce_dimensions(&m, 3, 11).unwrap();
        assert_eq!(a.data, b.data);
    }

    #[test]
    fn variance_ratio_reported_on_isotropic_cloud() {
        let mut rng = SplitMix64::new(9);
        let rows: Vec<Vec<f32>> = (0..200)
            .map(|_| (0..10).map(|_| rng.next_gaussian() as f32).collect())
            .collect();
        let m = matrix_from_rows(rows, 10);
        let red = reduce_dimensions(&m, 4, 3).unwrap();
        // Isotropic 10-d cloud: 4 components carry very roughly 4/10 of the
        // variance; the op reports the exact realized ratio.
        assert!(red.variance_ratio > 0.3 && red.variance_ratio < 0.7);
    }

    fn two_blob_matrix(per: usize) -> EmbeddingMatrix {
        let mut rng = SplitMix64::new(42);
        let mut rows = Vec::new();
        for c in 0..2 {
            let center = if c == 0 { -10.0 } else { 10.0 };
            for _ in 0..per {
                rows.push(vec![
                    (center + 0.1 * rng.next_gaussian()) as f32,
                    (0.1 * rng.next_gaussian()) as f32,
                    0.0f32,
                ]);
            }
        }
        matrix_from_rows(rows, 3)
    }

    #[test]
    fn clustering_two_separated_blobs() {
        let m = two_blob_matrix(50);
        let red = reduce_dimensions(&m, 2, 1).unwrap();
        let clustering = cluster_documents(&red, 1.0, 5).unwrap();
        assert_eq!(clustering.clusters.len(), 2);
        assert!(clustering.noise_doc_ids.is_empty());
        let sizes: Vec<usize> = clustering
            .clusters
            .iter()
            .map(|c| c.member_doc_ids.len())
            .collect();
        assert_eq!(sizes, vec![50, 50]);
    }

    #[test]
    fn clustering_eps_zero_is_all_noise() {
        let m = two_blob_matrix(10);
        let red = reduce_dimensions(&m, 2, 1).unwrap();
        let clustering = cluster_documents(&red, 0.0, 5).unwrap();
        assert!(clustering.clusters.is_empty());
        assert_eq!(clustering.noise_doc_ids.len(), 20);
    }

    #[test]
    fn clustering_invariant_to_row_order() {
        let m = two_blob_matrix(20);
        let red = reduce_dimensions(&m, 2, 1).unwrap();
        let base = cluster_documents(&red, 1.0, 4).unwrap();

        // Rebuild the reduced matrix with rows reversed.
        let n = red.len();
        let rev: Vec<usize> = (0..n).rev().collect();
        let mut data = Vec::with_capacity(n * red.dim);
        let mut ids = Vec::with_capacity(n);
        for &i in &rev {
            data.extend_from_slice(red.row(i));
            ids.push(red.ids[i].clone());
        }
        let shuffled = ReducedMatrix {
            ids,
            dim: red.dim,
            data,
            variance_ratio: red.variance_ratio,
        };
        let perm = cluster_documents(&shuffled, 1.0, 4).unwrap();
        assert_eq!(base, perm);
    }

    fn tokens_map(entries: &[(&str, &[&str])]) -> BTreeMap<String, TokenList> {
        entries
            .iter()
            .map(|(d, ts)| {
                (
                    d.to_string(),
                    TokenList(ts.iter().map(|s| s.to_string()).collect()),
                )
            })
            .collect()
    }

    #[test]
    fn ctfidf_hand_computed_example() {
        let clusters = vec![
            Cluster {
                topic_id: 0,
                member_doc_ids: vec!["c1doc".into()],
            },
            Cluster {
                topic_id: 1,
                member_doc_ids: vec!["c2doc".into()],
            },
        ];
        let tokens = tokens_map(&[
            ("c1doc", &["flood", "flood", "water"]),
            ("c2doc", &["fire", "water"]),
        ]);
        let w = compute_ctfidf(&clusters, &tokens).unwrap();
        let c1 = &w[0].weights;
        assert!((c1["flood"] - 1.62186).abs() < 1e-5, "{}", c1["flood"]);
        assert!((c1["water"] - 0.81093).abs() < 1e-5, "{}", c1["water"]);
        assert!(!c1.contains_key("fire"));
    }

    #[test]
    fn ctfidf_single_cluster_positive_weights() {
        let clusters = vec![Cluster {
            topic_id: 0,
            member_doc_ids: vec!["d".into()],
        }];
        let tokens = tokens_map(&[("d", &["alpha", "beta", "alpha"])]);
        let w = compute_ctfidf(&clusters, &tokens).unwrap();
        for v in w[0].weights.values() {
            assert!(*v > 0.0);
        }
        // Single cluster: A equals total tokens and tf_t == tf_tc.
        let a = 3.0f64;
        assert!((w[0].weights["alpha"] - 2.0 * (1.0 + a / 2.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn ctfidf_matches_brute_force_oracle() {
        // Randomized corpora against an independently-coded direct formula.
        let mut rng = SplitMix64::new(99);
        let vocab: Vec<String> = (0..12).map(|i| format!("term{i}")).collect();
        for _case in 0..100 {
            let n_clusters = 1 + rng.next_range(4);
            let mut clusters = Vec::new();
            let mut tokens = BTreeMap::new();
            let mut doc_n = 0usize;
            for c in 0..n_clusters {
                let n_docs = 1 + rng.next_range(3);
                let mut members = Vec::new();
                for _ in 0..n_docs {
                    let id = format!("d{doc_n}");
                    doc_n += 1;
                    let len = 1 + rng.next_range(10);
                    let toks: Vec<String> = (0..len)
                        .map(|_| vocab[rng.next_range(vocab.len())].clone())
                        .collect();
                    tokens.insert(id.clone(), TokenList(toks));
                    members.push(id);
                }
                clusters.push(Cluster {
                    topic_id: c as i32,
                    member_doc_ids: members,
                });
            }

            let got = compute_ctfidf(&clusters, &tokens).unwrap();

            // Oracle: recount everything from scratch.
            let mut cluster_counts: Vec<HashMap<String, u64>> = Vec::new();
            let mut grand: HashMap<String, u64> = HashMap::new();
            let mut total = 0u64;
            for cl in &clusters {
                let mut counts = HashMap::new();
                for d in &cl.member_doc_ids {
                    for t in &tokens[d].0 {
                        *counts.entry(t.clone()).or_insert(0) += 1;
                        *grand.entry(t.clone()).or_insert(0) += 1;
                        total += 1;
                    }
                }
                cluster_counts.push(counts);
            }
            let a = total as f64 / clusters.len() as f64;
            for (ci, counts) in cluster_counts.iter().enumerate() {
                for (term, tf_tc) in counts {
                    let expected = *tf_tc as f64 * (1.0 + a / grand[term] as f64).ln();
                    let actual = got[ci].weights[term];
                    assert!(
                        (expected - actual).abs() < 1e-9,
                        "term {term}: {expected} vs {actual}"
                    );
                }
            }
        }
    }

    #[test]
    fn ctfidf_rejects_empty_vocabulary() {
        let clusters = vec![Cluster {
            topic_id: 0,
            member_doc_ids: vec!["d".into()],
        }];
        let tokens = tokens_map(&[("d", &[])]);
        assert!(matches!(
            compute_ctfidf(&clusters, &tokens).unwrap_err(),
            Error::EmptyVocabulary
        ));
    }

    #[test]
    fn summaries_order_by_doc_count_and_break_term_ties_lexicographically() {
        let clusters = vec![
            Cluster {
                topic_id: 0,
                member_doc_ids: (0..7).map(|i| format!("a{i}")).collect(),
            },
            Cluster {
                topic_id: 1,
                member_doc_ids: (0..12).map(|i| format!("b{i}")).collect(),
            },
        ];
        let weights = vec![
            ClusterTermWeights {
                topic_id: 0,
                weights: BTreeMap::from([
                    ("zeta".to_string(), 1.0),
                    ("alpha".to_string(), 1.0),
                    ("mid".to_string(), 2.0),
                ]),
            },
            ClusterTermWeights {
                topic_id: 1,
                weights: BTreeMap::from([("only".to_string(), 3.0)]),
            },
        ];
        let topics = summarize_topics(&weights, &clusters, 2);
        assert_eq!(topics[0].topic_id, 0);
        assert_eq!(topics[0].doc_count, 12);
        assert_eq!(topics[1].doc_count, 7);
        // k=2 truncates; equal weights order lexicographically after "mid".
        let terms: Vec<&str> = topics[1]
            .top_terms
            .iter()
            .map(|(t, _)| t.as_str())
            .collect();
        assert_eq!(terms, vec!["mid", "alpha"]);

        // k larger than vocabulary returns everything.
        let all = summarize_topics(&weights, &clusters, 10);
        assert_eq!(all[1].top_terms.len(), 3);
    }

    #[test]
    fn csv_emitters_escape_and_format() {
        let m = PairCountMatrix {
            hazard_ids: vec!["h,1".into()],
            ncf_ids: vec!["n1".into(), "n2".into()],
            counts: vec![3, 0],
        };
        let csv = pair_matrix_csv(&m);
        assert_eq!(csv, "hazard,n1,n2\n\"h,1\",3,0\n");
        let hist = per_class_csv(&[("a".into(), 2), ("b".into(), 0)]);
        assert_eq!(hist, "category,count\na,2\nb,0\n");
    }
}
