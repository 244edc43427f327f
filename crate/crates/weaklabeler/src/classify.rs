//! Supervised generalization of the weak labels.
//!
//! Per provider, a classifier chain of L2-regularized logistic models is
//! trained on the weakly-labeled documents (teacher forcing with true labels
//! at train time, hard predictions at inference). Providers combine by
//! strict majority vote. The base learner is trained by full-batch gradient
//! descent on the class-weighted logistic loss.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::embed::{EmbeddingMatrix, ProviderSpec};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::weaklabel::MultiLabelAssignment;

/// Dense row-major f64 feature matrix.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    data: Vec<f64>,
    n_rows: usize,
    n_cols: usize,
}

impl FeatureMatrix {
    pub fn new(data: Vec<f64>, n_rows: usize, n_cols: usize) -> Result<Self> {
        if data.len() != n_rows * n_cols {
            return Err(Error::DimMismatch {
                left: data.len(),
                right: n_rows * n_cols,
            });
        }
        Ok(Self {
            data,
            n_rows,
            n_cols,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n_rows * n_cols);
        for r in rows {
            if r.len() != n_cols {
                return Err(Error::DimMismatch {
                    left: r.len(),
                    right: n_cols,
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(data, n_rows, n_cols)
    }

    pub fn from_embeddings(m: &EmbeddingMatrix) -> Self {
        let data = (0..m.len())
            .flat_map(|i| m.row(i).iter().map(|v| f64::from(*v)))
            .collect();
        Self {
            data,
            n_rows: m.len(),
            n_cols: m.dim(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn select_rows(&self, idx: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(idx.len() * self.n_cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        FeatureMatrix {
            data,
            n_rows: idx.len(),
            n_cols: self.n_cols,
        }
    }
}

/// Binary target matrix with categories in file order.
#[derive(Debug, Clone)]
pub struct TargetMatrix {
    pub category_order: Vec<String>,
    data: Vec<u8>,
    n_docs: usize,
}

impl TargetMatrix {
    pub fn new(category_order: Vec<String>, data: Vec<u8>, n_docs: usize) -> Result<Self> {
        if data.len() != n_docs * category_order.len() {
            return Err(Error::DimMismatch {
                left: data.len(),
                right: n_docs * category_order.len(),
            });
        }
        Ok(Self {
            category_order,
            data,
            n_docs,
        })
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn n_cats(&self) -> usize {
        self.category_order.len()
    }

    pub fn row(&self, doc: usize) -> &[u8] {
        let w = self.category_order.len();
        &self.data[doc * w..(doc + 1) * w]
    }

    pub fn column(&self, cat: usize) -> Vec<u8> {
        (0..self.n_docs).map(|i| self.row(i)[cat]).collect()
    }

    pub fn select_rows(&self, idx: &[usize]) -> TargetMatrix {
        let mut data = Vec::with_capacity(idx.len() * self.n_cats());
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        TargetMatrix {
            category_order: self.category_order.clone(),
            data,
            n_docs: idx.len(),
        }
    }
}

/// Weakly-labeled documents ready for supervised training: one feature
/// matrix per provider plus the shared target matrix.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub doc_ids: Vec<String>,
    pub features: BTreeMap<String, FeatureMatrix>,
    pub targets: TargetMatrix,
}

impl TrainingSet {
    pub fn new(
        doc_ids: Vec<String>,
        features: BTreeMap<String, FeatureMatrix>,
        targets: TargetMatrix,
    ) -> Result<Self> {
        for (pid, m) in &features {
            if m.n_rows() != doc_ids.len() {
                return Err(Error::InconsistentCoverage {
                    reason: format!(
                        "provider {pid:?} has {} rows for {} docs",
                        m.n_rows(),
                        doc_ids.len()
                    ),
                });
            }
        }
        if targets.n_docs() != doc_ids.len() {
            return Err(Error::InconsistentCoverage {
                reason: format!(
                    "targets cover {} docs, expected {}",
                    targets.n_docs(),
                    doc_ids.len()
                ),
            });
        }
        Ok(Self {
            doc_ids,
            features,
            targets,
        })
    }

    fn select(&self, idx: &[usize]) -> TrainingSet {
        TrainingSet {
            doc_ids: idx.iter().map(|&i| self.doc_ids[i].clone()).collect(),
            features: self
                .features
                .iter()
                .map(|(p, m)| (p.clone(), m.select_rows(idx)))
                .collect(),
            targets: self.targets.select_rows(idx),
        }
    }
}

/// One logistic model; `constant_class` marks the degenerate single-class
/// case where training saw only one label value.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BinaryLinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub l2: f64,
    pub class_weights: (f64, f64),
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constant_class: Option<u8>,
}

impl BinaryLinearModel {
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.weights.len() {
            return Err(Error::DimMismatch {
                left: x.len(),
                right: self.weights.len(),
            });
        }
        let z = self.bias
            + self
                .weights
                .iter()
                .zip(x.iter())
                .map(|(w, v)| w * v)
                .sum::<f64>();
        Ok(sigmoid(z))
    }

    pub fn predict(&self, x: &[f64]) -> Result<u8> {
        Ok(u8::from(self.predict_proba(x)? >= 0.5))
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^z) without overflow.
fn log1p_exp(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Mean class-weighted logistic loss plus (l2/2)·‖w‖², with its gradient.
/// The bias is not penalized. Returns (loss, grad_w, grad_b).
pub fn weighted_logistic_loss_grad(
    features: &FeatureMatrix,
    targets: &[u8],
    weights: &[f64],
    bias: f64,
    l2: f64,
    class_weights: (f64, f64),
) -> (f64, Vec<f64>, f64) {
    let n = features.n_rows();
    let d = features.n_cols();
    let (w_neg, w_pos) = class_weights;
    let mut loss = 0.0;
    let mut grad_w = vec![0.0f64; d];
    let mut grad_b = 0.0f64;
    for (i, &y) in targets.iter().enumerate() {
        let x = features.row(i);
        let z = bias + weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        let cw = if y == 1 { w_pos } else { w_neg };
        loss += cw * if y == 1 { log1p_exp(-z) } else { log1p_exp(z) };
        let resid = cw * (sigmoid(z) - f64::from(y));
        for (g, v) in grad_w.iter_mut().zip(x) {
            *g += resid * v;
        }
        grad_b += resid;
    }
    let nf = n as f64;
    loss /= nf;
    grad_b /= nf;
    let mut wnorm2 = 0.0;
    for (g, w) in grad_w.iter_mut().zip(weights) {
        *g = *g / nf + l2 * w;
        wnorm2 += w * w;
    }
    loss += 0.5 * l2 * wnorm2;
    (loss, grad_w, grad_b)
}

const MAX_EPOCHS: usize = 500;
const GRAD_TOL: f64 = 1e-6;
const INITIAL_LR: f64 = 0.1;

pub(crate) fn train_binary_traced(
    features: &FeatureMatrix,
    targets: &[u8],
    l2: f64,
    class_weights: Option<(f64, f64)>,
) -> Result<(BinaryLinearModel, Vec<f64>)> {
    let n = features.n_rows();
    if n == 0 || targets.len() != n {
        return Err(Error::InvalidConfig {
            reason: format!("{} feature rows vs {} targets", n, targets.len()),
        });
    }
    for i in 0..n {
        if features.row(i).iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig {
                reason: format!("non-finite feature in row {i}"),
            });
        }
    }

    let n_pos = targets.iter().filter(|y| **y == 1).count();
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        // Single-class targets: constant model emitting that class.
        let class = u8::from(n_pos > 0);
        let bias = if class == 1 { 25.0 } else { -25.0 };
        return Ok((
            BinaryLinearModel {
                weights: vec![0.0; features.n_cols()],
                bias,
                l2,
                class_weights: class_weights.unwrap_or((1.0, 1.0)),
                constant_class: Some(class),
            },
            Vec::new(),
        ));
    }

    // "Balanced": n_total / (2 * n_class).
    let cw = class_weights.unwrap_or((
        n as f64 / (2.0 * n_neg as f64),
        n as f64 / (2.0 * n_pos as f64),
    ));

    let mut w = vec![0.0f64; features.n_cols()];
    let mut b = 0.0f64;
    let mut lr = INITIAL_LR;
    let (mut loss, mut gw, mut gb) = weighted_logistic_loss_grad(features, targets, &w, b, l2, cw);
    let mut trace = vec![loss];

    for _ in 0..MAX_EPOCHS {
        let gmax = gw.iter().fold(gb.abs(), |m, g| m.max(g.abs()));
        if gmax < GRAD_TOL {
            break;
        }
        let cand_w: Vec<f64> = w.iter().zip(&gw).map(|(wi, gi)| wi - lr * gi).collect();
        let cand_b = b - lr * gb;
        let (cand_loss, cand_gw, cand_gb) =
            weighted_logistic_loss_grad(features, targets, &cand_w, cand_b, l2, cw);
        if cand_loss > loss {
            lr *= 0.5;
            continue;
        }
        w = cand_w;
        b = cand_b;
        loss = cand_loss;
        gw = cand_gw;
        gb = cand_gb;
        trace.push(loss);
    }

    Ok((
        BinaryLinearModel {
            weights: w,
            bias: b,
            l2,
            class_weights: cw,
            constant_class: None,
        },
        trace,
    ))
}

/// Train one binary model by full-batch gradient descent (learning rate 0.1
/// with halving on loss increase, at most 500 epochs, stop when the
/// gradient infinity-norm drops below 1e-6). Class weights default to the
/// balanced rule n_total / (2 * n_class). Single-class targets yield a
/// constant model flagged via `constant_class`.
pub fn train_binary(
    features: &FeatureMatrix,
    targets: &[u8],
    l2: f64,
    class_weights: Option<(f64, f64)>,
) -> Result<BinaryLinearModel> {
    train_binary_traced(features, targets, l2, class_weights).map(|(m, _)| m)
}

/// Ordered chain of binary models for one provider. Model k consumes the
/// base features plus k label slots.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifierChain {
    pub category_order: Vec<String>,
    pub models: Vec<BinaryLinearModel>,
    pub provider: ProviderSpec,
}

/// Train a chain with teacher forcing: model k sees the true labels of
/// categories 0..k-1 as extra features.
pub fn train_chain(
    features: &FeatureMatrix,
    targets: &TargetMatrix,
    provider: &ProviderSpec,
    category_order: &[String],
    l2: f64,
) -> Result<ClassifierChain> {
    if category_order != targets.category_order.as_slice() {
        return Err(Error::OrderMismatch {
            reason: "category_order does not match target matrix columns".into(),
        });
    }
    let n = features.n_rows();
    if targets.n_docs() != n {
        return Err(Error::InconsistentCoverage {
            reason: format!("{} feature rows vs {} target rows", n, targets.n_docs()),
        });
    }
    let base = features.n_cols();
    let mut models = Vec::with_capacity(category_order.len());
    for k in 0..category_order.len() {
        let mut data = Vec::with_capacity(n * (base + k));
        for i in 0..n {
            data.extend_from_slice(features.row(i));
            let row = targets.row(i);
            for slot in row.iter().take(k) {
                data.push(f64::from(*slot));
            }
        }
        let augmented = FeatureMatrix::new(data, n, base + k)?;
        let column = targets.column(k);
        models.push(train_binary(&augmented, &column, l2, None)?);
    }
    Ok(ClassifierChain {
        category_order: category_order.to_vec(),
        models,
        provider: provider.clone(),
    })
}

/// Per-document (probabilities, hard labels) in chain category order.
pub type ChainPredictions = (Vec<Vec<f64>>, Vec<Vec<u8>>);

/// Sequential chain inference: model k consumes the base features plus the
/// hard predictions of earlier categories. Returns per-document
/// probabilities and hard labels, category order matching the chain.
pub fn predict_chain(
    chain: &ClassifierChain,
    features: &FeatureMatrix,
) -> Result<ChainPredictions> {
    let base = features.n_cols();
    if let Some(first) = chain.models.first() {
        if first.weights.len() != base {
            return Err(Error::DimMismatch {
                left: first.weights.len(),
                right: base,
            });
        }
    }
    let mut probs = Vec::with_capacity(features.n_rows());
    let mut hards = Vec::with_capacity(features.n_rows());
    for i in 0..features.n_rows() {
        let mut x = features.row(i).to_vec();
        let mut p_row = Vec::with_capacity(chain.models.len());
        let mut h_row = Vec::with_capacity(chain.models.len());
        for model in &chain.models {
            let p = model.predict_proba(&x)?;
            let h = u8::from(p >= 0.5);
            p_row.push(p);
            h_row.push(h);
            x.push(f64::from(h));
        }
        probs.push(p_row);
        hards.push(h_row);
    }
    Ok((probs, hards))
}

/// One chain per provider, all sharing the same category order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub chains: Vec<ClassifierChain>,
}

impl EnsembleModel {
    pub fn new(chains: Vec<ClassifierChain>) -> Result<Self> {
        let Some(first) = chains.first() else {
            return Err(Error::InvalidConfig {
                reason: "ensemble needs at least one chain".into(),
            });
        };
        for c in &chains[1..] {
            if c.category_order != first.category_order {
                return Err(Error::OrderMismatch {
                    reason: "chains disagree on category order".into(),
                });
            }
        }
        Ok(Self { chains })
    }

    pub fn category_order(&self) -> &[String] {
        &self.chains[0].category_order
    }
}

/// Majority vote across chains: a category label is 1 iff strictly more
/// than half of the chains predict 1 (an exact half is 0).
pub fn ensemble_predict(
    ensemble: &EnsembleModel,
    features: &BTreeMap<String, FeatureMatrix>,
) -> Result<Vec<Vec<u8>>> {
    let n_cats = ensemble.category_order().len();
    let mut n_docs = None;
    let mut tallies: Vec<Vec<u32>> = Vec::new();
    for chain in &ensemble.chains {
        let feats =
            features
                .get(&chain.provider.provider_id)
                .ok_or_else(|| Error::MissingProvider {
                    provider_id: chain.provider.provider_id.clone(),
                    reason: "no features for ensemble prediction".into(),
                })?;
        match n_docs {
            None => {
                n_docs = Some(feats.n_rows());
                tallies = vec![vec![0u32; n_cats]; feats.n_rows()];
            }
            Some(n) if n != feats.n_rows() => {
                return Err(Error::InconsistentCoverage {
                    reason: "providers disagree on document count".into(),
                })
            }
            _ => {}
        }
        let (_, hards) = predict_chain(chain, feats)?;
        for (tally, hard) in tallies.iter_mut().zip(hards) {
            for (t, h) in tally.iter_mut().zip(hard) {
                *t += u32::from(h);
            }
        }
    }
    let half = ensemble.chains.len() as f64 / 2.0;
    Ok(tallies
        .into_iter()
        .map(|row| {
            row.into_iter()
                .map(|t| u8::from(f64::from(t) > half))
                .collect()
        })
        .collect())
}

/// Cross-validation metrics over hard labels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvMetrics {
    pub label_wise_accuracy: f64,
    pub subset_accuracy: f64,
    pub per_label_f1: Vec<(String, f64)>,
}

/// k-fold cross-validation: a seeded shuffle, then k consecutive folds,
/// each held out once while an ensemble trains on the rest.
pub fn cross_validate(train: &TrainingSet, k: usize, seed: u64, l2: f64) -> Result<CvMetrics> {
    let n = train.doc_ids.len();
    if k < 2 {
        return Err(Error::InvalidConfig {
            reason: format!("k must be >= 2, got {k}"),
        });
    }
    if k > n {
        return Err(Error::InvalidConfig {
            reason: format!("k = {k} exceeds {n} documents"),
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    SplitMix64::new(seed).shuffle(&mut order);

    let n_cats = train.targets.n_cats();
    let mut agree = 0usize;
    let mut subset_ok = 0usize;
    let mut tp = vec![0usize; n_cats];
    let mut fp = vec![0usize; n_cats];
    let mut fn_ = vec![0usize; n_cats];

    let base = n / k;
    let extra = n % k;
    let mut start = 0usize;
    for fold in 0..k {
        let size = base + usize::from(fold < extra);
        let test_idx: Vec<usize> = order[start..start + size].to_vec();
        let train_idx: Vec<usize> = order[..start]
            .iter()
            .chain(order[start + size..].iter())
            .copied()
            .collect();
        start += size;

        let fold_train = train.select(&train_idx);
        let mut chains = Vec::new();
        for (pid, feats) in &fold_train.features {
            let provider = ProviderSpec::file_backed(pid.clone(), feats.n_cols());
            chains.push(train_chain(
                feats,
                &fold_train.targets,
                &provider,
                &fold_train.targets.category_order.clone(),
                l2,
            )?);
        }
        let ensemble = EnsembleModel::new(chains)?;
        let test_features: BTreeMap<String, FeatureMatrix> = train
            .features
            .iter()
            .map(|(p, m)| (p.clone(), m.select_rows(&test_idx)))
            .collect();
        let predicted = ensemble_predict(&ensemble, &test_features)?;

        for (pos, &doc) in test_idx.iter().enumerate() {
            let truth = train.targets.row(doc);
            let pred = &predicted[pos];
            let mut all_match = true;
            for c in 0..n_cats {
                let y = truth[c];
                let yh = pred[c];
                if y == yh {
                    agree += 1;
                } else {
                    all_match = false;
                }
                match (y, yh) {
                    (1, 1) => tp[c] += 1,
                    (0, 1) => fp[c] += 1,
                    (1, 0) => fn_[c] += 1,
                    _ => {}
                }
            }
            if all_match {
                subset_ok += 1;
            }
        }
    }

    let per_label_f1 = (0..n_cats)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fn_[c];
            let f1 = if denom == 0 {
                1.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            };
            (train.targets.category_order[c].clone(), f1)
        })
        .collect();

    Ok(CvMetrics {
        label_wise_accuracy: agree as f64 / (n * n_cats) as f64,
        subset_accuracy: subset_ok as f64 / n as f64,
        per_label_f1,
    })
}

/// Document count per category, sorted descending; ties keep category file
/// order (stable sort over the file-ordered list).
pub fn per_class_counts(
    assignments: &[MultiLabelAssignment],
    category_order: &[String],
) -> Vec<(String, usize)> {
    let mut counts: Vec<(String, usize)> = category_order
        .iter()
        .map(|c| {
            let n = assignments
                .iter()
                .filter(|a| a.labels.iter().any(|l| l == c))
                .count();
            (c.clone(), n)
        })
        .collect();
    counts.sort_by_key(|&(_, n)| std::cmp::Reverse(n));
    counts
}
