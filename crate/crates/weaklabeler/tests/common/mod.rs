//! Shared synthetic generators for the integration suites.
//!
//! Everything is seeded through the crate's own RNG so expected values are
//! stable across platforms and runs.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use weaklabeler::classify::{FeatureMatrix, TargetMatrix, TrainingSet};
use weaklabeler::rng::SplitMix64;
use weaklabeler::weaklabel::VoteMatrix;

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/mini")
}

pub fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data")
}

/// Two-class conditionally-independent vote generator with known ground
/// truth. `params[j] = (s_j, t_j)` = P(vote=1 | y=1), P(vote=0 | y=0).
pub fn gen_votes(seed: u64, n: usize, prior: f64, params: &[(f64, f64)]) -> (Vec<u8>, VoteMatrix) {
    let mut rng = SplitMix64::new(seed);
    let mut truth = Vec::with_capacity(n);
    let mut votes = Vec::with_capacity(n * params.len());
    for _ in 0..n {
        let y = u8::from(rng.next_f64() < prior);
        truth.push(y);
        for &(s, t) in params {
            let v = if y == 1 {
                u8::from(rng.next_f64() < s)
            } else {
                u8::from(rng.next_f64() >= t)
            };
            votes.push(v);
        }
    }
    let doc_ids = (0..n).map(|i| format!("d{i:05}")).collect();
    let lf_ids = (0..params.len()).map(|j| format!("lf{j}")).collect();
    (truth, VoteMatrix::new(doc_ids, lf_ids, votes).unwrap())
}

/// The label-model recovery family: 1000 docs, prior 0.3, three LFs of
/// mixed quality.
pub const RECOVERY_PARAMS: [(f64, f64); 3] = [(0.9, 0.8), (0.7, 0.9), (0.6, 0.6)];
pub const RECOVERY_PRIOR: f64 = 0.3;

/// Correlated-label benchmark: a dense direction drives y1; y2 and y3 are
/// y1 with 10% of bits flipped. Chains keep the three predictions
/// consistent; independent binary relevance does not.
pub struct ChainBenchmark {
    pub train_x: FeatureMatrix,
    pub train_y: TargetMatrix,
    pub test_x: FeatureMatrix,
    pub test_y: Vec<[u8; 3]>,
}

pub const CHAIN_BENCH_DIM: usize = 25;
pub const CHAIN_BENCH_TRAIN: usize = 150;
pub const CHAIN_BENCH_TEST: usize = 500;
pub const CHAIN_BENCH_NOISE_SD: f64 = 1.0;
pub const CHAIN_BENCH_FLIP: f64 = 0.1;

pub fn gen_chain_benchmark(seed: u64) -> ChainBenchmark {
    let d = CHAIN_BENCH_DIM;
    let mut rng = SplitMix64::new(seed);
    let scale = 2.0 / (d as f64).sqrt();
    let w1: Vec<f64> = (0..d).map(|_| rng.next_gaussian() * scale).collect();

    let mut make = |n: usize| -> (FeatureMatrix, Vec<[u8; 3]>) {
        let mut rows = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let x: Vec<f64> = (0..d).map(|_| rng.next_gaussian()).collect();
            let z: f64 = w1.iter().zip(&x).map(|(a, b)| a * b).sum();
            let y1 = u8::from(z + rng.next_gaussian() * CHAIN_BENCH_NOISE_SD > 0.0);
            let y2 = y1 ^ u8::from(rng.next_f64() < CHAIN_BENCH_FLIP);
            let y3 = y1 ^ u8::from(rng.next_f64() < CHAIN_BENCH_FLIP);
            rows.push(x);
            labels.push([y1, y2, y3]);
        }
        (FeatureMatrix::from_rows(&rows).unwrap(), labels)
    };

    let (train_x, train_labels) = make(CHAIN_BENCH_TRAIN);
    let (test_x, test_y) = make(CHAIN_BENCH_TEST);
    let data: Vec<u8> = train_labels.iter().flatten().copied().collect();
    let train_y = TargetMatrix::new(
        vec!["y1".into(), "y2".into(), "y3".into()],
        data,
        CHAIN_BENCH_TRAIN,
    )
    .unwrap();
    ChainBenchmark {
        train_x,
        train_y,
        test_x,
        test_y,
    }
}

/// Separable multi-label corpus: three halfspace labels over clean
/// features, 500 docs by default.
pub fn gen_separable_multilabel(n: usize, seed: u64) -> TrainingSet {
    let mut rng = SplitMix64::new(seed);
    let d = 10;
    let dirs: [&[(usize, f64)]; 3] = [
        &[(0, 1.0), (1, -0.7)],
        &[(3, 1.0), (4, -0.7)],
        &[(6, 1.0), (7, -0.7)],
    ];
    let mut rows = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * 3);
    let mut ids = Vec::with_capacity(n);
    for i in 0..n {
        let x: Vec<f64> = (0..d).map(|_| rng.next_gaussian()).collect();
        for dir in dirs {
            let z: f64 = dir.iter().map(|&(j, w)| w * x[j]).sum();
            data.push(u8::from(z > 0.0));
        }
        rows.push(x);
        ids.push(format!("d{i:04}"));
    }
    let features = FeatureMatrix::from_rows(&rows).unwrap();
    let targets = TargetMatrix::new(vec!["l1".into(), "l2".into(), "l3".into()], data, n).unwrap();
    let mut fm = BTreeMap::new();
    fm.insert("p".to_string(), features);
    TrainingSet::new(ids, fm, targets).unwrap()
}

/// Majority-vote hard labels for a vote matrix.
pub fn majority_hard(votes: &VoteMatrix) -> Vec<u8> {
    (0..votes.n_docs())
        .map(|i| {
            let ones: usize = votes.row(i).iter().map(|v| *v as usize).sum();
            u8::from(ones as f64 / votes.n_lfs() as f64 >= 0.5)
        })
        .collect()
}

pub fn accuracy(pred: &[u8], truth: &[u8]) -> f64 {
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len() as f64
}
