//! Orchestration: per-category and per-provider jobs over a worker pool
//! with deterministic outputs and a digest manifest.
//!
//! Jobs communicate exclusively through files under the run's output
//! directory. Seeds derive from (global seed, job id), so no result depends
//! on scheduling; running with 1 worker or 8 produces byte-identical output.

mod runner;
mod steps;

pub use runner::execute;
pub use steps::{ensure_distinct_after_sanitize, run_job, sanitize as sanitize_id};

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::corpus::{self, Taxonomy};
use crate::error::{Error, Result};
use crate::rng::stable_hash64;
use crate::weaklabel::{DocumentLabels, ProbabilisticLabel};

/// What a job does; the payload pins its full input range so the job is a
/// pure function of (files, seed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JobKind {
    FilterShard {
        taxonomy: Taxonomy,
        shard: usize,
        start: usize,
        end: usize,
    },
    LabelCategory {
        taxonomy: Taxonomy,
        cat_id: String,
    },
    TrainChain {
        provider_id: String,
    },
    PredictShard {
        shard: usize,
        start: usize,
        end: usize,
    },
    TopicPair {
        /// None means: pick the most-populated pair at run time.
        hazard: Option<String>,
        ncf: Option<String>,
    },
}

/// One schedulable unit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JobSpec {
    pub job_id: String,
    #[serde(flatten)]
    pub kind: JobKind,
    pub inputs: Vec<PathBuf>,
    pub deps: Vec<String>,
    pub seed: u64,
}

impl JobSpec {
    fn new(
        job_id: String,
        kind: JobKind,
        inputs: Vec<PathBuf>,
        deps: Vec<String>,
        global_seed: u64,
    ) -> Self {
        let seed = stable_hash64(global_seed, job_id.as_bytes());
        Self {
            job_id,
            kind,
            inputs,
            deps,
            seed,
        }
    }
}

/// Terminal state of one job.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Ok,
    Failed,
    /// A dependency failed, so the job never ran.
    Skipped,
}

/// Per-job outcome recorded in the manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JobRecord {
    pub job_id: String,
    pub status: JobStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub outputs: Vec<PathBuf>,
}

/// Reproducibility ledger for one run: the config snapshot, every job's
/// status, and a SHA-256 digest per output file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: RunConfig,
    pub jobs: Vec<JobRecord>,
    pub artifacts: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn all_ok(&self) -> bool {
        self.jobs.iter().all(|j| j.status == JobStatus::Ok)
    }
}

fn shard_ranges(n: usize, shard_size: usize) -> Vec<(usize, usize)> {
    if n == 0 {
        return vec![(0, 0)];
    }
    let size = shard_size.max(1);
    (0..n.div_ceil(size))
        .map(|i| (i * size, ((i + 1) * size).min(n)))
        .collect()
}

/// Expand a config into the full job list: filter shards for both stages,
/// one label job per (taxonomy, category), one train job per provider,
/// predict shards, and the topic jobs. Jobs are listed in dependency order.
pub fn plan_jobs(config: &RunConfig) -> Result<Vec<JobSpec>> {
    config.validate()?;
    let docs = corpus::load_documents(&config.docs, corpus::LoadPolicy::SkipBad)?;
    let cats_hazard = corpus::load_categories(&config.hazards)?;
    let cats_ncf = corpus::load_categories(&config.ncfs)?;
    let hazard_ids = cats_hazard.ids_of_taxonomy(Taxonomy::Hazard);
    let ncf_ids = cats_ncf.ids_of_taxonomy(Taxonomy::Ncf);
    if hazard_ids.is_empty() || ncf_ids.is_empty() {
        return Err(Error::InvalidConfig {
            reason: "need at least one category per taxonomy".into(),
        });
    }
    steps::ensure_distinct_after_sanitize(hazard_ids.iter().map(String::as_str))?;
    steps::ensure_distinct_after_sanitize(ncf_ids.iter().map(String::as_str))?;
    steps::ensure_distinct_after_sanitize(config.provider_ids().iter().map(String::as_str))?;

    let seed = config.seed;
    let ranges = shard_ranges(docs.len(), config.shard_size);
    let mut jobs = Vec::new();

    let mut hazard_shard_ids = Vec::new();
    for (i, &(start, end)) in ranges.iter().enumerate() {
        let job_id = format!("filter:hazard:{i:04}");
        hazard_shard_ids.push(job_id.clone());
        jobs.push(JobSpec::new(
            job_id,
            JobKind::FilterShard {
                taxonomy: Taxonomy::Hazard,
                shard: i,
                start,
                end,
            },
            vec![config.docs.clone(), config.hazards.clone()],
            Vec::new(),
            seed,
        ));
    }

    let mut ncf_shard_ids = Vec::new();
    for (i, &(start, end)) in ranges.iter().enumerate() {
        let job_id = format!("filter:ncf:{i:04}");
        ncf_shard_ids.push(job_id.clone());
        jobs.push(JobSpec::new(
            job_id,
            JobKind::FilterShard {
                taxonomy: Taxonomy::Ncf,
                shard: i,
                start,
                end,
            },
            vec![config.docs.clone(), config.ncfs.clone()],
            vec![hazard_shard_ids[i].clone()],
            seed,
        ));
    }

    let mut label_job_ids = Vec::new();
    for (taxonomy, ids) in [(Taxonomy::Hazard, &hazard_ids), (Taxonomy::Ncf, &ncf_ids)] {
        for cat in ids {
            let job_id = format!("label:{taxonomy}:{cat}");
            label_job_ids.push(job_id.clone());
            jobs.push(JobSpec::new(
                job_id,
                JobKind::LabelCategory {
                    taxonomy,
                    cat_id: cat.clone(),
                },
                vec![config.docs.clone()],
                ncf_shard_ids.clone(),
                seed,
            ));
        }
    }

    let mut train_job_ids = Vec::new();
    for provider in config.provider_ids() {
        let job_id = format!("train:{provider}");
        train_job_ids.push(job_id.clone());
        jobs.push(JobSpec::new(
            job_id,
            JobKind::TrainChain {
                provider_id: provider,
            },
            vec![config.docs.clone()],
            label_job_ids.clone(),
            seed,
        ));
    }

    let mut predict_job_ids = Vec::new();
    for (i, &(start, end)) in ranges.iter().enumerate() {
        let job_id = format!("predict:{i:04}");
        predict_job_ids.push(job_id.clone());
        jobs.push(JobSpec::new(
            job_id,
            JobKind::PredictShard {
                shard: i,
                start,
                end,
            },
            vec![config.docs.clone()],
            train_job_ids.clone(),
            seed,
        ));
    }

    if config.topic_pairs.is_empty() {
        jobs.push(JobSpec::new(
            "topics:auto".into(),
            JobKind::TopicPair {
                hazard: None,
                ncf: None,
            },
            vec![config.docs.clone()],
            predict_job_ids.clone(),
            seed,
        ));
    } else {
        for (h, n) in &config.topic_pairs {
            jobs.push(JobSpec::new(
                format!("topics:{h}:{n}"),
                JobKind::TopicPair {
                    hazard: Some(h.clone()),
                    ncf: Some(n.clone()),
                },
                vec![config.docs.clone()],
                predict_job_ids.clone(),
                seed,
            ));
        }
    }

    Ok(jobs)
}

/// Join per-category probabilistic labels into one row per document:
/// categories in file order, documents sorted by doc_id.
pub fn merge_labels(
    hazard_labels: &[(String, Vec<ProbabilisticLabel>)],
    ncf_labels: &[(String, Vec<ProbabilisticLabel>)],
) -> Result<Vec<DocumentLabels>> {
    let hazard_order: Vec<String> = hazard_labels.iter().map(|(c, _)| c.clone()).collect();
    let ncf_order: Vec<String> = ncf_labels.iter().map(|(c, _)| c.clone()).collect();
    let hz_lists: Vec<Vec<ProbabilisticLabel>> =
        hazard_labels.iter().map(|(_, l)| l.clone()).collect();
    let nc_lists: Vec<Vec<ProbabilisticLabel>> =
        ncf_labels.iter().map(|(_, l)| l.clone()).collect();
    let hz = crate::weaklabel::union_multilabel(&hz_lists, &hazard_order)?;
    let nc = crate::weaklabel::union_multilabel(&nc_lists, &ncf_order)?;
    if hz.len() != nc.len() {
        return Err(Error::InconsistentCoverage {
            reason: format!(
                "hazard labels cover {} docs, ncf labels cover {}",
                hz.len(),
                nc.len()
            ),
        });
    }
    hz.into_iter()
        .zip(nc)
        .map(|(h, n)| {
            if h.doc_id != n.doc_id {
                return Err(Error::InconsistentCoverage {
                    reason: format!("doc sets differ: {:?} vs {:?}", h.doc_id, n.doc_id),
                });
            }
            Ok(DocumentLabels {
                doc_id: h.doc_id,
                hazard: h.labels,
                ncf: n.labels,
            })
        })
        .collect()
}

/// SHA-256 of a file, hex-encoded.
pub fn digest_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

/// Digest every regular file under `dir` (recursive), keyed by path
/// relative to `dir`, sorted. `exclude` names are skipped at any level.
pub fn digest_tree(dir: &Path, exclude: &[&str]) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let entries = fs::read_dir(&d).map_err(|e| Error::io(&d, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&d, e))?;
            let path = entry.path();
            let name = entry.file_name().to_string_lossy().to_string();
            if exclude.contains(&name.as_str()) {
                continue;
            }
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path
                    .strip_prefix(dir)
                    .unwrap_or(&path)
                    .to_string_lossy()
                    .replace('\\', "/");
                out.insert(rel, digest_file(&path)?);
            }
        }
    }
    Ok(out)
}

/// Plan, execute, consolidate, and write the manifest. Returns the manifest;
/// callers map `all_ok` to the process exit code.
pub fn run_all(config: &RunConfig) -> Result<RunManifest> {
    let jobs = plan_jobs(config)?;
    fs::create_dir_all(&config.out_dir).map_err(|e| Error::io(&config.out_dir, e))?;
    let records = execute(&jobs, config.workers, config)?;

    // Consolidated artifacts; each step needs its producing jobs green.
    let ok = |prefix: &str| {
        records
            .iter()
            .filter(|r| r.job_id.starts_with(prefix))
            .all(|r| r.status == JobStatus::Ok)
    };
    if ok("filter:") {
        steps::consolidate_filter_outputs(config)?;
    }
    if ok("label:") {
        steps::consolidate_label_outputs(config)?;
    }
    if ok("predict:") {
        steps::consolidate_predictions(config)?;
    }

    let artifacts = digest_tree(&config.out_dir, &["manifest.json"])?;
    let manifest = RunManifest {
        config: config.clone(),
        jobs: records,
        artifacts,
    };
    let path = config.out_dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weaklabel::ProbabilisticLabel;

    fn plabels(cat: &str, entries: &[(&str, u8)]) -> (String, Vec<ProbabilisticLabel>) {
        (
            cat.to_string(),
            entries
                .iter()
                .map(|(d, h)| ProbabilisticLabel {
                    doc_id: d.to_string(),
                    cat_id: cat.to_string(),
                    p: f64::from(*h),
                    hard: *h,
                })
                .collect(),
        )
    }

    #[test]
    fn merge_labels_joins_on_doc_id() {
        let hz = vec![
            plabels("h1", &[("d2", 1), ("d1", 0), ("d3", 1)]),
            plabels("h2", &[("d1", 1), ("d2", 0), ("d3", 1)]),
        ];
        let nc = vec![plabels("n1", &[("d3", 0), ("d2", 1), ("d1", 1)])];
        let rows = merge_labels(&hz, &nc).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].doc_id, "d1");
        assert_eq!(rows[0].hazard, vec!["h2"]);
        assert_eq!(rows[0].ncf, vec!["n1"]);
        assert_eq!(rows[2].hazard, vec!["h1", "h2"]);
        assert!(rows[2].ncf.is_empty());
    }

    #[test]
    fn merge_labels_is_invariant_to_input_row_order() {
        let a = merge_labels(
            &[plabels("h1", &[("d1", 1), ("d2", 0)])],
            &[plabels("n1", &[("d1", 0), ("d2", 1)])],
        )
        .unwrap();
        let b = merge_labels(
            &[plabels("h1", &[("d2", 0), ("d1", 1)])],
            &[plabels("n1", &[("d2", 1), ("d1", 0)])],
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn merge_labels_rejects_coverage_mismatch() {
        let err = merge_labels(
            &[plabels("h1", &[("d1", 1)])],
            &[plabels("n1", &[("d2", 1)])],
        )
        .unwrap_err();
        assert!(matches!(err, Error::InconsistentCoverage { .. }));
    }

    #[test]
    fn shard_ranges_cover_exactly() {
        assert_eq!(shard_ranges(10, 4), vec![(0, 4), (4, 8), (8, 10)]);
        assert_eq!(shard_ranges(4, 4), vec![(0, 4)]);
        assert_eq!(shard_ranges(0, 4), vec![(0, 0)]);
    }

    #[test]
    fn plan_counts_follow_categories_and_providers() {
        // Bundled sample taxonomies: 18 hazards, 55 NCFs; 7 providers.
        let base = std::path::Path::new(env!("CARGO_MANIFEST_DIR"));
        let cfg = RunConfig {
            docs: base.join("fixtures/mini/docs.jsonl"),
            hazards: base.join("data/categories/hazards_sample.json"),
            ncfs: base.join("data/categories/ncfs_sample.json"),
            shard_size: 64,
            providers: (1..=7u64)
                .map(|s| crate::config::ProviderConfig {
                    id: format!("h{s}"),
                    kind: crate::embed::ProviderKind::Hashed,
                    dim: 128,
                    seed: s,
                    dir: None,
                })
                .collect(),
            ..RunConfig::default()
        };
        let jobs = plan_jobs(&cfg).unwrap();
        let count = |prefix: &str| jobs.iter().filter(|j| j.job_id.starts_with(prefix)).count();
        assert_eq!(count("label:hazard:"), 18);
        assert_eq!(count("label:ncf:"), 55);
        assert_eq!(count("train:"), 7);
        assert_eq!(count("filter:hazard:"), 4); // 200 docs / 64 per shard
        assert_eq!(count("filter:ncf:"), 4);
        assert_eq!(count("predict:"), 4);
        assert_eq!(count("topics:"), 1);

        // Dependencies reference planned jobs only, and ids are unique.
        let ids: std::collections::HashSet<_> = jobs.iter().map(|j| &j.job_id).collect();
        assert_eq!(ids.len(), jobs.len());
        for j in &jobs {
            for d in &j.deps {
                assert!(ids.contains(d), "missing dep {d}");
            }
        }
    }

    #[test]
    fn sanitized_id_collisions_are_rejected() {
        assert!(steps::ensure_distinct_after_sanitize(["a/b", "a_b"]).is_err());
        assert!(steps::ensure_distinct_after_sanitize(["a/b", "a-b", "ab"]).is_ok());
    }

    #[test]
    fn execute_empty_job_list() {
        let cfg = RunConfig::default();
        let records = execute(&[], 4, &cfg).unwrap();
        assert!(records.is_empty());
    }

    #[test]
    fn job_seeds_are_stable_and_distinct() {
        let a = JobSpec::new(
            "x".into(),
            JobKind::TrainChain {
                provider_id: "p".into(),
            },
            vec![],
            vec![],
            7,
        );
        let b = JobSpec::new(
            "x".into(),
            JobKind::TrainChain {
                provider_id: "p".into(),
            },
            vec![],
            vec![],
            7,
        );
        let c = JobSpec::new(
            "y".into(),
            JobKind::TrainChain {
                provider_id: "p".into(),
            },
            vec![],
            vec![],
            7,
        );
        assert_eq!(a.seed, b.seed);
        assert_ne!(a.seed, c.seed);
    }
}
