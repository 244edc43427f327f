//! Job bodies and run-all consolidation. Every function reads its inputs
//! from disk and writes only its own outputs, so jobs stay independent.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::classify::{ensemble_predict, train_chain, EnsembleModel, FeatureMatrix, TargetMatrix};
use crate::config::RunConfig;
use crate::corpus::{self, CategorySet, DocumentCollection, Taxonomy, TokenList};
use crate::error::{Error, Result};
use crate::filter::{filter_corpus, write_decisions};
use crate::topics::{
    pair_count_matrix, pair_matrix_csv, per_class_csv, run_topic_pipeline, select_pair_subset,
    TopicReport,
};
use crate::weaklabel::{
    apply_labeling_functions, fit_label_model, infer_probabilistic_labels, read_labels,
    write_labels, write_params, DocumentLabels, LabelingFunctionSpec, MultiLabelAssignment,
};

use super::{merge_labels, JobKind, JobSpec};

/// File-name-safe form of an id (provider ids may contain ':').
pub fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Ids must stay distinct after sanitization or their output files would
/// overwrite each other.
pub fn ensure_distinct_after_sanitize<'a, I>(ids: I) -> Result<()>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut seen: std::collections::HashMap<String, &str> = std::collections::HashMap::new();
    for id in ids {
        if let Some(prev) = seen.insert(sanitize(id), id) {
            return Err(Error::InvalidConfig {
                reason: format!("ids {prev:?} and {id:?} collide after filename sanitization"),
            });
        }
    }
    Ok(())
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_jsonl<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    let mut out = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut out, row).map_err(|e| Error::json(path, e))?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::json(path, e)))
        .collect()
}

// Output layout under out_dir.

fn filter_dir(config: &RunConfig, taxonomy: Taxonomy) -> PathBuf {
    config.out_dir.join("filter").join(taxonomy.to_string())
}

fn kept_path(config: &RunConfig, taxonomy: Taxonomy, shard: usize) -> PathBuf {
    filter_dir(config, taxonomy).join(format!("kept_{shard:04}.txt"))
}

fn decisions_path(config: &RunConfig, taxonomy: Taxonomy, shard: usize) -> PathBuf {
    filter_dir(config, taxonomy).join(format!("decisions_{shard:04}.jsonl"))
}

fn labels_path(config: &RunConfig, taxonomy: Taxonomy, cat_id: &str) -> PathBuf {
    config
        .out_dir
        .join("labels")
        .join(taxonomy.to_string())
        .join(format!("{}.jsonl", sanitize(cat_id)))
}

fn params_path(config: &RunConfig, taxonomy: Taxonomy, cat_id: &str) -> PathBuf {
    config
        .out_dir
        .join("labels")
        .join(taxonomy.to_string())
        .join(format!("{}.params.json", sanitize(cat_id)))
}

pub(crate) fn model_path(config: &RunConfig, provider_id: &str, taxonomy: Taxonomy) -> PathBuf {
    config
        .out_dir
        .join("models")
        .join(format!("{}.{}.json", sanitize(provider_id), taxonomy))
}

fn predict_path(config: &RunConfig, shard: usize) -> PathBuf {
    config
        .out_dir
        .join("predict")
        .join(format!("shard_{shard:04}.jsonl"))
}

fn topics_path(config: &RunConfig, hazard: &str, ncf: &str) -> PathBuf {
    config
        .out_dir
        .join("topics")
        .join(format!("{}__{}.json", sanitize(hazard), sanitize(ncf)))
}

fn shard_count(config: &RunConfig, n_docs: usize) -> usize {
    if n_docs == 0 {
        1
    } else {
        n_docs.div_ceil(config.shard_size.max(1))
    }
}

fn load_inputs(config: &RunConfig) -> Result<(DocumentCollection, CategorySet, CategorySet)> {
    let docs = corpus::load_documents(&config.docs, corpus::LoadPolicy::SkipBad)?;
    let hazards = corpus::load_categories(&config.hazards)?;
    let ncfs = corpus::load_categories(&config.ncfs)?;
    Ok((docs, hazards, ncfs))
}

fn read_id_file(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

/// Ids kept by every shard of one filter stage.
fn kept_ids(config: &RunConfig, taxonomy: Taxonomy, n_docs: usize) -> Result<HashSet<String>> {
    let mut ids = HashSet::new();
    for shard in 0..shard_count(config, n_docs) {
        let path = kept_path(config, taxonomy, shard);
        if !path.exists() {
            return Err(Error::MissingOutput {
                what: format!("{taxonomy} filter shard {shard}"),
                path,
            });
        }
        ids.extend(read_id_file(&path)?);
    }
    Ok(ids)
}

/// The doubly-filtered corpus, original file order preserved.
fn final_corpus(config: &RunConfig, docs: &DocumentCollection) -> Result<DocumentCollection> {
    let ids = kept_ids(config, Taxonomy::Ncf, docs.len())?;
    Ok(docs.subset(&ids))
}

/// Dispatch one job. Returns the files it wrote.
pub fn run_job(job: &JobSpec, config: &RunConfig) -> Result<Vec<PathBuf>> {
    match &job.kind {
        JobKind::FilterShard {
            taxonomy,
            shard,
            start,
            end,
        } => run_filter_shard(config, *taxonomy, *shard, *start, *end),
        JobKind::LabelCategory { taxonomy, cat_id } => {
            run_label_category(config, *taxonomy, cat_id)
        }
        JobKind::TrainChain { provider_id } => run_train_chain(config, provider_id),
        JobKind::PredictShard { shard, start, end } => {
            run_predict_shard(config, *shard, *start, *end)
        }
        JobKind::TopicPair { hazard, ncf } => {
            run_topic_pair(config, hazard.as_deref(), ncf.as_deref(), job.seed)
        }
    }
}

fn run_filter_shard(
    config: &RunConfig,
    taxonomy: Taxonomy,
    shard: usize,
    start: usize,
    end: usize,
) -> Result<Vec<PathBuf>> {
    let (docs, hazards, ncfs) = load_inputs(config)?;
    let cats = match taxonomy {
        Taxonomy::Hazard => hazards,
        Taxonomy::Ncf => ncfs,
    };
    let defs = cats.of_taxonomy(taxonomy);
    if defs.is_empty() {
        return Err(Error::InvalidConfig {
            reason: format!("no {taxonomy} categories"),
        });
    }

    // Shard slice of the original corpus; the NCF stage additionally
    // restricts to documents its hazard-stage shard kept.
    let slice: Vec<String> = docs.doc_ids()[start.min(docs.len())..end.min(docs.len())].to_vec();
    let mut keep: HashSet<String> = slice.into_iter().collect();
    if taxonomy == Taxonomy::Ncf {
        let stage1 = read_id_file(&kept_path(config, Taxonomy::Hazard, shard))?;
        let stage1: HashSet<String> = stage1.into_iter().collect();
        keep.retain(|id| stage1.contains(id));
    }
    let shard_docs = docs.subset(&keep);

    // The filter stage uses the first configured provider.
    let provider = config.build_provider(&config.provider_ids()[0])?;
    let (kept, decisions) = if shard_docs.is_empty() {
        (DocumentCollection::default(), Vec::new())
    } else {
        filter_corpus(&shard_docs, &defs, provider.as_ref(), config.threshold)?
    };

    let dpath = decisions_path(config, taxonomy, shard);
    ensure_dir(dpath.parent().unwrap())?;
    write_decisions(&decisions, &dpath)?;
    let kpath = kept_path(config, taxonomy, shard);
    let mut kept_sorted = kept.doc_ids();
    kept_sorted.sort();
    write_text(&kpath, &(kept_sorted.join("\n") + "\n"))?;
    Ok(vec![dpath, kpath])
}

fn run_label_category(
    config: &RunConfig,
    taxonomy: Taxonomy,
    cat_id: &str,
) -> Result<Vec<PathBuf>> {
    let (docs, hazards, ncfs) = load_inputs(config)?;
    let cats = match taxonomy {
        Taxonomy::Hazard => hazards,
        Taxonomy::Ncf => ncfs,
    };
    let category = cats.get(taxonomy, cat_id)?;
    let corpus_docs = final_corpus(config, &docs)?;
    if corpus_docs.is_empty() {
        return Err(Error::TooFewDocuments { min: 10, got: 0 });
    }
    let doc_refs: Vec<_> = corpus_docs.iter().collect();

    let mut doc_embeddings = BTreeMap::new();
    let mut definitions = BTreeMap::new();
    let mut lfs = Vec::new();
    let threshold = category.threshold.unwrap_or(config.threshold);
    for pid in config.provider_ids() {
        let provider = config.build_provider(&pid)?;
        doc_embeddings.insert(pid.clone(), provider.embed_documents(&doc_refs)?);
        let defs = provider.embed_categories(&[category])?;
        definitions.insert(
            pid.clone(),
            crate::embed::EmbeddingVector::new(defs.row(0).to_vec()),
        );
        lfs.push(LabelingFunctionSpec {
            lf_id: format!("{pid}:{cat_id}"),
            provider_id: pid,
            cat_id: cat_id.to_string(),
            threshold,
        });
    }

    let votes = apply_labeling_functions(&doc_embeddings, &definitions, &lfs)?;
    let params = fit_label_model(&votes, cat_id, config.label_max_iters, config.label_tol)?;
    let labels = infer_probabilistic_labels(&params, &votes, cat_id)?;

    let lpath = labels_path(config, taxonomy, cat_id);
    ensure_dir(lpath.parent().unwrap())?;
    write_labels(&labels, &lpath)?;
    let ppath = params_path(config, taxonomy, cat_id);
    write_params(&params, &ppath)?;
    Ok(vec![lpath, ppath])
}

/// Hard weak labels as a target matrix in category file order, rows in
/// corpus order.
fn weak_targets(
    config: &RunConfig,
    taxonomy: Taxonomy,
    category_order: &[String],
    doc_ids: &[String],
) -> Result<TargetMatrix> {
    let pos: BTreeMap<&str, usize> = doc_ids
        .iter()
        .enumerate()
        .map(|(i, d)| (d.as_str(), i))
        .collect();
    let mut data = vec![0u8; doc_ids.len() * category_order.len()];
    for (k, cat) in category_order.iter().enumerate() {
        let path = labels_path(config, taxonomy, cat);
        if !path.exists() {
            return Err(Error::MissingOutput {
                what: format!("label file for {taxonomy} category {cat:?}"),
                path,
            });
        }
        let labels = read_labels(&path)?;
        if labels.len() != doc_ids.len() {
            return Err(Error::InconsistentCoverage {
                reason: format!(
                    "{taxonomy} category {cat:?} labels {} docs, corpus has {}",
                    labels.len(),
                    doc_ids.len()
                ),
            });
        }
        for label in labels {
            let Some(&i) = pos.get(label.doc_id.as_str()) else {
                return Err(Error::InconsistentCoverage {
                    reason: format!("label for unknown doc {:?}", label.doc_id),
                });
            };
            data[i * category_order.len() + k] = label.hard;
        }
    }
    TargetMatrix::new(category_order.to_vec(), data, doc_ids.len())
}

fn run_train_chain(config: &RunConfig, provider_id: &str) -> Result<Vec<PathBuf>> {
    let (docs, hazards, ncfs) = load_inputs(config)?;
    let corpus_docs = final_corpus(config, &docs)?;
    let doc_refs: Vec<_> = corpus_docs.iter().collect();
    let doc_ids = corpus_docs.doc_ids();
    let provider = config.build_provider(provider_id)?;
    let features = FeatureMatrix::from_embeddings(&provider.embed_documents(&doc_refs)?);

    let mut outputs = Vec::new();
    for (taxonomy, cats) in [(Taxonomy::Hazard, &hazards), (Taxonomy::Ncf, &ncfs)] {
        let order = cats.ids_of_taxonomy(taxonomy);
        let targets = weak_targets(config, taxonomy, &order, &doc_ids)?;
        let chain = train_chain(&features, &targets, provider.spec(), &order, config.l2)?;
        let path = model_path(config, provider_id, taxonomy);
        ensure_dir(path.parent().unwrap())?;
        let text = serde_json::to_string_pretty(&chain).map_err(|e| Error::json(&path, e))?;
        write_text(&path, &text)?;
        outputs.push(path);
    }
    Ok(outputs)
}

fn load_ensemble(config: &RunConfig, taxonomy: Taxonomy) -> Result<EnsembleModel> {
    let mut chains = Vec::new();
    for pid in config.provider_ids() {
        let path = model_path(config, &pid, taxonomy);
        if !path.exists() {
            return Err(Error::MissingOutput {
                what: format!("{taxonomy} chain for provider {pid:?}"),
                path,
            });
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        chains.push(serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?);
    }
    EnsembleModel::new(chains)
}

fn run_predict_shard(
    config: &RunConfig,
    shard: usize,
    start: usize,
    end: usize,
) -> Result<Vec<PathBuf>> {
    let (docs, _, _) = load_inputs(config)?;
    let corpus_docs = final_corpus(config, &docs)?;
    let slice: HashSet<String> = docs.doc_ids()[start.min(docs.len())..end.min(docs.len())]
        .iter()
        .cloned()
        .collect();
    let shard_docs = corpus_docs.subset(&slice);

    let path = predict_path(config, shard);
    ensure_dir(path.parent().unwrap())?;
    if shard_docs.is_empty() {
        write_jsonl::<DocumentLabels>(&path, &[])?;
        return Ok(vec![path]);
    }

    let doc_refs: Vec<_> = shard_docs.iter().collect();
    let mut features = BTreeMap::new();
    for pid in config.provider_ids() {
        let provider = config.build_provider(&pid)?;
        features.insert(
            pid.clone(),
            FeatureMatrix::from_embeddings(&provider.embed_documents(&doc_refs)?),
        );
    }

    let hazard_ens = load_ensemble(config, Taxonomy::Hazard)?;
    let ncf_ens = load_ensemble(config, Taxonomy::Ncf)?;
    let hz = ensemble_predict(&hazard_ens, &features)?;
    let nc = ensemble_predict(&ncf_ens, &features)?;

    let mut rows: Vec<DocumentLabels> = shard_docs
        .iter()
        .enumerate()
        .map(|(i, d)| DocumentLabels {
            doc_id: d.doc_id.clone(),
            hazard: hazard_ens
                .category_order()
                .iter()
                .zip(&hz[i])
                .filter(|(_, &v)| v == 1)
                .map(|(c, _)| c.clone())
                .collect(),
            ncf: ncf_ens
                .category_order()
                .iter()
                .zip(&nc[i])
                .filter(|(_, &v)| v == 1)
                .map(|(c, _)| c.clone())
                .collect(),
        })
        .collect();
    rows.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    write_jsonl(&path, &rows)?;
    Ok(vec![path])
}

/// All predicted rows, sorted by doc_id.
fn merged_predictions(config: &RunConfig, n_docs: usize) -> Result<Vec<DocumentLabels>> {
    let mut rows = Vec::new();
    for shard in 0..shard_count(config, n_docs) {
        let path = predict_path(config, shard);
        if !path.exists() {
            return Err(Error::MissingOutput {
                what: format!("prediction shard {shard}"),
                path,
            });
        }
        rows.extend(read_jsonl::<DocumentLabels>(&path)?);
    }
    rows.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    Ok(rows)
}

fn run_topic_pair(
    config: &RunConfig,
    hazard: Option<&str>,
    ncf: Option<&str>,
    seed: u64,
) -> Result<Vec<PathBuf>> {
    let (docs, hazards, ncfs) = load_inputs(config)?;
    let hazard_order = hazards.ids_of_taxonomy(Taxonomy::Hazard);
    let ncf_order = ncfs.ids_of_taxonomy(Taxonomy::Ncf);
    let rows = merged_predictions(config, docs.len())?;

    let (hazard, ncf) = match (hazard, ncf) {
        (Some(h), Some(n)) => (h.to_string(), n.to_string()),
        _ => {
            let (full, _) = pair_count_matrix(&rows, &hazard_order, &ncf_order, config.min_cell);
            let Some((h, n, count)) = full.max_cell() else {
                return Err(Error::InvalidConfig {
                    reason: "no categories to pick a topic pair from".into(),
                });
            };
            if count == 0 {
                // Nothing co-labeled; emit an empty report for the first pair.
                let report = TopicReport {
                    hazard: h.clone(),
                    ncf: n.clone(),
                    subset_size: 0,
                    noise_count: 0,
                    variance_ratio: 0.0,
                    topics: Vec::new(),
                };
                let path = topics_path(config, &h, &n);
                write_text(&path, &serde_json::to_string_pretty(&report).unwrap())?;
                return Ok(vec![path]);
            }
            (h, n)
        }
    };

    let subset_ids = select_pair_subset(&rows, &hazard_order, &ncf_order, &hazard, &ncf)?;
    let keep: HashSet<String> = subset_ids.iter().cloned().collect();
    let subset_docs = docs.subset(&keep);
    let doc_refs: Vec<_> = subset_docs.iter().collect();

    let params = config.topic_params();
    let path = topics_path(config, &hazard, &ncf);
    let min_needed = params.target_dim.max(params.min_pts);
    let report = if doc_refs.len() < min_needed {
        // Too small to reduce or cluster: everything is unclustered.
        TopicReport {
            hazard: hazard.clone(),
            ncf: ncf.clone(),
            subset_size: doc_refs.len(),
            noise_count: doc_refs.len(),
            variance_ratio: 0.0,
            topics: Vec::new(),
        }
    } else {
        let provider = config.build_provider(&config.provider_ids()[0])?;
        let embeddings = provider.embed_documents(&doc_refs)?;
        let stopwords = config.stopword_set()?;
        let tokenized: BTreeMap<String, TokenList> = doc_refs
            .iter()
            .map(|d| {
                (
                    d.doc_id.clone(),
                    corpus::tokenize(&d.abstract_text, &stopwords),
                )
            })
            .collect();
        run_topic_pipeline(&hazard, &ncf, &embeddings, &tokenized, &params, seed)?
    };
    write_text(&path, &serde_json::to_string_pretty(&report).unwrap())?;
    Ok(vec![path])
}

// Run-all consolidation: merged decision files, corpus id lists, the
// consolidated weak-label assignments, predictions, and pair analytics.

pub(super) fn consolidate_filter_outputs(config: &RunConfig) -> Result<()> {
    let (docs, _, _) = load_inputs(config)?;
    for taxonomy in [Taxonomy::Hazard, Taxonomy::Ncf] {
        let mut decisions = Vec::new();
        for shard in 0..shard_count(config, docs.len()) {
            decisions.extend(crate::filter::read_decisions(&decisions_path(
                config, taxonomy, shard,
            ))?);
        }
        decisions.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
        write_decisions(
            &decisions,
            &filter_dir(config, taxonomy).join("decisions.jsonl"),
        )?;
    }

    let climate = kept_ids(config, Taxonomy::Hazard, docs.len())?;
    let finals = kept_ids(config, Taxonomy::Ncf, docs.len())?;
    let corpus_dir = config.out_dir.join("corpus");
    ensure_dir(&corpus_dir)?;
    let mut climate: Vec<String> = climate.into_iter().collect();
    climate.sort();
    let mut finals: Vec<String> = finals.into_iter().collect();
    finals.sort();
    write_text(
        &corpus_dir.join("climate_ids.txt"),
        &(climate.join("\n") + "\n"),
    )?;
    write_text(
        &corpus_dir.join("final_ids.txt"),
        &(finals.join("\n") + "\n"),
    )?;
    Ok(())
}

pub(super) fn consolidate_label_outputs(config: &RunConfig) -> Result<()> {
    let (_, hazards, ncfs) = load_inputs(config)?;
    let collect = |taxonomy: Taxonomy, cats: &CategorySet| -> Result<Vec<(String, Vec<_>)>> {
        cats.ids_of_taxonomy(taxonomy)
            .into_iter()
            .map(|cat| {
                let labels = read_labels(&labels_path(config, taxonomy, &cat))?;
                Ok((cat, labels))
            })
            .collect()
    };
    let hz = collect(Taxonomy::Hazard, &hazards)?;
    let nc = collect(Taxonomy::Ncf, &ncfs)?;
    let rows = merge_labels(&hz, &nc)?;
    write_jsonl(
        &config.out_dir.join("labels").join("assignments.jsonl"),
        &rows,
    )
}

pub(super) fn consolidate_predictions(config: &RunConfig) -> Result<()> {
    let (docs, hazards, ncfs) = load_inputs(config)?;
    let rows = merged_predictions(config, docs.len())?;
    write_jsonl(&config.out_dir.join("predictions.jsonl"), &rows)?;

    let hazard_order = hazards.ids_of_taxonomy(Taxonomy::Hazard);
    let ncf_order = ncfs.ids_of_taxonomy(Taxonomy::Ncf);
    let (full, filtered) = pair_count_matrix(&rows, &hazard_order, &ncf_order, config.min_cell);
    write_text(&config.out_dir.join("pairs.csv"), &pair_matrix_csv(&full))?;
    write_text(
        &config.out_dir.join("pairs_filtered.csv"),
        &pair_matrix_csv(&filtered),
    )?;

    let hz_assign: Vec<MultiLabelAssignment> = rows
        .iter()
        .map(|r| MultiLabelAssignment {
            doc_id: r.doc_id.clone(),
            labels: r.hazard.clone(),
        })
        .collect();
    let nc_assign: Vec<MultiLabelAssignment> = rows
        .iter()
        .map(|r| MultiLabelAssignment {
            doc_id: r.doc_id.clone(),
            labels: r.ncf.clone(),
        })
        .collect();
    let hz_counts = crate::classify::per_class_counts(&hz_assign, &hazard_order);
    let nc_counts = crate::classify::per_class_counts(&nc_assign, &ncf_order);
    write_text(
        &config.out_dir.join("hist_hazard.csv"),
        &per_class_csv(&hz_counts),
    )?;
    write_text(
        &config.out_dir.join("hist_ncf.csv"),
        &per_class_csv(&nc_counts),
    )?;
    Ok(())
}
