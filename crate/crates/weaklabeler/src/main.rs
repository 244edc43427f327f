//! Command-line umbrella: filter, label, train, predict, crossval, pairs,
//! topics, and run-all. Flags override config-file values; config-file
//! values override built-in defaults.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use weaklabeler::classify::{
    cross_validate, ensemble_predict, train_chain, CvMetrics, EnsembleModel, FeatureMatrix,
    TargetMatrix, TrainingSet,
};
use weaklabeler::config::{ProviderConfig, RunConfig};
use weaklabeler::corpus::{self, CategorySet, DocumentCollection, Taxonomy};
use weaklabeler::embed::EmbeddingVector;
use weaklabeler::error::{Error, Result};
use weaklabeler::filter::{filter_corpus, write_decisions};
use weaklabeler::pipeline;
use weaklabeler::topics::{
    pair_count_matrix, pair_matrix_csv, per_class_csv, run_topic_pipeline, select_pair_subset,
};
use weaklabeler::weaklabel::{
    apply_labeling_functions, fit_label_model, infer_probabilistic_labels, read_labels,
    write_labels, write_params, DocumentLabels, LabelingFunctionSpec, MultiLabelAssignment,
};

#[derive(Parser)]
#[command(
    name = "weaklabeler",
    version,
    about = "Weakly-supervised multi-label corpus labeling"
)]
struct Cli {
    /// JSON config file; CLI flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Maximum concurrent jobs.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Global seed; per-job seeds derive from it.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct CommonPaths {
    /// Documents file (JSON-lines).
    #[arg(long)]
    docs: Option<PathBuf>,
    /// Hazard categories file (JSON array).
    #[arg(long)]
    hazards: Option<PathBuf>,
    /// NCF categories file (JSON array).
    #[arg(long)]
    ncfs: Option<PathBuf>,
    /// Comma-separated provider list: config ids or inline hashed:DIM:SEED.
    #[arg(long)]
    providers: Option<String>,
    /// Stopword file, one token per line.
    #[arg(long)]
    stopwords: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Flag documents whose max definition similarity exceeds the threshold.
    Filter {
        #[command(flatten)]
        common: CommonPaths,
        /// Categories file for the stage being run.
        #[arg(long)]
        categories: PathBuf,
        #[arg(long)]
        taxonomy: Taxonomy,
        #[arg(long)]
        threshold: Option<f64>,
        /// Provider id (config id or inline hashed:DIM:SEED).
        #[arg(long)]
        provider: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Weak-label documents per category with the generative label model.
    Label {
        #[command(flatten)]
        common: CommonPaths,
        #[arg(long)]
        taxonomy: Taxonomy,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train per-provider classifier chains on weak labels.
    Train {
        #[command(flatten)]
        common: CommonPaths,
        /// Directory holding hazard/ and ncf/ label files from `label`.
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        l2: Option<f64>,
        /// Output model file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict multi-label assignments with a trained ensemble.
    Predict {
        #[command(flatten)]
        common: CommonPaths,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// k-fold cross-validation on the weak-labeled set.
    Crossval {
        #[command(flatten)]
        common: CommonPaths,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long)]
        l2: Option<f64>,
    },
    /// Pair-count matrix and per-class histograms from predictions.
    Pairs {
        #[command(flatten)]
        common: CommonPaths,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        min_cell: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Topic report for one (hazard, NCF) pair.
    Topics {
        #[command(flatten)]
        common: CommonPaths,
        #[arg(long)]
        predictions: PathBuf,
        /// Pair as HAZARD,NCF.
        #[arg(long)]
        pair: String,
        #[arg(long)]
        target_dim: Option<usize>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        min_pts: Option<usize>,
        #[arg(long)]
        top_k: Option<usize>,
        /// Provider for topic embeddings; defaults to the first configured.
        #[arg(long)]
        provider: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full pipeline: filter twice, label, train, predict, pairs, topics.
    RunAll {
        #[command(flatten)]
        common: CommonPaths,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Trained ensembles for both taxonomies; the `train`/`predict` model file.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    hazard: EnsembleModel,
    ncf: EnsembleModel,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Usage problems exit 1; --help/--version print and exit 0.
            let code = u8::from(e.use_stderr());
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

/// Merge precedence: defaults < config file < CLI flags.
fn build_config(
    cli_config: &Option<PathBuf>,
    workers: Option<usize>,
    seed: Option<u64>,
    common: &CommonPaths,
) -> Result<RunConfig> {
    let mut cfg = match cli_config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(w) = workers {
        cfg.workers = w;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(d) = &common.docs {
        cfg.docs = d.clone();
    }
    if let Some(h) = &common.hazards {
        cfg.hazards = h.clone();
    }
    if let Some(n) = &common.ncfs {
        cfg.ncfs = n.clone();
    }
    if let Some(sw) = &common.stopwords {
        cfg.stopwords = Some(sw.clone());
    }
    if let Some(list) = &common.providers {
        cfg.providers = resolve_providers(&cfg, list)?;
    }
    Ok(cfg)
}

/// Resolve a comma-separated provider list against the config, accepting
/// inline hashed:DIM:SEED entries.
fn resolve_providers(cfg: &RunConfig, list: &str) -> Result<Vec<ProviderConfig>> {
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|entry| {
            let entry = entry.trim();
            if let Some(pc) = cfg.providers.iter().find(|p| p.id == entry) {
                Ok(pc.clone())
            } else if let Some(pc) = ProviderConfig::parse_inline(entry) {
                Ok(pc)
            } else {
                Err(Error::InvalidConfig {
                    reason: format!(
                        "unknown provider {entry:?} (not in config, not inline hashed:DIM:SEED)"
                    ),
                })
            }
        })
        .collect()
}

fn load_docs_file(path: &Path) -> Result<DocumentCollection> {
    let docs = corpus::load_documents(path, corpus::LoadPolicy::SkipBad)?;
    if docs.skipped_count > 0 {
        eprintln!(
            "skipped {} malformed line(s) in {}",
            docs.skipped_count,
            path.display()
        );
    }
    Ok(docs)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Filter {
            ref common,
            ref categories,
            taxonomy,
            threshold,
            ref provider,
            ref out,
        } => {
            let mut cfg = build_config(&cli.config, cli.workers, cli.seed, common)?;
            if let Some(t) = threshold {
                cfg.threshold = t;
            }
            cfg.providers = resolve_providers(&cfg, provider)?;
            let docs = load_docs_file(&cfg.docs)?;
            let cats = corpus::load_categories(categories)?;
            let defs = cats.of_taxonomy(taxonomy);
            if defs.is_empty() {
                return Err(Error::InvalidConfig {
                    reason: format!("no {taxonomy} categories in {}", categories.display()),
                });
            }
            let p = cfg.build_provider(&cfg.provider_ids()[0])?;
            let (kept, decisions) = filter_corpus(&docs, &defs, p.as_ref(), cfg.threshold)?;
            std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
            write_decisions(&decisions, &out.join("decisions.jsonl"))?;
            let kept_rows: Vec<_> = kept.iter().cloned().collect();
            write_jsonl(&out.join("kept.jsonl"), &kept_rows)?;
            println!(
                "kept {} of {} documents at threshold {}",
                kept.len(),
                docs.len(),
                cfg.threshold
            );
            // Max-score histogram, for picking thresholds on new corpora.
            let mut bins = [0usize; 10];
            for d in &decisions {
                let b = ((d.max_score.clamp(0.0, 0.9999) * 10.0) as usize).min(9);
                bins[b] += 1;
            }
            for (i, n) in bins.iter().enumerate() {
                println!(
                    "  max score {:.1}-{:.1}: {n}",
                    i as f64 / 10.0,
                    (i + 1) as f64 / 10.0
                );
            }
            Ok(ExitCode::SUCCESS)
        }

        Command::Label {
            ref common,
            taxonomy,
            threshold,
            ref out,
        } => {
            let mut cfg = build_config(&cli.config, cli.workers, cli.seed, common)?;
            if let Some(t) = threshold {
                cfg.threshold = t;
            }
            cfg.validate()?;
            let docs = load_docs_file(&cfg.docs)?;
            let cats = corpus::load_categories(match taxonomy {
                Taxonomy::Hazard => &cfg.hazards,
                Taxonomy::Ncf => &cfg.ncfs,
            })?;
            let failed = label_all_categories(&cfg, &docs, &cats, taxonomy, out)?;
            if failed == 0 {
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::from(2))
            }
        }

        Command::Train {
            ref common,
            ref labels,
            l2,
            ref out,
        } => {
            let mut cfg = build_config(&cli.config, cli.workers, cli.seed, common)?;
            if let Some(v) = l2 {
                cfg.l2 = v;
            }
            cfg.validate()?;
            let docs = load_docs_file(&cfg.docs)?;
            let hazards = corpus::load_categories(&cfg.hazards)?;
            let ncfs = corpus::load_categories(&cfg.ncfs)?;
            let model = train_both_taxonomies(&cfg, &docs, &hazards, &ncfs, labels)?;
            let text = serde_json::to_string_pretty(&model).map_err(|e| Error::json(out, e))?;
            if let Some(parent) = out.parent() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            std::fs::write(out, text).map_err(|e| Error::io(out, e))?;
            println!("wrote model to {}", out.display());
            Ok(ExitCode::SUCCESS)
        }

        Command::Predict {
            ref common,
            ref model,
            ref out,
        } => {
            let cfg = build_config(&cli.config, cli.workers, cli.seed, common)?;
            let docs = load_docs_file(&cfg.docs)?;
            let text = std::fs::read_to_string(model).map_err(|e| Error::io(model, e))?;
            let model: ModelFile =
                serde_json::from_str(&text).map_err(|e| Error::json(model, e))?;
            let rows = predict_with_model(&cfg, &docs, &model)?;
            write_jsonl(out, &rows)?;
            println!("wrote {} predictions to {}", rows.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }

        Command::Crossval {
            ref common,
            ref labels,
            k,
            l2,
        } => {
            let mut cfg = build_config(&cli.config, cli.workers, cli.seed, common)?;
            if let Some(v) = l2 {
                cfg.l2 = v;
            }
            cfg.validate()?;
            let docs = load_docs_file(&cfg.docs)?;
            let hazards = corpus::load_categories(&cfg.hazards)?;
            let ncfs = corpus::load_categories(&cfg.ncfs)?;
            let mut report = BTreeMap::new();
            for (taxonomy, cats) in [(Taxonomy::Hazard, &hazards), (Taxonomy::Ncf, &ncfs)] {
                let train = assemble_training_set(&cfg, &docs, cats, taxonomy, labels)?;
                let metrics: CvMetrics = cross_validate(&train, k, cfg.seed, cfg.l2)?;
                report.insert(taxonomy.to_string(), metrics);
            }
            println!(
                "{}",
                serde_json::to_string_pretty(&report).expect("metrics serialize")
            );
            Ok(ExitCode::SUCCESS)
        }

        Command::Pairs {
            ref common,
            ref predictions,
            min_cell,
            ref out,
        } => {
            let mut cfg = build_config(&cli.config, cli.workers, cli.seed, common)?;
            if let Some(m) = min_cell {
                cfg.min_cell = m;
            }
            let hazards = corpus::load_categories(&cfg.hazards)?;
            let ncfs = corpus::load_categories(&cfg.ncfs)?;
            let rows: Vec<DocumentLabels> = read_jsonl(predictions)?;
            let hazard_order = hazards.ids_of_taxonomy(Taxonomy::Hazard);
            let ncf_order = ncfs.ids_of_taxonomy(Taxonomy::Ncf);
            let (full, filtered) =
                pair_count_matrix(&rows, &hazard_order, &ncf_order, cfg.min_cell);
            std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
            write_text(&out.join("pairs.csv"), &pair_matrix_csv(&full))?;
            write_text(&out.join("pairs_filtered.csv"), &pair_matrix_csv(&filtered))?;
            let hz: Vec<MultiLabelAssignment> = rows
                .iter()
                .map(|r| MultiLabelAssignment {
                    doc_id: r.doc_id.clone(),
                    labels: r.hazard.clone(),
                })
                .collect();
            let nc: Vec<MultiLabelAssignment> = rows
                .iter()
                .map(|r| MultiLabelAssignment {
                    doc_id: r.doc_id.clone(),
                    labels: r.ncf.clone(),
                })
                .collect();
            write_text(
                &out.join("hist_hazard.csv"),
                &per_class_csv(&weaklabeler::classify::per_class_counts(&hz, &hazard_order)),
            )?;
            write_text(
                &out.join("hist_ncf.csv"),
                &per_class_csv(&weaklabeler::classify::per_class_counts(&nc, &ncf_order)),
            )?;
            println!("wrote pair matrix and histograms to {}", out.display());
            Ok(ExitCode::SUCCESS)
        }

        Command::Topics {
            ref common,
            ref predictions,
            ref pair,
            target_dim,
            eps,
            min_pts,
            top_k,
            ref provider,
            ref out,
        } => {
            let mut cfg = build_config(&cli.config, cli.workers, cli.seed, common)?;
            if let Some(v) = target_dim {
                cfg.target_dim = v;
            }
            if let Some(v) = eps {
                cfg.eps = v;
            }
            if let Some(v) = min_pts {
                cfg.min_pts = v;
            }
            if let Some(v) = top_k {
                cfg.top_k = v;
            }
            if let Some(p) = provider {
                cfg.providers = resolve_providers(&cfg, p)?;
            }
            cfg.validate()?;
            let (hazard, ncf) = pair.split_once(',').ok_or_else(|| Error::InvalidConfig {
                reason: format!("--pair must be HAZARD,NCF, got {pair:?}"),
            })?;
            let docs = load_docs_file(&cfg.docs)?;
            let hazards = corpus::load_categories(&cfg.hazards)?;
            let ncfs = corpus::load_categories(&cfg.ncfs)?;
            let rows: Vec<DocumentLabels> = read_jsonl(predictions)?;
            let hazard_order = hazards.ids_of_taxonomy(Taxonomy::Hazard);
            let ncf_order = ncfs.ids_of_taxonomy(Taxonomy::Ncf);
            let subset = select_pair_subset(&rows, &hazard_order, &ncf_order, hazard, ncf)?;
            let keep: HashSet<String> = subset.into_iter().collect();
            let subset_docs = docs.subset(&keep);
            let doc_refs: Vec<_> = subset_docs.iter().collect();
            let p = cfg.build_provider(&cfg.provider_ids()[0])?;
            let embeddings = p.embed_documents(&doc_refs)?;
            let stopwords = cfg.stopword_set()?;
            let tokenized: BTreeMap<String, corpus::TokenList> = doc_refs
                .iter()
                .map(|d| {
                    (
                        d.doc_id.clone(),
                        corpus::tokenize(&d.abstract_text, &stopwords),
                    )
                })
                .collect();
            let report = run_topic_pipeline(
                hazard,
                ncf,
                &embeddings,
                &tokenized,
                &cfg.topic_params(),
                cfg.seed,
            )?;
            let text = serde_json::to_string_pretty(&report).expect("report serializes");
            write_text(out, &text)?;
            println!(
                "pair ({hazard}, {ncf}): {} docs, {} topics, {} noise",
                report.subset_size,
                report.topics.len(),
                report.noise_count
            );
            Ok(ExitCode::SUCCESS)
        }

        Command::RunAll {
            ref common,
            threshold,
            ref out,
        } => {
            let mut cfg = build_config(&cli.config, cli.workers, cli.seed, common)?;
            if let Some(t) = threshold {
                cfg.threshold = t;
            }
            if let Some(o) = out {
                cfg.out_dir = o.clone();
            }
            let manifest = pipeline::run_all(&cfg)?;
            let ok = manifest
                .jobs
                .iter()
                .filter(|j| j.status == pipeline::JobStatus::Ok)
                .count();
            println!(
                "{}/{} jobs ok; manifest at {}",
                ok,
                manifest.jobs.len(),
                cfg.out_dir.join("manifest.json").display()
            );
            if manifest.all_ok() {
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::from(2))
            }
        }
    }
}

/// Label every category of one taxonomy, up to `workers` in parallel.
/// Returns the number of failed categories.
fn label_all_categories(
    cfg: &RunConfig,
    docs: &DocumentCollection,
    cats: &CategorySet,
    taxonomy: Taxonomy,
    out: &Path,
) -> Result<usize> {
    let categories: Vec<_> = cats.of_taxonomy(taxonomy);
    if categories.is_empty() {
        return Err(Error::InvalidConfig {
            reason: format!("no {taxonomy} categories"),
        });
    }
    pipeline::ensure_distinct_after_sanitize(categories.iter().map(|c| c.cat_id.as_str()))?;
    let out_dir = out.join(taxonomy.to_string());
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;

    let doc_refs: Vec<_> = docs.iter().collect();
    // Document embeddings are shared across categories; compute them once.
    let mut doc_embeddings = BTreeMap::new();
    for pid in cfg.provider_ids() {
        let provider = cfg.build_provider(&pid)?;
        doc_embeddings.insert(pid, provider.embed_documents(&doc_refs)?);
    }

    let next = AtomicUsize::new(0);
    let failures: Mutex<Vec<String>> = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..cfg.workers.max(1) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= categories.len() {
                    break;
                }
                let category = categories[i];
                let result = (|| -> Result<()> {
                    let mut definitions = BTreeMap::new();
                    let mut lfs = Vec::new();
                    for pid in cfg.provider_ids() {
                        let provider = cfg.build_provider(&pid)?;
                        let defs = provider.embed_categories(&[category])?;
                        definitions.insert(pid.clone(), EmbeddingVector::new(defs.row(0).to_vec()));
                        lfs.push(LabelingFunctionSpec {
                            lf_id: format!("{pid}:{}", category.cat_id),
                            provider_id: pid,
                            cat_id: category.cat_id.clone(),
                            threshold: category.threshold.unwrap_or(cfg.threshold),
                        });
                    }
                    let votes = apply_labeling_functions(&doc_embeddings, &definitions, &lfs)?;
                    let params = fit_label_model(
                        &votes,
                        &category.cat_id,
                        cfg.label_max_iters,
                        cfg.label_tol,
                    )?;
                    let labels = infer_probabilistic_labels(&params, &votes, &category.cat_id)?;
                    let stem = pipeline::sanitize_id(&category.cat_id);
                    write_labels(&labels, &out_dir.join(format!("{stem}.jsonl")))?;
                    write_params(&params, &out_dir.join(format!("{stem}.params.json")))?;
                    Ok(())
                })();
                if let Err(e) = result {
                    failures
                        .lock()
                        .expect("failures lock")
                        .push(format!("{}: {e}", category.cat_id));
                }
            });
        }
    });

    let failures = failures.into_inner().expect("failures lock");
    for f in &failures {
        eprintln!("label failed for {f}");
    }
    println!(
        "labeled {}/{} {taxonomy} categories into {}",
        categories.len() - failures.len(),
        categories.len(),
        out_dir.display()
    );
    Ok(failures.len())
}

/// Read per-category weak labels into a training set for one taxonomy.
fn assemble_training_set(
    cfg: &RunConfig,
    docs: &DocumentCollection,
    cats: &CategorySet,
    taxonomy: Taxonomy,
    labels_dir: &Path,
) -> Result<TrainingSet> {
    let order = cats.ids_of_taxonomy(taxonomy);
    let doc_ids = docs.doc_ids();
    let pos: BTreeMap<&str, usize> = doc_ids
        .iter()
        .enumerate()
        .map(|(i, d)| (d.as_str(), i))
        .collect();
    let mut data = vec![0u8; doc_ids.len() * order.len()];
    for (k, cat) in order.iter().enumerate() {
        let path = labels_dir
            .join(taxonomy.to_string())
            .join(format!("{}.jsonl", pipeline::sanitize_id(cat)));
        if !path.exists() {
            return Err(Error::MissingOutput {
                what: format!("label file for {taxonomy} category {cat:?}"),
                path,
            });
        }
        for label in read_labels(&path)? {
            if let Some(&i) = pos.get(label.doc_id.as_str()) {
                data[i * order.len() + k] = label.hard;
            }
        }
    }
    let targets = TargetMatrix::new(order, data, doc_ids.len())?;

    let doc_refs: Vec<_> = docs.iter().collect();
    let mut features = BTreeMap::new();
    for pid in cfg.provider_ids() {
        let provider = cfg.build_provider(&pid)?;
        features.insert(
            pid,
            FeatureMatrix::from_embeddings(&provider.embed_documents(&doc_refs)?),
        );
    }
    TrainingSet::new(doc_ids, features, targets)
}

fn train_both_taxonomies(
    cfg: &RunConfig,
    docs: &DocumentCollection,
    hazards: &CategorySet,
    ncfs: &CategorySet,
    labels_dir: &Path,
) -> Result<ModelFile> {
    let mut ensembles = Vec::new();
    for (taxonomy, cats) in [(Taxonomy::Hazard, hazards), (Taxonomy::Ncf, ncfs)] {
        let train = assemble_training_set(cfg, docs, cats, taxonomy, labels_dir)?;
        let mut chains = Vec::new();
        for pid in cfg.provider_ids() {
            let provider = cfg.build_provider(&pid)?;
            let feats = &train.features[&pid];
            chains.push(train_chain(
                feats,
                &train.targets,
                provider.spec(),
                &train.targets.category_order.clone(),
                cfg.l2,
            )?);
        }
        ensembles.push(EnsembleModel::new(chains)?);
    }
    let ncf = ensembles.pop().expect("two ensembles");
    let hazard = ensembles.pop().expect("two ensembles");
    Ok(ModelFile { hazard, ncf })
}

fn predict_with_model(
    cfg: &RunConfig,
    docs: &DocumentCollection,
    model: &ModelFile,
) -> Result<Vec<DocumentLabels>> {
    let doc_refs: Vec<_> = docs.iter().collect();
    let mut features = BTreeMap::new();
    for chain in model.hazard.chains.iter().chain(model.ncf.chains.iter()) {
        let pid = &chain.provider.provider_id;
        if !features.contains_key(pid) {
            let provider = cfg.build_provider(pid)?;
            features.insert(
                pid.clone(),
                FeatureMatrix::from_embeddings(&provider.embed_documents(&doc_refs)?),
            );
        }
    }
    let hz = ensemble_predict(&model.hazard, &features)?;
    let nc = ensemble_predict(&model.ncf, &features)?;
    let mut rows: Vec<DocumentLabels> = docs
        .iter()
        .enumerate()
        .map(|(i, d)| DocumentLabels {
            doc_id: d.doc_id.clone(),
            hazard: model
                .hazard
                .category_order()
                .iter()
                .zip(&hz[i])
                .filter(|(_, &v)| v == 1)
                .map(|(c, _)| c.clone())
                .collect(),
            ncf: model
                .ncf
                .category_order()
                .iter()
                .zip(&nc[i])
                .filter(|(_, &v)| v == 1)
                .map(|(c, _)| c.clone())
                .collect(),
        })
        .collect();
    rows.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    Ok(rows)
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut out = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut out, row).map_err(|e| Error::json(path, e))?;
        out.push(b'\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::json(path, e)))
        .collect()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
