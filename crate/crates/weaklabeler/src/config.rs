//! Run configuration: a JSON config file overlaid by CLI flags (flags win).

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus;
use crate::embed::{
    load_embedding_matrix, EmbeddingProvider, FileBackedProvider, HashedProvider, ProviderKind,
    ProviderSpec,
};
use crate::error::{Error, Result};
use crate::topics::TopicParams;

pub const DEFAULT_THRESHOLD: f64 = 0.4;
pub const DEFAULT_L2: f64 = 1e-2;
pub const DEFAULT_LABEL_MAX_ITERS: usize = 100;
pub const DEFAULT_LABEL_TOL: f64 = 1e-6;
pub const DEFAULT_SHARD_SIZE: usize = 1000;
pub const DEFAULT_MIN_CELL: u64 = 100;

/// One provider entry in the config file.
///
/// `hashed` providers need `dim` and `seed`; `file_backed` providers need a
/// `dir` containing `docs.f32`/`docs.json` plus `hazard.f32`/`hazard.json`
/// and `ncf.f32`/`ncf.json` sidecar pairs for the definitions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub id: String,
    pub kind: ProviderKind,
    #[serde(default)]
    pub dim: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

impl ProviderConfig {
    /// Parse an inline CLI provider: either `hashed:DIM:SEED` or an id
    /// defined in the config file.
    pub fn parse_inline(entry: &str) -> Option<ProviderConfig> {
        let parts: Vec<&str> = entry.split(':').collect();
        if parts.len() == 3 && parts[0] == "hashed" {
            let dim = parts[1].parse().ok()?;
            let seed = parts[2].parse().ok()?;
            return Some(ProviderConfig {
                id: entry.to_string(),
                kind: ProviderKind::Hashed,
                dim,
                seed,
                dir: None,
            });
        }
        None
    }
}

/// Full run configuration. Every field has a default so a config file can
/// specify only what it overrides.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub docs: PathBuf,
    pub hazards: PathBuf,
    pub ncfs: PathBuf,
    pub out_dir: PathBuf,
    pub providers: Vec<ProviderConfig>,
    pub threshold: f64,
    pub workers: usize,
    pub seed: u64,
    pub shard_size: usize,
    pub l2: f64,
    pub label_max_iters: usize,
    pub label_tol: f64,
    pub min_cell: u64,
    pub target_dim: usize,
    pub eps: f64,
    pub min_pts: usize,
    pub top_k: usize,
    /// Pairs to run topic modeling on during run-all; empty means the
    /// single most-populated pair.
    pub topic_pairs: Vec<(String, String)>,
    pub stopwords: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            docs: PathBuf::new(),
            hazards: PathBuf::new(),
            ncfs: PathBuf::new(),
            out_dir: PathBuf::from("out"),
            providers: Vec::new(),
            threshold: DEFAULT_THRESHOLD,
            workers: 1,
            seed: 0,
            shard_size: DEFAULT_SHARD_SIZE,
            l2: DEFAULT_L2,
            label_max_iters: DEFAULT_LABEL_MAX_ITERS,
            label_tol: DEFAULT_LABEL_TOL,
            min_cell: DEFAULT_MIN_CELL,
            target_dim: TopicParams::default().target_dim,
            eps: TopicParams::default().eps,
            min_pts: TopicParams::default().min_pts,
            top_k: TopicParams::default().top_k,
            topic_pairs: Vec::new(),
            stopwords: None,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    pub fn topic_params(&self) -> TopicParams {
        TopicParams {
            target_dim: self.target_dim,
            eps: self.eps,
            min_pts: self.min_pts,
            top_k: self.top_k,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::InvalidConfig {
                reason: "workers must be >= 1".into(),
            });
        }
        if !(-1.0..=1.0).contains(&self.threshold) {
            return Err(Error::InvalidConfig {
                reason: format!("threshold {} outside [-1, 1]", self.threshold),
            });
        }
        if self.providers.is_empty() {
            return Err(Error::InvalidConfig {
                reason: "at least one provider is required".into(),
            });
        }
        let mut seen = HashSet::new();
        for p in &self.providers {
            if !seen.insert(&p.id) {
                return Err(Error::InvalidConfig {
                    reason: format!("duplicate provider id {:?}", p.id),
                });
            }
            match p.kind {
                ProviderKind::Hashed if p.dim == 0 => {
                    return Err(Error::InvalidConfig {
                        reason: format!("hashed provider {:?} needs dim > 0", p.id),
                    })
                }
                ProviderKind::FileBacked if p.dir.is_none() => {
                    return Err(Error::InvalidConfig {
                        reason: format!("file_backed provider {:?} needs dir", p.id),
                    })
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn stopword_set(&self) -> Result<HashSet<String>> {
        match &self.stopwords {
            Some(path) => corpus::load_stopwords(path),
            None => Ok(corpus::default_stopwords().clone()),
        }
    }

    /// Instantiate one provider by id. Ids of the form hashed:DIM:SEED are
    /// self-describing and work without a config entry, so model files that
    /// name them stay portable.
    pub fn build_provider(&self, provider_id: &str) -> Result<Box<dyn EmbeddingProvider>> {
        let inline;
        let pc = match self.providers.iter().find(|p| p.id == provider_id) {
            Some(pc) => pc,
            None => match ProviderConfig::parse_inline(provider_id) {
                Some(parsed) => {
                    inline = parsed;
                    &inline
                }
                None => {
                    return Err(Error::MissingProvider {
                        provider_id: provider_id.to_string(),
                        reason: "not declared in config".into(),
                    })
                }
            },
        };
        match pc.kind {
            ProviderKind::Hashed => {
                let spec = ProviderSpec::hashed(&pc.id, pc.dim, pc.seed);
                Ok(Box::new(HashedProvider::new(spec, self.stopword_set()?)?))
            }
            ProviderKind::FileBacked => {
                let dir = pc.dir.as_ref().expect("validated");
                let docs = load_embedding_matrix(&dir.join("docs.f32"), &dir.join("docs.json"))?;
                let hazards =
                    load_embedding_matrix(&dir.join("hazard.f32"), &dir.join("hazard.json"))?;
                let ncfs = load_embedding_matrix(&dir.join("ncf.f32"), &dir.join("ncf.json"))?;
                for (what, m) in [("hazard", &hazards), ("ncf", &ncfs)] {
                    if m.provider().provider_id != docs.provider().provider_id {
                        return Err(Error::ProviderMismatch {
                            left: docs.provider().provider_id.clone(),
                            right: format!("{} ({what} sidecar)", m.provider().provider_id),
                        });
                    }
                    if m.dim() != docs.dim() {
                        return Err(Error::DimMismatch {
                            left: docs.dim(),
                            right: m.dim(),
                        });
                    }
                }
                // Definitions for both taxonomies live in one matrix.
                let mut ids = hazards.ids().to_vec();
                ids.extend(ncfs.ids().iter().cloned());
                let mut rows = Vec::new();
                for i in 0..hazards.len() {
                    rows.push(crate::embed::EmbeddingVector::new(hazards.row(i).to_vec()));
                }
                for i in 0..ncfs.len() {
                    rows.push(crate::embed::EmbeddingVector::new(ncfs.row(i).to_vec()));
                }
                let cats = crate::embed::EmbeddingMatrix::new(ids, rows, docs.provider().clone())?;
                Ok(Box::new(FileBackedProvider::new(docs, cats)?))
            }
        }
    }

    pub fn provider_ids(&self) -> Vec<String> {
        self.providers.iter().map(|p| p.id.clone()).collect()
    }
}
