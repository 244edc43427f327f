//! Dense vector representations of documents and definitions.
//!
//! Two provider kinds: `file_backed` carries precomputed vectors from an
//! external encoder (raw little-endian f32 rows plus a JSON sidecar), and
//! `hashed` is a deterministic signed-random-projection of token counts that
//! works offline. All vectors are L2-normalized at the boundary; similarity
//! arithmetic runs in f64 regardless of the f32 storage.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, CategoryDefinition, Document, TokenList};
use crate::error::{Error, Result};
use crate::filter::ScoreMatrix;
use crate::rng::stable_hash64;

/// A single dense vector. Stored as f32 for interchange; zero vectors are
/// permitted as a representation of empty input but are invalid for
/// similarity.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f32>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Self {
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    /// L2 norm computed in f64.
    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|v| f64::from(*v) * f64::from(*v))
            .sum::<f64>()
            .sqrt()
    }

    /// Normalize to unit length; zero vectors stay zero.
    pub fn normalized(mut self) -> Self {
        let n = self.norm();
        if n > 0.0 {
            for v in &mut self.values {
                *v = (f64::from(*v) / n) as f32;
            }
        }
        self
    }
}

/// Where a provider's vectors come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    FileBacked,
    Hashed,
}

/// Identity and parameters of one embedding provider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderSpec {
    pub provider_id: String,
    pub kind: ProviderKind,
    pub dim: usize,
    /// Hash seed; meaningful for `Hashed` providers only.
    #[serde(default)]
    pub seed: u64,
}

impl ProviderSpec {
    pub fn hashed(provider_id: impl Into<String>, dim: usize, seed: u64) -> Self {
        Self {
            provider_id: provider_id.into(),
            kind: ProviderKind::Hashed,
            dim,
            seed,
        }
    }

    pub fn file_backed(provider_id: impl Into<String>, dim: usize) -> Self {
        Self {
            provider_id: provider_id.into(),
            kind: ProviderKind::FileBacked,
            dim,
            seed: 0,
        }
    }
}

/// Unit rows keyed by id, all sharing one provider and dimension.
#[derive(Debug, Clone)]
pub struct EmbeddingMatrix {
    ids: Vec<String>,
    data: Vec<f32>,
    dim: usize,
    provider: ProviderSpec,
    index: HashMap<String, usize>,
}

impl EmbeddingMatrix {
    pub fn new(
        ids: Vec<String>,
        rows: Vec<EmbeddingVector>,
        provider: ProviderSpec,
    ) -> Result<Self> {
        if ids.len() != rows.len() {
            return Err(Error::DimMismatch {
                left: ids.len(),
                right: rows.len(),
            });
        }
        let dim = provider.dim;
        let mut data = Vec::with_capacity(ids.len() * dim);
        for row in &rows {
            if row.dim() != dim {
                return Err(Error::DimMismatch {
                    left: row.dim(),
                    right: dim,
                });
            }
            data.extend_from_slice(row.values());
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::DuplicateId { doc_id: id.clone() });
            }
        }
        Ok(Self {
            ids,
            data,
            dim,
            provider,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn provider(&self) -> &ProviderSpec {
        &self.provider
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_by_id(&self, id: &str) -> Option<&[f32]> {
        self.index.get(id).map(|&i| self.row(i))
    }

    /// Rows for the requested ids, in the requested order.
    pub fn select(&self, ids: &[String]) -> Result<EmbeddingMatrix> {
        let mut rows = Vec::with_capacity(ids.len());
        for id in ids {
            let row = self.row_by_id(id).ok_or_else(|| Error::MissingProvider {
                provider_id: self.provider.provider_id.clone(),
                reason: format!("no embedding for id {id:?}"),
            })?;
            rows.push(EmbeddingVector::new(row.to_vec()));
        }
        EmbeddingMatrix::new(ids.to_vec(), rows, self.provider.clone())
    }
}

/// Cosine similarity CS = x·y / (‖x‖‖y‖), accumulated in f64.
///
/// Zero-norm input is an explicit error rather than a silent 0: an empty
/// abstract must not slip through the similarity-threshold filter unnoticed.
pub fn cosine_similarity(x: &EmbeddingVector, y: &EmbeddingVector) -> Result<f64> {
    if x.dim() != y.dim() {
        return Err(Error::DimMismatch {
            left: x.dim(),
            right: y.dim(),
        });
    }
    cosine_slices(x.values(), y.values())
}

fn cosine_slices(x: &[f32], y: &[f32]) -> Result<f64> {
    let mut dot = 0.0f64;
    let mut nx = 0.0f64;
    let mut ny = 0.0f64;
    for (a, b) in x.iter().zip(y.iter()) {
        let (a, b) = (f64::from(*a), f64::from(*b));
        dot += a * b;
        nx += a * a;
        ny += b * b;
    }
    if nx == 0.0 || ny == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(dot / (nx.sqrt() * ny.sqrt()))
}

/// Signed random projection of token counts: each token hashes to a bucket
/// in [0, dim) and a sign in {-1, +1}; counts accumulate and the result is
/// L2-normalized. Deterministic in (tokens, seed, dim). An empty token list
/// yields the zero vector, which is invalid for similarity.
pub fn hash_embed(tokens: &TokenList, spec: &ProviderSpec) -> Result<EmbeddingVector> {
    if spec.kind != ProviderKind::Hashed {
        return Err(Error::InvalidConfig {
            reason: format!(
                "hash_embed requires a hashed provider, got {:?}",
                spec.provider_id
            ),
        });
    }
    let mut acc = vec![0.0f64; spec.dim];
    for token in &tokens.0 {
        let h = stable_hash64(spec.seed, token.as_bytes());
        let idx = (h % spec.dim as u64) as usize;
        let sign = if (h >> 63) & 1 == 1 { 1.0 } else { -1.0 };
        acc[idx] += sign;
    }
    let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    let values = if norm > 0.0 {
        acc.iter().map(|v| (v / norm) as f32).collect()
    } else {
        vec![0.0f32; spec.dim]
    };
    Ok(EmbeddingVector::new(values))
}

/// Sidecar schema for the raw f32 binary format.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sidecar {
    pub dim: usize,
    pub count: usize,
    pub dtype: String,
    pub provider: String,
    pub ids: Vec<String>,
}

/// Load a `count x dim` little-endian f32 row-major binary plus its JSON
/// sidecar. Every row is L2-normalized on load.
pub fn load_embedding_matrix(binary_path: &Path, sidecar_path: &Path) -> Result<EmbeddingMatrix> {
    let sidecar_text = fs::read_to_string(sidecar_path).map_err(|e| Error::io(sidecar_path, e))?;
    let sidecar: Sidecar =
        serde_json::from_str(&sidecar_text).map_err(|e| Error::json(sidecar_path, e))?;
    if sidecar.dtype != "f32le" {
        return Err(Error::SidecarMismatch {
            path: sidecar_path.to_path_buf(),
            reason: format!("unsupported dtype {:?}", sidecar.dtype),
        });
    }
    if sidecar.ids.len() != sidecar.count {
        return Err(Error::SidecarMismatch {
            path: sidecar_path.to_path_buf(),
            reason: format!(
                "count {} does not match {} ids",
                sidecar.count,
                sidecar.ids.len()
            ),
        });
    }

    let bytes = fs::read(binary_path).map_err(|e| Error::io(binary_path, e))?;
    let expected = (sidecar.count * sidecar.dim * 4) as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::LengthMismatch {
            path: binary_path.to_path_buf(),
            expected,
            found: bytes.len() as u64,
        });
    }

    let mut rows = Vec::with_capacity(sidecar.count);
    for r in 0..sidecar.count {
        let mut values = Vec::with_capacity(sidecar.dim);
        for c in 0..sidecar.dim {
            let off = (r * sidecar.dim + c) * 4;
            let v = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    path: binary_path.to_path_buf(),
                    row: r,
                });
            }
            values.push(v);
        }
        rows.push(EmbeddingVector::new(values).normalized());
    }

    let provider = ProviderSpec::file_backed(sidecar.provider, sidecar.dim);
    EmbeddingMatrix::new(sidecar.ids, rows, provider)
}

/// Write the binary + sidecar pair read back by [`load_embedding_matrix`].
pub fn save_embedding_matrix(
    matrix: &EmbeddingMatrix,
    binary_path: &Path,
    sidecar_path: &Path,
) -> Result<()> {
    let mut bytes = Vec::with_capacity(matrix.len() * matrix.dim() * 4);
    for i in 0..matrix.len() {
        for v in matrix.row(i) {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(binary_path, bytes).map_err(|e| Error::io(binary_path, e))?;
    let sidecar = Sidecar {
        dim: matrix.dim(),
        count: matrix.len(),
        dtype: "f32le".into(),
        provider: matrix.provider().provider_id.clone(),
        ids: matrix.ids().to_vec(),
    };
    let text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    fs::write(sidecar_path, text).map_err(|e| Error::io(sidecar_path, e))
}

/// Pairwise cosine similarity of every document row against every
/// definition row. Both sides must share provider and dimension.
pub fn score_against_categories(
    docs: &EmbeddingMatrix,
    defs: &EmbeddingMatrix,
) -> Result<ScoreMatrix> {
    if docs.provider().provider_id != defs.provider().provider_id {
        return Err(Error::ProviderMismatch {
            left: docs.provider().provider_id.clone(),
            right: defs.provider().provider_id.clone(),
        });
    }
    if docs.dim() != defs.dim() {
        return Err(Error::DimMismatch {
            left: docs.dim(),
            right: defs.dim(),
        });
    }
    let mut scores = Vec::with_capacity(docs.len() * defs.len());
    for i in 0..docs.len() {
        for k in 0..defs.len() {
            scores.push(cosine_slices(docs.row(i), defs.row(k))?);
        }
    }
    ScoreMatrix::new(
        docs.ids().to_vec(),
        defs.ids().to_vec(),
        scores,
        docs.provider().provider_id.clone(),
    )
}

/// A source of document and definition embeddings for one provider.
pub trait EmbeddingProvider: Send + Sync {
    fn spec(&self) -> &ProviderSpec;

    /// Unit vectors for the given documents, row order following `docs`.
    fn embed_documents(&self, docs: &[&Document]) -> Result<EmbeddingMatrix>;

    /// Unit vectors for the given category definitions, row order following `cats`.
    fn embed_categories(&self, cats: &[&CategoryDefinition]) -> Result<EmbeddingMatrix>;
}

/// Deterministic offline provider: tokenization plus signed random
/// projection. Not a semantic-equivalence claim to any pretrained encoder;
/// it preserves lexical-overlap structure for end-to-end runs and tests.
pub struct HashedProvider {
    spec: ProviderSpec,
    stopwords: std::collections::HashSet<String>,
}

impl HashedProvider {
    pub fn new(spec: ProviderSpec, stopwords: std::collections::HashSet<String>) -> Result<Self> {
        if spec.kind != ProviderKind::Hashed {
            return Err(Error::InvalidConfig {
                reason: format!("provider {:?} is not hashed", spec.provider_id),
            });
        }
        if spec.dim == 0 {
            return Err(Error::InvalidConfig {
                reason: "provider dim must be positive".into(),
            });
        }
        Ok(Self { spec, stopwords })
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector> {
        hash_embed(&tokenize(text, &self.stopwords), &self.spec)
    }
}

impl EmbeddingProvider for HashedProvider {
    fn spec(&self) -> &ProviderSpec {
        &self.spec
    }

    fn embed_documents(&self, docs: &[&Document]) -> Result<EmbeddingMatrix> {
        let ids = docs.iter().map(|d| d.doc_id.clone()).collect();
        let rows = docs
            .iter()
            .map(|d| self.embed_text(&d.abstract_text))
            .collect::<Result<Vec<_>>>()?;
        EmbeddingMatrix::new(ids, rows, self.spec.clone())
    }

    fn embed_categories(&self, cats: &[&CategoryDefinition]) -> Result<EmbeddingMatrix> {
        let ids = cats.iter().map(|c| c.cat_id.clone()).collect();
        let rows = cats
            .iter()
            .map(|c| self.embed_text(&c.definition))
            .collect::<Result<Vec<_>>>()?;
        EmbeddingMatrix::new(ids, rows, self.spec.clone())
    }
}

/// Provider backed by precomputed matrices loaded from disk.
pub struct FileBackedProvider {
    spec: ProviderSpec,
    documents: EmbeddingMatrix,
    categories: EmbeddingMatrix,
}

impl FileBackedProvider {
    pub fn new(documents: EmbeddingMatrix, categories: EmbeddingMatrix) -> Result<Self> {
        if documents.provider().provider_id != categories.provider().provider_id {
            return Err(Error::ProviderMismatch {
                left: documents.provider().provider_id.clone(),
                right: categories.provider().provider_id.clone(),
            });
        }
        if documents.dim() != categories.dim() {
            return Err(Error::DimMismatch {
                left: documents.dim(),
                right: categories.dim(),
            });
        }
        let spec = documents.provider().clone();
        Ok(Self {
            spec,
            documents,
            categories,
        })
    }
}

impl EmbeddingProvider for FileBackedProvider {
    fn spec(&self) -> &ProviderSpec {
        &self.spec
    }

    fn embed_documents(&self, docs: &[&Document]) -> Result<EmbeddingMatrix> {
        let ids: Vec<String> = docs.iter().map(|d| d.doc_id.clone()).collect();
        self.documents.select(&ids)
    }

    fn embed_categories(&self, cats: &[&CategoryDefinition]) -> Result<EmbeddingMatrix> {
        let ids: Vec<String> = cats.iter().map(|c| c.cat_id.clone()).collect();
        self.categories.select(&ids)
    }
}
