//! Residual-quantization k-means tokenizer: item embeddings to hierarchical semantic IDs.
//!
//! Each level clusters the residuals left by the previous levels; an item's semantic ID is the
//! tuple of nearest-centroid indices along that residual chain. Centroids are stored as `f32`
//! and all distance arithmetic runs in `f64`, so a codebook read back from disk encodes exactly
//! like the one that was fitted.

mod io;
mod kmeans;
mod trie;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{GenRecError, Result};
use crate::rng;

pub use io::{read_catalog_sids, read_codebook, write_catalog_sids, write_codebook};
pub use trie::SidTrie;

pub type ItemId = u32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemEmbedding {
    pub item_id: ItemId,
    pub vector: Vec<f64>,
}

/// Per-level code tuple `(s¹, …, s^L)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SemanticId(pub Vec<u32>);

impl SemanticId {
    pub fn new(codes: impl Into<Vec<u32>>) -> Self {
        SemanticId(codes.into())
    }

    pub fn codes(&self) -> &[u32] {
        &self.0
    }

    pub fn levels(&self) -> usize {
        self.0.len()
    }
}

impl fmt::Display for SemanticId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

impl std::str::FromStr for SemanticId {
    type Err = GenRecError;

    fn from_str(s: &str) -> Result<Self> {
        s.split(',')
            .map(|c| {
                c.trim()
                    .parse::<u32>()
                    .map_err(|e| GenRecError::Format(format!("bad SID code `{c}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()
            .map(SemanticId)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RqKmeansConfig {
    pub level_sizes: Vec<usize>,
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
    /// Pins code 0 of every level after the first to the zero vector, so adding a level never
    /// increases any item's reconstruction error.
    #[serde(default = "yes")]
    pub zero_codeword: bool,
}

fn yes() -> bool {
    true
}

impl Default for RqKmeansConfig {
    fn default() -> Self {
        Self {
            level_sizes: vec![64, 64, 64],
            max_iters: 100,
            tol: 1e-6,
            seed: 0,
            zero_codeword: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMeta {
    pub seed: u64,
    /// Lloyd iterations run per level.
    pub iterations: Vec<usize>,
    /// Sum of squared distances to the assigned centroid, per level.
    pub inertia: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

/// Hierarchical centroid tables, one `K_ℓ × d` row-major matrix per level.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    dim: usize,
    level_sizes: Vec<usize>,
    centroids: Vec<Vec<f32>>,
    pub fit_meta: FitMeta,
}

impl Codebook {
    /// Builds a codebook from explicit centroid tables.
    pub fn from_centroids(dim: usize, centroids: Vec<Vec<f32>>, fit_meta: FitMeta) -> Result<Self> {
        if dim == 0 || centroids.is_empty() {
            return Err(GenRecError::InvalidConfig("codebook needs d ≥ 1 and L ≥ 1".into()));
        }
        let mut level_sizes = Vec::with_capacity(centroids.len());
        for (level, table) in centroids.iter().enumerate() {
            if table.is_empty() || table.len() % dim != 0 {
                return Err(GenRecError::InvalidConfig(format!(
                    "level {level} table has {} values, not a positive multiple of d = {dim}",
                    table.len()
                )));
            }
            if table.iter().any(|v| !v.is_finite()) {
                return Err(GenRecError::InvalidConfig(format!("level {level} has a non-finite centroid")));
            }
            level_sizes.push(table.len() / dim);
        }
        Ok(Self {
            dim,
            level_sizes,
            centroids,
            fit_meta,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn levels(&self) -> usize {
        self.level_sizes.len()
    }

    pub fn level_sizes(&self) -> &[usize] {
        &self.level_sizes
    }

    pub fn centroid(&self, level: usize, code: usize) -> &[f32] {
        &self.centroids[level][code * self.dim..(code + 1) * self.dim]
    }

    pub fn level_table(&self, level: usize) -> &[f32] {
        &self.centroids[level]
    }

    pub fn validate(&self, sid: &SemanticId) -> Result<()> {
        if sid.levels() != self.levels() {
            return Err(GenRecError::DimensionMismatch {
                expected: self.levels(),
                got: sid.levels(),
            });
        }
        for (level, (&code, &size)) in sid.codes().iter().zip(&self.level_sizes).enumerate() {
            if code as usize >= size {
                return Err(GenRecError::InvalidCode { level, code, size });
            }
        }
        Ok(())
    }

    pub fn is_valid(&self, sid: &SemanticId) -> bool {
        self.validate(sid).is_ok()
    }

    fn level_f64(&self, level: usize) -> Vec<f64> {
        self.centroids[level].iter().map(|&c| c as f64).collect()
    }

    /// Encodes and also returns the final residual, `x − Σ_ℓ centroid(ℓ, s^ℓ)`.
    pub fn encode_with_residual(&self, vector: &[f64]) -> Result<(SemanticId, Vec<f64>)> {
        if vector.len() != self.dim {
            return Err(GenRecError::DimensionMismatch {
                expected: self.dim,
                got: vector.len(),
            });
        }
        let mut residual = vector.to_vec();
        let mut codes = Vec::with_capacity(self.levels());
        for level in 0..self.levels() {
            let table = self.level_f64(level);
            let (code, _) = kmeans::nearest(&table, self.dim, &residual);
            for (r, c) in residual.iter_mut().zip(&table[code * self.dim..(code + 1) * self.dim]) {
                *r -= c;
            }
            codes.push(code as u32);
        }
        Ok((SemanticId(codes), residual))
    }

    pub fn encode(&self, embedding: &ItemEmbedding) -> Result<SemanticId> {
        self.encode_with_residual(&embedding.vector).map(|(sid, _)| sid)
    }

    /// `Σ_ℓ centroid(ℓ, s^ℓ)` over all levels.
    pub fn reconstruct(&self, sid: &SemanticId) -> Result<Vec<f64>> {
        self.reconstruct_levels(sid, self.levels())
    }

    /// Partial reconstruction from the first `levels` codes only.
    pub fn reconstruct_levels(&self, sid: &SemanticId, levels: usize) -> Result<Vec<f64>> {
        self.validate(sid)?;
        let mut out = vec![0.0f64; self.dim];
        for (level, &code) in sid.codes().iter().enumerate().take(levels) {
            for (o, c) in out.iter_mut().zip(self.centroid(level, code as usize)) {
                *o += *c as f64;
            }
        }
        Ok(out)
    }

    /// Per-level histogram of code usage over a set of SIDs.
    pub fn code_histograms<'a>(&self, sids: impl IntoIterator<Item = &'a SemanticId>) -> Vec<Vec<usize>> {
        let mut hist: Vec<Vec<usize>> = self.level_sizes.iter().map(|&k| vec![0; k]).collect();
        for sid in sids {
            for (level, &code) in sid.codes().iter().enumerate() {
                if let Some(slot) = hist.get_mut(level).and_then(|h| h.get_mut(code as usize)) {
                    *slot += 1;
                }
            }
        }
        hist
    }
}

/// Fits residual k-means codebooks level by level.
pub fn fit_rq_kmeans(embeddings: &[ItemEmbedding], config: &RqKmeansConfig) -> Result<Codebook> {
    let first = embeddings.first().ok_or(GenRecError::EmptyCatalog)?;
    let dim = first.vector.len();
    if dim == 0 {
        return Err(GenRecError::InvalidEmbedding("zero-dimensional embedding".into()));
    }
    if config.level_sizes.is_empty() {
        return Err(GenRecError::InvalidConfig("level_sizes must not be empty".into()));
    }
    let n = embeddings.len();
    for (level, &k) in config.level_sizes.iter().enumerate() {
        if k == 0 {
            return Err(GenRecError::InvalidConfig(format!("level {level} has zero centroids")));
        }
        if k > n {
            return Err(GenRecError::InsufficientItems { level, k, n });
        }
    }
    let mut residuals = Vec::with_capacity(n * dim);
    for e in embeddings {
        if e.vector.len() != dim {
            return Err(GenRecError::DimensionMismatch {
                expected: dim,
                got: e.vector.len(),
            });
        }
        if let Some(bad) = e.vector.iter().find(|v| !v.is_finite()) {
            return Err(GenRecError::InvalidEmbedding(format!(
                "item {} has non-finite component {bad}",
                e.item_id
            )));
        }
        residuals.extend_from_slice(&e.vector);
    }

    let mut tables = Vec::with_capacity(config.level_sizes.len());
    let mut meta = FitMeta {
        seed: config.seed,
        iterations: Vec::new(),
        inertia: Vec::new(),
        config_hash: None,
    };
    for (level, &k) in config.level_sizes.iter().enumerate() {
        let mut level_rng = rng::stream(config.seed, &["rq-kmeans", &level.to_string()]);
        let fit = kmeans::lloyd(
            &residuals,
            dim,
            k,
            config.max_iters,
            config.tol,
            config.zero_codeword && level > 0,
            &mut level_rng,
        );
        let table: Vec<f32> = fit.centroids.iter().map(|&c| c as f32).collect();
        // residual update uses the stored f32 centroids so fit and encode agree exactly
        let stored: Vec<f64> = table.iter().map(|&c| c as f64).collect();
        let mut inertia = 0.0;
        for r in residuals.chunks_exact_mut(dim) {
            let (code, d) = kmeans::nearest(&stored, dim, r);
            inertia += d;
            for (x, c) in r.iter_mut().zip(&stored[code * dim..(code + 1) * dim]) {
                *x -= c;
            }
        }
        meta.iterations.push(fit.iterations);
        meta.inertia.push(inertia);
        tables.push(table);
    }
    Codebook::from_centroids(dim, tables, meta)
}

/// Encodes every item, pairing ids with their semantic IDs.
pub fn encode_catalog(codebook: &Codebook, embeddings: &[ItemEmbedding]) -> Result<Vec<(ItemId, SemanticId)>> {
    embeddings
        .iter()
        .map(|e| Ok((e.item_id, codebook.encode(e)?)))
        .collect()
}

pub fn build_trie(codebook: &Codebook, catalog_sids: &[(ItemId, SemanticId)]) -> Result<SidTrie> {
    for (_, sid) in catalog_sids {
        codebook.validate(sid)?;
    }
    Ok(SidTrie::from_pairs(codebook.levels(), catalog_sids.iter().cloned()))
}
