//! Pluggable relevance scorers.
//!
//! A [`Scorer`] turns one query into a [`PreparedScorer`] that maps item
//! embeddings to scores. Preparation runs query-side work (normalization,
//! query-branch MLPs, feature resolution) exactly once; the prepared value is
//! then applied to many items inside a retrieval pass. All scorers are
//! inference-only; parameters arrive via the weights file format in
//! [`weights`].

pub mod kmeans;
pub mod mlp;
pub mod mol;
pub mod weights;

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix of f32.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    data: Vec<f32>,
    rows: usize,
    cols: usize,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::BadWeights {
                name: "<matrix>".into(),
                reason: format!("{rows}x{cols} matrix needs {} values, got {}", rows * cols, data.len()),
            });
        }
        Ok(Matrix { data, rows, cols })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { data: vec![0.0; rows * cols], rows, cols }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f32]) -> f32 {
    dot(a, a).sqrt()
}

/// Cosine similarity; zero-norm operands score 0 instead of NaN.
pub fn cosine(a: &[f32], b: &[f32]) -> f32 {
    let d = norm(a) * norm(b);
    if d == 0.0 {
        0.0
    } else {
        dot(a, b) / d
    }
}

/// Dot product of one query against `items_flat` viewed as rows of `dim`.
pub fn dot_scores(query: &[f32], items_flat: &[f32], dim: usize) -> Result<Vec<f32>> {
    if query.len() != dim || items_flat.len() % dim != 0 {
        return Err(Error::DimMismatch { expected: dim, got: query.len() });
    }
    Ok(items_flat.chunks_exact(dim).map(|row| dot(query, row)).collect())
}

/// Query-side inputs to a scorer: the retrieval embedding plus optional named
/// auxiliary embeddings consumed by multi-component scorers.
pub struct QueryVector<'a> {
    pub embedding: &'a [f32],
    pub features: &'a BTreeMap<String, Vec<f32>>,
}

/// Per-query state ready to score item embeddings.
pub trait PreparedScorer: Send + Sync {
    fn score(&self, item: &[f32]) -> f32;
}

pub trait Scorer: Send + Sync {
    fn name(&self) -> &'static str;
    /// Validates the query against this scorer's shapes and runs the
    /// query-side branch once.
    fn prepare<'a>(&'a self, q: &QueryVector<'_>) -> Result<Box<dyn PreparedScorer + 'a>>;
}

/// Plain inner product.
pub struct DotScorer;

struct PreparedDot {
    q: Vec<f32>,
}

impl PreparedScorer for PreparedDot {
    fn score(&self, item: &[f32]) -> f32 {
        dot(&self.q, item)
    }
}

impl Scorer for DotScorer {
    fn name(&self) -> &'static str {
        "dot"
    }

    fn prepare<'a>(&'a self, q: &QueryVector<'_>) -> Result<Box<dyn PreparedScorer + 'a>> {
        Ok(Box::new(PreparedDot { q: q.embedding.to_vec() }))
    }
}

/// Cosine similarity. The query is normalized once at prepare time.
pub struct CosineScorer;

struct PreparedCosine {
    q_unit: Vec<f32>,
}

impl PreparedScorer for PreparedCosine {
    fn score(&self, item: &[f32]) -> f32 {
        let n = norm(item);
        if n == 0.0 {
            0.0
        } else {
            dot(&self.q_unit, item) / n
        }
    }
}

impl Scorer for CosineScorer {
    fn name(&self) -> &'static str {
        "cosine"
    }

    fn prepare<'a>(&'a self, q: &QueryVector<'_>) -> Result<Box<dyn PreparedScorer + 'a>> {
        let n = norm(q.embedding);
        let q_unit = if n == 0.0 {
            vec![0.0; q.embedding.len()]
        } else {
            q.embedding.iter().map(|x| x / n).collect()
        };
        Ok(Box::new(PreparedCosine { q_unit }))
    }
}

/// Declarative scorer selection, loadable from service and bench configs.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScorerSpec {
    Dot,
    Cosine,
    HadamardMlp {
        weights: PathBuf,
    },
    Mol {
        weights: PathBuf,
        components: Vec<String>,
        /// Per-component similarity: cosine when true (default), dot otherwise.
        #[serde(default = "default_true")]
        cosine: bool,
    },
}

fn default_true() -> bool {
    true
}

impl ScorerSpec {
    /// Reads weights files as needed and builds the scorer.
    pub fn build(&self) -> Result<Box<dyn Scorer>> {
        match self {
            ScorerSpec::Dot => Ok(Box::new(DotScorer)),
            ScorerSpec::Cosine => Ok(Box::new(CosineScorer)),
            ScorerSpec::HadamardMlp { weights } => {
                let tensors = weights::read_weights(weights)?;
                Ok(Box::new(mlp::HadamardMlpScorer::new(mlp::HadamardMlp::from_weights(&tensors)?)))
            }
            ScorerSpec::Mol { weights, components, cosine } => {
                let tensors = weights::read_weights(weights)?;
                Ok(Box::new(mol::MolScorer::new(mol::MolModel::from_weights(
                    &tensors, components, *cosine,
                )?)))
            }
        }
    }
}
