//! The directional bipartite candidate graph between two feature sets:
//! inverse-distance similarity, top-K candidate edges in both directions,
//! and the initial per-edge features.

mod edges;
mod similarity;
mod topology;

pub use edges::{init_edge_features, select_topk, BipartiteEdgeSet, EdgeFeatureBlock};
pub use similarity::{pairwise_similarity, SimilarityMatrix, SIMILARITY_EPSILON};
pub use topology::{EdgeTopology, PairSlot};

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Per-point features of one cloud, one row per point.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    features: Tensor,
}

impl FeatureSet {
    pub fn new(features: Tensor) -> Result<Self> {
        if features.shape().len() != 2 || features.rows() == 0 {
            return Err(Error::Structure(format!(
                "feature set needs a non-empty N×D matrix, got {:?}",
                features.shape()
            )));
        }
        if !features.is_finite() {
            return Err(Error::NonFinite("feature set contains non-finite values".into()));
        }
        Ok(Self { features })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(Tensor::from_rows(rows))
    }

    pub fn point_count(&self) -> usize {
        self.features.rows()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.features
    }

    pub fn into_tensor(self) -> Tensor {
        self.features
    }
}
