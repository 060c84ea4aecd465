use super::FeatureSet;
use crate::error::{Error, Result};
use crate::nn::tape::euclidean;
use crate::nn::Tensor;

/// Added to every feature distance before inversion so that coincident
/// features give a large finite similarity instead of infinity.
pub const SIMILARITY_EPSILON: f64 = 1e-8;

/// `N×M` inverse-distance similarities between the points of A and B.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    values: Tensor,
}

impl SimilarityMatrix {
    pub fn new(values: Tensor) -> Result<Self> {
        if values.shape().len() != 2 {
            return Err(Error::Structure("similarity must be a matrix".into()));
        }
        if values.data().iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Contract("similarities must be finite and strictly positive".into()));
        }
        Ok(Self { values })
    }

    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn cols(&self) -> usize {
        self.values.cols()
    }

    pub fn get(&self, n: usize, m: usize) -> f64 {
        self.values.get(n, m)
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    /// Similarities seen from B. Bit-identical to recomputing them with the
    /// roles of A and B exchanged, since `‖a − b‖ = ‖b − a‖` exactly.
    pub fn transpose(&self) -> SimilarityMatrix {
        SimilarityMatrix {
            values: self.values.transpose(),
        }
    }
}

/// `s[n][m] = 1 / (‖fa_n − fb_m‖₂ + ε)`.
pub fn pairwise_similarity(fa: &FeatureSet, fb: &FeatureSet) -> Result<SimilarityMatrix> {
    if fa.dim() != fb.dim() {
        return Err(Error::shape("pairwise_similarity", fa.tensor().shape(), fb.tensor().shape()));
    }
    let (n, m) = (fa.point_count(), fb.point_count());
    let mut values = Vec::with_capacity(n * m);
    for i in 0..n {
        let a = fa.row(i);
        values.extend((0..m).map(|j| 1.0 / (euclidean(a, fb.row(j)) + SIMILARITY_EPSILON)));
    }
    SimilarityMatrix::new(Tensor::new(&[n, m], values)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_four_five() {
        let fa = FeatureSet::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let fb = FeatureSet::from_rows(&[vec![3.0, 4.0]]).unwrap();
        let s = pairwise_similarity(&fa, &fb).unwrap();
        assert_eq!(s.get(0, 0), 1.0 / (5.0 + 1e-8));
    }

    #[test]
    fn identical_rows_hit_the_epsilon_floor() {
        let fa = FeatureSet::from_rows(&[vec![0.3, -1.0]]).unwrap();
        let s = pairwise_similarity(&fa, &fa).unwrap();
        assert_eq!(s.get(0, 0), 1.0 / SIMILARITY_EPSILON);
        assert!(s.get(0, 0).is_finite());
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let fa = FeatureSet::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let fb = FeatureSet::from_rows(&[vec![0.0, 0.0, 1.0]]).unwrap();
        assert!(matches!(pairwise_similarity(&fa, &fb), Err(Error::Shape { .. })));
    }
}
