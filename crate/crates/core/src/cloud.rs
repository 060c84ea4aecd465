//! Point clouds and their normalization.

use crate::error::{Error, Result};
use crate::nn::tape::euclidean;
use crate::nn::Tensor;

/// `N×3` point positions.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    positions: Tensor,
}

impl PointCloud {
    pub fn new(positions: Tensor) -> Result<Self> {
        if positions.shape().len() != 2 || positions.cols() != 3 || positions.rows() == 0 {
            return Err(Error::Structure(format!(
                "point cloud needs a non-empty N×3 matrix, got {:?}",
                positions.shape()
            )));
        }
        if !positions.is_finite() {
            return Err(Error::NonFinite("point cloud contains non-finite coordinates".into()));
        }
        Ok(Self { positions })
    }

    pub fn from_points(points: &[[f64; 3]]) -> Result<Self> {
        let data = points.iter().flatten().copied().collect();
        Self::new(Tensor::new(&[points.len(), 3], data)?)
    }

    pub fn len(&self) -> usize {
        self.positions.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.rows() == 0
    }

    pub fn point(&self, i: usize) -> [f64; 3] {
        let r = self.positions.row(i);
        [r[0], r[1], r[2]]
    }

    pub fn positions(&self) -> &Tensor {
        &self.positions
    }

    /// Sums each axis in sorted order so that reordering the points cannot
    /// change the result, not even in the last bit.
    pub fn centroid(&self) -> [f64; 3] {
        std::array::from_fn(|axis| {
            let mut coords: Vec<f64> = (0..self.len()).map(|i| self.positions.get(i, axis)).collect();
            coords.sort_by(f64::total_cmp);
            coords.iter().sum::<f64>() / self.len() as f64
        })
    }

    /// Largest distance between any two points of the cloud.
    pub fn dist_max(&self) -> f64 {
        let mut best = 0.0f64;
        for i in 0..self.len() {
            for j in i + 1..self.len() {
                best = best.max(euclidean(self.positions.row(i), self.positions.row(j)));
            }
        }
        best
    }

    /// Translated to its centroid and scaled to unit maximum extent. A cloud
    /// whose points all coincide is only translated.
    pub fn normalized(&self) -> PointCloud {
        let c = self.centroid();
        let extent = self.dist_max();
        let scale = if extent > 0.0 { 1.0 / extent } else { 1.0 };
        let mut positions = self.positions.clone();
        for i in 0..self.len() {
            for (v, ci) in positions.row_mut(i).iter_mut().zip(c) {
                *v = (*v - ci) * scale;
            }
        }
        PointCloud { positions }
    }

    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            positions: self.positions.select_rows(indices),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_centers_and_scales() {
        let cloud = PointCloud::from_points(&[[1.0, 1.0, 1.0], [3.0, 1.0, 1.0], [2.0, 4.0, 1.0]]).unwrap();
        let n = cloud.normalized();
        let c = n.centroid();
        assert!(c.iter().all(|v| v.abs() < 1e-15));
        assert!((n.dist_max() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn centroid_ignores_point_order() {
        let pts: Vec<[f64; 3]> = (0..50).map(|i| [0.1 * i as f64, 1e-3 / (i + 1) as f64, (i as f64).sin()]).collect();
        let cloud = PointCloud::from_points(&pts).unwrap();
        let reversed: Vec<usize> = (0..50).rev().collect();
        let a = cloud.centroid();
        let b = cloud.select(&reversed).centroid();
        assert_eq!(a.map(f64::to_bits), b.map(f64::to_bits));
    }

    #[test]
    fn rejects_wrong_width() {
        assert!(PointCloud::new(Tensor::zeros(&[4, 2])).is_err());
    }
}
