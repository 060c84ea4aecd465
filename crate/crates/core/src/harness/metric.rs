use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::nn::tape::euclidean;

/// Fraction of A-points whose predicted B-point lies within
/// `radius_fraction · dist_max(A)` of the true one. At radius 0 only exact
/// index matches count; unmatched points (`None`) never count.
pub fn corr_metric(
    pred: &[Option<usize>],
    gt: &[usize],
    cloud_a: &PointCloud,
    cloud_b: &PointCloud,
    radius_fraction: f64,
) -> Result<f64> {
    Ok(corr_curve(pred, gt, cloud_a, cloud_b, &[radius_fraction])?[0])
}

/// [`corr_metric`] at several radii, sharing one `dist_max` computation.
pub fn corr_curve(
    pred: &[Option<usize>],
    gt: &[usize],
    cloud_a: &PointCloud,
    cloud_b: &PointCloud,
    radii: &[f64],
) -> Result<Vec<f64>> {
    if pred.len() != gt.len() || gt.len() != cloud_a.len() {
        return Err(Error::Structure(format!(
            "prediction length {}, ground truth length {}, cloud A has {} points",
            pred.len(),
            gt.len(),
            cloud_a.len()
        )));
    }
    if let Some(r) = radii.iter().find(|r| !(**r >= 0.0)) {
        return Err(Error::Config(format!("radius fraction {r} must be non-negative")));
    }
    if let Some(&m) = gt.iter().chain(pred.iter().flatten()).find(|&&m| m >= cloud_b.len()) {
        return Err(Error::Structure(format!("index {m} out of range for cloud B")));
    }
    let dist_max = cloud_a.dist_max();
    let errors: Vec<Option<f64>> = pred
        .iter()
        .zip(gt)
        .map(|(p, &g)| {
            p.map(|p| {
                if p == g {
                    0.0
                } else {
                    euclidean(cloud_b.positions().row(p), cloud_b.positions().row(g))
                }
            })
        })
        .collect();
    let n = gt.len() as f64;
    Ok(radii
        .iter()
        .map(|&r| {
            let hits = pred
                .iter()
                .zip(gt)
                .zip(&errors)
                .filter(|((p, g), e)| match e {
                    None => false,
                    Some(_) if r == 0.0 => **p == Some(**g),
                    Some(d) => *d <= r * dist_max,
                })
                .count();
            hits as f64 / n
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unmatched_points_never_count() {
        let a = PointCloud::from_points(&[[0.0; 3], [1.0, 0.0, 0.0]]).unwrap();
        let c = corr_curve(&[None, Some(1)], &[0, 1], &a, &a, &[0.0, 10.0]).unwrap();
        assert_eq!(c, vec![0.5, 0.5]);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let a = PointCloud::from_points(&[[0.0; 3], [1.0, 0.0, 0.0]]).unwrap();
        assert!(corr_metric(&[Some(0)], &[0, 1], &a, &a, 0.0).is_err());
    }
}
