use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::nn::tape::euclidean;

/// Furthest point sampling: starts at point 0, then repeatedly adds the point
/// farthest from everything chosen so far (ties to the lower index).
pub fn furthest_point_sampling(cloud: &PointCloud, count: usize) -> Result<Vec<usize>> {
    if count == 0 || count > cloud.len() {
        return Err(Error::Config(format!(
            "cannot sample {count} of {} points",
            cloud.len()
        )));
    }
    let p = cloud.positions();
    let mut chosen = Vec::with_capacity(count);
    let mut nearest = vec![f64::INFINITY; cloud.len()];
    let mut next = 0;
    for _ in 0..count {
        chosen.push(next);
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(euclidean(p.row(i), p.row(next)));
        }
        let mut best = 0;
        for (i, &d) in nearest.iter().enumerate() {
            if d > nearest[best] {
                best = i;
            }
        }
        next = best;
    }
    Ok(chosen)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn picks_the_extremes_of_a_line() {
        let pts: Vec<[f64; 3]> = (0..5).map(|i| [i as f64, 0.0, 0.0]).collect();
        let cloud = PointCloud::from_points(&pts).unwrap();
        assert_eq!(furthest_point_sampling(&cloud, 3).unwrap(), vec![0, 4, 2]);
    }
}
