//! Rule-based matchers: Sinkhorn normalization, nearest neighbor, and the
//! nearest-neighbor distance ratio test.

use crate::error::{Error, Result};
use crate::graph::{FeatureSet, SimilarityMatrix, SIMILARITY_EPSILON};
use crate::nn::tape::euclidean;
use crate::nn::Tensor;

pub const DEFAULT_TEMPERATURE: f64 = 0.1;
pub const DEFAULT_MAX_ITERS: usize = 100;
pub const DEFAULT_TOLERANCE: f64 = 1e-6;
pub const DEFAULT_NNDR_RATIO: f64 = 0.8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SinkhornConfig {
    pub temperature: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            max_iters: DEFAULT_MAX_ITERS,
            tol: DEFAULT_TOLERANCE,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SinkhornResult {
    pub values: Tensor,
    /// Column/row normalization rounds performed after the initial row
    /// normalization.
    pub iterations: usize,
    pub converged: bool,
    /// Largest marginal deviation after the initial step and after each round.
    pub deviations: Vec<f64>,
}

impl SinkhornResult {
    /// Whether marginal deviations never grew between rounds.
    pub fn deviations_monotone(&self) -> bool {
        self.deviations.windows(2).all(|w| w[1] <= w[0])
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn normalize_rows(log_p: &mut [f64], n: usize) {
    for row in log_p.chunks_mut(n) {
        let z = log_sum_exp(row.iter().copied());
        row.iter_mut().for_each(|v| *v -= z);
    }
}

fn normalize_cols(log_p: &mut [f64], n: usize) {
    for j in 0..n {
        let z = log_sum_exp((0..n).map(|i| log_p[i * n + j]));
        for i in 0..n {
            log_p[i * n + j] -= z;
        }
    }
}

fn marginal_deviation(p: &[f64], n: usize) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..n {
        let row: f64 = p[i * n..(i + 1) * n].iter().sum();
        let col: f64 = (0..n).map(|k| p[k * n + i]).sum();
        worst = worst.max((row - 1.0).abs()).max((col - 1.0).abs());
    }
    worst
}

/// Alternating column/row normalization of `exp(s / temperature)`, carried
/// out on logarithms so that low temperatures cannot overflow.
pub fn sinkhorn(s: &SimilarityMatrix, config: &SinkhornConfig) -> Result<SinkhornResult> {
    let n = s.rows();
    if s.cols() != n {
        return Err(Error::Contract(format!(
            "sinkhorn needs a square matrix, got {}×{}",
            s.rows(),
            s.cols()
        )));
    }
    if !(config.temperature > 0.0) {
        return Err(Error::Config(format!("temperature {} must be positive", config.temperature)));
    }
    let mut log_p: Vec<f64> = s.values().data().iter().map(|v| v / config.temperature).collect();
    normalize_rows(&mut log_p, n);

    let exp_all = |log_p: &[f64]| log_p.iter().map(|v| v.exp()).collect::<Vec<f64>>();
    let mut p = exp_all(&log_p);
    let mut deviations = vec![marginal_deviation(&p, n)];
    let mut iterations = 0;
    while deviations[iterations] >= config.tol && iterations < config.max_iters {
        normalize_cols(&mut log_p, n);
        normalize_rows(&mut log_p, n);
        p = exp_all(&log_p);
        iterations += 1;
        let dev = marginal_deviation(&p, n);
        if dev > deviations[iterations - 1] {
            log::debug!(
                "sinkhorn marginal deviation grew at round {iterations}: {} -> {dev}",
                deviations[iterations - 1]
            );
        }
        deviations.push(dev);
    }
    Ok(SinkhornResult {
        values: Tensor::new(&[n, n], p)?,
        iterations,
        converged: deviations[iterations] < config.tol,
        deviations,
    })
}

/// Index of the nearest row of `fb` for every row of `fa`, ties to the
/// lowest index.
pub fn nn_match(fa: &FeatureSet, fb: &FeatureSet) -> Result<Vec<usize>> {
    if fa.dim() != fb.dim() {
        return Err(Error::shape("nn_match", fa.tensor().shape(), fb.tensor().shape()));
    }
    Ok((0..fa.point_count())
        .map(|i| {
            let a = fa.row(i);
            let mut best = (0, f64::INFINITY);
            for j in 0..fb.point_count() {
                let d = euclidean(a, fb.row(j));
                if d < best.1 {
                    best = (j, d);
                }
            }
            best.0
        })
        .collect())
}

/// Nearest neighbor kept only when `(d₁ + ε) / (d₂ + ε) < ratio_threshold`.
pub fn nndr_match(fa: &FeatureSet, fb: &FeatureSet, ratio_threshold: f64) -> Result<Vec<Option<usize>>> {
    if fb.point_count() < 2 {
        return Err(Error::Contract("the ratio test needs at least two candidates in B".into()));
    }
    if !(ratio_threshold > 0.0 && ratio_threshold <= 1.0) {
        return Err(Error::Config(format!("ratio threshold {ratio_threshold} must lie in (0, 1]")));
    }
    if fa.dim() != fb.dim() {
        return Err(Error::shape("nndr_match", fa.tensor().shape(), fb.tensor().shape()));
    }
    Ok((0..fa.point_count())
        .map(|i| {
            let a = fa.row(i);
            let (mut first, mut second) = ((0, f64::INFINITY), f64::INFINITY);
            for j in 0..fb.point_count() {
                let d = euclidean(a, fb.row(j));
                if d < first.1 {
                    second = first.1;
                    first = (j, d);
                } else if d < second {
                    second = d;
                }
            }
            let ratio = (first.1 + SIMILARITY_EPSILON) / (second + SIMILARITY_EPSILON);
            (ratio < ratio_threshold).then_some(first.0)
        })
        .collect())
}

/// Row-wise argmax, ties to the lowest column.
pub fn row_argmax(values: &Tensor) -> Vec<usize> {
    (0..values.rows())
        .map(|i| {
            let row = values.row(i);
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn features(rows: &[Vec<f64>]) -> FeatureSet {
        FeatureSet::from_rows(rows).unwrap()
    }

    #[test]
    fn uniform_similarity_is_a_fixed_point() {
        let s = SimilarityMatrix::new(Tensor::filled(&[5, 5], 0.7)).unwrap();
        let r = sinkhorn(&s, &SinkhornConfig::default()).unwrap();
        assert_eq!(r.iterations, 0);
        for v in r.values.data() {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn dominant_entries_approach_the_permutation() {
        let perm = [2, 0, 3, 1];
        let mut values = Tensor::filled(&[4, 4], 0.1);
        for (i, &j) in perm.iter().enumerate() {
            values.set(i, j, 1.0);
        }
        let s = SimilarityMatrix::new(values).unwrap();
        let config = SinkhornConfig {
            temperature: 0.01,
            ..SinkhornConfig::default()
        };
        let r = sinkhorn(&s, &config).unwrap();
        for (i, &j) in perm.iter().enumerate() {
            assert!(r.values.get(i, j) > 1.0 - 1e-9);
        }
        assert_eq!(row_argmax(&r.values), perm.to_vec());
    }

    #[test]
    fn non_square_is_a_contract_error() {
        let s = SimilarityMatrix::new(Tensor::filled(&[2, 3], 1.0)).unwrap();
        assert!(matches!(sinkhorn(&s, &SinkhornConfig::default()), Err(Error::Contract(_))));
    }

    #[test]
    fn nn_identity_and_single_target() {
        let fa = features(&[vec![0.0, 1.0], vec![2.0, 0.0], vec![5.0, 5.0]]);
        assert_eq!(nn_match(&fa, &fa).unwrap(), vec![0, 1, 2]);
        let single = features(&[vec![9.0, 9.0]]);
        assert_eq!(nn_match(&fa, &single).unwrap(), vec![0, 0, 0]);
    }

    #[test]
    fn ratio_test_keeps_distinct_and_drops_ties() {
        let fa = features(&[vec![0.0]]);
        let clear = features(&[vec![10.0], vec![1.0]]);
        assert_eq!(nndr_match(&fa, &clear, 0.8).unwrap(), vec![Some(1)]);
        let tie = features(&[vec![1.0], vec![-1.0]]);
        assert_eq!(nndr_match(&fa, &tie, 0.8).unwrap(), vec![None]);
        assert!(matches!(nndr_match(&fa, &fa, 0.8), Err(Error::Contract(_))));
    }
}
