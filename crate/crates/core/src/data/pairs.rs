use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::shapes::unit_vector;
use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Gaussian kernel width of the deformation field, in normalized units.
pub const DEFORM_KERNEL_WIDTH: f64 = 0.25;
const TRANSLATION_RANGE: f64 = 1.0;

/// One radial kernel of a deformation field:
/// `x ↦ amplitude · direction · exp(−‖x − center‖² / (2·width²))`.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformKernel {
    pub center: [f64; 3],
    pub direction: [f64; 3],
    pub amplitude: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeformMeta {
    pub width: f64,
    pub kernels: Vec<DeformKernel>,
}

impl DeformMeta {
    pub fn displacement(&self, x: [f64; 3]) -> [f64; 3] {
        let mut d = [0.0; 3];
        for k in &self.kernels {
            let r2: f64 = (0..3).map(|i| (x[i] - k.center[i]).powi(2)).sum();
            let w = k.amplitude * (-r2 / (2.0 * self.width * self.width)).exp();
            for i in 0..3 {
                d[i] += w * k.direction[i];
            }
        }
        d
    }
}

/// Two clouds with known correspondence: B point `gt[n]` is the image of A
/// point `n`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairSample {
    pub cloud_a: PointCloud,
    pub cloud_b: PointCloud,
    pub gt: Vec<usize>,
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub noise_sigma: f64,
    pub deform: Option<DeformMeta>,
}

impl PairSample {
    /// Checks the structural invariants: equal sizes, bijective `gt`,
    /// orthonormal rotation with determinant 1.
    pub fn validate(&self) -> Result<()> {
        let n = self.cloud_a.len();
        if self.cloud_b.len() != n || self.gt.len() != n {
            return Err(Error::Structure(format!(
                "pair has N = {n}, M = {}, gt length {}",
                self.cloud_b.len(),
                self.gt.len()
            )));
        }
        let mut seen = vec![false; n];
        for &m in &self.gt {
            if m >= n || seen[m] {
                return Err(Error::Structure("gt is not a permutation".into()));
            }
            seen[m] = true;
        }
        let r = &self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                if (dot - expected).abs() > 1e-9 {
                    return Err(Error::Structure("rotation is not orthonormal".into()));
                }
            }
        }
        if (determinant(r) - 1.0).abs() > 1e-9 {
            return Err(Error::Structure("rotation has determinant ≠ 1".into()));
        }
        Ok(())
    }
}

pub(crate) fn determinant(r: &[[f64; 3]; 3]) -> f64 {
    r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
        + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0])
}

/// Rotation matrix of a uniformly random unit quaternion.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> [[f64; 3]; 3] {
    let q: [f64; 4] = loop {
        let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-6 {
            break q.map(|v| v / norm);
        }
    };
    let [w, x, y, z] = q;
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

pub fn random_permutation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

fn rotate(r: &[[f64; 3]; 3], p: [f64; 3]) -> [f64; 3] {
    std::array::from_fn(|i| r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2])
}

/// `B[gt[n]] = R·a_n + t + noise`, with per-coordinate Gaussian noise of
/// standard deviation `noise_sigma` drawn from `rng`.
pub fn apply_rigid<R: Rng + ?Sized>(
    cloud: &PointCloud,
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
    gt: Vec<usize>,
    noise_sigma: f64,
    rng: &mut R,
) -> Result<PairSample> {
    if !(noise_sigma >= 0.0) {
        return Err(Error::Config(format!("noise sigma {noise_sigma} must be non-negative")));
    }
    let noise = Normal::new(0.0, noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let n = cloud.len();
    let mut b = vec![[0.0; 3]; n];
    for (i, &target) in gt.iter().enumerate() {
        let moved = rotate(&rotation, cloud.point(i));
        b[target] = std::array::from_fn(|k| {
            let jitter = if noise_sigma > 0.0 { noise.sample(rng) } else { 0.0 };
            moved[k] + translation[k] + jitter
        });
    }
    let sample = PairSample {
        cloud_a: cloud.clone(),
        cloud_b: PointCloud::from_points(&b)?,
        gt,
        rotation,
        translation,
        noise_sigma,
        deform: None,
    };
    sample.validate()?;
    Ok(sample)
}

/// Randomly rotated, translated, permuted and optionally noisy copy of
/// `cloud`.
pub fn make_rigid_pair(cloud: &PointCloud, seed: u64, noise_sigma: f64) -> Result<PairSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gt = random_permutation(cloud.len(), &mut rng);
    let rotation = random_rotation(&mut rng);
    let translation = std::array::from_fn(|_| rng.random_range(-TRANSLATION_RANGE..=TRANSLATION_RANGE));
    apply_rigid(cloud, rotation, translation, gt, noise_sigma, &mut rng)
}

/// Smoothly deformed and permuted copy of `cloud`: a sum of `num_kernels`
/// Gaussian radial displacements, each with amplitude at most `magnitude`.
/// Uses the same permutation as [`make_rigid_pair`] for the same seed.
pub fn make_deformed_pair(cloud: &PointCloud, seed: u64, num_kernels: usize, magnitude: f64) -> Result<PairSample> {
    if !(magnitude >= 0.0) {
        return Err(Error::Config(format!("deformation magnitude {magnitude} must be non-negative")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gt = random_permutation(cloud.len(), &mut rng);
    let kernels = (0..num_kernels)
        .map(|_| DeformKernel {
            center: cloud.point(rng.random_range(0..cloud.len())),
            direction: unit_vector(&mut rng),
            amplitude: rng.random_range(0.0..=1.0) * magnitude,
        })
        .collect();
    let meta = DeformMeta {
        width: DEFORM_KERNEL_WIDTH,
        kernels,
    };
    let mut data = Vec::with_capacity(cloud.len() * 3);
    for i in 0..cloud.len() {
        let p = cloud.point(i);
        let d = meta.displacement(p);
        data.extend((0..3).map(|k| p[k] + d[k]));
    }
    let deformed = PointCloud::new(Tensor::new(&[cloud.len(), 3], data)?)?;
    let identity = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let mut sample = apply_rigid(&deformed, identity, [0.0; 3], gt, 0.0, &mut rng)?;
    sample.cloud_a = cloud.clone();
    sample.deform = Some(meta);
    Ok(sample)
}
