use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};

pub const MIN_SHAPE_POINTS: usize = 8;
pub const CLUSTER_COUNT: usize = 4;
const CLUSTER_SIGMA: f64 = 0.15;
const TORUS_MAJOR: f64 = 1.0;
const TORUS_MINOR: f64 = 0.35;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ShapeKind {
    Sphere,
    CubeSurface,
    GaussianClusters,
    Torus,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 4] = [
        ShapeKind::Sphere,
        ShapeKind::CubeSurface,
        ShapeKind::GaussianClusters,
        ShapeKind::Torus,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ShapeKind::Sphere => "sphere",
            ShapeKind::CubeSurface => "cube-surface",
            ShapeKind::GaussianClusters => "gaussian-clusters",
            ShapeKind::Torus => "torus",
        }
    }
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ShapeKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown shape kind {s:?} (expected sphere, cube-surface, gaussian-clusters or torus)"
                ))
            })
    }
}

pub(crate) fn unit_vector<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    loop {
        let v: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if norm > 1e-6 {
            return v.map(|c| c / norm);
        }
    }
}

/// Points on the unit sphere in antipodal pairs, so the centroid sits at the
/// center and the largest extent is the diameter. An odd count replaces one
/// pair with an inscribed equilateral triangle through the center.
fn sphere<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<[f64; 3]> {
    let mut points = Vec::with_capacity(n);
    let pairs = if n % 2 == 0 { n / 2 } else { (n - 3) / 2 };
    for _ in 0..pairs {
        let u = unit_vector(rng);
        points.push(u);
        points.push(u.map(|c| -c));
    }
    if n % 2 == 1 {
        let u = unit_vector(rng);
        let mut w = unit_vector(rng);
        // Gram-Schmidt: w ⟂ u.
        let dot: f64 = (0..3).map(|i| u[i] * w[i]).sum();
        w = std::array::from_fn(|i| w[i] - dot * u[i]);
        let norm = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
        w = w.map(|c| c / norm);
        for step in 0..3 {
            let angle = 2.0 * std::f64::consts::PI * step as f64 / 3.0;
            points.push(std::array::from_fn(|i| angle.cos() * u[i] + angle.sin() * w[i]));
        }
    }
    points
}

fn cube_surface<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| {
            let face = rng.random_range(0..6);
            let axis = face / 2;
            let side = if face % 2 == 0 { -1.0 } else { 1.0 };
            let mut p: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..=1.0));
            p[axis] = side;
            p
        })
        .collect()
}

fn torus<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<[f64; 3]> {
    let tau = 2.0 * std::f64::consts::PI;
    (0..n)
        .map(|_| {
            let (u, v) = (rng.random_range(0.0..tau), rng.random_range(0.0..tau));
            let ring = TORUS_MAJOR + TORUS_MINOR * v.cos();
            [ring * u.cos(), ring * u.sin(), TORUS_MINOR * v.sin()]
        })
        .collect()
}

/// Four Gaussian blobs; point `i` belongs to cluster `i mod 4`. Returns the
/// normalized cloud and each point's cluster.
pub fn gen_gaussian_clusters(n: usize, seed: u64) -> Result<(PointCloud, Vec<usize>)> {
    check_count(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<[f64; 3]> = (0..CLUSTER_COUNT)
        .map(|_| std::array::from_fn(|_| rng.random_range(-1.0..=1.0)))
        .collect();
    let labels: Vec<usize> = (0..n).map(|i| i % CLUSTER_COUNT).collect();
    let points: Vec<[f64; 3]> = labels
        .iter()
        .map(|&c| {
            std::array::from_fn(|i| {
                let z: f64 = StandardNormal.sample(&mut rng);
                centers[c][i] + CLUSTER_SIGMA * z
            })
        })
        .collect();
    Ok((PointCloud::from_points(&points)?.normalized(), labels))
}

fn check_count(n: usize) -> Result<()> {
    if n < MIN_SHAPE_POINTS {
        return Err(Error::Config(format!(
            "shapes need at least {MIN_SHAPE_POINTS} points, got {n}"
        )));
    }
    Ok(())
}

/// Deterministic normalized cloud of `n` points for `(kind, n, seed)`.
pub fn gen_shape(kind: ShapeKind, n: usize, seed: u64) -> Result<PointCloud> {
    check_count(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = match kind {
        ShapeKind::Sphere => sphere(n, &mut rng),
        ShapeKind::CubeSurface => cube_surface(n, &mut rng),
        ShapeKind::Torus => torus(n, &mut rng),
        ShapeKind::GaussianClusters => return gen_gaussian_clusters(n, seed).map(|(c, _)| c),
    };
    Ok(PointCloud::from_points(&points)?.normalized())
}
