use esfw::cloud::PointCloud;
use esfw::data::{
    apply_rigid, gen_gaussian_clusters, gen_shape, generate_dataset, make_deformed_pair, make_rigid_pair, read_pair,
    write_pair, DatasetManifest, GenParams, PairMode, ShapeKind, Split, CLUSTER_COUNT,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>().sqrt()
}

#[test]
fn sphere_points_sit_at_half_extent() {
    let cloud = gen_shape(ShapeKind::Sphere, 100, 3).unwrap();
    let c = cloud.centroid();
    for i in 0..cloud.len() {
        assert!((dist(cloud.point(i), c) - 0.5).abs() < 1e-9);
    }
}

#[test]
fn every_shape_is_deterministic_and_normalized() {
    for kind in ShapeKind::ALL {
        let a = gen_shape(kind, 64, 9).unwrap();
        assert_eq!(a, gen_shape(kind, 64, 9).unwrap(), "{kind}");
        assert_ne!(a, gen_shape(kind, 64, 10).unwrap(), "{kind}");
        assert!((a.dist_max() - 1.0).abs() < 1e-12, "{kind}");
        assert!(a.centroid().iter().all(|v| v.abs() < 1e-12), "{kind}");
    }
}

#[test]
fn clusters_split_evenly() {
    let (cloud, labels) = gen_gaussian_clusters(128, 4).unwrap();
    assert_eq!(cloud.len(), 128);
    let mut counts = [0usize; CLUSTER_COUNT];
    for l in labels {
        counts[l] += 1;
    }
    assert_eq!(counts, [32; 4]);
}

#[test]
fn identity_transform_hook_reproduces_the_cloud() {
    let cloud = gen_shape(ShapeKind::Torus, 40, 1).unwrap();
    let identity = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let pair = apply_rigid(&cloud, identity, [0.0; 3], (0..40).collect(), 0.0, &mut rng).unwrap();
    assert_eq!(pair.cloud_b, cloud);
}

#[test]
fn noise_displacement_follows_the_chi_mean() {
    let cloud = gen_shape(ShapeKind::GaussianClusters, 1000, 2).unwrap();
    let sigma = 0.01;
    let clean = make_rigid_pair(&cloud, 77, 0.0).unwrap();
    let noisy = make_rigid_pair(&cloud, 77, sigma).unwrap();
    assert_eq!(clean.gt, noisy.gt);
    let mean: f64 = (0..1000)
        .map(|n| dist(clean.cloud_b.point(clean.gt[n]), noisy.cloud_b.point(noisy.gt[n])))
        .sum::<f64>()
        / 1000.0;
    // Mean of a chi distribution with 3 degrees of freedom is σ·2√(2/π);
    // the acceptance band is σ√3 ± 20 %.
    let expected = sigma * 3f64.sqrt();
    assert!((mean - expected).abs() < 0.2 * expected, "{mean} vs {expected}");
}

#[test]
fn deformation_respects_the_amplitude_bound_and_decays() {
    let cloud = gen_shape(ShapeKind::CubeSurface, 200, 6).unwrap();
    let pair = make_deformed_pair(&cloud, 12, 5, 0.05).unwrap();
    for n in 0..200 {
        assert!(dist(cloud.point(n), pair.cloud_b.point(pair.gt[n])) <= 0.05 * 5.0 + 1e-12);
    }
    let single = make_deformed_pair(&cloud, 13, 1, 0.1).unwrap();
    let meta = single.deform.unwrap();
    let k = &meta.kernels[0];
    let mut last = f64::INFINITY;
    for step in 0..20 {
        let r = step as f64 * 0.05;
        let x = [k.center[0] + r, k.center[1], k.center[2]];
        let d = meta.displacement(x);
        let size = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        assert!(size <= last);
        last = size;
    }
}

#[test]
fn zero_magnitude_deformation_is_the_identity_rigid_pair() {
    let cloud = gen_shape(ShapeKind::Sphere, 32, 8).unwrap();
    let deformed = make_deformed_pair(&cloud, 21, 3, 0.0).unwrap();
    let identity = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let rigid = apply_rigid(&cloud, identity, [0.0; 3], deformed.gt.clone(), 0.0, &mut rng).unwrap();
    assert_eq!(deformed.cloud_b, rigid.cloud_b);
    assert_eq!(deformed.gt, make_rigid_pair(&cloud, 21, 0.0).unwrap().gt);
}

#[test]
fn pair_files_round_trip_and_reject_damage() {
    let dir = tempfile::tempdir().unwrap();
    let cloud = gen_shape(ShapeKind::Torus, 20, 4).unwrap();
    let pair = make_deformed_pair(&cloud, 5, 2, 0.05).unwrap();
    let path = dir.path().join("p.bin");
    write_pair(&path, &pair).unwrap();
    assert_eq!(read_pair(&path).unwrap(), pair);
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(read_pair(&path), Err(esfw::Error::Parse { .. })));
}

#[test]
fn dataset_regenerates_byte_identical_samples() {
    let dir = tempfile::tempdir().unwrap();
    let params = GenParams {
        n: 16,
        kinds: vec![ShapeKind::Sphere, ShapeKind::GaussianClusters],
        mode: PairMode::Rigid { noise_sigma: 0.01 },
    };
    let manifest = generate_dataset(dir.path(), params, 5, 3, 99).unwrap();
    assert_eq!(manifest.entries_in(Split::Train).count(), 5);
    assert_eq!(manifest.entries_in(Split::Test).count(), 3);
    let back = DatasetManifest::read(dir.path()).unwrap();
    assert_eq!(back.entries, manifest.entries);
    for e in &back.entries {
        let stored = std::fs::read(back.root.join(&e.file)).unwrap();
        let again = dir.path().join("again.bin");
        write_pair(&again, &back.regenerate(e).unwrap()).unwrap();
        assert_eq!(std::fs::read(&again).unwrap(), stored);
    }
}

proptest! {
    #[test]
    fn rigid_pairs_are_isometric(seed in any::<u64>(), kind_ix in 0usize..4) {
        let cloud = gen_shape(ShapeKind::ALL[kind_ix], 24, seed).unwrap();
        let pair = make_rigid_pair(&cloud, seed, 0.0).unwrap();
        pair.validate().unwrap();
        for i in 0..24 {
            for j in 0..24 {
                let da = dist(cloud.point(i), cloud.point(j));
                let db = dist(pair.cloud_b.point(pair.gt[i]), pair.cloud_b.point(pair.gt[j]));
                prop_assert!((da - db).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn gt_aligns_the_clouds_without_noise(seed in any::<u64>()) {
        let cloud: PointCloud = gen_shape(ShapeKind::CubeSurface, 16, seed).unwrap();
        let pair = make_rigid_pair(&cloud, seed ^ 1, 0.0).unwrap();
        for n in 0..16 {
            let a = cloud.point(n);
            let moved: [f64; 3] = std::array::from_fn(|i| {
                (0..3).map(|k| pair.rotation[i][k] * a[k]).sum::<f64>() + pair.translation[i]
            });
            prop_assert!(dist(moved, pair.cloud_b.point(pair.gt[n])) < 1e-12);
        }
    }
}
