use esfw::cloud::PointCloud;
use esfw::data::{gen_shape, ShapeKind};
use esfw::encoder::{Encoder, HIDDEN_WIDTH};
use esfw::nn::gradcheck::{grad_check, GradCheckConfig};
use esfw::nn::{ParamStore, Tensor};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn encoder(df: usize, seed: u64) -> (ParamStore, Encoder) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let enc = Encoder::new(&mut store, df, &mut rng);
    (store, enc)
}

fn dense(store: &ParamStore, name: &str, x: &[f64]) -> Vec<f64> {
    let w = &store.get(store.by_name(&format!("{name}.weight")).unwrap()).value;
    let b = &store.get(store.by_name(&format!("{name}.bias")).unwrap()).value;
    (0..w.cols())
        .map(|o| b.data()[o] + (0..w.rows()).map(|i| x[i] * w.get(i, o)).sum::<f64>())
        .collect()
}

/// Point-by-point evaluation of the encoder from its stored weights.
fn oracle(store: &ParamStore, cloud: &PointCloud) -> Vec<Vec<f64>> {
    let slope = &store.get(store.by_name("encoder.act.slope").unwrap()).value;
    let local: Vec<Vec<f64>> = (0..cloud.len())
        .map(|n| {
            let mut h = dense(store, "encoder.local1", &cloud.point(n));
            for (c, v) in h.iter_mut().enumerate() {
                if *v < 0.0 {
                    *v *= slope.data()[c];
                }
            }
            dense(store, "encoder.local2", &h)
        })
        .collect();
    let pooled: Vec<f64> = (0..local[0].len())
        .map(|c| local.iter().map(|row| row[c]).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let global = dense(store, "encoder.global", &pooled);
    local
        .into_iter()
        .map(|row| row.iter().zip(&global).map(|(l, g)| l + g).collect())
        .collect()
}

#[test]
fn forward_matches_a_per_point_oracle() {
    let (store, enc) = encoder(12, 1);
    let cloud = gen_shape(ShapeKind::Torus, 30, 2).unwrap();
    let got = enc.encode_points(&store, &cloud).unwrap();
    assert_eq!(got.dim(), 12);
    for (n, row) in oracle(&store, &cloud).iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            assert!((got.row(n)[c] - v).abs() < 1e-12);
        }
    }
    assert_eq!(store.by_name("encoder.local1.weight").map(|id| store.get(id).value.cols()), Some(HIDDEN_WIDTH));
}

#[test]
fn duplicate_points_get_duplicate_features() {
    let (store, enc) = encoder(8, 3);
    let cloud = PointCloud::from_points(&[[0.1, 0.2, 0.3], [-0.4, 0.0, 0.2], [0.1, 0.2, 0.3]]).unwrap();
    let f = enc.encode_points(&store, &cloud).unwrap();
    assert_eq!(f.row(0), f.row(2));
    assert_ne!(f.row(0), f.row(1));
}

#[test]
fn gradients_match_finite_differences() {
    let (mut store, enc) = encoder(6, 4);
    let cloud = gen_shape(ShapeKind::GaussianClusters, 10, 5).unwrap();
    let rows = vec![0; 10];
    let report = grad_check(
        &mut store,
        &[cloud.positions().clone()],
        &GradCheckConfig::default(),
        |tape, store, inputs| {
            let f = enc.forward(tape, store, inputs[0], &rows, 1)?;
            tape.square_sum(f)
        },
    )
    .unwrap();
    assert!(report.compared > 0);
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn non_3d_input_is_a_shape_error() {
    let (store, enc) = encoder(4, 6);
    let mut tape = esfw::nn::Tape::new();
    let x = tape.input(Tensor::zeros(&[5, 2]));
    assert!(matches!(enc.forward(&mut tape, &store, x, &[0; 5], 1), Err(esfw::Error::Shape { .. })));
}

proptest! {
    #[test]
    fn permuting_points_permutes_features(seed in any::<u64>()) {
        let (store, enc) = encoder(8, seed);
        let cloud = gen_shape(ShapeKind::CubeSurface, 20, seed).unwrap();
        let mut perm: Vec<usize> = (0..20).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 7));
        let f = enc.encode_points(&store, &cloud).unwrap();
        let fp = enc.encode_points(&store, &cloud.select(&perm)).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            for c in 0..8 {
                prop_assert!((fp.row(i)[c] - f.row(p)[c]).abs() < 1e-12);
            }
        }
    }
}
