//! Trainable building blocks on top of the tape primitives.

use rand::Rng;

use super::param::{BatchNormState, Mode, ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Initial negative-side slope of every pReLU channel.
pub const PRELU_INIT_SLOPE: f64 = 0.25;

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_width: usize,
    pub out_width: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_width: usize,
        out_width: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.add_glorot(format!("{name}.weight"), in_width, out_width, rng);
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_width]));
        Self {
            weight,
            bias,
            in_width,
            out_width,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        tape.linear(x, w, b)
    }
}

#[derive(Clone, Debug)]
pub struct PRelu {
    pub slope: ParamId,
}

impl PRelu {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        let slope = store.add(
            format!("{name}.slope"),
            Tensor::filled(&[channels], PRELU_INIT_SLOPE),
        );
        Self { slope }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let s = tape.param(store, self.slope);
        tape.prelu(x, s)
    }
}

/// Batch normalization with learnable scale (init 1) and shift (init 0).
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub scale: ParamId,
    pub shift: ParamId,
    pub state: BatchNormState,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        let scale = store.add(format!("{name}.scale"), Tensor::ones(&[channels]));
        let shift = store.add(format!("{name}.shift"), Tensor::zeros(&[channels]));
        Self {
            scale,
            shift,
            state: BatchNormState::new(channels),
        }
    }

    pub fn forward(&mut self, tape: &mut Tape, store: &ParamStore, x: Var, mode: Mode) -> Result<Var> {
        let scale = tape.param(store, self.scale);
        let shift = tape.param(store, self.shift);
        tape.batchnorm(x, scale, shift, &mut self.state, mode)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{grad_check, GradCheckConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
        let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
        Tensor::new(&[rows, cols], data).unwrap()
    }

    fn eval_linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor {
        let mut store = ParamStore::new();
        let wi = store.add("w", w);
        let bi = store.add("b", b);
        let lin = Linear {
            weight: wi,
            bias: bi,
            in_width: 0,
            out_width: 0,
        };
        let mut tape = Tape::new();
        let xv = tape.input(x);
        let y = lin.forward(&mut tape, &store, xv).unwrap();
        tape.value(y).clone()
    }

    #[test]
    fn linear_identity_input() {
        let y = eval_linear(
            Tensor::identity(2),
            Tensor::from_rows(&[vec![3.0, 0.0], vec![0.0, 5.0]]),
            Tensor::zeros(&[2]),
        );
        assert_eq!(y.data(), &[3.0, 0.0, 0.0, 5.0]);
    }

    #[test]
    fn linear_zero_input_passes_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = eval_linear(
            Tensor::zeros(&[4, 3]),
            random_matrix(&mut rng, 3, 2, 1.0),
            Tensor::new(&[2], vec![1.0, 2.0]).unwrap(),
        );
        for r in 0..4 {
            assert_eq!(y.row(r), &[1.0, 2.0]);
        }
    }

    #[test]
    fn linear_shape_mismatch_names_both_shapes() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lin = Linear::new(&mut store, "l", 3, 2, &mut rng);
        let mut tape = Tape::new();
        let x = tape.input(Tensor::zeros(&[4, 5]));
        let err = lin.forward(&mut tape, &store, x).unwrap_err().to_string();
        assert!(err.contains("[4, 5]") && err.contains("[3, 2]"), "{err}");
    }

    #[test]
    fn linear_is_affine() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = random_matrix(&mut rng, 4, 3, 1.0);
        let b = random_matrix(&mut rng, 1, 3, 1.0).reshape(&[3]).unwrap();
        let x = random_matrix(&mut rng, 5, 4, 1.0);
        let z = random_matrix(&mut rng, 5, 4, 1.0);
        let (a, c) = (0.7, -1.3);
        let combo = Tensor::new(
            &[5, 4],
            x.data().iter().zip(z.data()).map(|(p, q)| a * p + c * q).collect(),
        )
        .unwrap();
        let lhs = eval_linear(combo, w.clone(), b.clone());
        let fx = eval_linear(x, w.clone(), b.clone());
        let fz = eval_linear(z, w, b.clone());
        for r in 0..5 {
            for ch in 0..3 {
                let bias = b.data()[ch];
                let rhs = a * fx.get(r, ch) + c * fz.get(r, ch) + (1.0 - a - c) * bias;
                assert!((lhs.get(r, ch) - rhs).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn linear_weight_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let lin = Linear::new(&mut store, "l", 4, 3, &mut rng);
        let x = random_matrix(&mut rng, 5, 4, 1.0);
        let report = grad_check(&mut store, &[x], &GradCheckConfig::new(1e-6), |tape, store, inputs| {
            let y = lin.forward(tape, store, inputs[0])?;
            Ok(tape.sum(y))
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-7, "{report:?}");
    }

    #[test]
    fn prelu_branches() {
        let mut store = ParamStore::new();
        let act = PRelu {
            slope: store.add("s", Tensor::scalar(0.25)),
        };
        let mut tape = Tape::new();
        let x = tape.input(Tensor::new(&[2, 1], vec![2.0, -2.0]).unwrap());
        let y = act.forward(&mut tape, &store, x).unwrap();
        assert_eq!(tape.value(y).data(), &[2.0, -0.5]);
    }

    #[test]
    fn prelu_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let act = PRelu::new(&mut store, "act", 3);
        let x = random_matrix(&mut rng, 6, 3, 1.0);
        let report = grad_check(&mut store, &[x], &GradCheckConfig::new(1e-6), |tape, store, inputs| {
            let y = act.forward(tape, store, inputs[0])?;
            let y2 = tape.mul(y, y)?;
            Ok(tape.sum(y2))
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
        assert_eq!(report.skipped, 0);
    }

    #[test]
    fn prelu_at_zero_is_excluded_from_comparison() {
        let mut store = ParamStore::new();
        let act = PRelu::new(&mut store, "act", 1);
        let x = Tensor::new(&[3, 1], vec![0.0, 0.5, -0.5]).unwrap();
        let report = grad_check(&mut store, &[x], &GradCheckConfig::new(1e-6), |tape, store, inputs| {
            let y = act.forward(tape, store, inputs[0])?;
            Ok(tape.sum(y))
        })
        .unwrap();
        assert_eq!(report.skipped, 1);
        assert!(report.max_rel_error < 1e-7, "{report:?}");
    }

    #[test]
    fn batchnorm_constant_column_yields_shift() {
        let mut store = ParamStore::new();
        let mut bn = BatchNorm::new(&mut store, "bn", 2);
        store.get_mut(bn.shift).value = Tensor::new(&[2], vec![0.3, -0.7]).unwrap();
        let mut tape = Tape::new();
        let x = tape.input(Tensor::from_rows(&[vec![4.0, 1.0], vec![4.0, 2.0], vec![4.0, 3.0]]));
        let y = bn.forward(&mut tape, &store, x, Mode::Train).unwrap();
        for r in 0..3 {
            assert_eq!(tape.value(y).get(r, 0), 0.3);
        }
        assert!(bn.state.running_var.data().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn batchnorm_rejects_single_row_in_train_mode() {
        let mut store = ParamStore::new();
        let mut bn = BatchNorm::new(&mut store, "bn", 2);
        let mut tape = Tape::new();
        let x = tape.input(Tensor::zeros(&[1, 2]));
        assert!(matches!(
            bn.forward(&mut tape, &store, x, Mode::Train),
            Err(crate::Error::DegenerateBatch { rows: 1 })
        ));
        // Eval mode has no such restriction.
        assert!(bn.forward(&mut tape, &store, x, Mode::Eval).is_ok());
    }

    #[test]
    fn batchnorm_leaves_normalized_input_alone() {
        // Columns with mean 0 and biased variance 1.
        let x = Tensor::from_rows(&[vec![1.0, 1.0], vec![-1.0, 1.0], vec![1.0, -1.0], vec![-1.0, -1.0]]);
        let mut store = ParamStore::new();
        let mut bn = BatchNorm::new(&mut store, "bn", 2);
        let mut tape = Tape::new();
        let xv = tape.input(x.clone());
        let y = bn.forward(&mut tape, &store, xv, Mode::Train).unwrap();
        // Only the epsilon term separates y from x.
        assert!(tape.value(y).max_abs_diff(&x) < 1e-5);
        let expected = x.map(|v| v / (1.0 + BatchNormState::DEFAULT_EPSILON).sqrt());
        assert!(tape.value(y).max_abs_diff(&expected) < 1e-9);
    }

    #[test]
    fn batchnorm_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let mut bn = BatchNorm::new(&mut store, "bn", 3);
        store.get_mut(bn.scale).value = Tensor::new(&[3], vec![0.5, 1.5, -0.8]).unwrap();
        store.get_mut(bn.shift).value = Tensor::new(&[3], vec![0.1, -0.2, 0.3]).unwrap();
        let x = random_matrix(&mut rng, 7, 3, 2.0);
        let report = grad_check(&mut store, &[x], &GradCheckConfig::new(1e-6), |tape, store, inputs| {
            let y = bn.forward(tape, store, inputs[0], Mode::Train)?;
            tape.square_sum(y)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-5, "{report:?}");
    }

    #[test]
    fn eval_mode_uses_running_statistics() {
        let mut store = ParamStore::new();
        let mut bn = BatchNorm::new(&mut store, "bn", 1);
        bn.state.running_mean = Tensor::scalar(2.0);
        bn.state.running_var = Tensor::scalar(4.0 - BatchNormState::DEFAULT_EPSILON);
        let mut tape = Tape::new();
        let x = tape.input(Tensor::new(&[2, 1], vec![4.0, 0.0]).unwrap());
        let y = bn.forward(&mut tape, &store, x, Mode::Eval).unwrap();
        let v = tape.value(y).data();
        assert!((v[0] - 1.0).abs() < 1e-12 && (v[1] + 1.0).abs() < 1e-12);
    }
}
