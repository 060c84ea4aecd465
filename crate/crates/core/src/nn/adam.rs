//! Adam with bias-corrected moment estimates.

use super::param::ParamStore;
use super::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct AdamState {
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
    pub step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(store: &ParamStore, learning_rate: f64) -> Self {
        let zeros: Vec<Tensor> = store.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self {
            first_moment: zeros.clone(),
            second_moment: zeros,
            step_count: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One optimizer step over every parameter of `store`, using the gradients
/// currently held there.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState) {
    assert_eq!(state.first_moment.len(), store.len(), "optimizer built for another store");
    state.step_count += 1;
    let t = state.step_count as f64;
    let (b1, b2) = (state.beta1, state.beta2);
    let correction1 = 1.0 - b1.powf(t);
    let correction2 = 1.0 - b2.powf(t);
    for (k, p) in store.iter_mut().enumerate() {
        let m = state.first_moment[k].data_mut();
        let v = state.second_moment[k].data_mut();
        for (i, (value, &g)) in p.value.data_mut().iter_mut().zip(p.grad.data()).enumerate() {
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            let m_hat = m[i] / correction1;
            let v_hat = v[i] / correction2;
            *value -= state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> ParamStore {
        let mut store = ParamStore::new();
        store.add("p", Tensor::scalar(v));
        store
    }

    fn value(store: &ParamStore) -> f64 {
        store.iter().next().unwrap().value.data()[0]
    }

    fn set_grad(store: &mut ParamStore, g: f64) {
        store.iter_mut().next().unwrap().grad = Tensor::scalar(g);
    }

    #[test]
    fn constant_gradient_moves_against_its_sign() {
        for g in [2.0, -0.5] {
            let mut store = scalar_store(1.0);
            let mut state = AdamState::new(&store, 0.01);
            for _ in 0..50 {
                set_grad(&mut store, g);
                adam_step(&mut store, &mut state);
            }
            assert!((value(&store) - 1.0) * g < 0.0);
        }
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut store = scalar_store(0.42);
        let mut state = AdamState::new(&store, 0.1);
        for _ in 0..10 {
            set_grad(&mut store, 0.0);
            adam_step(&mut store, &mut state);
        }
        assert_eq!(value(&store), 0.42);
        assert_eq!(state.step_count, 10);
    }

    #[test]
    fn minimizes_shifted_quadratic() {
        let mut store = scalar_store(0.0);
        let mut state = AdamState::new(&store, 0.1);
        for _ in 0..500 {
            let p = value(&store);
            set_grad(&mut store, 2.0 * (p - 3.0));
            adam_step(&mut store, &mut state);
        }
        assert!((value(&store) - 3.0).abs() < 1e-3, "p = {}", value(&store));
        assert!(state.second_moment[0].data()[0] >= 0.0);
    }
}
