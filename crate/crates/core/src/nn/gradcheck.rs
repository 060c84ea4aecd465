//! Central finite-difference verification of tape gradients.

use std::fmt;

use super::param::ParamStore;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Half-width of the central difference stencil, in `(0, 1e-3]`.
    pub eps: f64,
    /// Denominator floor of the relative error, as a fraction of
    /// `max(1, |loss|)`. Gradient entries smaller than this are compared
    /// absolutely: a central difference with step `eps` cannot resolve them
    /// to better than roughly `1e-16 · |loss| / eps`.
    pub rel_floor: f64,
}

impl GradCheckConfig {
    pub const DEFAULT_REL_FLOOR: f64 = 1e-4;

    pub fn new(eps: f64) -> Self {
        Self {
            eps,
            rel_floor: Self::DEFAULT_REL_FLOOR,
        }
    }
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self::new(1e-6)
    }
}

/// Where a gradient entry lives.
#[derive(Clone, Debug, PartialEq)]
pub enum Location {
    Param { name: String, element: usize },
    Input { input: usize, element: usize },
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Param { name, element } => write!(f, "param {name}[{element}]"),
            Location::Input { input, element } => write!(f, "input {input}[{element}]"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<Location>,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub compared: usize,
    /// Coordinates whose stencil crossed a non-differentiable point.
    pub skipped: usize,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the tape's gradients of a scalar loss against central
/// differences, for every parameter element and every input element.
///
/// `build` records the forward pass on the supplied tape and returns the
/// loss. It is called once for the analytic pass and twice per coordinate,
/// so it must be a deterministic function of the parameter values and the
/// inputs.
pub fn grad_check<F>(
    store: &mut ParamStore,
    inputs: &[Tensor],
    config: &GradCheckConfig,
    mut build: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &ParamStore, &[Var]) -> Result<Var>,
{
    if !(config.eps > 0.0 && config.eps <= 1e-3) {
        return Err(Error::Config(format!("gradcheck eps {} outside (0, 1e-3]", config.eps)));
    }

    // Analytic pass.
    store.zero_grad();
    let mut tape = Tape::with_kink_tracking();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let loss = build(&mut tape, store, &vars)?;
    let base_loss = tape.value(loss).data()[0];
    if !base_loss.is_finite() {
        return Err(Error::NonFinite("forward value at base point".into()));
    }
    let floor = config.rel_floor * base_loss.abs().max(1.0);
    let base_signature = tape.kink_signature();
    tape.backward(loss, store)?;
    let input_grads: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| tape.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    let param_grads: Vec<Tensor> = store.iter().map(|p| p.grad.clone()).collect();
    drop(tape);

    let mut evaluate = |store: &ParamStore, inputs: &[Tensor], at: Option<&Location>| -> Result<(f64, u64)> {
        let mut tape = Tape::with_kink_tracking();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
        let loss = build(&mut tape, store, &vars)?;
        let value = tape.value(loss).data()[0];
        if !value.is_finite() {
            let place = at.map_or_else(|| "base point".to_string(), ToString::to_string);
            return Err(Error::NonFinite(format!("forward value {value} at {place}")));
        }
        Ok((value, tape.kink_signature()))
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        compared: 0,
        skipped: 0,
    };
    let eps = config.eps;
    let record = |report: &mut GradCheckReport, loc: Location, analytic: f64, plus: (f64, u64), minus: (f64, u64)| {
        if plus.1 != base_signature || minus.1 != base_signature {
            report.skipped += 1;
            return;
        }
        let numeric = (plus.0 - minus.0) / (2.0 * eps);
        let err = relative_error(analytic, numeric, floor);
        report.compared += 1;
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = err.max(report.max_rel_error);
            report.worst = Some(loc);
            report.analytic_at_worst = analytic;
            report.numeric_at_worst = numeric;
        }
    };

    let ids: Vec<_> = store.ids().collect();
    for (id, analytic) in ids.into_iter().zip(&param_grads) {
        for element in 0..analytic.len() {
            let loc = Location::Param {
                name: store.get(id).name.clone(),
                element,
            };
            let original = store.get(id).value.data()[element];
            store.get_mut(id).value.data_mut()[element] = original + eps;
            let plus = evaluate(store, inputs, Some(&loc));
            store.get_mut(id).value.data_mut()[element] = original - eps;
            let minus = evaluate(store, inputs, Some(&loc));
            store.get_mut(id).value.data_mut()[element] = original;
            record(&mut report, loc, analytic.data()[element], plus?, minus?);
        }
    }

    let mut perturbed: Vec<Tensor> = inputs.to_vec();
    for (input, analytic) in input_grads.iter().enumerate() {
        for element in 0..analytic.len() {
            let loc = Location::Input { input, element };
            let original = inputs[input].data()[element];
            perturbed[input].data_mut()[element] = original + eps;
            let plus = evaluate(store, &perturbed, Some(&loc))?;
            perturbed[input].data_mut()[element] = original - eps;
            let minus = evaluate(store, &perturbed, Some(&loc))?;
            perturbed[input].data_mut()[element] = original;
            record(&mut report, loc, analytic.data()[element], plus, minus);
        }
    }

    // Leave the store holding the analytic gradients of the base point.
    for (p, g) in store.iter_mut().zip(param_grads) {
        p.grad = g;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eps_must_be_small_and_positive() {
        let mut store = ParamStore::new();
        let build = |tape: &mut Tape, _: &ParamStore, v: &[Var]| Ok(tape.sum(v[0]));
        let x = [Tensor::ones(&[2])];
        assert!(grad_check(&mut store, &x, &GradCheckConfig::new(0.0), build).is_err());
        assert!(grad_check(&mut store, &x, &GradCheckConfig::new(1e-2), build).is_err());
    }

    #[test]
    fn non_finite_forward_aborts_with_location() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::scalar(1.0));
        let err = grad_check(&mut store, &[], &GradCheckConfig::new(1e-6), |tape, store, _| {
            let w = tape.param(store, id);
            let w = tape.scale(w, 1.0);
            // Blows up as soon as the parameter is perturbed upwards.
            let v = tape.value(w).data()[0];
            let factor = if v > 1.0 { f64::INFINITY } else { 1.0 };
            Ok(tape.scale(w, factor))
        })
        .unwrap_err();
        assert!(err.to_string().contains("param w[0]"), "{err}");
    }

    #[test]
    fn segment_max_routes_gradient_to_winner() {
        let mut store = ParamStore::new();
        let x = Tensor::from_rows(&[
            vec![0.3, -1.2],
            vec![1.7, 0.4],
            vec![-0.5, 2.2],
            vec![0.9, 0.1],
            vec![2.5, -0.3],
        ]);
        let segments = [0usize, 0, 0, 1, 1];
        let report = grad_check(&mut store, &[x], &GradCheckConfig::new(1e-6), |tape, _, v| {
            let (pooled, _) = tape.segment_max(v[0], &segments, 2)?;
            tape.square_sum(pooled)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
        assert_eq!(report.compared, 10);
    }
}
