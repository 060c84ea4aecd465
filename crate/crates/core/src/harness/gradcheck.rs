use super::loss::matching_loss;
use crate::data::{gen_shape, make_rigid_pair, ShapeKind};
use crate::error::Result;
use crate::model::{stack_clouds, Esfw};
use crate::nn::{grad_check, GradCheckConfig, GradCheckReport, Mode};
use crate::weaving::WeavingConfig;

const PAIR_NOISE: f64 = 0.02;

/// Finite-difference check of the complete training objective: encoder,
/// weaving network and symmetric loss on one synthetic pair.
#[derive(Clone, Debug)]
pub struct ModelGradCheck {
    pub n: usize,
    pub weaving: WeavingConfig,
    pub eps: f64,
    pub seed: u64,
}

impl ModelGradCheck {
    pub fn new(n: usize, weaving: WeavingConfig) -> Self {
        Self {
            n,
            weaving,
            eps: 1e-6,
            seed: 0,
        }
    }
}

/// Checks gradients with respect to every parameter and every input
/// coordinate, with batch norm in training mode.
pub fn model_gradcheck(setup: &ModelGradCheck) -> Result<GradCheckReport> {
    let mut model = Esfw::new(setup.weaving.clone(), setup.seed)?;
    let cloud = gen_shape(ShapeKind::GaussianClusters, setup.n, setup.seed)?;
    let pair = make_rigid_pair(&cloud, setup.seed, PAIR_NOISE)?;
    let (positions, sizes) = stack_clouds(&[(&pair.cloud_a, &pair.cloud_b)]);
    let gt = pair.gt.clone();
    let mut store = model.params().clone();
    grad_check(
        &mut store,
        &[positions],
        &GradCheckConfig::new(setup.eps),
        |tape, store, inputs| {
            let out = model.forward_positions_with(store, tape, inputs[0], &sizes, Mode::Train)?;
            Ok(matching_loss(tape, &out.output, &[gt.as_slice()], true)?.loss)
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_model_passes() {
        let report = model_gradcheck(&ModelGradCheck::new(8, WeavingConfig::new(4, 2, 4, 8))).unwrap();
        assert!(report.compared > 100);
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }
}
