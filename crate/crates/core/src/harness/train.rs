use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::matching_loss;
use super::metric::corr_curve;
use crate::data::PairSample;
use crate::error::{Error, Result};
use crate::model::Esfw;
use crate::nn::{adam_step, AdamState, Mode, Tape};
use crate::weaving::{predict_matches, WeavingConfig};

pub const LOG_HEADER: &str = "epoch,loss,corr@0";
const SHUFFLE_SALT: u64 = 0xD1B5_4A32_D192_ED03;
const EVAL_CHUNK: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub weaving: WeavingConfig,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Adds the column-wise cross-entropy term to the row-wise one.
    pub symmetric_loss: bool,
}

impl TrainConfig {
    pub fn new(weaving: WeavingConfig) -> Self {
        Self {
            weaving,
            learning_rate: 1e-4,
            batch_size: 10,
            epochs: 100,
            seed: 0,
            symmetric_loss: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weaving.validate()?;
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch size must be at least 2, got {}",
                self.batch_size
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean batch loss over the epoch.
    pub loss: f64,
    /// Exact Corr on the monitoring pairs after the epoch.
    pub corr0: f64,
    pub gt_coverage: f64,
}

pub fn format_epoch_line(r: &EpochRecord) -> String {
    format!("{},{},{}", r.epoch, r.loss, r.corr0)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Esfw,
    pub log: Vec<EpochRecord>,
}

/// Mean exact Corr of the model on `pairs`, eval-mode.
pub(crate) fn mean_exact_corr(model: &mut Esfw, pairs: &[PairSample]) -> Result<f64> {
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for chunk in pairs.chunks(EVAL_CHUNK) {
        let mut tape = Tape::new();
        let refs: Vec<_> = chunk.iter().map(|p| (&p.cloud_a, &p.cloud_b)).collect();
        let out = model.forward_clouds(&mut tape, &refs, Mode::Eval)?;
        for (p, scores) in chunk.iter().zip(out.score_matrices(&tape)) {
            let pred = predict_matches(&scores);
            total += corr_curve(&pred, &p.gt, &p.cloud_a, &p.cloud_b, &[0.0])?[0];
        }
    }
    Ok(total / pairs.len() as f64)
}

/// Jointly trains encoder and weaving network with Adam. `monitor` pairs are
/// scored after every epoch; `on_epoch` sees each record as it is produced.
pub fn train(
    config: &TrainConfig,
    pairs: &[PairSample],
    monitor: &[PairSample],
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let mut model = Esfw::new(config.weaving.clone(), config.seed)?;
    let mut adam = AdamState::new(model.params(), config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ SHUFFLE_SALT);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        let (mut covered, mut total) = (0, 0);
        for (step, batch) in order.chunks(config.batch_size).enumerate() {
            let refs: Vec<_> = batch.iter().map(|&i| (&pairs[i].cloud_a, &pairs[i].cloud_b)).collect();
            let gts: Vec<&[usize]> = batch.iter().map(|&i| pairs[i].gt.as_slice()).collect();
            let mut tape = Tape::new();
            let out = model.forward_clouds(&mut tape, &refs, Mode::Train)?;
            let report = matching_loss(&mut tape, &out.output, &gts, config.symmetric_loss)?;
            let loss = tape.value(report.loss).data()[0];
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("loss {loss} at epoch {epoch}, step {}", step + 1)));
            }
            model.params_mut().zero_grad();
            tape.backward(report.loss, model.params_mut())?;
            let grad_norm = model.params().grad_norm();
            if !grad_norm.is_finite() {
                return Err(Error::NonFinite(format!(
                    "gradient norm {grad_norm} at epoch {epoch}, step {}",
                    step + 1
                )));
            }
            adam_step(model.params_mut(), &mut adam);
            loss_sum += loss;
            batches += 1;
            covered += report.gt_covered;
            total += report.gt_total;
        }
        let record = EpochRecord {
            epoch,
            loss: loss_sum / batches as f64,
            corr0: mean_exact_corr(&mut model, monitor)?,
            gt_coverage: covered as f64 / total as f64,
        };
        log::info!(
            "epoch {epoch}: loss {:.6}, corr@0 {:.4}, gt coverage {:.3}",
            record.loss,
            record.corr0,
            record.gt_coverage
        );
        on_epoch(&record);
        log.push(record);
    }
    Ok(TrainOutcome { model, log })
}
