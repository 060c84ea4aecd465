//! Training loop, loss, Corr metric, evaluation curves and ablation sweeps.

mod ablate;
mod eval;
mod fps;
mod gradcheck;
mod loss;
mod metric;
pub mod svg;
mod train;

pub use ablate::{ablation_sweep, subsample_pair, write_ablation_csv, AblationAxis, AblationRow};
pub use eval::{evaluate, evaluate_pair, write_curves_csv, EvalCurve, Method, PairPredictions, DEFAULT_RADII};
pub use fps::furthest_point_sampling;
pub use gradcheck::{model_gradcheck, ModelGradCheck};
pub use loss::{gt_coverage, matching_loss, score_matrix_loss, LossReport};
pub use metric::{corr_curve, corr_metric};
pub use train::{format_epoch_line, train, EpochRecord, TrainConfig, TrainOutcome, LOG_HEADER};
