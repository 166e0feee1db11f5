//! Training loop, fold protocol and the evaluation metrics.

mod metrics;
mod optim;
pub mod synthetic;
mod trainer;

pub use metrics::{accuracy, aggregate, auc, classification_metrics, pcc, r2, rmse, MetricReport, METRIC_NAMES};
pub use optim::Adam;
pub use trainer::{
    cross_validate, fit_config, log_csv, mix_seed, plan_cells, plan_folds, predict_pairs, summarize, train_fold, CvReport,
    FoldInputs, FoldPlan, FoldResult, FoldSummary, LogRow, Prediction, SplitMode, TrainConfig, TrainState,
};
