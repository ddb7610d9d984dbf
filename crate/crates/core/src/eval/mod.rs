//! Metrics, the TF-IDF baseline and the ablation runner.

mod ablation;
mod baseline;
mod metrics;

pub use ablation::{majority_accuracy, majority_report, run_ablation, AblationReport, AblationRow, Summary, VARIANTS};
pub use baseline::{logreg_loss_grad, logreg_train, profile_text, tfidf_baseline, words, LogReg, LogRegConfig, TfIdf};
pub use metrics::{compute_metrics, ClassMetrics, ConfusionMatrix, MetricReport};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{preds} predictions for {labels} labels")]
    LengthMismatch { preds: usize, labels: usize },
    #[error("nothing to evaluate")]
    Empty,
    #[error("cannot fit TF-IDF on an empty corpus")]
    EmptyCorpus,
    #[error("logistic regression diverged at step {step}; try a learning rate below {lr}")]
    Diverged { step: usize, lr: f64 },
}
