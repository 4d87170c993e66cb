//! Cross-entropy training with Adam and patient-level LOOCV.

mod adam;
mod fit;
mod loocv;
mod loss;

pub use adam::{adam_step, AdamConfig, AdamState, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPS, DEFAULT_LEARNING_RATE};
pub use fit::{accuracy, predict, train_fold, FitResult, TrainConfig, DEFAULT_BATCH_SIZE, DEFAULT_EPOCHS};
pub use loocv::{
    cohort_predictions, load_predictions, parse_predictions, predictions_to_string, run_loocv, save_predictions,
    FoldResult, Prediction, PREDICTIONS_HEADER,
};
pub use loss::{cross_entropy, cross_entropy_from_logits};
