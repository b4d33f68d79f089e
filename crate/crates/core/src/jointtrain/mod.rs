//! Joint training: the λ-weighted loss, the training loop and the
//! independent, bagging and stacking baselines.

pub mod baselines;
pub mod loss;
pub mod model;
pub mod trace;
pub mod trainer;

pub use baselines::{
    averaging_combiner, bootstrap_indices, train_bagging, train_stacking, StackedEnsemble,
};
pub use loss::{
    joint_loss, joint_loss_ambiguity, joint_loss_grad_logits, BatchPredictions, JointLossConfig,
    LossTerms,
};
pub use model::{argmax, evaluate, evaluate_single, EnsembleCheckpoint, EnsembleModel, Evaluation};
pub use trace::{EpochRecord, RunManifest, TrainingTrace};
pub use trainer::{train, JointTrainer, LrStep, MemberTrainer, Schedule, TrainOutcome};
