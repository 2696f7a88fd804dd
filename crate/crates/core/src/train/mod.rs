//! Optimizers, learning-rate schedules and staged classifier training.

mod optim;
mod run;
mod schedule;
mod search;

pub use optim::{
    lr_at, optimizer_step, rmsprop_step, sgd_step, LrSchedule, OptimizerConfig, OptimizerKind, OptimizerState,
};
pub use run::{
    evaluate_fragments, evaluate_scores, fit_svm_head, predict_fragments, prepare_fragments, pretrain_encoders,
    run_schedule, select_best, Augmentation, EpochLog, Evaluation, TrainConfig, TrainData, TrainOutcome, ValMetrics,
};
pub use schedule::{DataSource, ScheduleStage, StageSource, TrainingSchedule};
pub use search::{random_search, ParamRange, SearchResult, SearchSpace, Trial, TrialParams};
