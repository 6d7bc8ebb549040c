//! Training workflows and the monitors used to study them.

mod eval;
pub mod monitor;
mod train;

pub use eval::{
    argmax, assignment_accuracy, evaluate, evaluate_batched, mode_count, weighting_trace,
    Assignment, EvalReport, ModeTop1,
};
pub use monitor::{
    export_latents, fmt_g6, latents_csv, MonitorRecord, MonitorTrace, MONITOR_HEADER,
};
pub use train::{
    accuracy, default_transfer_map, pretrain, schedules, train, train_epoch, train_step,
    Classifier, PolicyClassifier, PretrainConfig, PretrainOutcome, TrainConfig, TrainOutcome,
    BACKBONE_PREFIX, DEAD_POLICY_EPOCHS, DEAD_POLICY_SATURATION, POLICY_CONV_PREFIX,
};
