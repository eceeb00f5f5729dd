//! Training loop: Adam with warmup plus inverse-square-root decay,
//! token-budget batching, label-smoothed teacher forcing, and early
//! stopping on validation loss.

pub mod adam;
pub mod schedule;
pub mod trainer;

pub use adam::{adam_step, AdamState};
pub use schedule::lr_schedule;
pub use trainer::{
    dataset_loss, encode_examples, train, EarlyStopper, EpochMetric, EpochRecord, StepRecord,
    StopReason, TrainConfig, TrainExample, TrainLog, TrainOutcome,
};
