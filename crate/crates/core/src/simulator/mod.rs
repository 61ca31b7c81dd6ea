//! Desk-scale RL harness over synthetic verifiable tasks.

pub mod pass_at_k;
pub mod sampling;
pub mod surrogate;
pub mod task;
pub mod train;

pub use pass_at_k::{pass_at_k, pass_at_k_single};
pub use sampling::{sample_group, SampledGroup};
pub use surrogate::{surrogate_gradient, surrogate_update, TrainingGroup, UpdateConfig, UpdateStats};
pub use task::{
    generate_task, measure_negative_fraction, AnswerSpaceSpec, CorrectCount, DifficultyProfile, SyntheticTask,
    SyntheticTaskSpec,
};
pub use train::{evaluate, train, train_with, Algorithm, Evaluation, TrainConfig, TrainMetrics, TrainOutcome, PASS_AT_K};
