//! Distillation losses, budget sampling, optimization and the two-stage
//! elastic training loop.

mod losses;
mod optim;
mod sampler;
mod trainer;

pub use losses::{ce_loss, kd_loss, task_loss, total_loss, TeacherMode};
pub use optim::{warmup_lr, Adam, Sgd};
pub use sampler::BudgetSampler;
pub use trainer::{eval_ce, pretrain, MetricRow, StageConfig, StepLosses, TrainConfig, Trainer};
