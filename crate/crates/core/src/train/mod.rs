//! Staged training: plans, optimizer, tokenizer pretraining and the stage loop.

pub mod gradcheck;
pub mod optim;
pub mod pipeline;
pub mod plan;
pub mod stage;
pub mod stage0;

pub use gradcheck::{gradcheck, GradCheckOptions, GradCheckReport, GroupStatus};
pub use optim::{AdamState, OptimizerConfig, StepReport};
pub use pipeline::{run_pipeline, PipelineConfig, PipelineReport};
pub use plan::{default_plans, lr_at, trainable_groups, StagePlan, SHORT_STAGE1_STEPS};
pub use stage::{fresh_state, resume_from, run_stage, StageOptions, StageReport, StageState, StepLog};
pub use stage0::{pretrain, PretrainConfig, PretrainReport};
