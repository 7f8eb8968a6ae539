//! Adapter-only training: loss, reverse pass, optimizer, toy tasks,
//! finite-difference gradient checks and the training loop.

mod backward;
mod gradcheck;
mod loss;
mod optim;
mod tasks;
mod trainer;

use thiserror::Error;

pub use backward::{backward, GradMode, Grads};
pub use gradcheck::{gradcheck, BlockError, GradCheckReport, GradCheckSpec};
pub use loss::{cross_entropy, dlogits, evaluate, forward_example, loss, Evaluation, Example, ExampleForward};
pub use optim::{AdamW, AdamWConfig, LrSchedule};
pub use tasks::{make_task, task_target, TaskDataset, TaskKind, TaskSpec};
pub use trainer::{
    batch_gradients, pretrain_backbone, train, HistoryRecord, TrainConfig, TrainOutcome,
};

use crate::backbone::ModelError;
use crate::peft::AdapterError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error("backward needs a forward pass run with recording enabled")]
    NoTape,
    #[error("no target tokens to score")]
    EmptyTargets,
    #[error("loss diverged at step {step}: {loss}")]
    Divergence { step: usize, loss: f64 },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("invalid task: {0}")]
    InvalidTask(String),
}
