//! Desk-scale workloads: the stochastic quadratic and a stage-split MLP.

mod data;
mod mlp;
mod quadratic;

pub use data::{Batch, RegressionTask, TaskShape};
pub use mlp::{mse_loss, Activation, LayerShape, StageActivations, StageSpec, StagedMlp};
pub use quadratic::QuadraticProblem;
