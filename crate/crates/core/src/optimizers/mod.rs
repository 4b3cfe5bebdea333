//! Inner optimizers, outer-step group sampling and the outer update rules.

mod groups;
mod inner;
mod outer;

pub use groups::{sample_groups, GroupAssignment, GroupSchedule};
pub use inner::{clip_gradient, AdamState, InnerMethod, InnerOptConfig, Schedule, WorkerState};
pub use outer::{
    default_gamma, diloco_outer_step, gamma_bounds, noloco_outer_step, outer_gradient,
    sync_dp_step, OuterMethod, OuterOptConfig,
};
