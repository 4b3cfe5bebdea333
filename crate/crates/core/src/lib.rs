//! Simulator and closed-form toolkit for low-communication decentralized
//! training: pairwise gossip averaging with modified Nesterov momentum,
//! all-reduce baselines, random pipeline routing and latency models.

pub mod analytic;
pub mod error;
pub mod harness;
pub mod latency;
pub mod models;
pub mod numerics;
pub mod optimizers;
pub mod routing;

pub use error::{Error, Result};
