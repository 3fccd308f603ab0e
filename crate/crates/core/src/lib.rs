//! Offline safe reinforcement learning with a cost-conditioned causal
//! transformer actor, a transformer cost critic and posterior verification of
//! sampled candidate actions.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod actor;
pub mod backbone;
pub mod checkpoint;
pub mod config;
pub mod critic;
pub mod data;
pub mod envs;
pub mod error;
pub mod executor;
pub mod numerics;
pub mod parallel;
pub mod rng;
pub mod selfcheck;
pub mod training;

pub use error::{Error, Result};
