//! Plan-distilled goal-conditioned embeddings for 2D navigation datasets.
//!
//! The pipeline runs in stages:
//!
//! 1. [`maze`] generates exploratory rollouts of rasterized observations.
//! 2. [`local_metric`] learns a 1-step reachability distance from the rollouts.
//! 3. [`graph`] connects observations through dataset transitions and
//!    local-metric loop closures.
//! 4. [`planner`] searches that graph (Dijkstra, A*, lookahead-limited greedy).
//! 5. [`trainer`] distills shortest-path distances into an embedding whose
//!    ℓp distance is the goal-conditioned value.
//! 6. [`eval`] measures success rates, lookahead curves and planning cost.
//!
//! Data-parallel loops go through [`exec`], which uses rayon when the
//! `parallel` feature is enabled and falls back to plain iteration otherwise.
//! Results never depend on the worker count.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod exec;
pub mod eval;
pub mod graph;
pub mod io;
pub mod local_metric;
pub mod maze;
pub mod planner;
pub mod seed;
pub mod stats;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
