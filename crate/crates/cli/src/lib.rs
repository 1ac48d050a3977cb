//! Experiment runner: configuration, training runs, artifacts and the
//! invariant self-check.

pub mod check;
pub mod config;
pub mod output;
pub mod run;
