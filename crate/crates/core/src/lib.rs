//! Martingale posteriors by predictive resampling.
//!
//! A predictive rule is conditioned on observed data, forward-sampled to a
//! finite horizon, and the risk minimizer of the augmented sample is taken as
//! one posterior draw. Credible sets, coverage and diagnostics sit on top.

pub mod data;
pub mod dgp;
pub mod diagnostics;
pub mod engine;
pub mod exec;
pub mod functionals;
pub mod rng;
pub mod rules;
pub mod special;
pub mod uq;
