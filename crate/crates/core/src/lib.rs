//! Predictive online convex optimization: constraint sets, parametric
//! objective families, parameter forecasters, predictive gradient descent,
//! expert learning over forecasters, regret accounting and the experiment
//! drivers built on top of them.

// `!(x > 0.0)` style checks are intentional: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod descent;
pub mod domains;
pub mod error;
pub mod experiments;
pub mod objectives;
pub mod output;
pub mod predictors;
pub mod regret;
pub mod scenarios;
pub mod smad;

pub use error::{Error, Result};
