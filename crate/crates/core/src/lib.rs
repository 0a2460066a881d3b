//! Optimal dynamic allocation for a defined-contribution pension fund with
//! stochastic contributions and stochastic stock volatility, solved by
//! least-squares Monte Carlo.

// `!(x > 0.0)` is used deliberately so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytics;
pub mod cli;
pub mod config;
pub mod experiments;
pub mod error;
pub mod lsmc;
pub mod output;
pub mod params;
pub mod sde;

pub use error::{Error, Result};
