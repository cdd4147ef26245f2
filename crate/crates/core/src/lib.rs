//! Outage analysis for a fading point-to-point link whose transmitter and
//! receiver both run on harvested energy.

// `!(x > 0.0)` style checks deliberately reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod cli;
pub mod error;
pub mod fsmc;
pub mod model;
pub mod montecarlo;
pub mod policy;

pub use error::{Error, Result};
