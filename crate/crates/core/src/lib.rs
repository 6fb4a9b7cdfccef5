//! Dynamic equivalents of full-converter wind farms that account for both
//! wind speed and fault severity, plus a quasi-static phasor simulator used
//! to validate them against the per-turbine farm.

// `!(x > 0.0)` style checks are meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregate;
pub mod classify;
pub mod cli;
pub mod control;
pub mod error;
pub mod feeder;
pub mod scenario;
pub mod simulate;
pub mod wake;

pub use error::{Error, Result};
