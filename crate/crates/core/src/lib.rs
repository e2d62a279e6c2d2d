//! Simultaneous machine translation policies with future-source anticipation,
//! plus the metrics and evaluation harness used to compare them.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod models;
pub mod policies;
pub mod stream;
pub mod sweep;
pub mod synthetic;
pub mod taf;

pub use error::{Error, Result};
pub use stream::{Action, ActionKind, StreamState, Token, Trajectory};
