//! Staleness factor model estimation and staleness-corrected spot and
//! integrated volatility matrices for high-frequency panels.
//!
//! Comparisons are often written `!(x > 0.0)` so that NaN falls on the error path.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod flags;
pub mod io;
pub mod linalg;
pub mod link;
pub mod portfolio;
pub mod replicate;
pub mod rng;
pub mod sfm;
pub mod sim;
pub mod vol;

pub use error::{Error, Result};
pub use flags::Flag;
pub use link::LinkKind;
