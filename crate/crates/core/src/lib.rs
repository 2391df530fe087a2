//! Transient simulation and optimal control of coupled gas and power networks.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coupling;
pub mod error;
pub mod gas;
pub mod io;
pub mod linalg;
pub mod model;
pub mod network;
pub mod optimization;
pub mod power;
pub mod solver;
pub mod stochastic;
pub mod timeline;

pub use error::{Error, Result};
