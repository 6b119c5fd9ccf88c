//! Numerical solver for stationary monotone mean-field games on the flat torus,
//! by continuation and vanishing regularization.

// `!(x > 0.0)` style guards are deliberate: they reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop, clippy::type_complexity)]

pub mod config;
pub mod coupling;
pub mod error;
pub mod hamiltonian;
pub mod mfg_operator;
pub mod run;
pub mod solver;
pub mod torus_grid;
pub mod verify;

pub use error::{MfgError, Result};
