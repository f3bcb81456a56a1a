//! Two-phase Navier-Stokes-Cahn-Hilliard flow in periodically perforated
//! domains and its homogenized limit.

pub mod cell_problems;
pub mod dynamics;
pub mod error;
pub mod fields;
pub mod geometry;
pub mod linalg;
pub mod macro_solver;
pub mod micro;
pub mod ops;
pub mod snapshot;
pub mod unfolding;
pub mod viscosity;

pub use error::{Error, Result};

/// Crate name and version embedded in every report.
pub const VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));
