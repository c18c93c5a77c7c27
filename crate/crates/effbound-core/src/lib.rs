//! Semiparametric efficiency bounds for linear functionals in white-noise,
//! deconvolution and low-frequency Lévy models.
//!
//! The crate computes efficient influence functions and information bounds
//! and checks them against a Cramér–Rao supremum oracle and Monte Carlo
//! variances of efficient estimators.

// `!(x > 0.0)` guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops over grids read more plainly than zipped iterators here.
#![allow(clippy::needless_range_loop)]

pub mod bounds;
pub mod error;
pub mod models;
pub mod operators;
pub mod oracle;
pub mod simulate;
pub mod spectral_core;

pub use error::{EffError, Result};
pub use spectral_core::{GridFunction, MixedMeasure, SpectralFunction, UniformGrid, C64};
