//! Multi-coil k-space simulation and reconstruction with analytic loss
//! gradients.
//!
//! The modules build on each other bottom-up: [`transforms`] supplies the
//! centered FFT and coil combination, [`sampling`] and [`calibration`]
//! model acquisition, [`filters`] and [`losses`] define the objective,
//! [`recon`] optimizes it, and [`metrics`], [`io`] and [`experiment`]
//! evaluate and report.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod error;
pub mod experiment;
pub mod filters;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod phantom;
pub mod recon;
pub mod sampling;
pub mod transforms;

pub use error::{Error, Result};
