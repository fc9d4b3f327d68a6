//! Estimation-theoretic analysis of over-the-air phase calibration for
//! distributed antenna arrays.
//!
//! Antennas measure pairwise phase differences; the [`topology`] of who
//! measures on whom, together with the measurement [`noise`] covariance,
//! determines how accurately the per-antenna phases can be estimated
//! ([`calibrate`]) and how much power leaks into a null-steered focal spot
//! ([`beamform`]). [`spectra`] holds closed forms for named topologies and
//! [`mc`] validates all of it by simulation.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod beamform;
pub mod calibrate;
pub mod cli;
pub mod error;
pub mod io;
pub mod linalg;
pub mod mc;
pub mod noise;
pub mod spectra;
pub mod topology;

pub use error::{Error, Result};
