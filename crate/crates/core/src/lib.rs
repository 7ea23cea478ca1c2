//! GNSS-stereo-inertial sliding-window estimation.
//!
//! The crate is split along the data flow: [`geometry`] primitives feed the
//! [`preintegration`] of IMU samples and the residuals in [`factors`]; the
//! [`estimator`] assembles them into a sliding-window least-squares problem.
//! [`simulator`] produces synthetic field-robot datasets and [`evaluation`]
//! scores trajectories against ground truth. [`io`] and [`config`] hold the
//! file formats.

// `!(a > b)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod estimator;
pub mod evaluation;
pub mod factors;
pub mod geometry;
pub mod io;
pub mod preintegration;
pub mod simulator;
