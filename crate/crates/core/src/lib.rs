//! Desk-scale simulation and verification laboratory for time-dependent
//! spatial averages of the one-dimensional stochastic heat equation with
//! multiplicative noise and flat unit initial data.
//!
//! The crate provides:
//!
//! * exact reference quantities (heat kernel, renewal second moments,
//!   two-point covariances, window-integral variances) in [`kernel`];
//! * reproducible counter-based space-time white noise and two independent
//!   discretisations of the equation in [`solver`];
//! * window-restricted localised solutions with exact dependence cones in
//!   [`localization`];
//! * exponentially growing averaging windows and the alternating interval
//!   partitions in [`windows`];
//! * moment Lyapunov exponent curves and the lambda-threshold calculator in
//!   [`exponents`];
//! * Monte Carlo ensembles and the limit-theorem diagnostics in [`harness`].
//!
//! Everything is deterministic given its configuration: noise increments
//! are pure functions of (seed, step, cell), and all reductions run in a
//! schedule-independent order, so results are byte-identical for any
//! worker count.

pub mod error;
pub mod exponents;
pub mod harness;
pub mod kernel;
pub mod localization;
pub mod num;
pub mod solver;
pub mod stats;
pub mod windows;

pub use error::{Error, Result};
