//! Fast sparse calibration of a simulated drifting transmon.
//!
//! Closed-form three-point estimators, controller-style optimizers, the
//! calibration primitives built from them, a closed-loop recalibration
//! campaign with explicit latency accounting, and drift analysis tools.

// NaN-rejecting guards are written as negated comparisons on purpose.
// Primitive errors carry the time already spent, so they are large.
#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::result_large_err,
    clippy::too_many_arguments
)]

pub mod analysis;
pub mod config;
pub mod control;
pub mod device;
pub mod drift;
pub mod estimators;
pub mod optimizers;
pub mod primitives;
pub mod records;
pub mod rng;
pub mod timing;
