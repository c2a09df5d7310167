//! Whole-scan fetal biometry.
//!
//! Aggregates noisy per-frame biometric measurements over an entire
//! ultrasound examination into a robust estimate with a credible interval.
//! Per-frame measurements come from heatmaps, caliper annotations or raw
//! values; each passes a chain of quality gates before feeding a recursive
//! Gaussian + uniform mixture estimator.

pub mod geometry;
pub mod calibration;
pub mod biometric;
pub mod estimator;
pub mod pipeline;
pub mod simulator;
