//! Recursive whole-scan estimation.
//!
//! Each biometric is modelled as a mixture of a Gaussian around the true value
//! and a uniform nuisance over the plausibility window. [`MixtureState`] folds
//! in one measurement at a time; [`fit_mixture_batch`] fits the same model to a
//! pooled sample by expectation-maximisation.

mod batch;
mod chart;
mod mixture;

pub use batch::{empirical_cdf_distance, fit_mixture_batch, MixtureFit, MixtureModel};
pub use chart::{Centiles, ChartRow, GrowthChart};
pub use mixture::{
    init_estimator, EstimateSnapshot, EstimatorConfig, GateDecision, MixtureState,
};

use thiserror::Error;

use crate::biometric::{Biometric, GestationalAge};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimatorError {
    #[error("gestational age {ga} outside the chart domain for {biometric}")]
    GaOutOfRange {
        biometric: Biometric,
        ga: GestationalAge,
    },
    #[error("growth chart has no rows for {0}")]
    MissingBiometric(Biometric),
    #[error("invalid growth chart: {0}")]
    InvalidChart(String),
    #[error("invalid estimator configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid estimator state: {0}")]
    InvalidState(String),
    #[error("measurement {x} mm outside plausibility window [{lower}, {upper}]")]
    Implausible { x: f64, lower: f64, upper: f64 },
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("{count} samples fall outside the bounds [{lower}, {upper}]")]
    SamplesOutOfBounds { count: usize, lower: f64, upper: f64 },
}
