use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::biometric::GestationalAge;
use crate::calibration::TickSpec;
use crate::estimator::EstimatorConfig;
use crate::geometry::{DEFAULT_INTENSITY_FLOOR, DEFAULT_MIN_SEPARATION};

/// Thresholds for the per-frame quality gates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateConfig {
    /// Minimum plane-classifier confidence (inclusive).
    pub confidence_min: f64,
    /// Minimum Dice overlap between the payload heatmap and the heatmap
    /// rebuilt from the fitted ellipse.
    pub dsc_min: f64,
    /// Binarisation level used for the Dice overlap.
    pub dsc_binarize_at: f64,
    /// Head ellipses outside this eccentricity range are rejected (HC, BPD).
    pub head_eccentricity_min: f64,
    pub head_eccentricity_max: f64,
    /// Abdominal ellipses must have eccentricity strictly below this.
    pub abdomen_eccentricity_max: f64,
    /// Gaussian kernel used to rebuild heatmaps for the Dice gate (px).
    pub kernel_sigma: f64,
    /// Fraction of the heatmap peak below which pixels are ignored by the ellipse fit.
    pub intensity_floor: f64,
    /// Minimum separation between linear endpoints (px).
    pub min_separation: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            confidence_min: 0.95,
            dsc_min: 0.6,
            dsc_binarize_at: 0.5,
            head_eccentricity_min: 0.25,
            head_eccentricity_max: 0.8,
            abdomen_eccentricity_max: 0.6,
            kernel_sigma: 2.0,
            intensity_floor: DEFAULT_INTENSITY_FLOOR,
            min_separation: DEFAULT_MIN_SEPARATION,
        }
    }
}

impl GateConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(PipelineError::Config(format!("{name} = {v} outside [0, 1]")))
            }
        };
        unit("confidence_min", self.confidence_min)?;
        unit("dsc_min", self.dsc_min)?;
        unit("dsc_binarize_at", self.dsc_binarize_at)?;
        unit("intensity_floor", self.intensity_floor)?;
        unit("head_eccentricity_min", self.head_eccentricity_min)?;
        unit("head_eccentricity_max", self.head_eccentricity_max)?;
        unit("abdomen_eccentricity_max", self.abdomen_eccentricity_max)?;
        if self.head_eccentricity_min >= self.head_eccentricity_max {
            return Err(PipelineError::Config(
                "head eccentricity range is empty".into(),
            ));
        }
        if !(self.kernel_sigma > 0.0 && self.kernel_sigma.is_finite()) {
            return Err(PipelineError::Config("kernel_sigma must be positive".into()));
        }
        if !(self.min_separation >= 0.0 && self.min_separation.is_finite()) {
            return Err(PipelineError::Config("min_separation must be non-negative".into()));
        }
        Ok(())
    }
}

/// Everything `run` needs besides the stream and the growth chart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub ga: GestationalAge,
    #[serde(default)]
    pub gates: GateConfig,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub ticks: TickSpec,
}

impl RunConfig {
    pub fn new(ga: GestationalAge) -> Self {
        Self {
            ga,
            gates: GateConfig::default(),
            estimator: EstimatorConfig::default(),
            ticks: TickSpec::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.gates.validate()?;
        self.estimator
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))
    }
}
