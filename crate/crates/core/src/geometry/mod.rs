//! Geometric measurement primitives.
//!
//! Turns heatmaps and point annotations into calibrated lengths (mm) and
//! provides the quality metrics used by the frame gates: eccentricity,
//! cephalic index and Dice overlap between heatmaps.

mod ellipse;
mod heatmap;

pub use ellipse::{
    bpd_from_head_ellipse, cephalic_index, eccentricity, ellipse_perimeter, fit_ellipse,
    perimeter_px, sampson_distance, EllipseParams,
};
pub use heatmap::{
    dsc, heatmap_to_ellipse, linear_biometric, reconstruct_heatmap, Heatmap, LinearMeasurement,
    DEFAULT_INTENSITY_FLOOR, DEFAULT_MIN_SEPARATION,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("only one distinct maximum found, cannot locate two endpoints")]
    SingleMaximum,
    #[error("annotation does not fit inside a {width}x{height} grid")]
    OutOfBounds { width: usize, height: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Pixel-grid coordinate. `x` runs along columns, `y` along rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2D {
    pub x: f64,
    pub y: f64,
}

impl Point2D {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point2D) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Isotropic pixel size in millimetres per pixel.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct PixelScale(f64);

impl PixelScale {
    pub fn new(mm_per_px: f64) -> Result<Self, GeometryError> {
        if mm_per_px.is_finite() && mm_per_px > 0.0 {
            Ok(Self(mm_per_px))
        } else {
            Err(GeometryError::InvalidParameter(format!(
                "pixel scale must be positive and finite, got {mm_per_px}"
            )))
        }
    }

    pub fn mm_per_px(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for PixelScale {
    type Error = GeometryError;
    fn try_from(v: f64) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<PixelScale> for f64 {
    fn from(s: PixelScale) -> f64 {
        s.0
    }
}

/// A sonographer-style annotation: either a caliper pair or an ellipse outline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Annotation {
    LinearEndpoints(Point2D, Point2D),
    EllipseOutline(EllipseParams),
}

impl Annotation {
    pub fn linear(p1: Point2D, p2: Point2D) -> Result<Self, GeometryError> {
        if !(p1.x.is_finite() && p1.y.is_finite() && p2.x.is_finite() && p2.y.is_finite()) {
            return Err(GeometryError::InvalidParameter("non-finite endpoint".into()));
        }
        if p1 == p2 {
            return Err(GeometryError::DegenerateInput("coincident endpoints".into()));
        }
        Ok(Self::LinearEndpoints(p1, p2))
    }
}
