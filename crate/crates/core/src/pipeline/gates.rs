use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::config::GateConfig;
use super::record::{FrameRecord, Payload};
use crate::biometric::{Biometric, MeasurementKind};
use crate::calibration::{pixel_size, ScanLine, TickSpec};
use crate::estimator::{GateDecision, MixtureState};
use crate::geometry::{
    bpd_from_head_ellipse, dsc, eccentricity, ellipse_perimeter, heatmap_to_ellipse,
    linear_biometric, reconstruct_heatmap, Annotation, EllipseParams, GeometryError, Heatmap,
    PixelScale,
};

/// The gate that turned a frame away. Listed in the order they are applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RejectReason {
    Frozen,
    Confidence,
    Geometry,
    Eccentricity,
    Dsc,
    Plausibility,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RejectReason::Frozen => "frozen",
            RejectReason::Confidence => "confidence",
            RejectReason::Geometry => "geometry",
            RejectReason::Eccentricity => "eccentricity",
            RejectReason::Dsc => "dsc",
            RejectReason::Plausibility => "plausibility",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Disposition {
    Accepted { value_mm: f64, posterior: f64 },
    Rejected(RejectReason),
}

/// Last pixel scale seen in the stream.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ScaleTracker {
    last: Option<PixelScale>,
}

impl ScaleTracker {
    pub fn last(&self) -> Option<PixelScale> {
        self.last
    }
}

/// Pixel scale for a frame: explicit value, then the scale bar scan line,
/// then the last known value. Updates the tracker on success.
pub fn resolve_scale(
    fr: &FrameRecord,
    ticks: &TickSpec,
    tracker: &mut ScaleTracker,
) -> Option<PixelScale> {
    let fresh = fr
        .scale_mm_per_px
        .and_then(|s| PixelScale::new(s).ok())
        .or_else(|| {
            let line = ScanLine::new(fr.scanline.clone()?).ok()?;
            pixel_size(&line, ticks).ok()
        });
    if fresh.is_some() {
        tracker.last = fresh;
    }
    tracker.last
}

struct Extracted {
    value_mm: f64,
    ellipse: Option<EllipseParams>,
}

/// Geometry derived once per frame and shared by every biometric of the plane.
struct FrameGeometry<'a> {
    fr: &'a FrameRecord,
    gc: &'a GateConfig,
    scale: Option<PixelScale>,
    heatmap_ellipse: Option<Result<EllipseParams, GeometryError>>,
    heatmap_dsc: Option<Option<f64>>,
}

impl<'a> FrameGeometry<'a> {
    fn ellipse_from(&mut self, h: &Heatmap) -> Result<EllipseParams, GeometryError> {
        let floor = self.gc.intensity_floor;
        self.heatmap_ellipse
            .get_or_insert_with(|| heatmap_to_ellipse(h, floor))
            .clone()
    }

    fn extract(&mut self, b: Biometric) -> Option<Extracted> {
        let fr = self.fr;
        match &fr.payload {
            Payload::Measurement { values } => {
                let v = *values.get(&b)?;
                v.is_finite().then_some(Extracted {
                    value_mm: v,
                    ellipse: None,
                })
            }
            Payload::Annotation(a) => {
                let scale = self.scale?;
                let ann = a.to_annotation().ok()?;
                measure(b, &ann, scale)
            }
            Payload::Heatmap(h) => {
                let scale = self.scale?;
                match b.kind() {
                    MeasurementKind::Linear => {
                        let m = linear_biometric(h, scale, self.gc.min_separation).ok()?;
                        Some(Extracted {
                            value_mm: m.length_mm,
                            ellipse: None,
                        })
                    }
                    _ => {
                        let e = self.ellipse_from(h).ok()?;
                        measure(b, &Annotation::EllipseOutline(e), scale)
                    }
                }
            }
        }
    }

    /// Dice overlap between the payload heatmap and the heatmap rebuilt from
    /// the extracted geometry. `None` when the payload is not a heatmap,
    /// `Some(None)` when the rebuild falls outside the grid.
    fn dsc(&mut self, b: Biometric) -> Option<Option<f64>> {
        let Payload::Heatmap(h) = &self.fr.payload else {
            return None;
        };
        let gc = self.gc;
        let ann = match b.kind() {
            MeasurementKind::Linear => {
                let s = self.scale?;
                let m = linear_biometric(h, s, gc.min_separation).ok()?;
                Annotation::linear(m.endpoints.0, m.endpoints.1).ok()?
            }
            _ => {
                if let Some(cached) = self.heatmap_dsc {
                    return Some(cached);
                }
                Annotation::EllipseOutline(self.ellipse_from(h).ok()?)
            }
        };
        let score = reconstruct_heatmap(&ann, gc.kernel_sigma, h.width(), h.height())
            .and_then(|r| dsc(h, &r, gc.dsc_binarize_at))
            .ok();
        if b.kind() != MeasurementKind::Linear {
            self.heatmap_dsc = Some(score);
        }
        Some(score)
    }
}

fn measure(b: Biometric, ann: &Annotation, scale: PixelScale) -> Option<Extracted> {
    match (b.kind(), ann) {
        (MeasurementKind::Linear, Annotation::LinearEndpoints(p1, p2)) => Some(Extracted {
            value_mm: p1.distance(p2) * scale.mm_per_px(),
            ellipse: None,
        }),
        (MeasurementKind::Circumference, Annotation::EllipseOutline(e)) => Some(Extracted {
            value_mm: ellipse_perimeter(e, scale),
            ellipse: Some(*e),
        }),
        (MeasurementKind::HeadMinorAxis, Annotation::EllipseOutline(e)) => Some(Extracted {
            value_mm: bpd_from_head_ellipse(e, scale),
            ellipse: Some(*e),
        }),
        _ => None,
    }
}

fn eccentricity_ok(b: Biometric, e: &EllipseParams, gc: &GateConfig) -> bool {
    let ecc = eccentricity(e);
    match b {
        Biometric::Hc | Biometric::Bpd => {
            ecc >= gc.head_eccentricity_min && ecc <= gc.head_eccentricity_max
        }
        Biometric::Ac => ecc < gc.abdomen_eccentricity_max,
        Biometric::Fl | Biometric::Tcd => true,
    }
}

/// Runs one frame through the gates for every biometric of its plane that
/// has an estimator, updating the estimators on acceptance.
///
/// Order: frozen, confidence, geometry, eccentricity, Dice overlap,
/// plausibility. Frames of planes without biometrics return nothing.
pub fn gate_chain(
    fr: &FrameRecord,
    gc: &GateConfig,
    scale: Option<PixelScale>,
    states: &mut BTreeMap<Biometric, MixtureState>,
) -> Vec<(Biometric, Disposition)> {
    let routed: Vec<Biometric> = fr
        .plane
        .biometrics()
        .iter()
        .copied()
        .filter(|b| states.contains_key(b))
        .collect();
    let reject_all = |r: RejectReason| {
        routed
            .iter()
            .map(|b| (*b, Disposition::Rejected(r)))
            .collect::<Vec<_>>()
    };
    if routed.is_empty() {
        return Vec::new();
    }
    if fr.frozen {
        return reject_all(RejectReason::Frozen);
    }
    if !(fr.conf >= gc.confidence_min) {
        return reject_all(RejectReason::Confidence);
    }

    let mut geo = FrameGeometry {
        fr,
        gc,
        scale,
        heatmap_ellipse: None,
        heatmap_dsc: None,
    };
    let mut out = Vec::with_capacity(routed.len());
    for b in routed {
        let Some(x) = geo.extract(b) else {
            out.push((b, Disposition::Rejected(RejectReason::Geometry)));
            continue;
        };
        if let Some(e) = &x.ellipse {
            if !eccentricity_ok(b, e, gc) {
                out.push((b, Disposition::Rejected(RejectReason::Eccentricity)));
                continue;
            }
        }
        if let Some(score) = geo.dsc(b) {
            if !score.is_some_and(|s| s >= gc.dsc_min) {
                out.push((b, Disposition::Rejected(RejectReason::Dsc)));
                continue;
            }
        }
        let state = states.get_mut(&b).expect("routed biometric has a state");
        let d = match state.plausibility_gate(x.value_mm) {
            GateDecision::Reject => Disposition::Rejected(RejectReason::Plausibility),
            GateDecision::Accept => match state.update(x.value_mm) {
                Ok(posterior) => Disposition::Accepted {
                    value_mm: x.value_mm,
                    posterior,
                },
                Err(_) => Disposition::Rejected(RejectReason::Plausibility),
            },
        };
        out.push((b, d));
    }
    out
}
