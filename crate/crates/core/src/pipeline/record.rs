//! Frame records and the JSONL stream format.
//!
//! One JSON object per line:
//!
//! ```text
//! {"frame": 12, "t": 0.4, "plane": "femur", "conf": 0.98,
//!  "payload": {"kind": "measurement", "values": {"fl": 33.1}},
//!  "scale_mm_per_px": 0.4, "scanline": [..], "frozen": false}
//! ```
//!
//! Field order is free and unknown fields are ignored. `payload.kind` is one
//! of `measurement`, `heatmap` (`width`, `height`, row-major `data`) or
//! `annotation` (`shape` = `linear` with `p1`/`p2`, or `ellipse` with
//! `center`, `a`, `b`, `theta`).

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::biometric::{Biometric, Plane};
use crate::geometry::{Annotation, EllipseParams, GeometryError, Heatmap, Point2D};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum AnnotationPayload {
    Linear { p1: Point2D, p2: Point2D },
    Ellipse {
        center: Point2D,
        a: f64,
        b: f64,
        theta: f64,
    },
}

impl AnnotationPayload {
    pub fn to_annotation(&self) -> Result<Annotation, GeometryError> {
        match *self {
            AnnotationPayload::Linear { p1, p2 } => Annotation::linear(p1, p2),
            AnnotationPayload::Ellipse { center, a, b, theta } => {
                EllipseParams::new(center, a, b, theta).map(Annotation::EllipseOutline)
            }
        }
    }
}

impl From<&Annotation> for AnnotationPayload {
    fn from(a: &Annotation) -> Self {
        match *a {
            Annotation::LinearEndpoints(p1, p2) => AnnotationPayload::Linear { p1, p2 },
            Annotation::EllipseOutline(e) => AnnotationPayload::Ellipse {
                center: e.center,
                a: e.a,
                b: e.b,
                theta: e.theta,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Payload {
    /// Already-measured values in millimetres, keyed by biometric.
    Measurement { values: BTreeMap<Biometric, f64> },
    Heatmap(Heatmap),
    Annotation(AnnotationPayload),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame: u64,
    pub t: f64,
    pub plane: Plane,
    pub conf: f64,
    pub payload: Payload,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale_mm_per_px: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scanline: Option<Vec<f64>>,
    #[serde(default)]
    pub frozen: bool,
}

impl FrameRecord {
    fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.conf) {
            return Err(format!("confidence {} outside [0, 1]", self.conf));
        }
        if !self.t.is_finite() {
            return Err("non-finite timestamp".into());
        }
        Ok(())
    }
}

/// A malformed input line that was skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct Ingested {
    pub records: Vec<FrameRecord>,
    pub skipped: Vec<LineError>,
}

pub fn parse_line(line: &str) -> Result<FrameRecord, String> {
    let rec: FrameRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    rec.validate()?;
    Ok(rec)
}

/// Reads a JSONL stream. Blank lines are ignored. Malformed lines abort in
/// strict mode and are otherwise collected in [`Ingested::skipped`].
pub fn ingest<R: BufRead>(reader: R, strict: bool) -> Result<Ingested, PipelineError> {
    let mut out = Ingested::default();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| PipelineError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(&line) {
            Ok(rec) => out.records.push(rec),
            Err(message) if strict => {
                return Err(PipelineError::Parse {
                    line: line_no,
                    message,
                })
            }
            Err(message) => out.skipped.push(LineError {
                line: line_no,
                message,
            }),
        }
    }
    Ok(out)
}

pub fn write_jsonl<W: Write>(mut w: W, records: &[FrameRecord]) -> Result<(), PipelineError> {
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| PipelineError::Io(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| PipelineError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| PipelineError::Io(e.to_string()))
}
