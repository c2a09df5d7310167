//! Seeded synthetic examinations.
//!
//! Every in-plane measurement is drawn from the Gaussian + uniform mixture the
//! estimator assumes: with probability `p_t` from `N(truth, sigma²)`, otherwise
//! uniformly over the nuisance window. Which component produced a value is
//! kept in [`FrameLabel`]s for oracle tests and never written to the stream.
//!
//! Scenario files are TOML:
//!
//! ```toml
//! ga = "20w3d"
//! seed = 7
//! frame_rate = 30.0            # optional
//! payload = "measurement"      # or "annotation", "heatmap"
//! operator_offset_mm = 0.0     # optional, added to every Gaussian mean
//!
//! [biometrics.fl]
//! truth_mm = 33.0
//! p_t = 0.79
//! sigma_mm = 1.8
//! nuisance = [23.8, 42.2]
//!
//! [[schedule]]
//! plane = "femur"
//! duration_s = 60.0
//! frozen = false               # optional
//!
//! [[pixel_scale]]              # optional, default 0.5 mm/px throughout
//! from_s = 0.0
//! mm_per_px = 0.5
//!
//! [confidence.femur]           # optional, per plane
//! logit_mean = 3.9
//! logit_sd = 1.5
//!
//! [heatmap]                    # optional
//! width = 384
//! height = 288
//! kernel_sigma = 2.0
//! abdomen_axis_ratio = 0.9
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as StatNormal};
use thiserror::Error;

use crate::biometric::{Biometric, GestationalAge, Plane};
use crate::calibration::{ScanLine, TickSpec, MIN_SCANLINE_LEN};
use crate::geometry::{
    perimeter_px, reconstruct_heatmap, Annotation, EllipseParams, GeometryError, Heatmap, Point2D,
};
use crate::pipeline::{AnnotationPayload, FrameRecord, Payload};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimulationError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, SimulationError> {
    Err(SimulationError::InvalidScenario(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiometricTruth {
    pub truth_mm: f64,
    pub p_t: f64,
    pub sigma_mm: f64,
    pub nuisance: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub plane: Plane,
    pub duration_s: f64,
    #[serde(default)]
    pub frozen: bool,
}

/// Classifier confidence is `sigmoid(L)` with `L ~ N(logit_mean, logit_sd²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfidenceModel {
    pub logit_mean: f64,
    pub logit_sd: f64,
}

impl ConfidenceModel {
    /// Model under which a fraction `frac` of frames reach `threshold`.
    pub fn passing(frac: f64, threshold: f64, logit_sd: f64) -> Self {
        let z = StatNormal::new(0.0, 1.0)
            .expect("standard normal")
            .inverse_cdf(frac);
        Self {
            logit_mean: logit(threshold) + logit_sd * z,
            logit_sd,
        }
    }

    /// Every frame at the same, essentially certain, confidence.
    pub fn certain() -> Self {
        Self {
            logit_mean: 12.0,
            logit_sd: 0.0,
        }
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        let l = if self.logit_sd > 0.0 {
            Normal::new(self.logit_mean, self.logit_sd)
                .expect("validated spread")
                .sample(rng)
        } else {
            self.logit_mean
        };
        1.0 / (1.0 + (-l).exp())
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

const DEFAULT_LOGIT_SD: f64 = 1.5;

/// Per-plane confidence models. Defaults pass the 0.95 gate for 83.5 %
/// (trans-ventricular), 82.1 % (trans-cerebellar), 73.2 % (abdominal) and
/// 66.4 % (femur) of frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfidenceTable {
    pub brain_tv: ConfidenceModel,
    pub brain_cb: ConfidenceModel,
    pub abdominal: ConfidenceModel,
    pub femur: ConfidenceModel,
    pub background: ConfidenceModel,
}

impl Default for ConfidenceTable {
    fn default() -> Self {
        let m = |frac| ConfidenceModel::passing(frac, 0.95, DEFAULT_LOGIT_SD);
        Self {
            brain_tv: m(0.835),
            brain_cb: m(0.821),
            abdominal: m(0.732),
            femur: m(0.664),
            background: m(0.05),
        }
    }
}

impl ConfidenceTable {
    pub fn certain() -> Self {
        let c = ConfidenceModel::certain();
        Self {
            brain_tv: c,
            brain_cb: c,
            abdominal: c,
            femur: c,
            background: c,
        }
    }

    pub fn get(&self, plane: Plane) -> &ConfidenceModel {
        match plane {
            Plane::BrainTv => &self.brain_tv,
            Plane::BrainCb => &self.brain_cb,
            Plane::Abdominal => &self.abdominal,
            Plane::Femur => &self.femur,
            Plane::Background => &self.background,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PayloadMode {
    #[default]
    Measurement,
    Annotation,
    Heatmap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaleSegment {
    pub from_s: f64,
    pub mm_per_px: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatmapSettings {
    pub width: usize,
    pub height: usize,
    pub kernel_sigma: f64,
    /// Minor over major axis of rendered abdominal ellipses.
    pub abdomen_axis_ratio: f64,
}

impl Default for HeatmapSettings {
    fn default() -> Self {
        Self {
            width: 384,
            height: 288,
            kernel_sigma: 2.0,
            abdomen_axis_ratio: 0.9,
        }
    }
}

/// Scale-bar rendering attached to frames when `emit_scanline` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanlineSettings {
    pub length: usize,
    pub noise_amp: f64,
    pub ticks: TickSpec,
}

impl Default for ScanlineSettings {
    fn default() -> Self {
        Self {
            length: 1024,
            noise_amp: 0.02,
            ticks: TickSpec::default(),
        }
    }
}

fn default_frame_rate() -> f64 {
    30.0
}

fn default_pixel_scale() -> Vec<ScaleSegment> {
    vec![ScaleSegment {
        from_s: 0.0,
        mm_per_px: 0.5,
    }]
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanScenario {
    pub ga: GestationalAge,
    pub seed: u64,
    #[serde(default = "default_frame_rate")]
    pub frame_rate: f64,
    pub biometrics: BTreeMap<Biometric, BiometricTruth>,
    pub schedule: Vec<Segment>,
    #[serde(default)]
    pub confidence: ConfidenceTable,
    #[serde(default)]
    pub payload: PayloadMode,
    #[serde(default = "default_pixel_scale")]
    pub pixel_scale: Vec<ScaleSegment>,
    /// Write `scale_mm_per_px` on every frame.
    #[serde(default = "default_true")]
    pub emit_scale: bool,
    /// Attach a rendered scale-bar scan line to every frame.
    #[serde(default)]
    pub emit_scanline: bool,
    #[serde(default)]
    pub scanline: ScanlineSettings,
    #[serde(default)]
    pub heatmap: HeatmapSettings,
    #[serde(default)]
    pub operator_offset_mm: f64,
}

impl ScanScenario {
    /// Twenty-minute examination at 20w3d: background interleaved with one
    /// dwell on each standard plane.
    pub fn standard(seed: u64) -> Self {
        let truth = |truth_mm, sigma_mm, lo, hi| BiometricTruth {
            truth_mm,
            p_t: 0.79,
            sigma_mm,
            nuisance: [lo, hi],
        };
        let seg = |plane, duration_s| Segment {
            plane,
            duration_s,
            frozen: false,
        };
        Self {
            ga: GestationalAge::from_weeks_days(20, 3),
            seed,
            frame_rate: default_frame_rate(),
            biometrics: BTreeMap::from([
                (Biometric::Hc, truth(178.0, 4.3, 128.5, 221.5)),
                (Biometric::Bpd, truth(47.0, 1.3, 35.1, 60.9)),
                (Biometric::Ac, truth(153.0, 5.0, 103.5, 196.5)),
                (Biometric::Fl, truth(33.0, 1.8, 23.8, 42.2)),
                (Biometric::Tcd, truth(20.5, 0.9, 14.35, 25.65)),
            ]),
            schedule: vec![
                seg(Plane::Background, 300.0),
                seg(Plane::BrainTv, 60.0),
                seg(Plane::Background, 120.0),
                seg(Plane::BrainCb, 45.0),
                seg(Plane::Background, 180.0),
                seg(Plane::Abdominal, 60.0),
                seg(Plane::Background, 240.0),
                seg(Plane::Femur, 60.0),
                seg(Plane::Background, 135.0),
            ],
            confidence: ConfidenceTable::default(),
            payload: PayloadMode::Measurement,
            pixel_scale: default_pixel_scale(),
            emit_scale: true,
            emit_scanline: false,
            scanline: ScanlineSettings::default(),
            heatmap: HeatmapSettings::default(),
            operator_offset_mm: 0.0,
        }
    }

    /// `frames` femur frames at 20w3d, all confidently classified, with the
    /// nuisance window equal to the estimator's plausibility window.
    pub fn femur_only(p_t: f64, sigma_mm: f64, truth_mm: f64, frames: usize, seed: u64) -> Self {
        let mut sc = Self::standard(seed);
        sc.biometrics = BTreeMap::from([(
            Biometric::Fl,
            BiometricTruth {
                truth_mm,
                p_t,
                sigma_mm,
                nuisance: [23.8, 42.2],
            },
        )]);
        sc.schedule = vec![Segment {
            plane: Plane::Femur,
            duration_s: frames as f64 / sc.frame_rate,
            frozen: false,
        }];
        sc.confidence = ConfidenceTable::certain();
        sc
    }

    pub fn from_toml(text: &str) -> Result<Self, SimulationError> {
        let sc: ScanScenario =
            toml::from_str(text).map_err(|e| SimulationError::InvalidScenario(e.to_string()))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn from_path(path: &Path) -> Result<Self, SimulationError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimulationError::InvalidScenario(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serialises")
    }

    pub fn validate(&self) -> Result<(), SimulationError> {
        if !(self.frame_rate > 0.0 && self.frame_rate.is_finite()) {
            return invalid("frame_rate must be positive");
        }
        if self.schedule.is_empty() {
            return invalid("schedule is empty");
        }
        for s in &self.schedule {
            if !(s.duration_s > 0.0 && s.duration_s.is_finite()) {
                return invalid(format!("{} segment has non-positive duration", s.plane));
            }
        }
        for (b, t) in &self.biometrics {
            let [lo, hi] = t.nuisance;
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return invalid(format!("{b}: nuisance bounds [{lo}, {hi}] are empty"));
            }
            if !(t.truth_mm >= lo && t.truth_mm <= hi) {
                return invalid(format!("{b}: truth {} outside nuisance bounds", t.truth_mm));
            }
            if !(t.sigma_mm > 0.0 && t.sigma_mm.is_finite()) {
                return invalid(format!("{b}: sigma_mm must be positive"));
            }
            if !(0.0..=1.0).contains(&t.p_t) {
                return invalid(format!("{b}: p_t outside [0, 1]"));
            }
        }
        if self.pixel_scale.is_empty()
            || self
                .pixel_scale
                .iter()
                .any(|s| !(s.mm_per_px > 0.0 && s.mm_per_px.is_finite()) || !s.from_s.is_finite())
        {
            return invalid("pixel_scale needs at least one positive entry");
        }
        for p in [
            Plane::BrainTv,
            Plane::BrainCb,
            Plane::Abdominal,
            Plane::Femur,
            Plane::Background,
        ] {
            let c = self.confidence.get(p);
            if !(c.logit_mean.is_finite() && c.logit_sd >= 0.0 && c.logit_sd.is_finite()) {
                return invalid(format!("{p}: invalid confidence model"));
            }
        }
        let h = &self.heatmap;
        if h.width == 0 || h.height == 0 || !(h.kernel_sigma > 0.0) {
            return invalid("heatmap settings need a non-empty grid and positive kernel");
        }
        if !(h.abdomen_axis_ratio > 0.0 && h.abdomen_axis_ratio <= 1.0) {
            return invalid("abdomen_axis_ratio must lie in (0, 1]");
        }
        if !self.operator_offset_mm.is_finite() {
            return invalid("operator_offset_mm must be finite");
        }
        Ok(())
    }

    fn scale_at(&self, t: f64) -> f64 {
        self.pixel_scale
            .iter()
            .filter(|s| s.from_s <= t)
            .max_by(|a, b| a.from_s.total_cmp(&b.from_s))
            .unwrap_or(&self.pixel_scale[0])
            .mm_per_px
    }

    pub fn total_frames(&self) -> u64 {
        self.schedule
            .iter()
            .map(|s| (s.duration_s * self.frame_rate).round() as u64)
            .sum()
    }
}

/// Hidden ground truth for one emitted measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameLabel {
    pub frame: u64,
    pub biometric: Biometric,
    pub from_truth: bool,
    pub value_mm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedStream {
    pub records: Vec<FrameRecord>,
    pub labels: Vec<FrameLabel>,
}

pub fn simulate_stream(sc: &ScanScenario) -> Result<SimulatedStream, SimulationError> {
    sc.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
    let mut records = Vec::with_capacity(sc.total_frames() as usize);
    let mut labels = Vec::new();
    let mut scanlines: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    let mut frame = 0u64;

    for seg in &sc.schedule {
        let n = (seg.duration_s * sc.frame_rate).round() as u64;
        for _ in 0..n {
            let t = frame as f64 / sc.frame_rate;
            let mm_per_px = sc.scale_at(t);
            let conf = sc.confidence.get(seg.plane).draw(&mut rng);

            let mut values = BTreeMap::new();
            for b in seg.plane.biometrics() {
                let Some(truth) = sc.biometrics.get(b) else {
                    continue;
                };
                let from_truth = rng.gen::<f64>() < truth.p_t;
                let value_mm = if from_truth {
                    let mean = truth.truth_mm + sc.operator_offset_mm;
                    Normal::new(mean, truth.sigma_mm)
                        .expect("validated sigma")
                        .sample(&mut rng)
                } else {
                    rng.gen_range(truth.nuisance[0]..=truth.nuisance[1])
                };
                values.insert(*b, value_mm);
                labels.push(FrameLabel {
                    frame,
                    biometric: *b,
                    from_truth,
                    value_mm,
                });
            }

            let payload = match sc.payload {
                PayloadMode::Measurement => Payload::Measurement { values },
                PayloadMode::Annotation | PayloadMode::Heatmap if values.is_empty() => {
                    Payload::Measurement { values }
                }
                PayloadMode::Annotation => {
                    let ann = annotation_for(seg.plane, &values, mm_per_px, sc, &mut rng)?;
                    Payload::Annotation(AnnotationPayload::from(&ann))
                }
                PayloadMode::Heatmap => {
                    let ann = annotation_for(seg.plane, &values, mm_per_px, sc, &mut rng)?;
                    let h = &sc.heatmap;
                    // an annotation that leaves the grid renders as an empty map
                    let hm = reconstruct_heatmap(&ann, h.kernel_sigma, h.width, h.height)
                        .unwrap_or_else(|_| Heatmap::zeros(h.width, h.height));
                    Payload::Heatmap(hm)
                }
            };

            let scanline = if sc.emit_scanline {
                let key = mm_per_px.to_bits();
                if !scanlines.contains_key(&key) {
                    let line = simulate_scalebar(
                        mm_per_px,
                        &sc.scanline.ticks,
                        sc.scanline.length,
                        sc.scanline.noise_amp,
                        sc.seed ^ key,
                    )?;
                    scanlines.insert(key, line.samples().to_vec());
                }
                scanlines.get(&key).cloned()
            } else {
                None
            };

            records.push(FrameRecord {
                frame,
                t,
                plane: seg.plane,
                conf,
                payload,
                scale_mm_per_px: sc.emit_scale.then_some(mm_per_px),
                scanline,
                frozen: seg.frozen,
            });
            frame += 1;
        }
    }
    Ok(SimulatedStream { records, labels })
}

/// Semi-major axis of the ellipse with semi-minor `a` and perimeter `p`.
fn major_for_perimeter(a: f64, p: f64) -> f64 {
    let (mut lo, mut hi) = (a, a.max(p / 2.0));
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if perimeter_px(a, mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Geometry that reproduces the drawn values at the given scale. Head
/// ellipses take their minor axis from BPD and their major axis from HC.
fn annotation_for<R: Rng>(
    plane: Plane,
    values: &BTreeMap<Biometric, f64>,
    mm_per_px: f64,
    sc: &ScanScenario,
    rng: &mut R,
) -> Result<Annotation, SimulationError> {
    let center = Point2D::new(sc.heatmap.width as f64 / 2.0, sc.heatmap.height as f64 / 2.0);
    let theta = rng.gen_range(0.0..std::f64::consts::PI);
    let ellipse = |a: f64, b: f64| EllipseParams::new(center, a, b, theta).map(Annotation::EllipseOutline);
    let ann = match plane {
        Plane::BrainTv => {
            let hc = values.get(&Biometric::Hc).map(|v| v / mm_per_px);
            let bpd = values.get(&Biometric::Bpd).map(|v| v / mm_per_px / 2.0);
            match (hc, bpd) {
                (Some(p), Some(a)) if p > 2.0 * std::f64::consts::PI * a => {
                    ellipse(a, major_for_perimeter(a, p))?
                }
                (Some(p), _) => {
                    let r = p / (2.0 * std::f64::consts::PI);
                    ellipse(r, r)?
                }
                (None, Some(a)) => ellipse(a, a / 0.75)?,
                (None, None) => unreachable!("caller checks for values"),
            }
        }
        Plane::Abdominal => {
            let p = values[&Biometric::Ac] / mm_per_px;
            let k = sc.heatmap.abdomen_axis_ratio;
            // perimeter scales linearly, so solve on the unit ellipse
            let unit = perimeter_px(k, 1.0);
            ellipse(k * p / unit, p / unit)?
        }
        Plane::BrainCb | Plane::Femur => {
            let b = plane.biometrics()[0];
            let half = values[&b] / mm_per_px / 2.0;
            let (s, c) = theta.sin_cos();
            Annotation::linear(
                Point2D::new(center.x - half * c, center.y - half * s),
                Point2D::new(center.x + half * c, center.y + half * s),
            )?
        }
        Plane::Background => unreachable!("background carries no biometrics"),
    };
    Ok(ann)
}

/// A scale-bar scan line: anti-aliased tick impulses at every multiple of the
/// finest spacing, brighter on coarser spacings, over a slowly varying
/// background with uniform noise in `[-noise_amp, noise_amp]`.
pub fn simulate_scalebar(
    mm_per_px: f64,
    ticks: &TickSpec,
    length: usize,
    noise_amp: f64,
    seed: u64,
) -> Result<ScanLine, SimulationError> {
    if !(mm_per_px > 0.0 && mm_per_px.is_finite()) {
        return invalid("mm_per_px must be positive");
    }
    if !(0.0..=0.5).contains(&noise_amp) {
        return invalid("noise_amp must lie in [0, 0.5]");
    }
    let major_px = ticks.d_bar() / mm_per_px;
    if length < MIN_SCANLINE_LEN || (length as f64) < 3.0 * major_px {
        return invalid(format!(
            "length {length} px holds fewer than three {} mm periods at {mm_per_px} mm/px",
            ticks.d_bar()
        ));
    }
    let spacings = ticks.spacings();
    let finest = spacings[0];
    let step = finest / mm_per_px;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset = rng.gen_range(0.0..step);
    let n = length as f64;
    let mut x: Vec<f64> = (0..length)
        .map(|i| 0.1 + 0.05 * (2.0 * std::f64::consts::PI * i as f64 / n).sin())
        .collect();

    let levels = spacings.len();
    let mut k = 0usize;
    loop {
        let pos = offset + k as f64 * step;
        if pos > n - 1.0 {
            break;
        }
        let mm = k as f64 * finest;
        // index of the coarsest spacing this tick belongs to
        let rank = spacings
            .iter()
            .rposition(|s| ((mm / s) - (mm / s).round()).abs() < 1e-6)
            .unwrap_or(0);
        let amp = 0.3 + 0.5 * rank as f64 / (levels.max(2) - 1) as f64;
        let i = pos.floor() as usize;
        let frac = pos - i as f64;
        x[i] += amp * (1.0 - frac);
        if i + 1 < length {
            x[i + 1] += amp * frac;
        }
        k += 1;
    }
    if noise_amp > 0.0 {
        for v in &mut x {
            *v += rng.gen_range(-noise_amp..=noise_amp);
        }
    }
    let x = x.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
    ScanLine::new(x).map_err(|e| SimulationError::InvalidScenario(e.to_string()))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corruption {
    #[default]
    None,
    /// A broad spurious bump away from the structure.
    ExtraBlob,
    /// One caliper end (or half of an outline) is not rendered.
    MissingEndpoint,
    /// The rendering is blurred with three times the kernel width.
    Smear,
}

impl std::str::FromStr for Corruption {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Self::None),
            "extra_blob" => Ok(Self::ExtraBlob),
            "missing_endpoint" => Ok(Self::MissingEndpoint),
            "smear" => Ok(Self::Smear),
            _ => Err(format!("unknown corruption {s:?}")),
        }
    }
}

fn blur(field: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let pass = |src: &[f64], horizontal: bool| {
        let mut out = vec![0.0; src.len()];
        for y in 0..h as isize {
            for x in 0..w as isize {
                let (mut acc, mut norm) = (0.0, 0.0);
                for (j, kv) in k.iter().enumerate() {
                    let d = j as isize - radius;
                    let (sx, sy) = if horizontal { (x + d, y) } else { (x, y + d) };
                    if sx < 0 || sy < 0 || sx >= w as isize || sy >= h as isize {
                        continue;
                    }
                    acc += kv * src[(sy * w as isize + sx) as usize];
                    norm += kv;
                }
                out[(y * w as isize + x) as usize] = acc / norm;
            }
        }
        out
    };
    pass(&pass(field, true), false)
}

/// Renders `ann` like [`reconstruct_heatmap`] and applies `corruption`.
pub fn simulate_heatmap_frame(
    ann: &Annotation,
    kernel_sigma: f64,
    corruption: Corruption,
    width: usize,
    height: usize,
    seed: u64,
) -> Result<Heatmap, SimulationError> {
    let clean = reconstruct_heatmap(ann, kernel_sigma, width, height)?;
    let out = match corruption {
        Corruption::None => clean,
        Corruption::Smear => {
            let field = blur(clean.values(), width, height, 3.0 * kernel_sigma);
            Heatmap::from_field_normalized(width, height, field)
        }
        Corruption::MissingEndpoint => match ann {
            Annotation::LinearEndpoints(p1, _) => {
                let inv = 1.0 / (2.0 * kernel_sigma * kernel_sigma);
                let field = (0..width * height)
                    .map(|i| {
                        let p = Point2D::new((i % width) as f64, (i / width) as f64);
                        let d = p.distance(p1);
                        (-d * d * inv).exp()
                    })
                    .collect();
                Heatmap::from_field_normalized(width, height, field)
            }
            Annotation::EllipseOutline(e) => {
                // keep the half of the band on the positive side of the major axis
                let (s, c) = e.theta.sin_cos();
                let field = clean
                    .values()
                    .iter()
                    .enumerate()
                    .map(|(i, v)| {
                        let dx = (i % width) as f64 - e.center.x;
                        let dy = (i / width) as f64 - e.center.y;
                        if -dx * s + dy * c >= 0.0 {
                            *v
                        } else {
                            0.0
                        }
                    })
                    .collect();
                Heatmap::from_field_normalized(width, height, field)
            }
        },
        Corruption::ExtraBlob => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (cx, cy) = match ann {
                Annotation::LinearEndpoints(p1, p2) => ((p1.x + p2.x) / 2.0, (p1.y + p2.y) / 2.0),
                Annotation::EllipseOutline(e) => (e.center.x, e.center.y),
            };
            let spread = 3.0 * kernel_sigma;
            // place the blob in a quadrant-ish region away from the structure centre
            let bx = (cx + rng.gen_range(0.25..0.4) * width as f64 * if rng.gen() { 1.0 } else { -1.0 })
                .clamp(0.0, width as f64 - 1.0);
            let by = (cy + rng.gen_range(0.25..0.4) * height as f64 * if rng.gen() { 1.0 } else { -1.0 })
                .clamp(0.0, height as f64 - 1.0);
            let inv = 1.0 / (2.0 * spread * spread);
            let field = clean
                .values()
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let dx = (i % width) as f64 - bx;
                    let dy = (i / width) as f64 - by;
                    v.max((-(dx * dx + dy * dy) * inv).exp())
                })
                .collect();
            Heatmap::from_field_normalized(width, height, field)
        }
    };
    Ok(out)
}

/// Two scans of one subject sharing true values.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedScanPair {
    pub scenario: ScanScenario,
    pub seeds: [u64; 2],
    pub operator_offsets_mm: [f64; 2],
}

pub fn simulate_paired_scans(
    p: &PairedScanPair,
) -> Result<(SimulatedStream, SimulatedStream), SimulationError> {
    if p.seeds[0] == p.seeds[1] {
        return invalid("paired scans need distinct seeds");
    }
    let scan = |i: usize| {
        let mut sc = p.scenario.clone();
        sc.seed = p.seeds[i];
        sc.operator_offset_mm = p.operator_offsets_mm[i];
        simulate_stream(&sc)
    };
    Ok((scan(0)?, scan(1)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::pixel_size;
    use crate::estimator::MixtureModel;
    use crate::geometry::{dsc, heatmap_to_ellipse, linear_biometric, PixelScale};

    #[test]
    fn default_confidence_pass_rates() {
        let t = ConfidenceTable::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (plane, frac) in [
            (Plane::BrainTv, 0.835),
            (Plane::BrainCb, 0.821),
            (Plane::Abdominal, 0.732),
            (Plane::Femur, 0.664),
        ] {
            let n = 20_000;
            let pass = (0..n).filter(|_| t.get(plane).draw(&mut rng) >= 0.95).count();
            let got = pass as f64 / n as f64;
            assert!((got - frac).abs() < 0.015, "{plane}: {got}");
        }
    }

    #[test]
    fn standard_scenario_shape() {
        let sc = ScanScenario::standard(1);
        sc.validate().unwrap();
        assert_eq!(sc.total_frames(), 20 * 60 * 30);
        let text = sc.to_toml();
        assert_eq!(ScanScenario::from_toml(&text).unwrap(), sc);
    }

    #[test]
    fn shipped_scenario_parses() {
        let text = include_str!("../data/scenario_default.toml");
        let sc = ScanScenario::from_toml(text).unwrap();
        assert_eq!(sc.biometrics, ScanScenario::standard(0).biometrics);
        assert_eq!(sc.schedule, ScanScenario::standard(0).schedule);
    }

    #[test]
    fn invalid_scenarios() {
        let mut sc = ScanScenario::femur_only(0.8, 1.8, 33.0, 10, 1);
        sc.biometrics.get_mut(&Biometric::Fl).unwrap().truth_mm = 50.0;
        assert!(simulate_stream(&sc).is_err());
        let mut sc = ScanScenario::femur_only(0.8, 1.8, 33.0, 10, 1);
        sc.schedule[0].duration_s = 0.0;
        assert!(sc.validate().is_err());
        let mut sc = ScanScenario::femur_only(0.8, 1.8, 33.0, 10, 1);
        sc.biometrics.get_mut(&Biometric::Fl).unwrap().sigma_mm = 0.0;
        assert!(sc.validate().is_err());
        assert!(ScanScenario::from_toml("ga = 143\nseed = 1\nbiometrics = {}\nschedule = []\n").is_err());
    }

    #[test]
    fn deterministic_under_seed() {
        let sc = ScanScenario::femur_only(0.79, 1.8, 33.0, 300, 9);
        assert_eq!(simulate_stream(&sc).unwrap(), simulate_stream(&sc).unwrap());
        let mut other = sc.clone();
        other.seed = 10;
        assert_ne!(simulate_stream(&sc).unwrap().records, simulate_stream(&other).unwrap().records);
    }

    #[test]
    fn degenerate_noise_gives_truth() {
        let sc = ScanScenario::femur_only(1.0, 1e-12, 33.0, 100, 3);
        let s = simulate_stream(&sc).unwrap();
        assert!(s.labels.iter().all(|l| l.from_truth && (l.value_mm - 33.0).abs() < 1e-9));
    }

    #[test]
    fn truth_component_mean_and_marginal() {
        let sc = ScanScenario::femur_only(0.79, 1.8, 33.0, 10_000, 4);
        let s = simulate_stream(&sc).unwrap();
        let truth: Vec<f64> = s.labels.iter().filter(|l| l.from_truth).map(|l| l.value_mm).collect();
        let n = truth.len() as f64;
        let mean = truth.iter().sum::<f64>() / n;
        assert!((mean - 33.0).abs() <= 3.0 * 1.8 / n.sqrt());

        let xs: Vec<f64> = s.labels.iter().map(|l| l.value_mm).collect();
        let model = MixtureModel { p_t: 0.79, mu: 33.0, sigma: 1.8, lower: 23.8, upper: 42.2 };
        let d = crate::estimator::empirical_cdf_distance(&xs, &model).unwrap();
        assert!(d < 0.02, "KS {d}");
    }

    #[test]
    fn frozen_segments_are_flagged() {
        let mut sc = ScanScenario::femur_only(0.79, 1.8, 33.0, 30, 4);
        sc.schedule[0].frozen = true;
        assert!(simulate_stream(&sc).unwrap().records.iter().all(|r| r.frozen));
    }

    #[test]
    fn scalebar_tick_spacing() {
        let ticks = TickSpec::new(50.0, vec![10.0]).unwrap();
        let line = simulate_scalebar(0.4, &ticks, 512, 0.0, 3).unwrap();
        let peaks: Vec<usize> = (1..511)
            .filter(|&i| {
                let s = line.samples();
                s[i] > 0.18 && s[i] >= s[i - 1] && s[i] > s[i + 1]
            })
            .collect();
        for w in peaks.windows(2) {
            assert!((w[1] as isize - w[0] as isize - 25).abs() <= 1, "{peaks:?}");
        }
        let got = pixel_size(&line, &ticks).unwrap().mm_per_px();
        assert!((got - 0.4).abs() / 0.4 <= 1.0 / 25.0);
        assert!(simulate_scalebar(0.4, &ticks, 300, 0.0, 3).is_err());
    }

    #[test]
    fn clean_heatmap_round_trip() {
        let s = PixelScale::new(1.0).unwrap();
        let ann = Annotation::linear(Point2D::new(30.3, 40.0), Point2D::new(90.0, 60.6)).unwrap();
        let h = simulate_heatmap_frame(&ann, 2.0, Corruption::None, 128, 96, 0).unwrap();
        let m = linear_biometric(&h, s, 10.0).unwrap();
        let truth = Point2D::new(30.3, 40.0).distance(&Point2D::new(90.0, 60.6));
        assert!((m.length_mm - truth).abs() < 0.5);

        let miss = simulate_heatmap_frame(&ann, 2.0, Corruption::MissingEndpoint, 128, 96, 0).unwrap();
        assert_eq!(linear_biometric(&miss, s, 10.0), Err(GeometryError::SingleMaximum));
    }

    #[test]
    fn smeared_ellipse_has_low_overlap() {
        let e = EllipseParams::new(Point2D::new(80.0, 64.0), 30.0, 45.0, 0.4).unwrap();
        let ann = Annotation::EllipseOutline(e);
        let smeared = simulate_heatmap_frame(&ann, 2.0, Corruption::Smear, 160, 128, 0).unwrap();
        let fit = heatmap_to_ellipse(&smeared, 0.25).unwrap();
        let rebuilt = reconstruct_heatmap(&Annotation::EllipseOutline(fit), 2.0, 160, 128).unwrap();
        assert!(dsc(&smeared, &rebuilt, 0.5).unwrap() < 0.6);

        let clean = simulate_heatmap_frame(&ann, 2.0, Corruption::None, 160, 128, 0).unwrap();
        let fit = heatmap_to_ellipse(&clean, 0.25).unwrap();
        let rebuilt = reconstruct_heatmap(&Annotation::EllipseOutline(fit), 2.0, 160, 128).unwrap();
        assert!(dsc(&clean, &rebuilt, 0.5).unwrap() > 0.8);
    }

    #[test]
    fn annotation_payload_reproduces_values() {
        let mut sc = ScanScenario::standard(5);
        sc.payload = PayloadMode::Annotation;
        sc.schedule = vec![
            Segment { plane: Plane::BrainTv, duration_s: 1.0, frozen: false },
            Segment { plane: Plane::Abdominal, duration_s: 1.0, frozen: false },
            Segment { plane: Plane::Femur, duration_s: 1.0, frozen: false },
        ];
        let s = simulate_stream(&sc).unwrap();
        let scale = PixelScale::new(0.5).unwrap();
        for rec in &s.records {
            let Payload::Annotation(a) = &rec.payload else { panic!("annotation expected") };
            let ann = a.to_annotation().unwrap();
            for l in s.labels.iter().filter(|l| l.frame == rec.frame) {
                let got = match (&ann, l.biometric) {
                    (Annotation::EllipseOutline(e), Biometric::Bpd) => crate::geometry::bpd_from_head_ellipse(e, scale),
                    (Annotation::EllipseOutline(e), Biometric::Hc | Biometric::Ac) => {
                        crate::geometry::ellipse_perimeter(e, scale)
                    }
                    (Annotation::LinearEndpoints(p, q), _) => p.distance(q) * 0.5,
                    _ => panic!("shape mismatch"),
                };
                // head circles are used when HC cannot wrap the drawn BPD
                if l.biometric == Biometric::Bpd && matches!(ann, Annotation::EllipseOutline(e) if e.a == e.b) {
                    continue;
                }
                assert!((got - l.value_mm).abs() < 1e-6, "{:?} {got} vs {}", l.biometric, l.value_mm);
            }
        }
    }

    #[test]
    fn paired_scans() {
        let pair = PairedScanPair {
            scenario: ScanScenario::femur_only(0.79, 1.8, 33.0, 50, 0),
            seeds: [1, 1],
            operator_offsets_mm: [0.0, 0.0],
        };
        assert!(simulate_paired_scans(&pair).is_err());
        let pair = PairedScanPair { seeds: [1, 2], ..pair };
        let (a, b) = simulate_paired_scans(&pair).unwrap();
        assert_eq!(a.records.len(), b.records.len());
        assert_ne!(a.records, b.records);
    }
}
