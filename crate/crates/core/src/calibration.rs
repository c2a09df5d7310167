//! Pixel-size estimation from the on-screen scale bar and frozen-frame detection.
//!
//! The scale bar is read along a single scan line: a Gaussian high-pass strips
//! the background, the autocorrelation of the residual reveals the tick period
//! and the largest visible tick spacing converts that period to mm/px.

use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::PixelScale;

pub const MIN_SCANLINE_LEN: usize = 64;
pub const DEFAULT_HIGHPASS_SIGMA: f64 = 3.0;
pub const DEFAULT_CHANGE_THRESHOLD: f64 = 0.95;
pub const DEFAULT_PIXEL_EPSILON: f64 = 1.0 / 255.0;
/// An off-origin autocorrelation peak must rise this fraction of `R(0)` above
/// the troughs around it.
/// An off-origin autocorrelation peak must exceed this fraction of `R(0)`.
const PEAK_PROMINENCE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrationError {
    #[error("no periodic tick pattern found in the scan line")]
    NoPeriodicity,
    #[error("invalid scan line: {0}")]
    InvalidScanLine(String),
    #[error("invalid tick spec: {0}")]
    InvalidTickSpec(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Pixel intensities sampled along one row crossing the scale bar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ScanLine(Vec<f64>);

impl ScanLine {
    pub fn new(samples: Vec<f64>) -> Result<Self, CalibrationError> {
        if samples.len() < MIN_SCANLINE_LEN {
            return Err(CalibrationError::InvalidScanLine(format!(
                "need at least {MIN_SCANLINE_LEN} samples, got {}",
                samples.len()
            )));
        }
        if let Some(v) = samples.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(CalibrationError::InvalidScanLine(format!(
                "sample {v} outside [0, 1]"
            )));
        }
        Ok(Self(samples))
    }

    pub fn samples(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for ScanLine {
    type Error = CalibrationError;
    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<ScanLine> for Vec<f64> {
    fn from(s: ScanLine) -> Self {
        s.0
    }
}

/// Physical tick spacings on the scale bar, in millimetres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTickSpec", into = "RawTickSpec")]
pub struct TickSpec {
    d_bar: f64,
    minor: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawTickSpec {
    d_bar: f64,
    #[serde(default)]
    minor: Vec<f64>,
}

impl TryFrom<RawTickSpec> for TickSpec {
    type Error = CalibrationError;
    fn try_from(r: RawTickSpec) -> Result<Self, Self::Error> {
        TickSpec::new(r.d_bar, r.minor)
    }
}

impl From<TickSpec> for RawTickSpec {
    fn from(t: TickSpec) -> Self {
        RawTickSpec {
            d_bar: t.d_bar,
            minor: t.minor,
        }
    }
}

impl Default for TickSpec {
    fn default() -> Self {
        Self {
            d_bar: 50.0,
            minor: vec![10.0, 5.0],
        }
    }
}

impl TickSpec {
    pub fn new(d_bar: f64, minor: Vec<f64>) -> Result<Self, CalibrationError> {
        if !(d_bar.is_finite() && d_bar > 0.0) {
            return Err(CalibrationError::InvalidTickSpec(format!(
                "major spacing must be positive, got {d_bar}"
            )));
        }
        for m in &minor {
            let ratio = d_bar / m;
            if !(m.is_finite() && *m > 0.0) || (ratio - ratio.round()).abs() > 1e-9 {
                return Err(CalibrationError::InvalidTickSpec(format!(
                    "minor spacing {m} does not divide {d_bar}"
                )));
            }
        }
        Ok(Self { d_bar, minor })
    }

    pub fn d_bar(&self) -> f64 {
        self.d_bar
    }

    pub fn minor(&self) -> &[f64] {
        &self.minor
    }

    /// All distinct spacings, ascending.
    pub fn spacings(&self) -> Vec<f64> {
        let mut all: Vec<f64> = self.minor.iter().copied().chain([self.d_bar]).collect();
        all.sort_by(f64::total_cmp);
        all.dedup();
        all
    }
}

/// Parses `"50,10,5"`: the major spacing first, then minor spacings.
impl FromStr for TickSpec {
    type Err = CalibrationError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let vals = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CalibrationError::InvalidTickSpec(format!("{s:?}: {e}")))?;
        let (first, rest) = vals
            .split_first()
            .ok_or_else(|| CalibrationError::InvalidTickSpec("empty".into()))?;
        TickSpec::new(*first, rest.to_vec())
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Mirror index into `[0, n)` with the edge sample repeated (`d c b a | a b c d`).
fn reflect(i: isize, n: isize) -> usize {
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// Background removal: `max(x − x ∗ G(σ), 0)`.
pub fn highpass(x: &ScanLine, sigma: f64) -> Result<ScanLine, CalibrationError> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(CalibrationError::InvalidParameter(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let k = gaussian_kernel(sigma);
    let radius = (k.len() / 2) as isize;
    let s = x.samples();
    let n = s.len() as isize;
    let out = (0..n)
        .map(|i| {
            let blurred: f64 = k
                .iter()
                .enumerate()
                .map(|(j, w)| w * s[reflect(i + j as isize - radius, n)])
                .sum();
            (s[i as usize] - blurred).max(0.0)
        })
        .collect();
    Ok(ScanLine(out))
}

/// Raw autocorrelation `R(n) = Σ_i x_i x_{i+n}` for lags `0..len/2`.
pub fn autocorr(x: &ScanLine) -> Vec<f64> {
    let s = x.samples();
    (0..s.len() / 2)
        .map(|lag| s.iter().zip(&s[lag..]).map(|(a, b)| a * b).sum())
        .collect()
}

/// Height of `r[n]` above the higher of the two troughs separating it from
/// taller values (or the ends of the array).
fn prominence(r: &[f64], n: usize) -> f64 {
    let base = |it: &mut dyn Iterator<Item = &f64>| {
        let mut low = r[n];
        for v in it {
            if *v > r[n] {
                break;
            }
            low = low.min(*v);
        }
        low
    };
    let left = base(&mut r[..n].iter().rev());
    let right = base(&mut r[n + 1..].iter());
    r[n] - left.max(right)
}

/// Vertex of the parabola through `(n-1, n, n+1)`.
fn refine_lag(r: &[f64], n: usize) -> f64 {
    if n == 0 || n + 1 >= r.len() {
        return n as f64;
    }
    let (l, c, rr) = (r[n - 1], r[n], r[n + 1]);
    let den = l - 2.0 * c + rr;
    if den < 0.0 {
        n as f64 + (0.5 * (l - rr) / den).clamp(-0.5, 0.5)
    } else {
        n as f64
    }
}

/// Estimates mm/px from a scale-bar scan line.
///
/// The first prominent autocorrelation peak gives the period of the finest
/// spacing in `ticks`. The largest spacing whose lag still shows a peak inside
/// the correlation window is then used, which shrinks the relative lag
/// quantisation error by the spacing ratio.
pub fn pixel_size(x: &ScanLine, ticks: &TickSpec) -> Result<PixelScale, CalibrationError> {
    let filtered = highpass(x, DEFAULT_HIGHPASS_SIGMA)?;
    let r = autocorr(&filtered);
    let n_total = filtered.len() as f64;
    let r0 = r[0];
    if !(r0 > 0.0) {
        return Err(CalibrationError::NoPeriodicity);
    }
    let cut = PEAK_PROMINENCE * r0;
    let fundamental = (1..r.len().saturating_sub(1))
        .find(|&n| r[n] > r[n - 1] && r[n] >= r[n + 1] && prominence(&r, n) > cut)
        .ok_or(CalibrationError::NoPeriodicity)?;
    let period = refine_lag(&r, fundamental);

    let spacings = ticks.spacings();
    let finest = spacings[0];
    for &spacing in spacings.iter().rev() {
        let multiple = (spacing / finest).round();
        if multiple <= 1.0 {
            break;
        }
        let target = multiple * period;
        let half = 0.5 * period;
        let lo = (target - half).floor().max(1.0) as usize;
        let hi = ((target + half).ceil() as usize).min(r.len().saturating_sub(2));
        if lo >= hi {
            continue;
        }
        let k = (lo..=hi)
            .max_by(|&i, &j| r[i].total_cmp(&r[j]))
            .expect("non-empty window");
        // compare against R(0) after undoing the overlap shrinkage at lag k
        let unbiased = prominence(&r, k) * n_total / (n_total - k as f64);
        let is_peak = r[k] > r[k - 1] && r[k] >= r[k + 1];
        if is_peak && unbiased > cut {
            let lag = refine_lag(&r, k);
            return PixelScale::new(spacing / lag)
                .map_err(|e| CalibrationError::InvalidParameter(e.to_string()));
        }
    }
    PixelScale::new(finest / period).map_err(|e| CalibrationError::InvalidParameter(e.to_string()))
}

/// A single-channel frame of intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

impl Frame {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self, CalibrationError> {
        if width * height != pixels.len() {
            return Err(CalibrationError::DimensionMismatch(format!(
                "{width}x{height} frame with {} pixels",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FramePair {
    pub prev: Frame,
    pub curr: Frame,
    pub change_threshold: f64,
    pub pixel_epsilon: f64,
}

impl FramePair {
    pub fn new(prev: Frame, curr: Frame) -> Self {
        Self {
            prev,
            curr,
            change_threshold: DEFAULT_CHANGE_THRESHOLD,
            pixel_epsilon: DEFAULT_PIXEL_EPSILON,
        }
    }
}

/// True when more than `change_threshold` of the pixels are unchanged, which
/// marks a frozen (sonographer-annotated) frame.
pub fn detect_freeze(fp: &FramePair) -> Result<bool, CalibrationError> {
    if fp.prev.width != fp.curr.width || fp.prev.height != fp.curr.height {
        return Err(CalibrationError::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            fp.prev.width, fp.prev.height, fp.curr.width, fp.curr.height
        )));
    }
    if !(fp.change_threshold > 0.0 && fp.change_threshold < 1.0) {
        return Err(CalibrationError::InvalidParameter(format!(
            "change threshold must lie in (0, 1), got {}",
            fp.change_threshold
        )));
    }
    let total = fp.prev.pixels.len();
    if total == 0 {
        return Ok(true);
    }
    let same = fp
        .prev
        .pixels
        .iter()
        .zip(&fp.curr.pixels)
        .filter(|(a, b)| (*a - *b).abs() <= fp.pixel_epsilon)
        .count();
    Ok(same as f64 / total as f64 > fp.change_threshold)
}
