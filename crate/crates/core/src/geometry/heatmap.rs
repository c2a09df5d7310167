use serde::{Deserialize, Serialize};

use super::ellipse::{fit_ellipse, EllipseParams};
use super::{Annotation, GeometryError, PixelScale, Point2D};

/// Fraction of the heatmap peak below which pixels are ignored by the ellipse fit.
pub const DEFAULT_INTENSITY_FLOOR: f64 = 0.25;

/// Default minimum endpoint separation for linear biometrics (px).
pub const DEFAULT_MIN_SEPARATION: f64 = 10.0;

/// Secondary maxima weaker than this fraction of the strongest one are noise.
const MIN_PEAK_FRACTION: f64 = 0.1;

/// Weighted RMS outline residual, relative to the semi-minor axis, above
/// which the above-floor pixels are not an ellipse outline (e.g. a filled blob).
const MAX_OUTLINE_RESIDUAL: f64 = 0.25;

/// Dense row-major intensity grid with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawHeatmap", into = "RawHeatmap")]
pub struct Heatmap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawHeatmap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl TryFrom<RawHeatmap> for Heatmap {
    type Error = GeometryError;
    fn try_from(r: RawHeatmap) -> Result<Self, Self::Error> {
        Heatmap::new(r.width, r.height, r.data)
    }
}

impl From<Heatmap> for RawHeatmap {
    fn from(h: Heatmap) -> Self {
        RawHeatmap {
            width: h.width,
            height: h.height,
            data: h.values,
        }
    }
}

impl Heatmap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 || width * height != values.len() {
            return Err(GeometryError::DimensionMismatch(format!(
                "{width}x{height} grid with {} values",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(GeometryError::InvalidParameter(format!(
                "heatmap value {v} outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Builds a heatmap from an arbitrary non-negative field, rescaled so the
    /// peak is 1. An all-zero field stays zero.
    pub(crate) fn from_field_normalized(width: usize, height: usize, mut field: Vec<f64>) -> Self {
        let peak = field.iter().copied().fold(0.0, f64::max);
        if peak > 0.0 {
            field.iter_mut().for_each(|v| *v = (*v / peak).clamp(0.0, 1.0));
        }
        Self {
            width,
            height,
            values: field,
        }
    }

    fn contains(&self, p: Point2D) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x <= (self.width - 1) as f64 && p.y <= (self.height - 1) as f64
    }
}

/// Fits an ellipse to all pixels above `intensity_floor · peak`, weighting each
/// pixel centre by its intensity.
pub fn heatmap_to_ellipse(h: &Heatmap, intensity_floor: f64) -> Result<EllipseParams, GeometryError> {
    let peak = h.max_value();
    if peak <= 0.0 {
        return Err(GeometryError::DegenerateInput("empty heatmap".into()));
    }
    let cut = intensity_floor * peak;
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for y in 0..h.height {
        for x in 0..h.width {
            let v = h.get(x, y);
            if v > cut {
                points.push(Point2D::new(x as f64, y as f64));
                weights.push(v);
            }
        }
    }
    let fit = fit_ellipse(&points, &weights)?;

    let (num, den) = points
        .iter()
        .zip(&weights)
        .fold((0.0, 0.0), |(n, d), (p, w)| {
            (n + w * fit.distance_to_outline(*p).powi(2), d + w)
        });
    let residual = (num / den).sqrt() / fit.a;
    if residual > MAX_OUTLINE_RESIDUAL {
        return Err(GeometryError::DegenerateInput(format!(
            "heatmap does not trace an outline (relative residual {residual:.3})"
        )));
    }
    Ok(fit)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearMeasurement {
    pub length_mm: f64,
    pub endpoints: (Point2D, Point2D),
}

/// Distance between the two strongest, well separated local maxima.
pub fn linear_biometric(
    h: &Heatmap,
    s: PixelScale,
    min_separation: f64,
) -> Result<LinearMeasurement, GeometryError> {
    let mut peaks = local_maxima(h);
    peaks.sort_by(|p, q| q.1.total_cmp(&p.1));
    let Some(&(first, top)) = peaks.first() else {
        return Err(GeometryError::SingleMaximum);
    };
    let second = peaks
        .iter()
        .skip(1)
        .take_while(|(_, v)| *v >= MIN_PEAK_FRACTION * top)
        .find(|(idx, _)| pixel_distance(h, first, *idx) >= min_separation)
        .map(|(idx, _)| *idx)
        .ok_or(GeometryError::SingleMaximum)?;
    let p1 = refine_peak(h, first);
    let p2 = refine_peak(h, second);
    Ok(LinearMeasurement {
        length_mm: p1.distance(&p2) * s.mm_per_px(),
        endpoints: (p1, p2),
    })
}

fn pixel_distance(h: &Heatmap, i: usize, j: usize) -> f64 {
    let (xi, yi) = ((i % h.width) as f64, (i / h.width) as f64);
    let (xj, yj) = ((j % h.width) as f64, (j / h.width) as f64);
    (xi - xj).hypot(yi - yj)
}

/// 8-neighbourhood non-maximum suppression. On plateaus only the first pixel
/// in raster order survives.
fn local_maxima(h: &Heatmap) -> Vec<(usize, f64)> {
    let (w, ht) = (h.width as isize, h.height as isize);
    let mut out = Vec::new();
    for y in 0..ht {
        for x in 0..w {
            let v = h.values[(y * w + x) as usize];
            if v <= 0.0 {
                continue;
            }
            let mut keep = true;
            'nb: for dy in -1..=1 {
                for dx in -1..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w || ny >= ht {
                        continue;
                    }
                    let n = h.values[(ny * w + nx) as usize];
                    let earlier = dy < 0 || (dy == 0 && dx < 0);
                    if n > v || (earlier && n == v) {
                        keep = false;
                        break 'nb;
                    }
                }
            }
            if keep {
                out.push(((y * w + x) as usize, v));
            }
        }
    }
    out
}

/// Sub-pixel peak position from a separable three-point fit, in log space
/// when all samples are positive (exact for Gaussian bumps).
fn refine_peak(h: &Heatmap, idx: usize) -> Point2D {
    let (x, y) = (idx % h.width, idx / h.width);
    let offset = |l: f64, c: f64, r: f64| -> f64 {
        let (l, c, r) = if l > 0.0 && r > 0.0 {
            (l.ln(), c.ln(), r.ln())
        } else {
            (l, c, r)
        };
        let den = l - 2.0 * c + r;
        if den < 0.0 {
            (0.5 * (l - r) / den).clamp(-0.5, 0.5)
        } else {
            0.0
        }
    };
    let c = h.get(x, y);
    let dx = if x > 0 && x + 1 < h.width {
        offset(h.get(x - 1, y), c, h.get(x + 1, y))
    } else {
        0.0
    };
    let dy = if y > 0 && y + 1 < h.height {
        offset(h.get(x, y - 1), c, h.get(x, y + 1))
    } else {
        0.0
    };
    Point2D::new(x as f64 + dx, y as f64 + dy)
}

/// Renders an annotation as a Gaussian-profile heatmap with peak 1.
///
/// Caliper pairs become two bumps; ellipse outlines become a band whose
/// profile follows the distance to the outline.
pub fn reconstruct_heatmap(
    ann: &Annotation,
    kernel_sigma: f64,
    width: usize,
    height: usize,
) -> Result<Heatmap, GeometryError> {
    if !(kernel_sigma > 0.0) || !kernel_sigma.is_finite() {
        return Err(GeometryError::InvalidParameter(format!(
            "kernel sigma must be positive, got {kernel_sigma}"
        )));
    }
    if width == 0 || height == 0 {
        return Err(GeometryError::OutOfBounds { width, height });
    }
    let grid = Heatmap::zeros(width, height);
    let oob = GeometryError::OutOfBounds { width, height };
    let inv = 1.0 / (2.0 * kernel_sigma * kernel_sigma);
    let mut field = vec![0.0; width * height];
    match ann {
        Annotation::LinearEndpoints(p1, p2) => {
            if !grid.contains(*p1) || !grid.contains(*p2) {
                return Err(oob);
            }
            for y in 0..height {
                for x in 0..width {
                    let p = Point2D::new(x as f64, y as f64);
                    let d = p.distance(p1).min(p.distance(p2));
                    field[y * width + x] = (-d * d * inv).exp();
                }
            }
            if field.iter().all(|v| *v == 0.0) {
                for q in [p1, p2] {
                    field[q.y.round() as usize * width + q.x.round() as usize] = 1.0;
                }
            }
        }
        Annotation::EllipseOutline(e) => {
            let (s, c) = e.theta.sin_cos();
            let ex = (e.b * e.b * c * c + e.a * e.a * s * s).sqrt();
            let ey = (e.b * e.b * s * s + e.a * e.a * c * c).sqrt();
            let corners = [
                Point2D::new(e.center.x - ex, e.center.y - ey),
                Point2D::new(e.center.x + ex, e.center.y + ey),
            ];
            if !corners.iter().all(|p| grid.contains(*p)) {
                return Err(oob);
            }
            for y in 0..height {
                for x in 0..width {
                    let d = e.distance_to_outline(Point2D::new(x as f64, y as f64));
                    field[y * width + x] = (-d * d * inv).exp();
                }
            }
            if field.iter().all(|v| *v == 0.0) {
                for i in 0..720 {
                    let q = e.point_at(i as f64 * std::f64::consts::PI / 360.0);
                    field[q.y.round() as usize * width + q.x.round() as usize] = 1.0;
                }
            }
        }
    }
    Ok(Heatmap::from_field_normalized(width, height, field))
}

/// Dice overlap of the two heatmaps binarised at `binarize_at` (value ≥ cut).
/// Two empty sets agree perfectly.
pub fn dsc(h1: &Heatmap, h2: &Heatmap, binarize_at: f64) -> Result<f64, GeometryError> {
    if h1.width != h2.width || h1.height != h2.height {
        return Err(GeometryError::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            h1.width, h1.height, h2.width, h2.height
        )));
    }
    let (mut both, mut n1, mut n2) = (0usize, 0usize, 0usize);
    for (a, b) in h1.values.iter().zip(&h2.values) {
        let (x, y) = (*a >= binarize_at, *b >= binarize_at);
        n1 += x as usize;
        n2 += y as usize;
        both += (x && y) as usize;
    }
    if n1 + n2 == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (n1 + n2) as f64)
}
