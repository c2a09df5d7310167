use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{GeometryError, PixelScale, Point2D};

/// Ellipse in pixel coordinates.
///
/// `a` is the semi-minor and `b` the semi-major axis. `theta` is the angle of
/// the major axis measured from +x, canonicalised to `[0, π)`; circles use 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipseParams {
    pub center: Point2D,
    pub a: f64,
    pub b: f64,
    pub theta: f64,
}

impl EllipseParams {
    /// Builds a canonical ellipse. Axes given in either order are swapped so
    /// that `a <= b`, rotating `theta` by a quarter turn to match.
    pub fn new(center: Point2D, a: f64, b: f64, theta: f64) -> Result<Self, GeometryError> {
        let finite = center.x.is_finite()
            && center.y.is_finite()
            && a.is_finite()
            && b.is_finite()
            && theta.is_finite();
        if !finite || a <= 0.0 || b <= 0.0 {
            return Err(GeometryError::InvalidParameter(format!(
                "ellipse needs finite positive axes, got a={a}, b={b}"
            )));
        }
        let (a, b, theta) = if a > b {
            (b, a, theta + PI / 2.0)
        } else {
            (a, b, theta)
        };
        let theta = if a == b { 0.0 } else { canonical_angle(theta) };
        Ok(Self { center, a, b, theta })
    }

    pub fn circle(center: Point2D, r: f64) -> Result<Self, GeometryError> {
        Self::new(center, r, r, 0.0)
    }

    /// Point on the outline at parameter `t` (radians).
    pub fn point_at(&self, t: f64) -> Point2D {
        let (s, c) = self.theta.sin_cos();
        let (u, v) = (self.b * t.cos(), self.a * t.sin());
        Point2D::new(self.center.x + u * c - v * s, self.center.y + u * s + v * c)
    }

    /// Transforms a point into the ellipse frame: major axis along +x.
    pub(crate) fn to_local(&self, p: Point2D) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        let (dx, dy) = (p.x - self.center.x, p.y - self.center.y);
        (dx * c + dy * s, -dx * s + dy * c)
    }

    /// Implicit conic coefficients `[A, B, C, D, E, F]` of
    /// `A x² + B xy + C y² + D x + E y + F = 0`, scaled so that `F = -1` at
    /// the centre-origin form (`F` here includes the translation terms).
    pub fn to_conic(&self) -> [f64; 6] {
        let (s, c) = self.theta.sin_cos();
        let ib2 = 1.0 / (self.b * self.b);
        let ia2 = 1.0 / (self.a * self.a);
        let qa = c * c * ib2 + s * s * ia2;
        let qb = 2.0 * c * s * (ib2 - ia2);
        let qc = s * s * ib2 + c * c * ia2;
        let (x0, y0) = (self.center.x, self.center.y);
        let d = -2.0 * qa * x0 - qb * y0;
        let e = -2.0 * qc * y0 - qb * x0;
        let f = qa * x0 * x0 + qb * x0 * y0 + qc * y0 * y0 - 1.0;
        [qa, qb, qc, d, e, f]
    }

    /// Closest distance from `p` to the outline, in pixels.
    pub fn distance_to_outline(&self, p: Point2D) -> f64 {
        let (u, v) = self.to_local(p);
        let (cx, cy) = closest_on_axis_aligned(self.b, self.a, u, v);
        (u - cx).hypot(v - cy)
    }
}

fn canonical_angle(theta: f64) -> f64 {
    let t = theta.rem_euclid(PI);
    // rem_euclid can round up to exactly PI
    if t >= PI {
        0.0
    } else {
        t
    }
}

/// Closest point on the axis-aligned ellipse `x²/rx² + y²/ry² = 1` to `(px, py)`.
/// Fixed-iteration curvature-circle scheme; converges to well below 1e-6 px
/// for the aspect ratios encountered here.
fn closest_on_axis_aligned(rx: f64, ry: f64, px: f64, py: f64) -> (f64, f64) {
    let (ax, ay) = (px.abs(), py.abs());
    let mut tx = std::f64::consts::FRAC_1_SQRT_2;
    let mut ty = std::f64::consts::FRAC_1_SQRT_2;
    for _ in 0..6 {
        let x = rx * tx;
        let y = ry * ty;
        let ex = (rx * rx - ry * ry) * tx.powi(3) / rx;
        let ey = (ry * ry - rx * rx) * ty.powi(3) / ry;
        let (rxv, ryv) = (x - ex, y - ey);
        let (qx, qy) = (ax - ex, ay - ey);
        let r = rxv.hypot(ryv);
        let q = qx.hypot(qy).max(f64::MIN_POSITIVE);
        tx = ((qx * r / q + ex) / rx).clamp(0.0, 1.0);
        ty = ((qy * r / q + ey) / ry).clamp(0.0, 1.0);
        let t = tx.hypot(ty);
        if t == 0.0 {
            // centre of a circle: any outline point is closest
            tx = 0.0;
            ty = 1.0;
        } else {
            tx /= t;
            ty /= t;
        }
    }
    ((rx * tx).copysign(px), (ry * ty).copysign(py))
}

/// First-order geometric distance of `p` to the conic of `e`.
pub fn sampson_distance(e: &EllipseParams, p: Point2D) -> f64 {
    let [a, b, c, d, ee, f] = e.to_conic();
    let val = a * p.x * p.x + b * p.x * p.y + c * p.y * p.y + d * p.x + ee * p.y + f;
    let gx = 2.0 * a * p.x + b * p.y + d;
    let gy = b * p.x + 2.0 * c * p.y + ee;
    let g = gx.hypot(gy);
    if g == 0.0 {
        val.abs().sqrt()
    } else {
        val.abs() / g
    }
}

/// Weighted direct least-squares ellipse fit.
///
/// Minimises the weighted algebraic distance subject to `4AC - B² = 1`, which
/// admits only ellipses. Uses the block-decomposed form of the constrained
/// eigenproblem on centred, scaled coordinates.
pub fn fit_ellipse(points: &[Point2D], weights: &[f64]) -> Result<EllipseParams, GeometryError> {
    if points.len() != weights.len() {
        return Err(GeometryError::DimensionMismatch(format!(
            "{} points but {} weights",
            points.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0)
        || points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite())
    {
        return Err(GeometryError::InvalidParameter(
            "points and weights must be finite, weights non-negative".into(),
        ));
    }
    let active: Vec<(Point2D, f64)> = points
        .iter()
        .zip(weights)
        .filter(|(_, w)| **w > 0.0)
        .map(|(p, w)| (*p, *w))
        .collect();
    if active.len() < 5 {
        return Err(GeometryError::DegenerateInput(format!(
            "need at least 5 weighted points, got {}",
            active.len()
        )));
    }

    let wsum: f64 = active.iter().map(|(_, w)| w).sum();
    let mx = active.iter().map(|(p, w)| p.x * w).sum::<f64>() / wsum;
    let my = active.iter().map(|(p, w)| p.y * w).sum::<f64>() / wsum;
    let mean_r = active
        .iter()
        .map(|(p, w)| (p.x - mx).hypot(p.y - my) * w)
        .sum::<f64>()
        / wsum;
    if mean_r <= 0.0 {
        return Err(GeometryError::DegenerateInput("all points coincide".into()));
    }
    let s = std::f64::consts::SQRT_2 / mean_r;

    let mut s1 = Matrix3::<f64>::zeros();
    let mut s2 = Matrix3::<f64>::zeros();
    let mut s3 = Matrix3::<f64>::zeros();
    for (p, w) in &active {
        let u = (p.x - mx) * s;
        let v = (p.y - my) * s;
        let d1 = Vector3::new(u * u, u * v, v * v);
        let d2 = Vector3::new(u, v, 1.0);
        s1 += d1 * d1.transpose() * *w;
        s2 += d1 * d2.transpose() * *w;
        s3 += d2 * d2.transpose() * *w;
    }
    let s3_inv = s3
        .try_inverse()
        .filter(|m| m.iter().all(|x| x.is_finite()))
        .ok_or_else(|| GeometryError::DegenerateInput("points are collinear".into()))?;
    if s3.determinant().abs() < 1e-12 * s3.norm().powi(3) {
        return Err(GeometryError::DegenerateInput("points are collinear".into()));
    }
    let t = -s3_inv * s2.transpose();
    let m = s1 + s2 * t;
    // premultiply by inverse of the constraint block [[0,0,2],[0,-1,0],[2,0,0]]
    let reduced = Matrix3::from_rows(&[
        (m.row(2) / 2.0).into_owned(),
        (-m.row(1)).into_owned(),
        (m.row(0) / 2.0).into_owned(),
    ]);

    let mut best: Option<(f64, Vector3<f64>)> = None;
    for lambda in reduced.complex_eigenvalues().iter() {
        if lambda.im.abs() > 1e-9 * (1.0 + lambda.re.abs()) {
            continue;
        }
        let Some(v) = null_vector(&(reduced - Matrix3::identity() * lambda.re)) else {
            continue;
        };
        let cond = 4.0 * v[0] * v[2] - v[1] * v[1];
        if cond > 0.0 {
            // normalise so the constraint equals 1; the valid eigenvalue is the
            // smallest non-negative one
            let v = v / cond.sqrt();
            if best.as_ref().map_or(true, |(l, _)| lambda.re < *l) {
                best = Some((lambda.re, v));
            }
        }
    }
    let (_, a1) = best.ok_or_else(|| {
        GeometryError::DegenerateInput("least-squares conic is not an ellipse".into())
    })?;
    let a2 = t * a1;
    let conic = [a1[0], a1[1], a1[2], a2[0], a2[1], a2[2]];
    let local = conic_to_ellipse(&conic)?;
    EllipseParams::new(
        Point2D::new(local.center.x / s + mx, local.center.y / s + my),
        local.a / s,
        local.b / s,
        local.theta,
    )
}

fn null_vector(m: &Matrix3<f64>) -> Option<Vector3<f64>> {
    let rows = [
        m.row(0).transpose(),
        m.row(1).transpose(),
        m.row(2).transpose(),
    ];
    let candidates = [
        rows[0].cross(&rows[1]),
        rows[0].cross(&rows[2]),
        rows[1].cross(&rows[2]),
    ];
    let best = candidates
        .iter()
        .max_by(|x, y| x.norm_squared().total_cmp(&y.norm_squared()))?;
    let n = best.norm();
    (n > 0.0 && n.is_finite()).then(|| best / n)
}

/// Geometric parameters of the ellipse `A x² + B xy + C y² + D x + E y + F = 0`.
fn conic_to_ellipse(c: &[f64; 6]) -> Result<EllipseParams, GeometryError> {
    let [a, b, cc, d, e, f] = *c;
    let disc = 4.0 * a * cc - b * b;
    if !(disc > 0.0) {
        return Err(GeometryError::DegenerateInput("conic is not an ellipse".into()));
    }
    let x0 = (b * e - 2.0 * cc * d) / disc;
    let y0 = (b * d - 2.0 * a * e) / disc;
    let f0 = f + 0.5 * (d * x0 + e * y0);

    let mid = 0.5 * (a + cc);
    let rad = (0.25 * (a - cc).powi(2) + 0.25 * b * b).sqrt();
    let (l_max, l_min) = (mid + rad, mid - rad);
    let minor2 = -f0 / l_max;
    let major2 = -f0 / l_min;
    if !(minor2 > 0.0 && major2 > 0.0) || !minor2.is_finite() || !major2.is_finite() {
        return Err(GeometryError::DegenerateInput("imaginary or degenerate ellipse".into()));
    }
    // direction of the l_max eigenvector is the minor axis
    let minor_dir = 0.5 * b.atan2(a - cc);
    let theta = if rad <= 1e-12 * mid.abs() {
        0.0
    } else {
        minor_dir + PI / 2.0
    };
    EllipseParams::new(Point2D::new(x0, y0), minor2.sqrt(), major2.sqrt(), theta)
}

/// Perimeter in pixels from the five-term Gauss–Kummer series in
/// `h = ((b - a) / (b + a))²`.
pub fn perimeter_px(a: f64, b: f64) -> f64 {
    let h = ((b - a) / (b + a)).powi(2);
    PI * (a + b) * (1.0 + h / 4.0 + h * h / 64.0 + h.powi(3) / 256.0 + 25.0 * h.powi(4) / 16384.0)
}

/// Ellipse circumference in millimetres.
pub fn ellipse_perimeter(e: &EllipseParams, s: PixelScale) -> f64 {
    perimeter_px(e.a, e.b) * s.mm_per_px()
}

/// `√(1 − a²/b²)`
pub fn eccentricity(e: &EllipseParams) -> f64 {
    let r = e.a / e.b;
    (1.0 - r * r).max(0.0).sqrt()
}

/// `100 · a / b`
pub fn cephalic_index(e: &EllipseParams) -> f64 {
    100.0 * e.a / e.b
}

/// Biparietal diameter: the full minor axis of the head ellipse.
pub fn bpd_from_head_ellipse(e: &EllipseParams, s: PixelScale) -> f64 {
    2.0 * e.a * s.mm_per_px()
}
