//! Three-point calibration: pixel clicks to (months, survival %) data space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pixel coordinate with top-left origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct PixelPoint {
    pub u: f64,
    pub v: f64,
}

impl PixelPoint {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }
}

impl From<[f64; 2]> for PixelPoint {
    fn from([u, v]: [f64; 2]) -> Self {
        Self { u, v }
    }
}

impl From<PixelPoint> for [f64; 2] {
    fn from(p: PixelPoint) -> Self {
        [p.u, p.v]
    }
}

/// The three clicked ticks: origin `(0, 0)`, rightmost x tick `(max_months, 0)`
/// and top y tick `(0, 100)`.
///
/// JSON form: `{"origin": [u, v], "xmax": [u, v, max_months], "ytop": [u, v]}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AnchorsJson", into = "AnchorsJson")]
pub struct CalibrationAnchors {
    pub origin_px: PixelPoint,
    pub xmax_px: PixelPoint,
    pub ytop_px: PixelPoint,
    pub max_months: f64,
}

#[derive(Serialize, Deserialize)]
struct AnchorsJson {
    origin: [f64; 2],
    xmax: [f64; 3],
    ytop: [f64; 2],
}

impl TryFrom<AnchorsJson> for CalibrationAnchors {
    type Error = String;

    fn try_from(j: AnchorsJson) -> std::result::Result<Self, String> {
        let all = j.origin.iter().chain(&j.xmax).chain(&j.ytop);
        if all.into_iter().any(|x| !x.is_finite()) {
            return Err("anchor coordinates must be finite".into());
        }
        Ok(Self {
            origin_px: j.origin.into(),
            xmax_px: PixelPoint::new(j.xmax[0], j.xmax[1]),
            ytop_px: j.ytop.into(),
            max_months: j.xmax[2],
        })
    }
}

impl From<CalibrationAnchors> for AnchorsJson {
    fn from(a: CalibrationAnchors) -> Self {
        Self {
            origin: a.origin_px.into(),
            xmax: [a.xmax_px.u, a.xmax_px.v, a.max_months],
            ytop: a.ytop_px.into(),
        }
    }
}

/// `t = a·u + b·v + c`, `s = d·u + e·v + f` with `s` in survival percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub f: f64,
}

impl AffineMap {
    pub fn apply(&self, p: PixelPoint) -> (f64, f64) {
        (
            self.a * p.u + self.b * p.v + self.c,
            self.d * p.u + self.e * p.v + self.f,
        )
    }

    pub fn determinant(&self) -> f64 {
        self.a * self.e - self.b * self.d
    }

    /// Maps data coordinates `(t, s)` back to pixels.
    pub fn inverse(&self) -> Result<AffineMap> {
        let det = self.determinant();
        if det == 0.0 || !det.is_finite() {
            return Err(Error::Calibration("affine map is singular".into()));
        }
        let (ia, ib, id, ie) = (self.e / det, -self.b / det, -self.d / det, self.a / det);
        Ok(AffineMap {
            a: ia,
            b: ib,
            c: -(ia * self.c + ib * self.f),
            d: id,
            e: ie,
            f: -(id * self.c + ie * self.f),
        })
    }
}

/// Relative tolerance on the sine of the angle between the two anchor
/// displacement vectors below which the anchors count as collinear.
const COLLINEAR_TOL: f64 = 1e-9;

pub fn solve_affine(anchors: &CalibrationAnchors) -> Result<AffineMap> {
    if !(anchors.max_months > 0.0) || !anchors.max_months.is_finite() {
        return Err(Error::Input(format!(
            "max_months must be positive, found {}",
            anchors.max_months
        )));
    }
    let o = anchors.origin_px;
    // columns: pixel displacement of the x and y anchors from the origin
    let (p11, p21) = (anchors.xmax_px.u - o.u, anchors.xmax_px.v - o.v);
    let (p12, p22) = (anchors.ytop_px.u - o.u, anchors.ytop_px.v - o.v);
    let det = p11 * p22 - p12 * p21;
    let scale = p11.hypot(p21) * p12.hypot(p22);
    if !(det.abs() > COLLINEAR_TOL * scale) {
        return Err(Error::Calibration(
            "calibration anchors are collinear; re-click the three ticks".into(),
        ));
    }
    // linear part = diag(max_months, 100) * P^-1
    let (i11, i12, i21, i22) = (p22 / det, -p12 / det, -p21 / det, p11 / det);
    let (a, b) = (anchors.max_months * i11, anchors.max_months * i12);
    let (d, e) = (100.0 * i21, 100.0 * i22);
    Ok(AffineMap {
        a,
        b,
        c: -(a * o.u + b * o.v),
        d,
        e,
        f: -(d * o.u + e * o.v),
    })
}

/// Pointwise image of a pixel trace, order preserved. Output is `(months, %)`.
pub fn transform_trace(trace: &[PixelPoint], map: &AffineMap) -> Result<Vec<(f64, f64)>> {
    if trace.is_empty() {
        return Err(Error::Input("empty trace".into()));
    }
    Ok(trace.iter().map(|p| map.apply(*p)).collect())
}
