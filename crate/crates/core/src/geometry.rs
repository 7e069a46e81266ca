//! Road geometry: the center lane, the drivable corridor around it and the
//! waypoints derived from it.
//!
//! Every lane is parameterized by arc length `s` measured from its origin.
//! Queries past either end of the lane are answered on the tangent line
//! extending that end, so projections of points slightly behind the start or
//! beyond the finish stay well defined.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::GeometryError;

/// Smallest admissible radius of curvature anywhere on a lane, in meters.
pub const MIN_RADIUS: f64 = 10.0;

/// Planar point in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(self, other: Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

impl From<[f64; 2]> for Point2 {
    fn from(v: [f64; 2]) -> Self {
        Point2::new(v[0], v[1])
    }
}

impl From<Point2> for [f64; 2] {
    fn from(p: Point2) -> Self {
        [p.x, p.y]
    }
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

#[inline]
fn cross(ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    ax * by - ay * bx
}

/// Discriminant of [`CenterLane`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LaneKind {
    Straight,
    Arc,
    PiecewiseSpline,
}

/// Serialized form of a center lane: `{"kind": ..., "params": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum LaneSpec {
    Straight {
        origin: Point2,
        heading: f64,
        length: f64,
    },
    /// Circular arc of `arc_length` meters followed by a tangent straight run
    /// out to `length`. `radius` is signed: positive turns left.
    Arc {
        origin: Point2,
        heading: f64,
        radius: f64,
        arc_length: f64,
        length: f64,
    },
    /// Natural cubic spline through `knots`, re-parameterized by arc length.
    PiecewiseSpline { knots: Vec<Point2> },
}

/// Nearest-point projection of a planar point onto a lane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Arc-length station; negative or past the end when the point projects
    /// onto a tangent extension.
    pub s: f64,
    /// Signed perpendicular distance, positive to the left of travel.
    pub offset: f64,
    /// Lane tangent angle at the station.
    pub heading: f64,
    /// Signed curvature at the station (1/m, positive turning left).
    pub curvature: f64,
}

/// The road's center line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LaneSpec", into = "LaneSpec")]
pub struct CenterLane {
    spec: LaneSpec,
    spline: Option<SplineTable>,
}

impl TryFrom<LaneSpec> for CenterLane {
    type Error = GeometryError;

    fn try_from(spec: LaneSpec) -> Result<Self, Self::Error> {
        CenterLane::new(spec)
    }
}

impl From<CenterLane> for LaneSpec {
    fn from(lane: CenterLane) -> Self {
        lane.spec
    }
}

fn finite_or(name: &str, v: f64) -> Result<(), GeometryError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(GeometryError::InvalidLane(format!("{name} is not finite")))
    }
}

impl CenterLane {
    pub fn new(spec: LaneSpec) -> Result<Self, GeometryError> {
        let spline = match &spec {
            LaneSpec::Straight {
                origin,
                heading,
                length,
            } => {
                finite_or("origin", origin.x + origin.y)?;
                finite_or("heading", *heading)?;
                if !(*length > 0.0 && length.is_finite()) {
                    return Err(GeometryError::InvalidLane("length must be > 0".into()));
                }
                None
            }
            LaneSpec::Arc {
                origin,
                heading,
                radius,
                arc_length,
                length,
            } => {
                finite_or("origin", origin.x + origin.y)?;
                finite_or("heading", *heading)?;
                if !(radius.abs() >= MIN_RADIUS && radius.is_finite()) {
                    return Err(GeometryError::InvalidLane(format!(
                        "arc radius magnitude {} below {MIN_RADIUS} m",
                        radius.abs()
                    )));
                }
                if !(*arc_length > 0.0 && *arc_length <= 2.0 * PI * radius.abs()) {
                    return Err(GeometryError::InvalidLane(
                        "arc_length must lie in (0, 2*pi*|radius|]".into(),
                    ));
                }
                if !(*length >= *arc_length && length.is_finite()) {
                    return Err(GeometryError::InvalidLane(
                        "length must be >= arc_length".into(),
                    ));
                }
                None
            }
            LaneSpec::PiecewiseSpline { knots } => Some(SplineTable::new(knots)?),
        };
        Ok(Self { spec, spline })
    }

    pub fn straight(origin: Point2, heading: f64, length: f64) -> Result<Self, GeometryError> {
        Self::new(LaneSpec::Straight {
            origin,
            heading,
            length,
        })
    }

    /// Circular arc over its whole `length` (no straight run-out).
    pub fn arc(
        origin: Point2,
        heading: f64,
        radius: f64,
        length: f64,
    ) -> Result<Self, GeometryError> {
        Self::new(LaneSpec::Arc {
            origin,
            heading,
            radius,
            arc_length: length,
            length,
        })
    }

    pub fn spline(knots: Vec<Point2>) -> Result<Self, GeometryError> {
        Self::new(LaneSpec::PiecewiseSpline { knots })
    }

    pub fn spec(&self) -> &LaneSpec {
        &self.spec
    }

    pub fn kind(&self) -> LaneKind {
        match self.spec {
            LaneSpec::Straight { .. } => LaneKind::Straight,
            LaneSpec::Arc { .. } => LaneKind::Arc,
            LaneSpec::PiecewiseSpline { .. } => LaneKind::PiecewiseSpline,
        }
    }

    /// Total arc length in meters.
    pub fn length(&self) -> f64 {
        match &self.spec {
            LaneSpec::Straight { length, .. } | LaneSpec::Arc { length, .. } => *length,
            LaneSpec::PiecewiseSpline { .. } => self.spline_table().length(),
        }
    }

    /// Smallest radius of curvature along the lane (infinite for straights).
    pub fn min_radius(&self) -> f64 {
        match &self.spec {
            LaneSpec::Straight { .. } => f64::INFINITY,
            LaneSpec::Arc { radius, .. } => radius.abs(),
            LaneSpec::PiecewiseSpline { .. } => self.spline_table().min_radius,
        }
    }

    fn spline_table(&self) -> &SplineTable {
        self.spline
            .as_ref()
            .expect("spline lanes always carry a table")
    }

    fn check_range(&self, s: f64) -> Result<(), GeometryError> {
        let length = self.length();
        if s.is_finite() && (0.0..=length).contains(&s) {
            Ok(())
        } else {
            Err(GeometryError::OutOfRange { s, length })
        }
    }

    /// Point on the lane at arc length `s`.
    pub fn point(&self, s: f64) -> Result<Point2, GeometryError> {
        self.check_range(s)?;
        Ok(self.frame(s).0)
    }

    /// Tangent angle at `s`, wrapped to `(-pi, pi]`.
    pub fn heading(&self, s: f64) -> Result<f64, GeometryError> {
        self.check_range(s)?;
        Ok(wrap_angle(self.frame(s).1))
    }

    /// Signed curvature at `s`.
    pub fn curvature(&self, s: f64) -> Result<f64, GeometryError> {
        self.check_range(s)?;
        Ok(self.frame(s).2)
    }

    /// Point, unwrapped tangent angle and curvature at any station, using
    /// the tangent extensions outside `[0, length]`.
    pub fn frame(&self, s: f64) -> (Point2, f64, f64) {
        match &self.spec {
            LaneSpec::Straight {
                origin, heading, ..
            } => (
                Point2::new(origin.x + s * heading.cos(), origin.y + s * heading.sin()),
                *heading,
                0.0,
            ),
            LaneSpec::Arc {
                origin,
                heading,
                radius,
                arc_length,
                ..
            } => {
                let (cx, cy) = arc_center(*origin, *heading, *radius);
                if s < 0.0 {
                    let p = Point2::new(origin.x + s * heading.cos(), origin.y + s * heading.sin());
                    (p, *heading, 0.0)
                } else if s <= *arc_length {
                    let phi = heading + s / radius;
                    (
                        Point2::new(cx + radius * phi.sin(), cy - radius * phi.cos()),
                        phi,
                        1.0 / radius,
                    )
                } else {
                    let phi = heading + arc_length / radius;
                    let ex = cx + radius * phi.sin();
                    let ey = cy - radius * phi.cos();
                    let ds = s - arc_length;
                    (Point2::new(ex + ds * phi.cos(), ey + ds * phi.sin()), phi, 0.0)
                }
            }
            LaneSpec::PiecewiseSpline { .. } => self.spline_table().frame(s),
        }
    }

    /// Nearest-point projection without the uniqueness check; used inside
    /// evaluators where iterates may stray far from the road.
    pub fn project_unchecked(&self, p: Point2) -> Projection {
        match &self.spec {
            LaneSpec::Straight {
                origin, heading, ..
            } => {
                let (tx, ty) = (heading.cos(), heading.sin());
                let (qx, qy) = (p.x - origin.x, p.y - origin.y);
                Projection {
                    s: qx * tx + qy * ty,
                    offset: cross(tx, ty, qx, qy),
                    heading: *heading,
                    curvature: 0.0,
                }
            }
            LaneSpec::Arc {
                origin,
                heading,
                radius,
                arc_length,
                ..
            } => project_arc(p, *origin, *heading, *radius, *arc_length),
            LaneSpec::PiecewiseSpline { .. } => self.spline_table().project(p),
        }
    }

    /// Nearest-point projection, failing when the nearest point is not unique.
    pub fn project(&self, p: Point2) -> Result<Projection, GeometryError> {
        if !(p.x.is_finite() && p.y.is_finite()) {
            return Err(GeometryError::AmbiguousProjection { x: p.x, y: p.y });
        }
        let proj = self.project_unchecked(p);
        if proj.offset.abs() >= self.min_radius() {
            return Err(GeometryError::AmbiguousProjection { x: p.x, y: p.y });
        }
        Ok(proj)
    }
}

fn arc_center(origin: Point2, heading: f64, radius: f64) -> (f64, f64) {
    (
        origin.x - radius * heading.sin(),
        origin.y + radius * heading.cos(),
    )
}

fn project_arc(p: Point2, origin: Point2, heading: f64, radius: f64, arc_length: f64) -> Projection {
    let (cx, cy) = arc_center(origin, heading, radius);
    let phi_end = heading + arc_length / radius;
    let end = Point2::new(cx + radius * phi_end.sin(), cy - radius * phi_end.cos());
    let mut best: Option<(f64, Projection)> = None;
    let mut consider = |dist: f64, proj: Projection| {
        if best.is_none_or(|(d, _)| dist < d) {
            best = Some((dist, proj));
        }
    };

    // Lead-in extension.
    let (t0x, t0y) = (heading.cos(), heading.sin());
    let along = (p.x - origin.x) * t0x + (p.y - origin.y) * t0y;
    if along <= 0.0 {
        let off = cross(t0x, t0y, p.x - origin.x, p.y - origin.y);
        consider(
            off.abs(),
            Projection {
                s: along,
                offset: off,
                heading,
                curvature: 0.0,
            },
        );
    }

    // Run-out straight.
    let (tex, tey) = (phi_end.cos(), phi_end.sin());
    let along = (p.x - end.x) * tex + (p.y - end.y) * tey;
    if along >= 0.0 {
        let off = cross(tex, tey, p.x - end.x, p.y - end.y);
        consider(
            off.abs(),
            Projection {
                s: arc_length + along,
                offset: off,
                heading: phi_end,
                curvature: 0.0,
            },
        );
    }

    // Circular part.
    let (qx, qy) = (p.x - cx, p.y - cy);
    let rho = qx.hypot(qy);
    if rho > 0.0 {
        let psi = qy.atan2(qx);
        let sign = radius.signum();
        let phi = psi + sign * PI / 2.0;
        let tau = (sign * (phi - heading)).rem_euclid(2.0 * PI);
        let sweep = arc_length / radius.abs();
        if tau <= sweep {
            let s = radius.abs() * tau;
            let phi = heading + s / radius;
            consider(
                (radius.abs() - rho).abs(),
                Projection {
                    s,
                    offset: radius - sign * rho,
                    heading: phi,
                    curvature: 1.0 / radius,
                },
            );
        }
    }

    // Corner points (outer side of the junctions).
    for (s, pt, h, k) in [
        (0.0, origin, heading, 1.0 / radius),
        (arc_length, end, phi_end, 1.0 / radius),
    ] {
        let d = p.dist(pt);
        let off = cross(h.cos(), h.sin(), p.x - pt.x, p.y - pt.y);
        let off = if off == 0.0 { 0.0 } else { off.signum() * d };
        consider(
            d,
            Projection {
                s,
                offset: off,
                heading: h,
                curvature: k,
            },
        );
    }

    best.expect("corner candidates always exist").1
}

/// Waypoint on the center lane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

/// Waypoint plus whether its station had to be clamped to the lane end.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaypointSample {
    pub waypoint: Waypoint,
    pub s: f64,
    pub clamped: bool,
}

/// Waypoint at time `t` for a vehicle progressing at `v_r` along the lane.
pub fn waypoint_at(lane: &CenterLane, t: f64, v_r: f64) -> Result<WaypointSample, GeometryError> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(GeometryError::OutOfRange {
            s: t * v_r,
            length: lane.length(),
        });
    }
    if !(v_r > 0.0 && v_r.is_finite()) {
        return Err(GeometryError::InvalidLane(format!(
            "reference speed {v_r} must be > 0"
        )));
    }
    let want = v_r * t;
    let length = lane.length();
    let (s, clamped) = if want > length {
        (length, true)
    } else {
        (want, false)
    };
    let p = lane.point(s)?;
    Ok(WaypointSample {
        waypoint: Waypoint {
            x: p.x,
            y: p.y,
            theta: lane.heading(s)?,
        },
        s,
        clamped,
    })
}

/// Point on the lane at arc length `s`.
pub fn lane_point(lane: &CenterLane, s: f64) -> Result<Point2, GeometryError> {
    lane.point(s)
}

/// Tangent angle of the lane at `s`, in `(-pi, pi]`.
pub fn lane_heading(lane: &CenterLane, s: f64) -> Result<f64, GeometryError> {
    lane.heading(s)
}

/// Signed lateral offset of `p` from the lane (positive to the left).
pub fn lateral_offset(lane: &CenterLane, p: Point2) -> Result<f64, GeometryError> {
    Ok(lane.project(p)?.offset)
}

/// Drivable corridor around the center lane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoadBounds {
    pub half_width: f64,
    pub safety_margin: f64,
}

impl RoadBounds {
    pub fn new(half_width: f64, safety_margin: f64) -> Result<Self, GeometryError> {
        let b = Self {
            half_width,
            safety_margin,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.half_width > 0.0 && self.half_width.is_finite()) {
            return Err(GeometryError::InvalidLane("half_width must be > 0".into()));
        }
        if !(self.safety_margin >= 0.0 && self.safety_margin < self.half_width) {
            return Err(GeometryError::InvalidLane(
                "safety_margin must lie in [0, half_width)".into(),
            ));
        }
        Ok(())
    }

    /// Largest admissible |lateral offset|.
    pub fn usable_half_width(&self) -> f64 {
        self.half_width - self.safety_margin
    }
}

// ---------------------------------------------------------------------------
// Spline lanes

const GL_NODES: [f64; 8] = [
    -0.960_289_856_497_536_2,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_2,
];
const GL_WEIGHTS: [f64; 8] = [
    0.101_228_536_290_376_26,
    0.222_381_034_453_374_48,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362,
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_48,
    0.101_228_536_290_376_26,
];
const SAMPLES_PER_SEGMENT: usize = 8;

#[derive(Debug, Clone, PartialEq)]
struct CubicSegment {
    du: f64,
    // x(t) = cx[0] + cx[1] t + cx[2] t^2 + cx[3] t^3 for t in [0, du]
    cx: [f64; 4],
    cy: [f64; 4],
}

impl CubicSegment {
    fn pos(&self, t: f64) -> (f64, f64) {
        let p = |c: &[f64; 4]| c[0] + t * (c[1] + t * (c[2] + t * c[3]));
        (p(&self.cx), p(&self.cy))
    }

    fn d1(&self, t: f64) -> (f64, f64) {
        let p = |c: &[f64; 4]| c[1] + t * (2.0 * c[2] + 3.0 * t * c[3]);
        (p(&self.cx), p(&self.cy))
    }

    fn d2(&self, t: f64) -> (f64, f64) {
        let p = |c: &[f64; 4]| 2.0 * c[2] + 6.0 * t * c[3];
        (p(&self.cx), p(&self.cy))
    }

    fn speed(&self, t: f64) -> f64 {
        let (dx, dy) = self.d1(t);
        dx.hypot(dy)
    }

    fn length_to(&self, t: f64) -> f64 {
        // Two Gauss-Legendre panels keep the error far below 1e-12 for the
        // gentle segments the lane families use.
        let half = t / 2.0;
        let mut total = 0.0;
        for panel in 0..2 {
            let a = panel as f64 * half;
            let mid = a + half / 2.0;
            for (x, w) in GL_NODES.iter().zip(GL_WEIGHTS.iter()) {
                total += w * self.speed(mid + x * half / 2.0);
            }
        }
        total * half / 2.0
    }

    fn curvature(&self, t: f64) -> f64 {
        let (dx, dy) = self.d1(t);
        let (ddx, ddy) = self.d2(t);
        cross(dx, dy, ddx, ddy) / (dx * dx + dy * dy).powf(1.5)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct SplineTable {
    segments: Vec<CubicSegment>,
    /// Cumulative arc length at the start of each segment, plus the total.
    cum: Vec<f64>,
    /// Dense samples for the coarse projection search: (segment, t, point).
    samples: Vec<(usize, f64, Point2)>,
    min_radius: f64,
}

/// Natural cubic spline second-derivative solve (tridiagonal, Thomas).
fn natural_spline_coeffs(u: &[f64], v: &[f64]) -> Vec<[f64; 4]> {
    let n = u.len();
    let mut m = vec![0.0; n];
    if n > 2 {
        let k = n - 2;
        let mut sub = vec![0.0; k];
        let mut diag = vec![0.0; k];
        let mut sup = vec![0.0; k];
        let mut rhs = vec![0.0; k];
        for i in 1..n - 1 {
            let h0 = u[i] - u[i - 1];
            let h1 = u[i + 1] - u[i];
            sub[i - 1] = h0;
            diag[i - 1] = 2.0 * (h0 + h1);
            sup[i - 1] = h1;
            rhs[i - 1] = 6.0 * ((v[i + 1] - v[i]) / h1 - (v[i] - v[i - 1]) / h0);
        }
        for i in 1..k {
            let w = sub[i] / diag[i - 1];
            diag[i] -= w * sup[i - 1];
            rhs[i] -= w * rhs[i - 1];
        }
        let mut sol = vec![0.0; k];
        sol[k - 1] = rhs[k - 1] / diag[k - 1];
        for i in (0..k - 1).rev() {
            sol[i] = (rhs[i] - sup[i] * sol[i + 1]) / diag[i];
        }
        m[1..n - 1].copy_from_slice(&sol);
    }
    (0..n - 1)
        .map(|i| {
            let h = u[i + 1] - u[i];
            [
                v[i],
                (v[i + 1] - v[i]) / h - h * (2.0 * m[i] + m[i + 1]) / 6.0,
                m[i] / 2.0,
                (m[i + 1] - m[i]) / (6.0 * h),
            ]
        })
        .collect()
}

impl SplineTable {
    fn new(knots: &[Point2]) -> Result<Self, GeometryError> {
        if knots.len() < 2 {
            return Err(GeometryError::InvalidLane(
                "a spline lane needs at least two knots".into(),
            ));
        }
        if knots.iter().any(|k| !(k.x.is_finite() && k.y.is_finite())) {
            return Err(GeometryError::InvalidLane("non-finite spline knot".into()));
        }
        let mut u = vec![0.0];
        for w in knots.windows(2) {
            let d = w[0].dist(w[1]);
            if d <= 1e-9 {
                return Err(GeometryError::InvalidLane(
                    "consecutive spline knots coincide".into(),
                ));
            }
            u.push(u.last().unwrap() + d);
        }
        let xs: Vec<f64> = knots.iter().map(|k| k.x).collect();
        let ys: Vec<f64> = knots.iter().map(|k| k.y).collect();
        let cx = natural_spline_coeffs(&u, &xs);
        let cy = natural_spline_coeffs(&u, &ys);
        let segments: Vec<CubicSegment> = cx
            .into_iter()
            .zip(cy)
            .enumerate()
            .map(|(i, (cx, cy))| CubicSegment {
                du: u[i + 1] - u[i],
                cx,
                cy,
            })
            .collect();

        let mut cum = vec![0.0];
        let mut samples = Vec::new();
        let mut min_radius = f64::INFINITY;
        for (i, seg) in segments.iter().enumerate() {
            cum.push(cum[i] + seg.length_to(seg.du));
            for j in 0..=(2 * SAMPLES_PER_SEGMENT) {
                let t = seg.du * j as f64 / (2 * SAMPLES_PER_SEGMENT) as f64;
                if seg.speed(t) < 1e-9 {
                    return Err(GeometryError::InvalidLane(
                        "spline has a cusp (zero tangent)".into(),
                    ));
                }
                let k = seg.curvature(t).abs();
                if k > 0.0 {
                    min_radius = min_radius.min(1.0 / k);
                }
                if j % 2 == 0 && (j < 2 * SAMPLES_PER_SEGMENT || i + 1 == segments.len()) {
                    let (x, y) = seg.pos(t);
                    samples.push((i, t, Point2::new(x, y)));
                }
            }
        }
        if min_radius < MIN_RADIUS {
            return Err(GeometryError::InvalidLane(format!(
                "spline radius of curvature {min_radius:.3} m below {MIN_RADIUS} m"
            )));
        }
        Ok(Self {
            segments,
            cum,
            samples,
            min_radius,
        })
    }

    fn length(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    /// Segment and local parameter at arc length `s` in `[0, length]`.
    fn locate(&self, s: f64) -> (usize, f64) {
        let n = self.segments.len();
        let i = match self.cum[1..].binary_search_by(|c| c.partial_cmp(&s).unwrap()) {
            Ok(i) => i,
            Err(i) => i.min(n - 1),
        };
        let seg = &self.segments[i];
        let target = s - self.cum[i];
        let seg_len = self.cum[i + 1] - self.cum[i];
        let mut t = (target / seg_len * seg.du).clamp(0.0, seg.du);
        for _ in 0..30 {
            let err = seg.length_to(t) - target;
            let step = err / seg.speed(t);
            t = (t - step).clamp(0.0, seg.du);
            if step.abs() < 1e-13 * seg.du.max(1.0) {
                break;
            }
        }
        (i, t)
    }

    fn frame(&self, s: f64) -> (Point2, f64, f64) {
        let length = self.length();
        let end_frame = |seg: &CubicSegment, t: f64| {
            let (x, y) = seg.pos(t);
            let (dx, dy) = seg.d1(t);
            (Point2::new(x, y), dy.atan2(dx))
        };
        if s < 0.0 {
            let (p, h) = end_frame(&self.segments[0], 0.0);
            return (Point2::new(p.x + s * h.cos(), p.y + s * h.sin()), h, 0.0);
        }
        if s > length {
            let seg = self.segments.last().unwrap();
            let (p, h) = end_frame(seg, seg.du);
            let ds = s - length;
            return (Point2::new(p.x + ds * h.cos(), p.y + ds * h.sin()), h, 0.0);
        }
        let (i, t) = self.locate(s);
        let seg = &self.segments[i];
        let (p, h) = end_frame(seg, t);
        (p, h, seg.curvature(t))
    }

    fn project(&self, p: Point2) -> Projection {
        let (mut seg_i, mut t, _) = self
            .samples
            .iter()
            .map(|&(i, t, q)| (i, t, (q.x - p.x).powi(2) + (q.y - p.y).powi(2)))
            .min_by(|a, b| a.2.partial_cmp(&b.2).unwrap())
            .expect("spline tables are never empty");
        let last = self.segments.len() - 1;

        // Newton on g(t) = (r(t) - p) . r'(t), hopping across segments.
        for _ in 0..60 {
            let seg = &self.segments[seg_i];
            let (x, y) = seg.pos(t);
            let (dx, dy) = seg.d1(t);
            let (ddx, ddy) = seg.d2(t);
            let g = (x - p.x) * dx + (y - p.y) * dy;
            let gp = dx * dx + dy * dy + (x - p.x) * ddx + (y - p.y) * ddy;
            let step = if gp > 1e-12 { g / gp } else { g / (dx * dx + dy * dy) };
            let mut next = t - step;
            if next < 0.0 {
                if seg_i == 0 {
                    t = 0.0;
                    break;
                }
                seg_i -= 1;
                next = self.segments[seg_i].du;
            } else if next > seg.du {
                if seg_i == last {
                    t = seg.du;
                    break;
                }
                seg_i += 1;
                next = 0.0;
            }
            let done = (next - t).abs() < 1e-13 * seg.du.max(1.0);
            t = next;
            if done {
                break;
            }
        }

        let seg = &self.segments[seg_i];
        let (x, y) = seg.pos(t);
        let (dx, dy) = seg.d1(t);
        let speed = dx.hypot(dy);
        let (tx, ty) = (dx / speed, dy / speed);
        let heading = ty.atan2(tx);
        let along = (p.x - x) * tx + (p.y - y) * ty;
        let offset = cross(tx, ty, p.x - x, p.y - y);
        let s = self.cum[seg_i] + seg.length_to(t);
        // Beyond either end the projection lands on the tangent extension.
        if (seg_i == 0 && t == 0.0 && along < 0.0) || (seg_i == last && t == seg.du && along > 0.0)
        {
            return Projection {
                s: s + along,
                offset,
                heading,
                curvature: 0.0,
            };
        }
        Projection {
            s,
            offset,
            heading,
            curvature: seg.curvature(t),
        }
    }
}
