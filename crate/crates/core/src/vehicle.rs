//! Unicycle kinematics and the pointwise pieces of the trajectory program:
//! stage cost, road-corridor constraint, actuator limits and the
//! ego-to-target distance used by the safety constraint.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{GeometryError, ScenarioError};
use crate::geometry::{wrap_angle, CenterLane, Point2, RoadBounds, Waypoint};

/// Ego vehicle state `[x, y, theta, v]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct EgoState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
}

impl EgoState {
    pub const fn new(x: f64, y: f64, theta: f64, v: f64) -> Self {
        Self { x, y, theta, v }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x, self.y, self.theta, self.v]
    }

    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }

    /// Checks finiteness, the non-negative position/speed domain and the
    /// heading range.
    pub fn validate(&self) -> Result<(), String> {
        if !self.as_array().iter().all(|v| v.is_finite()) {
            return Err("state has non-finite components".into());
        }
        if self.x < 0.0 || self.y < 0.0 {
            return Err("position must lie in the non-negative quadrant".into());
        }
        if self.v < 0.0 {
            return Err("speed must be >= 0".into());
        }
        if !(self.theta > -PI && self.theta <= PI) {
            return Err("heading must lie in (-pi, pi]".into());
        }
        Ok(())
    }
}

impl From<[f64; 4]> for EgoState {
    fn from(a: [f64; 4]) -> Self {
        EgoState::new(a[0], a[1], a[2], a[3])
    }
}

impl From<EgoState> for [f64; 4] {
    fn from(z: EgoState) -> Self {
        z.as_array()
    }
}

/// Control input `[a, omega]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    pub a: f64,
    pub omega: f64,
}

impl ControlInput {
    pub const fn new(a: f64, omega: f64) -> Self {
        Self { a, omega }
    }
}

/// Objective weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub w_g: f64,
    pub w_v: f64,
    pub w_a: f64,
    pub w_omega: f64,
    pub w_j: f64,
    pub w_h: f64,
    pub w_p: f64,
}

impl Weights {
    pub const fn equal() -> Self {
        Self::from_array([1.0; 7])
    }

    /// Weights in the order `w_g, w_v, w_a, w_omega, w_j, w_h, w_p`.
    pub const fn from_array(w: [f64; 7]) -> Self {
        Self {
            w_g: w[0],
            w_v: w[1],
            w_a: w[2],
            w_omega: w[3],
            w_j: w[4],
            w_h: w[5],
            w_p: w[6],
        }
    }

    pub fn as_array(&self) -> [f64; 7] {
        [
            self.w_g,
            self.w_v,
            self.w_a,
            self.w_omega,
            self.w_j,
            self.w_h,
            self.w_p,
        ]
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self::from_array(self.as_array().map(|w| w * c))
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        const NAMES: [&str; 7] = ["w_g", "w_v", "w_a", "w_omega", "w_j", "w_h", "w_p"];
        for (w, name) in self.as_array().iter().zip(NAMES) {
            if !(*w >= 0.0 && w.is_finite()) {
                return Err(ScenarioError::invalid(
                    &format!("weights.{name}"),
                    "must be finite and >= 0",
                ));
            }
        }
        if self.as_array().iter().all(|w| *w == 0.0) {
            return Err(ScenarioError::invalid("weights", "at least one weight must be > 0"));
        }
        Ok(())
    }
}

impl Default for Weights {
    fn default() -> Self {
        Self::equal()
    }
}

/// Speed, actuator and comfort limits plus the reference speed and the
/// minimum ego-to-target distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Limits {
    pub v_r: f64,
    pub v_max: f64,
    pub omega_max: f64,
    pub a_max: f64,
    pub j_max: f64,
    pub d_min: f64,
}

/// Acceleration bound used when none is given.
pub const DEFAULT_A_MAX: f64 = 3.0;

impl Limits {
    /// Urban parameter set: v_r 12 m/s, v_max 40 m/s, omega_max pi/6 rad/s,
    /// j_max 0.6 m/s^3, d_min 5 m.
    pub fn urban() -> Self {
        Self {
            v_r: 12.0,
            v_max: 40.0,
            omega_max: PI / 6.0,
            a_max: DEFAULT_A_MAX,
            j_max: 0.6,
            d_min: 5.0,
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let fields = [
            ("v_r", self.v_r),
            ("v_max", self.v_max),
            ("omega_max", self.omega_max),
            ("a_max", self.a_max),
            ("j_max", self.j_max),
            ("d_min", self.d_min),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ScenarioError::invalid(
                    &format!("limits.{name}"),
                    format!("must be finite and > 0, got {v}"),
                ));
            }
        }
        if self.v_r > self.v_max {
            return Err(ScenarioError::invalid(
                "limits.v_r",
                format!("reference speed {} exceeds v_max {}", self.v_r, self.v_max),
            ));
        }
        if self.omega_max > PI {
            return Err(ScenarioError::invalid("limits.omega_max", "must be <= pi"));
        }
        Ok(())
    }
}

/// Unicycle state derivative `[v cos theta, v sin theta, omega, a]`.
pub fn dynamics(z: &EgoState, u: &ControlInput) -> [f64; 4] {
    let (s, c) = z.theta.sin_cos();
    [z.v * c, z.v * s, u.omega, u.a]
}

/// `|x_tgt - x + y_tgt - y|`, the distance measure of the safety constraint.
///
/// Arguments are positional in the order `K(a, b, c, d) = |a - b + c - d|`,
/// so the ego coordinate follows the matching target coordinate.
pub fn k_distance(x_tgt: f64, x: f64, y_tgt: f64, y: f64) -> f64 {
    (x_tgt - x + y_tgt - y).abs()
}

/// Heading of the vehicle relative to the lane tangent at station `s`.
pub fn heading_error(theta: f64, lane: &CenterLane, s: f64) -> Result<f64, GeometryError> {
    Ok(wrap_angle(theta - lane.heading(s)?))
}

/// Inverse-square repulsion from the target, smoothed by `p_eps` (m^2).
pub fn potential_field(x_tgt: f64, y_tgt: f64, x: f64, y: f64, p_eps: f64) -> f64 {
    debug_assert!(p_eps > 0.0, "p_eps must be positive");
    let dx = x_tgt - x;
    let dy = y_tgt - y;
    1.0 / (dx * dx + dy * dy + p_eps)
}

/// Gradient of [`potential_field`] with respect to the ego position.
pub fn potential_field_grad(x_tgt: f64, y_tgt: f64, x: f64, y: f64, p_eps: f64) -> [f64; 2] {
    let dx = x_tgt - x;
    let dy = y_tgt - y;
    let q = dx * dx + dy * dy + p_eps;
    let q2 = q * q;
    [2.0 * dx / q2, 2.0 * dy / q2]
}

/// Road-corridor residual `|offset| - (half_width - safety_margin)`;
/// feasible when `<= 0`.
pub fn road_constraint(
    p: Point2,
    lane: &CenterLane,
    bounds: &RoadBounds,
) -> Result<f64, GeometryError> {
    let offset = lane.project(p)?.offset;
    Ok(offset.abs() - bounds.usable_half_width())
}

/// `(|v| - v_max, |omega| - omega_max, |a| - a_max, |jerk| - j_max)`.
pub fn limit_residuals(z: &EgoState, u: &ControlInput, jerk: f64, lim: &Limits) -> [f64; 4] {
    [
        z.v.abs() - lim.v_max,
        u.omega.abs() - lim.omega_max,
        u.a.abs() - lim.a_max,
        jerk.abs() - lim.j_max,
    ]
}

/// Everything the stage cost needs besides the state, control and jerk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageContext {
    pub waypoint: Waypoint,
    pub target: Point2,
    pub weights: Weights,
    pub v_r: f64,
    /// Lane tangent at the station used for the heading term.
    pub lane_heading: f64,
    pub p_eps: f64,
}

impl StageContext {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        lane: &CenterLane,
        s: f64,
        waypoint: Waypoint,
        target: Point2,
        weights: Weights,
        v_r: f64,
        p_eps: f64,
    ) -> Result<Self, GeometryError> {
        Ok(Self {
            waypoint,
            target,
            weights,
            v_r,
            lane_heading: lane.heading(s)?,
            p_eps,
        })
    }
}

/// Partial derivatives of the stage cost.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StageGradient {
    pub state: [f64; 4],
    pub control: [f64; 2],
    pub jerk: f64,
}

/// Weighted running cost: goal distance, speed tracking, control effort,
/// jerk, heading error and the potential field.
pub fn stage_cost(z: &EgoState, u: &ControlInput, jerk: f64, ctx: &StageContext) -> f64 {
    let w = &ctx.weights;
    let dx = z.x - ctx.waypoint.x;
    let dy = z.y - ctx.waypoint.y;
    let h = wrap_angle(z.theta - ctx.lane_heading);
    let dv = ctx.v_r - z.v;
    w.w_g * (dx * dx + dy * dy)
        + w.w_v * dv * dv
        + w.w_a * u.a * u.a
        + w.w_omega * u.omega * u.omega
        + w.w_j * jerk * jerk
        + w.w_h * h * h
        + w.w_p * potential_field(ctx.target.x, ctx.target.y, z.x, z.y, ctx.p_eps)
}

/// Analytic gradient of [`stage_cost`] with the station held fixed.
pub fn stage_cost_gradient(
    z: &EgoState,
    u: &ControlInput,
    jerk: f64,
    ctx: &StageContext,
) -> StageGradient {
    let w = &ctx.weights;
    let h = wrap_angle(z.theta - ctx.lane_heading);
    let pg = potential_field_grad(ctx.target.x, ctx.target.y, z.x, z.y, ctx.p_eps);
    StageGradient {
        state: [
            2.0 * w.w_g * (z.x - ctx.waypoint.x) + w.w_p * pg[0],
            2.0 * w.w_g * (z.y - ctx.waypoint.y) + w.w_p * pg[1],
            2.0 * w.w_h * h,
            -2.0 * w.w_v * (ctx.v_r - z.v),
        ],
        control: [2.0 * w.w_a * u.a, 2.0 * w.w_omega * u.omega],
        jerk: 2.0 * w.w_j * jerk,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn straight(heading: f64) -> CenterLane {
        CenterLane::straight(Point2::new(0.0, 0.0), heading, 500.0).unwrap()
    }

    fn ctx_with(weights: Weights, waypoint: Waypoint, v_r: f64) -> StageContext {
        StageContext::new(
            &straight(0.0),
            0.0,
            waypoint,
            Point2::new(200.0, 0.0),
            weights,
            v_r,
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn dynamics_examples() {
        let d = dynamics(&EgoState::new(0.0, 0.0, 0.0, 12.0), &ControlInput::new(2.0, 0.1));
        assert_eq!(d, [12.0, 0.0, 0.1, 2.0]);
        let d = dynamics(
            &EgoState::new(1.0, 2.0, PI / 2.0, 3.0),
            &ControlInput::new(0.0, 0.0),
        );
        assert_abs_diff_eq!(d[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d[1], 3.0, epsilon = 1e-15);
        let d = dynamics(&EgoState::new(5.0, 5.0, PI, 4.0), &ControlInput::new(1.0, -0.2));
        assert_abs_diff_eq!(d[0], -4.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d[1], 0.0, epsilon = 1e-15);
        assert_eq!((d[2], d[3]), (-0.2, 1.0));
    }

    #[test]
    fn k_distance_examples() {
        assert_eq!(k_distance(5.0, 0.0, 0.0, 0.0), 5.0);
        assert_eq!(k_distance(1.0, 1.0, 1.0, 1.0), 0.0);
        assert_eq!(k_distance(10.0, 4.0, 3.0, 6.0), 3.0);
    }

    #[test]
    fn k_distance_matches_direct_arithmetic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let [a, b, c, d]: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-100.0..100.0));
            assert_eq!(k_distance(a, b, c, d), (a - b + c - d).abs());
            assert_abs_diff_eq!(k_distance(a, b, c, d), k_distance(c, d, a, b), epsilon = 1e-12);
            assert_abs_diff_eq!(k_distance(a, b, c, d), k_distance(b, a, d, c), epsilon = 1e-12);
        }
    }

    #[test]
    fn heading_error_examples() {
        assert_eq!(heading_error(0.0, &straight(0.0), 3.0).unwrap(), 0.0);
        assert_abs_diff_eq!(heading_error(0.3, &straight(0.0), 3.0).unwrap(), 0.3);
        // Oracle: -6.2 + 2 pi.
        let h = heading_error(-3.1, &straight(3.1), 3.0).unwrap();
        assert_abs_diff_eq!(h, 0.083_185_307_179_586_2, epsilon = 1e-12);
        assert!(heading_error(0.0, &straight(0.0), 600.0).is_err());
    }

    #[test]
    fn potential_field_examples() {
        assert_eq!(potential_field(1.0, 2.0, 1.0, 2.0, 1.0), 1.0);
        assert_abs_diff_eq!(potential_field(3.0, 4.0, 0.0, 0.0, 1.0), 1.0 / 26.0);
        assert_abs_diff_eq!(potential_field(10.0, 0.0, 0.0, 0.0, 1.0), 1.0 / 101.0);
    }

    #[test]
    fn road_constraint_examples() {
        let lane = straight(0.0);
        let b = RoadBounds::new(3.5, 0.5).unwrap();
        assert_abs_diff_eq!(road_constraint(Point2::new(5.0, 0.0), &lane, &b).unwrap(), -3.0);
        assert_abs_diff_eq!(road_constraint(Point2::new(5.0, 3.0), &lane, &b).unwrap(), 0.0);
        assert_abs_diff_eq!(road_constraint(Point2::new(5.0, -4.0), &lane, &b).unwrap(), 1.0);
    }

    #[test]
    fn limit_residual_examples() {
        let lim = Limits::urban();
        let r = limit_residuals(
            &EgoState::new(0.0, 0.0, 0.0, 40.0),
            &ControlInput::new(0.0, 0.0),
            0.7,
            &lim,
        );
        assert_eq!(r[0], 0.0);
        assert_abs_diff_eq!(r[1], -PI / 6.0);
        assert_abs_diff_eq!(r[3], 0.1, epsilon = 1e-12);
    }

    #[test]
    fn stage_cost_examples() {
        let wp = Waypoint {
            x: 3.0,
            y: 4.0,
            theta: 0.0,
        };
        let z = EgoState::new(0.0, 0.0, 0.2, 10.0);
        let u = ControlInput::new(1.0, 0.1);
        let zero = ctx_with(Weights::from_array([0.0; 7]), wp, 12.0);
        assert_eq!(stage_cost(&z, &u, 0.3, &zero), 0.0);
        let only_v = ctx_with(Weights::from_array([0., 1., 0., 0., 0., 0., 0.]), wp, 12.0);
        assert_abs_diff_eq!(stage_cost(&z, &u, 0.3, &only_v), 4.0);
        let only_g = ctx_with(Weights::from_array([1., 0., 0., 0., 0., 0., 0.]), wp, 12.0);
        assert_abs_diff_eq!(stage_cost(&z, &u, 0.3, &only_g), 25.0);
    }

    #[test]
    fn weights_and_limits_validation() {
        assert!(Weights::from_array([0.0; 7]).validate().is_err());
        assert!(Weights::from_array([1., -1., 0., 0., 0., 0., 0.]).validate().is_err());
        assert!(Weights::equal().validate().is_ok());
        let mut lim = Limits::urban();
        assert!(lim.validate().is_ok());
        lim.v_r = 41.0;
        let err = lim.validate().unwrap_err();
        assert!(err.to_string().starts_with("limits.v_r"));
    }

    fn random_ctx(rng: &mut ChaCha8Rng) -> StageContext {
        let weights = Weights::from_array(std::array::from_fn(|_| rng.gen_range(0.0..3.0)));
        StageContext {
            waypoint: Waypoint {
                x: rng.gen_range(0.0..100.0),
                y: rng.gen_range(0.0..10.0),
                theta: 0.0,
            },
            target: Point2::new(rng.gen_range(0.0..120.0), rng.gen_range(0.0..10.0)),
            weights,
            v_r: 12.0,
            lane_heading: rng.gen_range(-0.5..0.5),
            p_eps: 1.0,
        }
    }

    #[test]
    fn stage_cost_gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let step = 1e-6;
        for _ in 0..100 {
            let ctx = random_ctx(&mut rng);
            let mut v: [f64; 7] = [
                rng.gen_range(0.0..100.0),
                rng.gen_range(0.0..10.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(0.0..30.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.6..0.6),
            ];
            let eval = |v: &[f64; 7]| {
                stage_cost(
                    &EgoState::new(v[0], v[1], v[2], v[3]),
                    &ControlInput::new(v[4], v[5]),
                    v[6],
                    &ctx,
                )
            };
            let g = stage_cost_gradient(
                &EgoState::new(v[0], v[1], v[2], v[3]),
                &ControlInput::new(v[4], v[5]),
                v[6],
                &ctx,
            );
            let analytic = [
                g.state[0], g.state[1], g.state[2], g.state[3], g.control[0], g.control[1], g.jerk,
            ];
            for k in 0..7 {
                let orig = v[k];
                v[k] = orig + step;
                let fp = eval(&v);
                v[k] = orig - step;
                let fm = eval(&v);
                v[k] = orig;
                let fd = (fp - fm) / (2.0 * step);
                let scale = analytic[k].abs().max(fd.abs()).max(1.0);
                assert!(
                    (fd - analytic[k]).abs() / scale <= 1e-5,
                    "component {k}: fd {fd} vs analytic {}",
                    analytic[k]
                );
            }
        }
    }

    proptest! {
        #[test]
        fn dynamics_is_periodic_in_heading(
            x in 0.0..100.0f64, y in 0.0..100.0f64, theta in -3.0..3.0f64,
            v in 0.0..40.0f64, a in -3.0..3.0f64, om in -1.0..1.0f64,
        ) {
            let u = ControlInput::new(a, om);
            let d1 = dynamics(&EgoState::new(x, y, theta, v), &u);
            let d2 = dynamics(&EgoState::new(x, y, wrap_angle(theta + 2.0 * PI), v), &u);
            for k in 0..4 {
                prop_assert!((d1[k] - d2[k]).abs() <= 1e-12);
            }
        }

        #[test]
        fn stage_cost_is_nonnegative(
            seed in 0u64..10_000,
            x in 0.0..100.0f64, y in 0.0..10.0f64, theta in -3.0..3.0f64,
            v in 0.0..40.0f64, a in -3.0..3.0f64, om in -1.0..1.0f64, j in -1.0..1.0f64,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut ctx = random_ctx(&mut rng);
            let z = EgoState::new(x, y, theta, v);
            let u = ControlInput::new(a, om);
            prop_assert!(stage_cost(&z, &u, j, &ctx) >= 0.0);
            // Zero exactly when every weighted term vanishes.
            ctx.weights = Weights::from_array([1., 1., 1., 1., 1., 1., 0.]);
            ctx.waypoint = Waypoint { x, y, theta: 0.0 };
            ctx.v_r = v;
            ctx.lane_heading = theta;
            prop_assert_eq!(stage_cost(&z, &ControlInput::new(0.0, 0.0), 0.0, &ctx), 0.0);
        }
    }
}
