//! Driving scenarios: the problem instance, its JSON form, seeded
//! generators for the urban, risky and high-speed families, and noisy
//! measurement realizations of the target.
//!
//! The target mean trajectory is stored as uniform samples over
//! `[0, horizon_T]` and interpolated linearly at grid times.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::chance::{ChanceMode, ChanceParams, TargetModel};
use crate::error::ScenarioError;
use crate::geometry::{CenterLane, LaneSpec, Point2, RoadBounds};
use crate::transcribe::TimeGrid;
use crate::vehicle::{EgoState, Limits, Weights};

/// Chance-constraint configuration of a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChanceConfig {
    pub alpha: f64,
    #[serde(default)]
    pub mode: ChanceMode,
}

/// A complete problem instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub lane: CenterLane,
    pub bounds: RoadBounds,
    pub limits: Limits,
    pub weights: Weights,
    /// Target means sampled uniformly over `[0, horizon_T]`.
    pub target: TargetModel,
    pub chance: ChanceConfig,
    pub z_init: EgoState,
    #[serde(rename = "horizon_T")]
    pub horizon_t: f64,
    pub p_eps: f64,
}

/// Sampled target positions at the nodes of a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Realization {
    pub scenario_id: String,
    pub seed: u64,
    pub samples: Vec<Point2>,
}

/// Spacing of the stored target samples, seconds.
pub const TARGET_SAMPLE_DT: f64 = 0.1;
/// Horizon of the urban and risky families, seconds.
pub const URBAN_HORIZON: f64 = 50.0;
/// Horizon of the high-speed family, seconds.
pub const HIGHSPEED_HORIZON: f64 = 100.0;
/// Seed of the nominal urban scenario.
pub const NOMINAL_URBAN_SEED: u64 = 1;

const LANE_ORIGIN: Point2 = Point2 { x: 5.0, y: 5.0 };
const DEFAULT_SIGMA: f64 = 1.0;
const DEFAULT_ALPHA: f64 = 0.95;
const DEFAULT_P_EPS: f64 = 1.0;

impl Scenario {
    /// Chance parameters, with `d_min` taken from the limits.
    pub fn chance_params(&self) -> ChanceParams {
        ChanceParams {
            alpha: self.chance.alpha,
            d_min: self.limits.d_min,
        }
    }

    /// Target means interpolated at `times`, clamped to the horizon.
    pub fn target_at(&self, times: &[f64]) -> TargetModel {
        let n = self.target.mu_x.len();
        let dt = self.horizon_t / (n - 1) as f64;
        let interp = |v: &[f64], t: f64| {
            let pos = (t / dt).clamp(0.0, (n - 1) as f64);
            let k = (pos.floor() as usize).min(n - 2);
            let frac = pos - k as f64;
            if frac == 0.0 {
                v[k]
            } else {
                v[k] + frac * (v[k + 1] - v[k])
            }
        };
        TargetModel {
            mu_x: times.iter().map(|&t| interp(&self.target.mu_x, t)).collect(),
            mu_y: times.iter().map(|&t| interp(&self.target.mu_y, t)).collect(),
            sigma_x: self.target.sigma_x,
            sigma_y: self.target.sigma_y,
        }
    }

    /// Target means at the nodes of `grid`.
    pub fn target_on_grid(&self, grid: &TimeGrid) -> Vec<Point2> {
        let tm = self.target_at(&grid.times());
        tm.mu_x
            .iter()
            .zip(&tm.mu_y)
            .map(|(&x, &y)| Point2::new(x, y))
            .collect()
    }

    /// The same scenario with the target means replaced by measured
    /// positions on `grid`; the standard deviations are kept as the
    /// planner's uncertainty about those measurements.
    pub fn with_measurements(
        &self,
        realization: &Realization,
        grid: &TimeGrid,
    ) -> Result<Scenario, ScenarioError> {
        if realization.samples.len() != grid.nodes_m {
            return Err(ScenarioError::Domain(format!(
                "realization has {} samples for a grid of {} nodes",
                realization.samples.len(),
                grid.nodes_m
            )));
        }
        if grid.horizon_t > self.horizon_t * (1.0 + 1e-12) {
            return Err(ScenarioError::Domain(format!(
                "grid horizon {} exceeds scenario horizon {}",
                grid.horizon_t, self.horizon_t
            )));
        }
        let mut sc = self.clone();
        sc.target.mu_x = realization.samples.iter().map(|p| p.x).collect();
        sc.target.mu_y = realization.samples.iter().map(|p| p.y).collect();
        sc.horizon_t = grid.horizon_t;
        Ok(sc)
    }

    /// Checks every field and the scenario invariants, reporting the
    /// offending JSON path.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.bounds
            .validate()
            .map_err(|e| ScenarioError::invalid("bounds", e.to_string()))?;
        self.limits.validate()?;
        self.weights.validate()?;
        if !(self.chance.alpha > 0.5 && self.chance.alpha < 1.0) {
            return Err(ScenarioError::invalid(
                "chance.alpha",
                format!("must lie in (0.5, 1), got {}", self.chance.alpha),
            ));
        }
        if !(self.p_eps > 0.0 && self.p_eps.is_finite()) {
            return Err(ScenarioError::invalid("p_eps", "must be finite and > 0"));
        }
        if !(self.horizon_t > 0.0 && self.horizon_t.is_finite()) {
            return Err(ScenarioError::invalid("horizon_T", "must be finite and > 0"));
        }
        let t = &self.target;
        if t.mu_x.len() < 2 {
            return Err(ScenarioError::invalid(
                "target.mu_x",
                "needs at least two samples",
            ));
        }
        if t.mu_y.len() != t.mu_x.len() {
            return Err(ScenarioError::invalid(
                "target.mu_y",
                format!("has {} samples, mu_x has {}", t.mu_y.len(), t.mu_x.len()),
            ));
        }
        for (name, v) in [("target.mu_x", &t.mu_x), ("target.mu_y", &t.mu_y)] {
            if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                return Err(ScenarioError::invalid(
                    &format!("{name}[{i}]"),
                    "must be finite",
                ));
            }
        }
        for (name, s) in [("target.sigma_x", t.sigma_x), ("target.sigma_y", t.sigma_y)] {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(ScenarioError::invalid(name, "must be finite and >= 0"));
            }
        }
        self.z_init
            .validate()
            .map_err(|m| ScenarioError::invalid("z_init", m))?;
        let half = self.bounds.usable_half_width();
        let off = self
            .lane
            .project(self.z_init.position())
            .map_err(|e| ScenarioError::invalid("z_init", e.to_string()))?
            .offset;
        if off.abs() > half {
            return Err(ScenarioError::invalid(
                "z_init",
                format!("lateral offset {off} outside the road corridor"),
            ));
        }
        for (i, (&x, &y)) in t.mu_x.iter().zip(&t.mu_y).enumerate() {
            let off = self
                .lane
                .project(Point2::new(x, y))
                .map_err(|e| ScenarioError::invalid(&format!("target.mu_x[{i}]"), e.to_string()))?
                .offset;
            if off.abs() > half {
                return Err(ScenarioError::invalid(
                    &format!("target.mu_x[{i}]"),
                    format!("target mean leaves the road corridor (offset {off})"),
                ));
            }
        }
        Ok(())
    }

    /// Parses and validates scenario JSON.
    pub fn from_json(text: &str) -> Result<Scenario, ScenarioError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let sc: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            if inner.is_syntax() || inner.is_eof() || path == "." {
                ScenarioError::Json(inner.to_string())
            } else {
                ScenarioError::invalid(&path, inner.to_string())
            }
        })?;
        sc.validate()?;
        Ok(sc)
    }

    /// Canonical pretty JSON; floats use the shortest round-trip form.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("scenarios serialize");
        s.push('\n');
        s
    }

    /// Stable identifier derived from the canonical JSON (FNV-1a).
    pub fn id(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.to_json().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}

/// Samples noisy target measurements at the grid nodes.
pub fn realize_measurements(sc: &Scenario, grid: &TimeGrid, seed: u64) -> Realization {
    // Keeps noise streams apart from generator streams that share a seed.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4e4f_4953_4500_0000);
    let tm = sc.target_at(&grid.times());
    let samples = tm
        .mu_x
        .iter()
        .zip(&tm.mu_y)
        .map(|(&mx, &my)| {
            let e1: f64 = rng.sample(StandardNormal);
            let e2: f64 = rng.sample(StandardNormal);
            Point2::new(mx + tm.sigma_x * e1, my + tm.sigma_y * e2)
        })
        .collect();
    Realization {
        scenario_id: sc.id(),
        seed,
        samples,
    }
}

/// Piecewise-constant acceleration along the lane.
#[derive(Debug, Clone)]
struct TargetProfile {
    s0: f64,
    v0: f64,
    /// `(start, duration, acceleration)`.
    phases: Vec<(f64, f64, f64)>,
    v_min: f64,
    v_max: f64,
}

impl TargetProfile {
    fn accel(&self, t: f64) -> f64 {
        self.phases
            .iter()
            .filter(|(s, d, _)| t >= *s && t < s + d)
            .map(|p| p.2)
            .sum()
    }

    /// Stations at `0, dt, 2 dt, ...` over `[0, horizon]`.
    fn stations(&self, horizon: f64, n: usize) -> Vec<f64> {
        const SUB: usize = 10;
        let dt = horizon / (n - 1) as f64;
        let hs = dt / SUB as f64;
        let mut out = Vec::with_capacity(n);
        let (mut s, mut v) = (self.s0, self.v0);
        out.push(s);
        for k in 0..n - 1 {
            for j in 0..SUB {
                let t = k as f64 * dt + j as f64 * hs;
                let v_next = (v + hs * self.accel(t + 0.5 * hs)).clamp(self.v_min, self.v_max);
                s += 0.5 * hs * (v + v_next);
                v = v_next;
            }
            out.push(s);
        }
        out
    }

    fn speed_at_end(&self, horizon: f64) -> f64 {
        let mut v = self.v0;
        let steps = (horizon / 0.001).round() as usize;
        for j in 0..steps {
            let t = (j as f64 + 0.5) * 0.001;
            v = (v + 0.001 * self.accel(t)).clamp(self.v_min, self.v_max);
        }
        v
    }
}

fn sample_count(horizon: f64) -> usize {
    (horizon / TARGET_SAMPLE_DT).round() as usize + 1
}

fn target_model(lane: &CenterLane, profile: &TargetProfile, horizon: f64) -> TargetModel {
    let n = sample_count(horizon);
    let (mu_x, mu_y): (Vec<f64>, Vec<f64>) = profile
        .stations(horizon, n)
        .into_iter()
        .map(|s| {
            let p = lane.frame(s).0;
            (p.x, p.y)
        })
        .unzip();
    TargetModel {
        mu_x,
        mu_y,
        sigma_x: DEFAULT_SIGMA,
        sigma_y: DEFAULT_SIGMA,
    }
}

/// Lanes whose heading stays within `[0, pi/2]`, so the ego and target
/// coordinates both grow along the road.
fn draw_urban_lane(rng: &mut ChaCha8Rng, length: f64) -> CenterLane {
    match rng.gen_range(0..3) {
        0 => {
            let heading = rng.gen_range(0.0..0.6);
            CenterLane::straight(LANE_ORIGIN, heading, length).expect("valid straight lane")
        }
        1 => {
            let radius: f64 = rng.gen_range(50.0..200.0);
            let left = rng.gen_bool(0.5);
            let start = rng.gen_range(0.0..0.3);
            let sweep = rng.gen_range(0.3..(PI / 2.0 - 0.4));
            let (heading, signed) = if left {
                (start, radius)
            } else {
                (PI / 2.0 - start, -radius)
            };
            CenterLane::new(LaneSpec::Arc {
                origin: LANE_ORIGIN,
                heading,
                radius: signed,
                arc_length: radius * sweep,
                length,
            })
            .expect("valid arc lane")
        }
        _ => spline_lane(rng, length, 150.0, 0.25),
    }
}

/// Random gentle spline; knots `spacing` apart with heading steps up to
/// `max_turn` radians, kept inside `[0.1, 1.45]`.
fn spline_lane(rng: &mut ChaCha8Rng, length: f64, spacing: f64, max_turn: f64) -> CenterLane {
    let mut heading: f64 = rng.gen_range(0.2..1.2);
    let mut knots = vec![LANE_ORIGIN];
    let mut p = LANE_ORIGIN;
    // Chord length undershoots arc length slightly; overshoot the target.
    let count = (length / spacing).ceil() as usize + 2;
    for _ in 0..count {
        p = Point2::new(p.x + spacing * heading.cos(), p.y + spacing * heading.sin());
        knots.push(p);
        heading = (heading + rng.gen_range(-max_turn..=max_turn)).clamp(0.1, 1.45);
    }
    CenterLane::spline(knots).expect("gentle spline lanes are valid")
}

fn base_scenario(
    lane: CenterLane,
    limits: Limits,
    profile: &TargetProfile,
    horizon: f64,
    ego_speed: f64,
) -> Scenario {
    let (origin, heading, _) = lane.frame(0.0);
    let target = target_model(&lane, profile, horizon);
    Scenario {
        bounds: RoadBounds {
            half_width: 3.5,
            safety_margin: 0.5,
        },
        limits,
        weights: Weights::equal(),
        target,
        chance: ChanceConfig {
            alpha: DEFAULT_ALPHA,
            mode: ChanceMode::Separation,
        },
        z_init: EgoState::new(origin.x, origin.y, crate::geometry::wrap_angle(heading), ego_speed),
        horizon_t: horizon,
        p_eps: DEFAULT_P_EPS,
        lane,
    }
}

fn lane_length(limits: &Limits, fastest_target: f64, gap: f64, horizon: f64) -> f64 {
    (limits.v_max.max(fastest_target) * horizon + gap + 100.0).ceil()
}

/// Urban scenario with the default 50 s horizon.
pub fn make_urban_scenario(variant_seed: u64) -> Scenario {
    make_urban_scenario_with_horizon(variant_seed, URBAN_HORIZON)
        .expect("the default horizon is valid")
}

/// The urban scenario used for single-solve checks.
pub fn nominal_urban_scenario() -> Scenario {
    make_urban_scenario(NOMINAL_URBAN_SEED)
}

/// Urban scenario over an arbitrary horizon: straight, arc or spline lane;
/// target 10-40 m ahead at 8-14 m/s with one mild acceleration phase; ego
/// starting at the lane origin at the target's speed.
pub fn make_urban_scenario_with_horizon(
    variant_seed: u64,
    horizon: f64,
) -> Result<Scenario, ScenarioError> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(ScenarioError::Domain(format!(
            "horizon {horizon} must be finite and > 0"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(variant_seed);
    let limits = Limits::urban();
    let gap = rng.gen_range(10.0..40.0);
    let v0 = rng.gen_range(8.0..14.0);
    let phase_start = rng.gen_range(0.0..horizon);
    let phase_len = rng.gen_range(2.0..8.0);
    let phase_acc = rng.gen_range(-0.5..0.5);
    let profile = TargetProfile {
        s0: gap,
        v0,
        phases: vec![(phase_start, phase_len, phase_acc)],
        v_min: 4.0,
        v_max: 16.0,
    };
    let lane = draw_urban_lane(&mut rng, lane_length(&limits, 16.0, gap, horizon));
    Ok(base_scenario(lane, limits, &profile, horizon, v0))
}

/// Urban scenario with `v_r` 14 m/s and a target 12 m ahead that brakes
/// from 10 to 6 m/s halfway through the horizon.
pub fn make_risky_scenario(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5249_534b_5900_0000);
    let horizon = URBAN_HORIZON;
    let limits = Limits {
        v_r: 14.0,
        ..Limits::urban()
    };
    let gap = 12.0;
    let profile = TargetProfile {
        s0: gap,
        v0: 10.0,
        phases: vec![(0.5 * horizon, 4.0, -1.0)],
        v_min: 6.0,
        v_max: 10.0,
    };
    let lane = draw_urban_lane(&mut rng, lane_length(&limits, 10.0, gap, horizon));
    base_scenario(lane, limits, &profile, horizon, 10.0)
}

/// Reference speeds of the high-speed family.
pub const HIGHSPEED_SPEEDS: [f64; 2] = [22.0, 36.0];
/// Turn-rate limits of the high-speed family.
pub const HIGHSPEED_OMEGAS: [f64; 3] = [PI / 6.0, PI / 4.0, PI / 2.0];

/// High-speed scenario over a 100 s horizon: spline lanes whose curvature
/// stays below `0.5 omega_max / v_r`, target 30-60 m ahead at 0.8-1.2
/// times `v_r`.
pub fn make_highspeed_scenario(
    v_r: f64,
    omega_max: f64,
    seed: u64,
) -> Result<Scenario, ScenarioError> {
    if !HIGHSPEED_SPEEDS.contains(&v_r) {
        return Err(ScenarioError::Domain(format!(
            "v_r {v_r} not in {{22, 36}} m/s"
        )));
    }
    if !HIGHSPEED_OMEGAS
        .iter()
        .any(|w| (w - omega_max).abs() <= 1e-12)
    {
        return Err(ScenarioError::Domain(format!(
            "omega_max {omega_max} not in {{pi/6, pi/4, pi/2}}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4849_4748_0000_0000);
    let horizon = HIGHSPEED_HORIZON;
    let limits = Limits {
        v_r,
        omega_max,
        ..Limits::urban()
    };
    let gap = rng.gen_range(30.0..60.0);
    let v_t = v_r * rng.gen_range(0.8..1.2);
    let phase_start = rng.gen_range(0.0..horizon);
    let phase_len = rng.gen_range(2.0..8.0);
    let phase_acc = rng.gen_range(-0.5..0.5);
    let profile = TargetProfile {
        s0: gap,
        v0: v_t,
        phases: vec![(phase_start, phase_len, phase_acc)],
        v_min: 0.7 * v_r,
        v_max: 1.25 * v_r,
    };
    let length = lane_length(&limits, 1.25 * v_r, gap, horizon);
    let kappa_cap = 0.5 * omega_max / v_r;
    let spacing = 100.0;
    let mut max_turn = (0.6 * spacing * kappa_cap).min(0.45);
    let lane = loop {
        let lane = spline_lane(&mut rng.clone(), length, spacing, max_turn);
        if 1.0 / lane.min_radius() <= kappa_cap {
            break lane;
        }
        max_turn *= 0.7;
    };
    Ok(base_scenario(
        lane,
        limits,
        &profile,
        horizon,
        v_t.min(limits.v_max),
    ))
}

/// Scenario of a mixed-risk corpus: urban at even indices, risky at odd.
pub fn make_mixed_scenario(index: u64, seed: u64) -> Scenario {
    if index % 2 == 0 {
        make_urban_scenario(seed)
    } else {
        make_risky_scenario(seed)
    }
}

/// Target speed at the horizon end of the risky scenario.
pub fn risky_final_target_speed() -> f64 {
    TargetProfile {
        s0: 12.0,
        v0: 10.0,
        phases: vec![(0.5 * URBAN_HORIZON, 4.0, -1.0)],
        v_min: 6.0,
        v_max: 10.0,
    }
    .speed_at_end(URBAN_HORIZON)
}
