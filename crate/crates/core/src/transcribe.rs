//! Transcription of the trajectory problem into a finite-dimensional
//! [`Nlp`].
//!
//! Two schemes share one variable layout, node-major `[x, y, theta, v, a,
//! omega]` per node. The continuous-time scheme enforces trapezoidal
//! collocation defects and integrates the running cost with the trapezoid
//! rule. The discrete-time baseline enforces forward-Euler steps and sums the
//! running cost with equal step weights. Jerk is the forward difference of
//! the acceleration variables, so no jerk variables are introduced.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::chance::{det_equiv_bounds, separation_bound, ChanceMode, TargetModel};
use crate::error::TranscribeError;
use crate::geometry::{waypoint_at, CenterLane, Point2, Waypoint};
use crate::linalg::{BandMatrix, SparseRows};
use crate::nlp::{Derivatives, Evaluation, Nlp};
use crate::scenario::Scenario;
use crate::vehicle::{
    stage_cost, stage_cost_gradient, ControlInput, EgoState, Limits, StageContext, Weights,
};

/// Variables per node.
pub const NODE_VARS: usize = 6;
const IX: usize = 0;
const IY: usize = 1;
const ITH: usize = 2;
const IV: usize = 3;
const IA: usize = 4;
const IW: usize = 5;

/// Uniform grid of `nodes_m` times over `[0, horizon_t]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub horizon_t: f64,
    pub nodes_m: usize,
}

impl TimeGrid {
    pub fn new(horizon_t: f64, nodes_m: usize) -> Result<Self, TranscribeError> {
        if !(horizon_t > 0.0 && horizon_t.is_finite()) {
            return Err(TranscribeError::InvalidGrid(format!(
                "horizon {horizon_t} must be finite and > 0"
            )));
        }
        if nodes_m < 3 {
            return Err(TranscribeError::InvalidGrid(format!(
                "need at least 3 nodes, got {nodes_m}"
            )));
        }
        Ok(Self { horizon_t, nodes_m })
    }

    /// Grid with `steps` nodes spaced `dt` apart.
    pub fn from_steps(steps: usize, dt: f64) -> Result<Self, TranscribeError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(TranscribeError::InvalidGrid(format!("dt {dt} must be > 0")));
        }
        Self::new(dt * steps.saturating_sub(1).max(1) as f64, steps)
    }

    /// Node spacing `h`.
    pub fn step(&self) -> f64 {
        self.horizon_t / (self.nodes_m - 1) as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        if i + 1 == self.nodes_m {
            self.horizon_t
        } else {
            i as f64 * self.step()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.nodes_m).map(|i| self.time(i)).collect()
    }
}

/// Which scheme produced a program.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transcription {
    Continuous,
    Discrete,
}

impl Transcription {
    pub fn as_str(&self) -> &'static str {
        match self {
            Transcription::Continuous => "continuous",
            Transcription::Discrete => "discrete",
        }
    }
}

/// Node-sampled ego trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct EgoTrajectory {
    pub grid: TimeGrid,
    pub states: Vec<EgoState>,
    pub controls: Vec<ControlInput>,
    /// `(a[i+1] - a[i]) / h`, one per interval.
    pub jerks: Vec<f64>,
}

impl EgoTrajectory {
    /// Builds a trajectory and derives the jerks from the accelerations.
    pub fn new(
        grid: TimeGrid,
        states: Vec<EgoState>,
        controls: Vec<ControlInput>,
    ) -> Result<Self, TranscribeError> {
        if states.len() != grid.nodes_m || controls.len() != grid.nodes_m {
            return Err(TranscribeError::Shape {
                expected: grid.nodes_m,
                got: states.len().min(controls.len()),
            });
        }
        let h = grid.step();
        let jerks = controls.windows(2).map(|w| (w[1].a - w[0].a) / h).collect();
        Ok(Self {
            grid,
            states,
            controls,
            jerks,
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Node-major decision vector.
    pub fn pack(&self) -> Vec<f64> {
        self.states
            .iter()
            .zip(&self.controls)
            .flat_map(|(z, u)| [z.x, z.y, z.theta, z.v, u.a, u.omega])
            .collect()
    }
}

/// Number of emitted rows by kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConstraintCensus {
    pub dynamics: usize,
    pub initial_pins: usize,
    pub road: usize,
    pub speed: usize,
    pub omega: usize,
    pub accel: usize,
    pub jerk: usize,
    pub chance: usize,
}

impl ConstraintCensus {
    pub fn n_eq(&self) -> usize {
        self.dynamics + self.initial_pins
    }

    pub fn n_ineq(&self) -> usize {
        self.road + self.speed + self.omega + self.accel + self.jerk + self.chance
    }
}

/// Per-node data of the distance constraint.
#[derive(Debug, Clone, Copy, PartialEq)]
enum DistanceRow {
    /// `d_min - |mu_sum - (x + y)| <= 0`.
    TwoSided { mu_sum: f64 },
    /// `d_min - (mu_sum - (x + y)) <= 0`.
    Trailing { mu_sum: f64 },
    /// `lower - (x + y) <= 0` and `(x + y) - upper <= 0`.
    Band { lower: f64, upper: f64 },
    /// `(x + y) - upper <= 0`.
    Upper { upper: f64 },
}

impl DistanceRow {
    fn count(&self) -> usize {
        match self {
            DistanceRow::Band { .. } => 2,
            _ => 1,
        }
    }
}

/// A transcribed trajectory program.
#[derive(Debug, Clone)]
pub struct NlpProblem {
    scheme: Transcription,
    stochastic: bool,
    mode: ChanceMode,
    grid: TimeGrid,
    lane: CenterLane,
    usable_half_width: f64,
    limits: Limits,
    weights: Weights,
    p_eps: f64,
    z_init: EgoState,
    waypoints: Vec<Waypoint>,
    target: TargetModel,
    distance: Vec<DistanceRow>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    census: ConstraintCensus,
    curvature: BandMatrix,
}

/// Builds the continuous-time collocation program.
pub fn build_continuous_nlp(
    sc: &Scenario,
    grid: TimeGrid,
    w: &Weights,
    stochastic: bool,
) -> Result<NlpProblem, TranscribeError> {
    NlpProblem::build(Transcription::Continuous, sc, grid, w, stochastic)
}

/// Builds the forward-Euler baseline over `steps_n` nodes spaced `dt`.
pub fn build_discrete_nlp(
    sc: &Scenario,
    steps_n: usize,
    dt: f64,
    w: &Weights,
    stochastic: bool,
) -> Result<NlpProblem, TranscribeError> {
    let grid = TimeGrid::from_steps(steps_n, dt)?;
    NlpProblem::build(Transcription::Discrete, sc, grid, w, stochastic)
}

/// Evaluates a program with derivatives after checking the vector length.
pub fn evaluate(nlp: &NlpProblem, x: &[f64]) -> Result<Evaluation, TranscribeError> {
    nlp.check_len(x)?;
    Ok(nlp.evaluate(x, true))
}

/// Inverse of the packing map.
pub fn unpack(nlp: &NlpProblem, x: &[f64]) -> Result<EgoTrajectory, TranscribeError> {
    nlp.unpack(x)
}

fn idx(node: usize, k: usize) -> usize {
    NODE_VARS * node + k
}

impl NlpProblem {
    fn build(
        scheme: Transcription,
        sc: &Scenario,
        grid: TimeGrid,
        w: &Weights,
        stochastic: bool,
    ) -> Result<Self, TranscribeError> {
        let m = grid.nodes_m;
        let lim = sc.limits;
        let reach = lim.v_max * grid.horizon_t;
        if reach > sc.lane.length() + 1e-9 {
            return Err(TranscribeError::InvalidGrid(format!(
                "lane length {} shorter than v_max * T = {reach}",
                sc.lane.length()
            )));
        }
        if grid.horizon_t > sc.horizon_t * (1.0 + 1e-12) {
            return Err(TranscribeError::Coverage(format!(
                "grid horizon {} exceeds scenario horizon {}",
                grid.horizon_t, sc.horizon_t
            )));
        }
        w.validate()
            .map_err(|e| TranscribeError::InvalidGrid(e.to_string()))?;
        let times = grid.times();
        let target = sc.target_at(&times);
        let waypoints = times
            .iter()
            .map(|&t| waypoint_at(&sc.lane, t, lim.v_r).map(|s| s.waypoint))
            .collect::<Result<Vec<_>, _>>()?;

        let cp = sc.chance_params();
        let mode = sc.chance.mode;
        let distance = (0..m)
            .map(|i| {
                let (mx, my) = (target.mu_x[i], target.mu_y[i]);
                let mu_sum = mx + my;
                Ok(match (stochastic, mode) {
                    (false, ChanceMode::PaperLiteral) => DistanceRow::TwoSided { mu_sum },
                    (false, ChanceMode::Separation) => DistanceRow::Trailing { mu_sum },
                    (true, ChanceMode::PaperLiteral) => {
                        let (lower, upper) =
                            det_equiv_bounds(mx, my, target.sigma_x, target.sigma_y, &cp)
                                .map_err(|e| TranscribeError::InvalidGrid(e.to_string()))?;
                        DistanceRow::Band { lower, upper }
                    }
                    (true, ChanceMode::Separation) => DistanceRow::Upper {
                        upper: separation_bound(mx, my, target.sigma_x, target.sigma_y, &cp)
                            .map_err(|e| TranscribeError::InvalidGrid(e.to_string()))?,
                    },
                })
            })
            .collect::<Result<Vec<_>, TranscribeError>>()?;

        let census = ConstraintCensus {
            dynamics: 4 * (m - 1),
            initial_pins: 4,
            road: 2 * m,
            speed: 2 * m,
            omega: 2 * m,
            accel: 2 * m,
            jerk: 2 * (m - 1),
            chance: distance.iter().map(DistanceRow::count).sum(),
        };

        let n = NODE_VARS * m;
        let mut lower = vec![f64::NEG_INFINITY; n];
        let mut upper = vec![f64::INFINITY; n];
        for i in 0..m {
            lower[idx(i, IX)] = 0.0;
            lower[idx(i, IY)] = 0.0;
            lower[idx(i, ITH)] = -PI;
            upper[idx(i, ITH)] = PI;
            lower[idx(i, IV)] = 0.0;
            lower[idx(i, IW)] = -PI;
            upper[idx(i, IW)] = PI;
        }

        let problem = Self {
            scheme,
            stochastic,
            mode,
            grid,
            lane: sc.lane.clone(),
            usable_half_width: sc.bounds.usable_half_width(),
            limits: lim,
            weights: *w,
            p_eps: sc.p_eps,
            z_init: sc.z_init,
            waypoints,
            target,
            distance,
            lower,
            upper,
            census,
            curvature: BandMatrix::zeros(0, 0),
        };
        problem.check_pin()?;
        let curvature = problem.build_curvature();
        Ok(Self {
            curvature,
            ..problem
        })
    }

    /// Rejects an initial state that breaks a bound, the road corridor or a
    /// limit that involves the state alone.
    fn check_pin(&self) -> Result<(), TranscribeError> {
        let z = &self.z_init;
        let fail = |what: &str, amount: f64| {
            Err(TranscribeError::InfeasiblePin {
                constraint: what.to_string(),
                amount,
            })
        };
        if !z.as_array().iter().all(|v| v.is_finite()) {
            return fail("finiteness", f64::NAN);
        }
        if z.x < 0.0 {
            return fail("x >= 0", -z.x);
        }
        if z.y < 0.0 {
            return fail("y >= 0", -z.y);
        }
        if z.v < 0.0 {
            return fail("v >= 0", -z.v);
        }
        if z.theta.abs() > PI {
            return fail("|theta| <= pi", z.theta.abs() - PI);
        }
        if z.v > self.limits.v_max {
            return fail("speed limit", z.v - self.limits.v_max);
        }
        let road = self.lane.project(z.position())?.offset.abs() - self.usable_half_width;
        if road > 0.0 {
            return fail("road corridor", road);
        }
        Ok(())
    }

    /// Node weights of the running-cost quadrature.
    fn node_weight(&self, i: usize) -> f64 {
        let h = self.grid.step();
        match self.scheme {
            Transcription::Continuous if i == 0 || i + 1 == self.grid.nodes_m => 0.5 * h,
            _ => h,
        }
    }

    fn build_curvature(&self) -> BandMatrix {
        let m = self.grid.nodes_m;
        let n = NODE_VARS * m;
        let w = &self.weights;
        let h = self.grid.step();
        let mut b = BandMatrix::zeros(n, NODE_VARS);
        for i in 0..m {
            let wt = 2.0 * self.node_weight(i);
            let diag = [w.w_g, w.w_g, w.w_h, w.w_v, w.w_a, w.w_omega];
            for (k, d) in diag.iter().enumerate() {
                b.add(idx(i, k), idx(i, k), wt * d);
            }
        }
        let c = 2.0 * w.w_j / h;
        for i in 0..m - 1 {
            let (p, q) = (idx(i, IA), idx(i + 1, IA));
            b.add(p, p, c);
            b.add(q, q, c);
            b.add(q, p, -c);
        }
        b
    }

    pub fn scheme(&self) -> Transcription {
        self.scheme
    }

    pub fn is_stochastic(&self) -> bool {
        self.stochastic
    }

    pub fn chance_mode(&self) -> ChanceMode {
        self.mode
    }

    /// Label such as `continuous-stochastic`.
    pub fn model_label(&self) -> String {
        format!(
            "{}-{}",
            self.scheme.as_str(),
            if self.stochastic {
                "stochastic"
            } else {
                "deterministic"
            }
        )
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn census(&self) -> ConstraintCensus {
        self.census
    }

    /// Planner-side target means on the grid.
    pub fn target(&self) -> &TargetModel {
        &self.target
    }

    pub fn waypoints(&self) -> &[Waypoint] {
        &self.waypoints
    }

    /// Decision-vector indices of `[x, y, theta, v, a, omega]` at a node.
    pub fn node_indices(&self, node: usize) -> [usize; NODE_VARS] {
        std::array::from_fn(|k| idx(node, k))
    }

    fn check_len(&self, x: &[f64]) -> Result<(), TranscribeError> {
        if x.len() != self.n_vars() {
            return Err(TranscribeError::Shape {
                expected: self.n_vars(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn unpack(&self, x: &[f64]) -> Result<EgoTrajectory, TranscribeError> {
        self.check_len(x)?;
        let states = x
            .chunks_exact(NODE_VARS)
            .map(|c| EgoState::new(c[IX], c[IY], c[ITH], c[IV]))
            .collect();
        let controls = x
            .chunks_exact(NODE_VARS)
            .map(|c| ControlInput::new(c[IA], c[IW]))
            .collect();
        EgoTrajectory::new(self.grid, states, controls)
    }

    /// Upper bound on `x + y` enforced by the chance rows at a node, if any.
    pub fn chance_upper(&self, node: usize) -> Option<f64> {
        match self.distance[node] {
            DistanceRow::Band { upper, .. } | DistanceRow::Upper { upper } => Some(upper),
            _ => None,
        }
    }

    /// Lower bound on `x + y` enforced by the chance rows at a node, if any.
    pub fn chance_lower(&self, node: usize) -> Option<f64> {
        match self.distance[node] {
            DistanceRow::Band { lower, .. } => Some(lower),
            _ => None,
        }
    }

    fn dynamics(&self, x: &[f64], node: usize) -> [f64; 4] {
        let (s, c) = x[idx(node, ITH)].sin_cos();
        let v = x[idx(node, IV)];
        [v * c, v * s, x[idx(node, IW)], x[idx(node, IA)]]
    }
}

/// Helper that appends `(value, row)` pairs to a residual vector and, when
/// derivatives are wanted, to a Jacobian.
struct RowSink {
    values: Vec<f64>,
    jac: Option<SparseRows>,
}

impl RowSink {
    fn new(n: usize, rows: usize, derivatives: bool) -> Self {
        Self {
            values: Vec::with_capacity(rows),
            jac: derivatives.then(|| SparseRows::with_capacity(n, rows, rows * 6)),
        }
    }

    fn push(&mut self, value: f64, entries: &[(usize, f64)]) {
        self.values.push(value);
        if let Some(j) = &mut self.jac {
            j.push_row(entries);
        }
    }
}

impl Nlp for NlpProblem {
    fn n_vars(&self) -> usize {
        NODE_VARS * self.grid.nodes_m
    }

    fn n_eq(&self) -> usize {
        self.census.n_eq()
    }

    fn n_ineq(&self) -> usize {
        self.census.n_ineq()
    }

    fn bounds(&self) -> (&[f64], &[f64]) {
        (&self.lower, &self.upper)
    }

    fn objective_curvature(&self) -> Option<BandMatrix> {
        Some(self.curvature.clone())
    }

    /// The position defects are the only nonlinear equalities; each node's
    /// `(theta, v)` block of their weighted Hessian is clipped to its
    /// positive part.
    fn add_constraint_curvature(&self, x: &[f64], w_eq: &[f64], out: &mut BandMatrix) {
        let h = self.grid.step();
        let mut add_block = |node: usize, c: f64, wx: f64, wy: f64| {
            let (s, co) = x[idx(node, ITH)].sin_cos();
            let v = x[idx(node, IV)];
            let a = c * v * (wx * co + wy * s);
            let b = c * (wx * s - wy * co);
            psd_block(a, b, 0.0, idx(node, ITH), idx(node, IV), out);
        };
        for i in 0..self.grid.nodes_m - 1 {
            let (wx, wy) = (w_eq[4 * i], w_eq[4 * i + 1]);
            match self.scheme {
                Transcription::Continuous => {
                    add_block(i, 0.5 * h, wx, wy);
                    add_block(i + 1, 0.5 * h, wx, wy);
                }
                Transcription::Discrete => add_block(i, h, wx, wy),
            }
        }
    }

    fn evaluate(&self, x: &[f64], derivatives: bool) -> Evaluation {
        let m = self.grid.nodes_m;
        let n = self.n_vars();
        let h = self.grid.step();
        let w = &self.weights;
        let lim = &self.limits;

        // Objective.
        let mut objective = 0.0;
        let mut gradient = if derivatives { vec![0.0; n] } else { Vec::new() };
        let mut projections = Vec::with_capacity(m);
        for i in 0..m {
            let z = EgoState::new(
                x[idx(i, IX)],
                x[idx(i, IY)],
                x[idx(i, ITH)],
                x[idx(i, IV)],
            );
            let u = ControlInput::new(x[idx(i, IA)], x[idx(i, IW)]);
            let proj = self.lane.project_unchecked(Point2::new(z.x, z.y));
            projections.push(proj);
            let ctx = StageContext {
                waypoint: self.waypoints[i],
                target: Point2::new(self.target.mu_x[i], self.target.mu_y[i]),
                weights: *w,
                v_r: lim.v_r,
                lane_heading: proj.heading,
                p_eps: self.p_eps,
            };
            let wt = self.node_weight(i);
            objective += wt * stage_cost(&z, &u, 0.0, &ctx);
            if derivatives {
                let g = stage_cost_gradient(&z, &u, 0.0, &ctx);
                // The lane heading follows the projected station.
                let herr = crate::geometry::wrap_angle(z.theta - proj.heading);
                let denom = 1.0 - proj.curvature * proj.offset;
                let dphi = if denom.abs() > 1e-9 {
                    proj.curvature / denom
                } else {
                    0.0
                };
                let chain = -2.0 * w.w_h * herr * dphi;
                let (ts, tc) = proj.heading.sin_cos();
                gradient[idx(i, IX)] += wt * (g.state[0] + chain * tc);
                gradient[idx(i, IY)] += wt * (g.state[1] + chain * ts);
                gradient[idx(i, ITH)] += wt * g.state[2];
                gradient[idx(i, IV)] += wt * g.state[3];
                gradient[idx(i, IA)] += wt * g.control[0];
                gradient[idx(i, IW)] += wt * g.control[1];
            }
        }
        for i in 0..m - 1 {
            let (p, q) = (idx(i, IA), idx(i + 1, IA));
            let jerk = (x[q] - x[p]) / h;
            objective += h * w.w_j * jerk * jerk;
            if derivatives {
                let d = 2.0 * w.w_j * jerk;
                gradient[q] += d;
                gradient[p] -= d;
            }
        }

        // Equalities: dynamics defects then the initial pins.
        let mut eq = RowSink::new(n, self.n_eq(), derivatives);
        for i in 0..m - 1 {
            let fi = self.dynamics(x, i);
            let (si, ci) = x[idx(i, ITH)].sin_cos();
            let vi = x[idx(i, IV)];
            match self.scheme {
                Transcription::Continuous => {
                    let fj = self.dynamics(x, i + 1);
                    let (sj, cj) = x[idx(i + 1, ITH)].sin_cos();
                    let vj = x[idx(i + 1, IV)];
                    let hh = 0.5 * h;
                    let defect =
                        |k: usize| x[idx(i + 1, k)] - x[idx(i, k)] - hh * (fi[k] + fj[k]);
                    eq.push(
                        defect(0),
                        &[
                            (idx(i, IX), -1.0),
                            (idx(i, ITH), hh * vi * si),
                            (idx(i, IV), -hh * ci),
                            (idx(i + 1, IX), 1.0),
                            (idx(i + 1, ITH), hh * vj * sj),
                            (idx(i + 1, IV), -hh * cj),
                        ],
                    );
                    eq.push(
                        defect(1),
                        &[
                            (idx(i, IY), -1.0),
                            (idx(i, ITH), -hh * vi * ci),
                            (idx(i, IV), -hh * si),
                            (idx(i + 1, IY), 1.0),
                            (idx(i + 1, ITH), -hh * vj * cj),
                            (idx(i + 1, IV), -hh * sj),
                        ],
                    );
                    eq.push(
                        defect(2),
                        &[
                            (idx(i, ITH), -1.0),
                            (idx(i, IW), -hh),
                            (idx(i + 1, ITH), 1.0),
                            (idx(i + 1, IW), -hh),
                        ],
                    );
                    eq.push(
                        defect(3),
                        &[
                            (idx(i, IV), -1.0),
                            (idx(i, IA), -hh),
                            (idx(i + 1, IV), 1.0),
                            (idx(i + 1, IA), -hh),
                        ],
                    );
                }
                Transcription::Discrete => {
                    let defect = |k: usize| x[idx(i + 1, k)] - x[idx(i, k)] - h * fi[k];
                    eq.push(
                        defect(0),
                        &[
                            (idx(i, IX), -1.0),
                            (idx(i, ITH), h * vi * si),
                            (idx(i, IV), -h * ci),
                            (idx(i + 1, IX), 1.0),
                        ],
                    );
                    eq.push(
                        defect(1),
                        &[
                            (idx(i, IY), -1.0),
                            (idx(i, ITH), -h * vi * ci),
                            (idx(i, IV), -h * si),
                            (idx(i + 1, IY), 1.0),
                        ],
                    );
                    eq.push(
                        defect(2),
                        &[
                            (idx(i, ITH), -1.0),
                            (idx(i, IW), -h),
                            (idx(i + 1, ITH), 1.0),
                        ],
                    );
                    eq.push(
                        defect(3),
                        &[
                            (idx(i, IV), -1.0),
                            (idx(i, IA), -h),
                            (idx(i + 1, IV), 1.0),
                        ],
                    );
                }
            }
        }
        for (k, z0) in self.z_init.as_array().iter().enumerate() {
            eq.push(x[idx(0, k)] - z0, &[(idx(0, k), 1.0)]);
        }

        // Inequalities, grouped by node.
        let mut ineq = RowSink::new(n, self.n_ineq(), derivatives);
        let half = self.usable_half_width;
        for (i, proj) in projections.iter().enumerate() {
            let (ix, iy) = (idx(i, IX), idx(i, IY));
            let (s, c) = proj.heading.sin_cos();
            let (nx, ny) = (-s, c);
            ineq.push(proj.offset - half, &[(ix, nx), (iy, ny)]);
            ineq.push(-proj.offset - half, &[(ix, -nx), (iy, -ny)]);

            for (k, bound) in [(IV, lim.v_max), (IW, lim.omega_max), (IA, lim.a_max)] {
                let v = x[idx(i, k)];
                ineq.push(v - bound, &[(idx(i, k), 1.0)]);
                ineq.push(-v - bound, &[(idx(i, k), -1.0)]);
            }
            if i + 1 < m {
                let (p, q) = (idx(i, IA), idx(i + 1, IA));
                let jerk = (x[q] - x[p]) / h;
                ineq.push(jerk - lim.j_max, &[(p, -1.0 / h), (q, 1.0 / h)]);
                ineq.push(-jerk - lim.j_max, &[(p, 1.0 / h), (q, -1.0 / h)]);
            }

            let sum = x[ix] + x[iy];
            let d_min = lim.d_min;
            match self.distance[i] {
                DistanceRow::TwoSided { mu_sum } => {
                    let delta = mu_sum - sum;
                    let sg = if delta >= 0.0 { 1.0 } else { -1.0 };
                    ineq.push(d_min - delta.abs(), &[(ix, sg), (iy, sg)]);
                }
                DistanceRow::Trailing { mu_sum } => {
                    ineq.push(d_min - (mu_sum - sum), &[(ix, 1.0), (iy, 1.0)]);
                }
                DistanceRow::Band { lower, upper } => {
                    ineq.push(lower - sum, &[(ix, -1.0), (iy, -1.0)]);
                    ineq.push(sum - upper, &[(ix, 1.0), (iy, 1.0)]);
                }
                DistanceRow::Upper { upper } => {
                    ineq.push(sum - upper, &[(ix, 1.0), (iy, 1.0)]);
                }
            }
        }

        let derivatives = match (derivatives, eq.jac, ineq.jac) {
            (true, Some(jac_eq), Some(jac_ineq)) => Some(Derivatives {
                gradient,
                jac_eq,
                jac_ineq,
            }),
            _ => None,
        };
        Evaluation {
            objective,
            eq: eq.values,
            ineq: ineq.values,
            derivatives,
        }
    }
}

/// Adds the positive part of the symmetric block `[[a, b], [b, d]]` at
/// rows/columns `(p, q)`.
fn psd_block(a: f64, b: f64, d: f64, p: usize, q: usize, out: &mut BandMatrix) {
    let mean = 0.5 * (a + d);
    let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    let (l1, l2) = (mean + rad, mean - rad);
    if l2 >= 0.0 {
        out.add(p, p, a);
        out.add(q, q, d);
        out.add(q, p, b);
        return;
    }
    if l1 <= 0.0 {
        return;
    }
    // Eigenvector of l1.
    let (ex, ey) = if b.abs() > 1e-300 {
        (b, l1 - a)
    } else if a >= d {
        (1.0, 0.0)
    } else {
        (0.0, 1.0)
    };
    let norm2 = ex * ex + ey * ey;
    let k = l1 / norm2;
    out.add(p, p, k * ex * ex);
    out.add(q, q, k * ey * ey);
    out.add(q, p, k * ex * ey);
}
