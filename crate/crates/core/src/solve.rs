//! Augmented-Lagrangian solver for [`Nlp`] programs.
//!
//! The outer loop updates multiplier estimates (first-order for equalities,
//! squared hinge for inequalities) and grows the penalty when the constraint
//! measure stalls. The inner minimizer is a limited-memory BFGS method whose
//! initial matrix is a structured Gauss-Newton model of the augmented
//! Lagrangian: the program's objective curvature plus the penalty times
//! `J^T J` over equality rows and active inequality rows, factored by a
//! banded Cholesky. Steps are globalized with an Armijo backtracking search.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::SolveError;
use crate::linalg::{BandCholesky, BandMatrix};
use crate::nlp::{Derivatives, Evaluation, Nlp};
use crate::geometry::waypoint_at;
use crate::scenario::Scenario;
use crate::transcribe::{EgoTrajectory, NlpProblem, TimeGrid, NODE_VARS};

/// Solver controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub max_outer_iters: usize,
    pub max_inner_iters: usize,
    /// Bound on the scaled Lagrangian stationarity.
    pub kkt_tol: f64,
    /// Bound on the largest constraint violation, in constraint units.
    pub feas_tol: f64,
    pub penalty_init: f64,
    pub penalty_growth: f64,
    /// Wall-clock budget in seconds.
    pub time_limit: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            max_outer_iters: 50,
            max_inner_iters: 200,
            kkt_tol: 1e-4,
            feas_tol: 1e-6,
            penalty_init: 10.0,
            penalty_growth: 10.0,
            time_limit: 120.0,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<(), SolveError> {
        let positive = [
            ("kkt_tol", self.kkt_tol),
            ("feas_tol", self.feas_tol),
            ("penalty_init", self.penalty_init),
            ("time_limit", self.time_limit),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || v.is_nan() {
                return Err(SolveError::Options(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.penalty_growth > 1.0 && self.penalty_growth.is_finite()) {
            return Err(SolveError::Options(format!(
                "penalty_growth must be finite and > 1, got {}",
                self.penalty_growth
            )));
        }
        if self.max_outer_iters == 0 || self.max_inner_iters == 0 {
            return Err(SolveError::Options("iteration limits must be >= 1".into()));
        }
        Ok(())
    }
}

/// Termination status.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SolveStatus {
    Converged,
    Infeasible,
    IterLimit,
    TimeLimit,
}

impl SolveStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolveStatus::Converged => "Converged",
            SolveStatus::Infeasible => "Infeasible",
            SolveStatus::IterLimit => "IterLimit",
            SolveStatus::TimeLimit => "TimeLimit",
        }
    }
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SolveStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Converged" => Ok(SolveStatus::Converged),
            "Infeasible" => Ok(SolveStatus::Infeasible),
            "IterLimit" => Ok(SolveStatus::IterLimit),
            "TimeLimit" => Ok(SolveStatus::TimeLimit),
            other => Err(format!("unknown solve status {other:?}")),
        }
    }
}

/// Progress of one outer iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuterRecord {
    /// Augmented-Lagrangian value when the inner minimization started.
    pub merit_start: f64,
    /// Value at the inner minimizer, same multipliers and penalty.
    pub merit_end: f64,
    pub penalty: f64,
    pub inner_iters: usize,
    pub kkt_residual: f64,
    pub max_violation: f64,
}

/// Result of [`minimize`].
#[derive(Debug, Clone, PartialEq)]
pub struct NlpSolution {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub max_violation: f64,
    /// Total inner iterations.
    pub iterations: usize,
    pub outer_iterations: usize,
    pub wall_time: f64,
    pub multipliers_eq: Vec<f64>,
    /// Multipliers of the program's inequality rows (bounds excluded).
    pub multipliers_ineq: Vec<f64>,
    pub history: Vec<OuterRecord>,
}

/// Report of a trajectory solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub max_violation: f64,
    pub objective: f64,
    /// Seconds.
    pub wall_time: f64,
    pub trajectory: EgoTrajectory,
    /// Final decision vector.
    pub x: Vec<f64>,
}

const INFEASIBLE_PENALTY: f64 = 1e10;
const HISTORY: usize = 10;
const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 40;

/// A point together with everything the augmented Lagrangian needs.
struct Point {
    x: Vec<f64>,
    eval: Evaluation,
    /// Program inequalities followed by bound rows.
    g: Vec<f64>,
}

impl Point {
    fn derivs(&self) -> &Derivatives {
        self.eval
            .derivatives
            .as_ref()
            .expect("accepted points carry derivatives")
    }
}

/// A finite variable bound turned into the row `sign * (x_j - value) <= 0`.
#[derive(Debug, Clone, Copy)]
struct BoundRow {
    var: usize,
    sign: f64,
    value: f64,
}

struct Problem<'a> {
    nlp: &'a dyn Nlp,
    n: usize,
    n_in: usize,
    bound_rows: Vec<BoundRow>,
    curvature: Option<BandMatrix>,
    obj_scale: f64,
}

/// Multipliers and penalty of the current outer iteration.
struct Multipliers {
    eq: Vec<f64>,
    ineq: Vec<f64>,
    rho: f64,
}

fn first_non_finite(v: &[f64]) -> Option<usize> {
    v.iter().position(|x| !x.is_finite())
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl<'a> Problem<'a> {
    fn new(nlp: &'a dyn Nlp) -> Self {
        let n = nlp.n_vars();
        let (lower, upper) = nlp.bounds();
        let mut bound_rows = Vec::new();
        for j in 0..n {
            if lower[j].is_finite() {
                bound_rows.push(BoundRow {
                    var: j,
                    sign: -1.0,
                    value: lower[j],
                });
            }
            if upper[j].is_finite() {
                bound_rows.push(BoundRow {
                    var: j,
                    sign: 1.0,
                    value: upper[j],
                });
            }
        }
        Self {
            nlp,
            n,
            n_in: nlp.n_ineq(),
            bound_rows,
            curvature: nlp.objective_curvature(),
            obj_scale: 1.0,
        }
    }

    fn n_rows_in(&self) -> usize {
        self.n_in + self.bound_rows.len()
    }

    fn point(&self, x: Vec<f64>, derivatives: bool) -> Point {
        let eval = self.nlp.evaluate(&x, derivatives);
        let mut g = eval.ineq.clone();
        g.extend(
            self.bound_rows
                .iter()
                .map(|b| b.sign * (x[b.var] - b.value)),
        );
        Point { x, eval, g }
    }

    /// Names the first non-finite output at a point.
    fn check_finite(&self, p: &Point) -> Result<(), SolveError> {
        if !p.eval.objective.is_finite() {
            return Err(SolveError::NonFinite {
                what: "objective",
                index: 0,
            });
        }
        if let Some(i) = first_non_finite(&p.eval.eq) {
            return Err(SolveError::NonFinite {
                what: "equality constraint",
                index: i,
            });
        }
        if let Some(i) = first_non_finite(&p.eval.ineq) {
            return Err(SolveError::NonFinite {
                what: "inequality constraint",
                index: i,
            });
        }
        if let Some(d) = &p.eval.derivatives {
            if let Some(i) = first_non_finite(&d.gradient) {
                return Err(SolveError::NonFinite {
                    what: "objective gradient",
                    index: i,
                });
            }
            for (what, jac) in [
                ("equality Jacobian row", &d.jac_eq),
                ("inequality Jacobian row", &d.jac_ineq),
            ] {
                for r in 0..jac.nrows() {
                    if first_non_finite(jac.row(r).1).is_some() {
                        return Err(SolveError::NonFinite { what, index: r });
                    }
                }
            }
        }
        Ok(())
    }

    fn is_finite(&self, p: &Point) -> bool {
        self.check_finite(p).is_ok()
    }

    fn merit(&self, p: &Point, m: &Multipliers) -> f64 {
        let rho = m.rho;
        let mut v = self.obj_scale * p.eval.objective;
        for (c, l) in p.eval.eq.iter().zip(&m.eq) {
            v += l * c + 0.5 * rho * c * c;
        }
        for (g, mu) in p.g.iter().zip(&m.ineq) {
            let t = (mu + rho * g).max(0.0);
            v += (t * t - mu * mu) / (2.0 * rho);
        }
        v
    }

    /// Gradient of the augmented Lagrangian, which equals the Lagrangian
    /// gradient at the first-order multiplier update.
    fn merit_gradient(&self, p: &Point, m: &Multipliers) -> Vec<f64> {
        let d = p.derivs();
        let mut grad: Vec<f64> = d.gradient.iter().map(|g| self.obj_scale * g).collect();
        let w_eq: Vec<f64> = p
            .eval
            .eq
            .iter()
            .zip(&m.eq)
            .map(|(c, l)| l + m.rho * c)
            .collect();
        d.jac_eq.add_transpose_mul(&w_eq, &mut grad);
        let w_in: Vec<f64> = p
            .g
            .iter()
            .zip(&m.ineq)
            .map(|(g, mu)| (mu + m.rho * g).max(0.0))
            .collect();
        d.jac_ineq.add_transpose_mul(&w_in[..self.n_in], &mut grad);
        for (b, w) in self.bound_rows.iter().zip(&w_in[self.n_in..]) {
            grad[b.var] += b.sign * w;
        }
        grad
    }

    /// Scale for relative stationarity: `max(1, ||s_f grad f||_inf)`.
    fn gradient_scale(&self, p: &Point) -> f64 {
        (self.obj_scale * inf_norm(&p.derivs().gradient)).max(1.0)
    }

    /// Inequality and bound rows that contribute to the merit at `p`.
    fn active_set(&self, p: &Point, m: &Multipliers) -> Vec<bool> {
        p.g.iter()
            .zip(&m.ineq)
            .map(|(g, mu)| mu + m.rho * g > 0.0)
            .collect()
    }

    fn max_violation(&self, p: &Point) -> f64 {
        let eq = inf_norm(&p.eval.eq);
        p.g.iter().fold(eq, |m, g| m.max(*g))
    }

    /// Structured model `s_f B + rho J^T J (+ active rows)`, without damping.
    fn model_matrix(&self, p: &Point, m: &Multipliers) -> BandMatrix {
        let d = p.derivs();
        let curv_b = self.curvature.as_ref().map_or(0, |c| c.bandwidth());
        let b = curv_b
            .max(d.jac_eq.bandwidth())
            .max(d.jac_ineq.bandwidth());
        let mut h = BandMatrix::zeros(self.n, b);
        if let Some(c) = &self.curvature {
            h.add_scaled(c, self.obj_scale);
        }
        for r in 0..d.jac_eq.nrows() {
            let (idx, val) = d.jac_eq.row(r);
            h.add_outer(idx, val, m.rho);
        }
        let w_eq: Vec<f64> = p
            .eval
            .eq
            .iter()
            .zip(&m.eq)
            .map(|(c, l)| l + m.rho * c)
            .collect();
        self.nlp.add_constraint_curvature(&p.x, &w_eq, &mut h);
        for r in 0..self.n_in {
            if m.ineq[r] + m.rho * p.g[r] > 0.0 {
                let (idx, val) = d.jac_ineq.row(r);
                h.add_outer(idx, val, m.rho);
            }
        }
        for (k, br) in self.bound_rows.iter().enumerate() {
            let r = self.n_in + k;
            if m.ineq[r] + m.rho * p.g[r] > 0.0 {
                h.add(br.var, br.var, m.rho);
            }
        }
        h
    }
}

/// Damped factorization of the model matrix.
fn factor(model: &BandMatrix, damping: &mut f64) -> BandCholesky {
    let scale = model
        .diagonal()
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-12);
    loop {
        let mut h = model.clone();
        h.add_diagonal(*damping * scale);
        match h.cholesky() {
            Ok(f) => return f,
            Err(_) => *damping = (*damping * 100.0).max(1e-10),
        }
    }
}

struct Lbfgs {
    s: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
    rho: Vec<f64>,
}

impl Lbfgs {
    fn new() -> Self {
        Self {
            s: Vec::new(),
            y: Vec::new(),
            rho: Vec::new(),
        }
    }

    fn clear(&mut self) {
        self.s.clear();
        self.y.clear();
        self.rho.clear();
    }

    fn push(&mut self, s: Vec<f64>, y: Vec<f64>) {
        let sy = dot(&s, &y);
        let scale = dot(&s, &s).sqrt() * dot(&y, &y).sqrt();
        if !(sy > 1e-10 * scale) || !sy.is_finite() {
            return;
        }
        if self.s.len() == HISTORY {
            self.s.remove(0);
            self.y.remove(0);
            self.rho.remove(0);
        }
        self.s.push(s);
        self.y.push(y);
        self.rho.push(1.0 / sy);
    }

    /// Two-loop recursion with the factored model as initial inverse.
    fn direction(&self, grad: &[f64], h0: &BandCholesky) -> Vec<f64> {
        let k = self.s.len();
        let mut q = grad.to_vec();
        let mut alpha = vec![0.0; k];
        for i in (0..k).rev() {
            alpha[i] = self.rho[i] * dot(&self.s[i], &q);
            for (qj, yj) in q.iter_mut().zip(&self.y[i]) {
                *qj -= alpha[i] * yj;
            }
        }
        h0.solve_in_place(&mut q);
        for i in 0..k {
            let beta = self.rho[i] * dot(&self.y[i], &q);
            for (qj, sj) in q.iter_mut().zip(&self.s[i]) {
                *qj += (alpha[i] - beta) * sj;
            }
        }
        q.iter_mut().for_each(|v| *v = -*v);
        q
    }
}

struct InnerResult {
    point: Point,
    iterations: usize,
    merit_start: f64,
    merit_end: f64,
}

fn inner_minimize(
    prob: &Problem,
    start: Point,
    m: &Multipliers,
    tol: f64,
    max_iters: usize,
    damping: &mut f64,
    deadline: &dyn Fn() -> bool,
) -> InnerResult {
    let mut p = start;
    let mut merit = prob.merit(&p, m);
    let merit_start = merit;
    let mut grad = prob.merit_gradient(&p, m);
    let mut memory = Lbfgs::new();
    let mut last_active = Vec::new();
    let mut iterations = 0;
    while iterations < max_iters {
        if inf_norm(&grad) / prob.gradient_scale(&p) <= tol || deadline() {
            break;
        }
        iterations += 1;
        let active = prob.active_set(&p, m);
        if active != last_active {
            memory.clear();
            last_active = active;
        }
        let model = prob.model_matrix(&p, m);
        let mut accepted = None;
        // Try the quasi-Newton direction first, then the bare model
        // direction, then increasingly damped model directions.
        for attempt in 0..6 {
            let chol = factor(&model, damping);
            let mut dir = if attempt == 0 && !memory.s.is_empty() {
                memory.direction(&grad, &chol)
            } else {
                let mut d = grad.clone();
                chol.solve_in_place(&mut d);
                d.iter_mut().for_each(|v| *v = -*v);
                d
            };
            let mut slope = dot(&grad, &dir);
            if !(slope < 0.0) {
                dir = grad.iter().map(|g| -g).collect();
                slope = dot(&grad, &dir);
            }
            let mut t = 1.0;
            for _ in 0..MAX_HALVINGS {
                let x_new: Vec<f64> = p.x.iter().zip(&dir).map(|(x, d)| x + t * d).collect();
                let trial = prob.point(x_new, true);
                if prob.is_finite(&trial) {
                    let value = prob.merit(&trial, m);
                    if value <= merit + ARMIJO_C * t * slope {
                        accepted = Some((trial, value, t));
                        break;
                    }
                }
                t *= 0.5;
            }
            if accepted.is_some() {
                break;
            }
            memory.clear();
            if attempt > 0 {
                *damping = (*damping * 100.0).max(1e-6);
            }
        }
        let Some((trial, value, t)) = accepted else {
            break;
        };
        if t == 1.0 {
            *damping = (*damping * 0.1).max(1e-12);
        } else if t < 0.1 {
            *damping = (*damping * 10.0).min(1e6);
        }
        let new_grad = prob.merit_gradient(&trial, m);
        let s: Vec<f64> = trial.x.iter().zip(&p.x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = new_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        memory.push(s, y);
        let decrease = merit - value;
        p = trial;
        merit = value;
        grad = new_grad;
        if decrease <= 1e-15 * merit.abs().max(1.0) && t < 1e-6 {
            break;
        }
    }
    InnerResult {
        point: p,
        iterations,
        merit_start,
        merit_end: merit,
    }
}

/// Solves `nlp` from `x0`.
pub fn minimize(
    nlp: &dyn Nlp,
    x0: &[f64],
    opts: &SolveOptions,
) -> Result<NlpSolution, SolveError> {
    opts.validate()?;
    let started = Instant::now();
    if x0.len() != nlp.n_vars() {
        return Err(SolveError::Shape {
            expected: nlp.n_vars(),
            got: x0.len(),
        });
    }
    if let Some(i) = first_non_finite(x0) {
        return Err(SolveError::NonFinite {
            what: "initial point",
            index: i,
        });
    }
    let mut prob = Problem::new(nlp);
    let mut p = prob.point(x0.to_vec(), true);
    prob.check_finite(&p)?;

    prob.obj_scale = objective_scale(&prob, &p);

    let mut m = Multipliers {
        eq: vec![0.0; nlp.n_eq()],
        ineq: vec![0.0; prob.n_rows_in()],
        rho: opts.penalty_init,
    };
    let deadline = || started.elapsed().as_secs_f64() > opts.time_limit;
    let mut damping = 1e-8;
    let mut prev_measure = f64::INFINITY;
    let mut history = Vec::new();
    let mut total_inner = 0;
    let mut status = SolveStatus::IterLimit;
    let mut kkt = f64::INFINITY;
    let mut violation = prob.max_violation(&p);

    for outer in 0..opts.max_outer_iters {
        let tol = (1e-2 * 0.1f64.powi(outer as i32)).max(0.5 * opts.kkt_tol);
        let inner = inner_minimize(
            &prob,
            p,
            &m,
            tol,
            opts.max_inner_iters,
            &mut damping,
            &deadline,
        );
        total_inner += inner.iterations;
        p = inner.point;

        kkt = inf_norm(&prob.merit_gradient(&p, &m)) / prob.gradient_scale(&p);
        violation = prob.max_violation(&p);
        let measure = p
            .g
            .iter()
            .zip(&m.ineq)
            .fold(inf_norm(&p.eval.eq), |acc, (g, mu)| {
                acc.max(g.max(-mu / m.rho).abs())
            });
        history.push(OuterRecord {
            merit_start: inner.merit_start,
            merit_end: inner.merit_end,
            penalty: m.rho,
            inner_iters: inner.iterations,
            kkt_residual: kkt,
            max_violation: violation,
        });

        for (l, c) in m.eq.iter_mut().zip(&p.eval.eq) {
            *l += m.rho * c;
        }
        for (mu, g) in m.ineq.iter_mut().zip(&p.g) {
            *mu = (*mu + m.rho * g).max(0.0);
        }

        if kkt <= opts.kkt_tol && violation <= opts.feas_tol {
            status = SolveStatus::Converged;
            break;
        }
        if deadline() {
            status = SolveStatus::TimeLimit;
            break;
        }
        if measure > 0.25 * prev_measure && measure > opts.feas_tol {
            m.rho *= opts.penalty_growth;
        }
        prev_measure = measure;
        if m.rho > INFEASIBLE_PENALTY && violation > 100.0 * opts.feas_tol {
            status = SolveStatus::Infeasible;
            break;
        }
    }

    let n_in = prob.n_in;
    Ok(NlpSolution {
        status,
        objective: p.eval.objective,
        kkt_residual: kkt,
        max_violation: violation,
        iterations: total_inner,
        outer_iterations: history.len(),
        wall_time: started.elapsed().as_secs_f64(),
        multipliers_eq: m.eq,
        multipliers_ineq: m.ineq[..n_in].to_vec(),
        history,
        x: p.x,
    })
}

/// `1 / max diag` of the objective curvature model, falling back to the
/// initial gradient norm.
fn objective_scale(prob: &Problem, p: &Point) -> f64 {
    let from_curvature = prob
        .curvature
        .as_ref()
        .map(|c| c.diagonal().iter().fold(0.0f64, |m, v| m.max(*v)))
        .filter(|d| *d > 0.0 && d.is_finite());
    match from_curvature {
        Some(d) => 1.0 / d,
        None => 1.0 / inf_norm(&p.derivs().gradient).max(1.0),
    }
}

/// Solves a transcribed trajectory program and unpacks the result.
pub fn solve(
    problem: &NlpProblem,
    x0: &[f64],
    opts: &SolveOptions,
) -> Result<SolveReport, SolveError> {
    let sol = minimize(problem, x0, opts)?;
    let trajectory = problem
        .unpack(&sol.x)
        .expect("solution length equals the program size");
    Ok(SolveReport {
        status: sol.status,
        iterations: sol.iterations,
        kkt_residual: sol.kkt_residual,
        max_violation: sol.max_violation,
        objective: sol.objective,
        wall_time: sol.wall_time,
        trajectory,
        x: sol.x,
    })
}

/// A starting point for the solver.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialGuess {
    pub x: Vec<f64>,
    /// Set when some node's station ran past the lane end and was clamped.
    pub clamped: bool,
}

/// States along the lane center at station `v_r * t_i` with the lane heading
/// and speed `v_r`; controls are zero.
pub fn initial_guess(sc: &Scenario, grid: &TimeGrid) -> InitialGuess {
    let mut x = vec![0.0; NODE_VARS * grid.nodes_m];
    let mut clamped = false;
    for (i, node) in x.chunks_exact_mut(NODE_VARS).enumerate() {
        let sample = waypoint_at(&sc.lane, grid.time(i), sc.limits.v_r)
            .expect("finite times and speeds give a waypoint");
        clamped |= sample.clamped;
        let w = sample.waypoint;
        node[..4].copy_from_slice(&[w.x, w.y, w.theta, sc.limits.v_r]);
    }
    InitialGuess { x, clamped }
}
