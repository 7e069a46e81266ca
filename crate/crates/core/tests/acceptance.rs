//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits nonzero if any failed.
//!
//! Each check returns a one-line summary of what it measured; a failed
//! check returns the measurement that broke it.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use ccplan_core::chance::{det_equiv_bounds, normal_quantile};
use ccplan_core::harness::{
    alpha_validation, count_violations, run_deterministic_study, run_experiment1,
    run_experiment2, run_feasibility_study, write_csv, ExperimentSummary, HarnessConfig, Model,
};
use ccplan_core::nlp::{DenseQp, Nlp};
use ccplan_core::scenario::{make_urban_scenario, nominal_urban_scenario};
use ccplan_core::solve::minimize;
use ccplan_core::transcribe::NODE_VARS;
use ccplan_core::{
    build_continuous_nlp, build_discrete_nlp, initial_guess, solve, ChanceMode, ChanceParams,
    NlpProblem, Scenario, SolveOptions, SolveStatus, TimeGrid,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------------------
// Quantile oracle: bisection on a Gauss-Legendre integral of the density.

fn density(t: f64) -> f64 {
    (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Integral of the density over `[a, b]`, five-point Gauss-Legendre on
/// panels no wider than 0.05.
fn integrate_density(a: f64, b: f64) -> f64 {
    const NODES: [f64; 5] = [
        0.0,
        -0.538_469_310_105_683_1,
        0.538_469_310_105_683_1,
        -0.906_179_845_938_664,
        0.906_179_845_938_664,
    ];
    const WEIGHTS: [f64; 5] = [
        0.568_888_888_888_888_9,
        0.478_628_670_499_366_5,
        0.478_628_670_499_366_5,
        0.236_926_885_056_189_1,
        0.236_926_885_056_189_1,
    ];
    let panels = (((b - a).abs() / 0.05).ceil() as usize).max(1);
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|k| {
            let mid = a + (k as f64 + 0.5) * h;
            NODES
                .iter()
                .zip(WEIGHTS)
                .map(|(x, w)| w * density(mid + 0.5 * h * x))
                .sum::<f64>()
                * 0.5
                * h
        })
        .sum()
}

fn cdf_oracle(z: f64) -> f64 {
    // The tail beyond |z| = 12 is below 1e-32 and is dropped.
    if z <= 0.0 {
        integrate_density(-12.0, z)
    } else {
        1.0 - integrate_density(z, 12.0)
    }
}

fn quantile_oracle(p: f64) -> f64 {
    let (mut lo, mut hi) = (-12.0, 12.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf_oracle(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 {
            break;
        }
    }
    0.5 * (lo + hi)
}

const P_GRID: [f64; 37] = [
    1e-6, 1e-5, 1e-4, 1e-3, 0.005, 0.01, 0.0125, 0.025, 0.05, 0.1, 0.15, 0.2, 0.2222, 0.25, 0.3,
    0.3333, 0.35, 0.4, 0.45, 0.475, 0.5, 0.525, 0.55, 0.6, 0.65, 0.6667, 0.7, 0.75, 0.8, 0.85,
    0.9, 0.95, 0.975, 0.99, 0.999, 0.9999, 0.999_999,
];

fn quantile_accuracy() -> Check {
    let mut worst: (f64, f64) = (0.0, 0.0);
    for p in P_GRID {
        let got = normal_quantile(p).map_err(|e| e.to_string())?;
        let err = (got - quantile_oracle(p)).abs();
        if err > worst.0 {
            worst = (err, p);
        }
    }
    ensure(worst.0 <= 1e-7, || format!("error {:.2e} at p = {}", worst.0, worst.1))?;
    Ok(format!("max error {:.2e} over {} points", worst.0, P_GRID.len()))
}

fn bound_check() -> Check {
    let cp = ChanceParams::new(0.95, 5.0).map_err(|e| e.to_string())?;
    let (lo, hi) = det_equiv_bounds(10.0, 10.0, 1.0, 1.0, &cp).map_err(|e| e.to_string())?;
    let s = 2f64.sqrt();
    let (lo_ref, hi_ref) = (
        20.0 - 5.0 + s * quantile_oracle(0.525),
        20.0 + 5.0 + s * quantile_oracle(0.475),
    );
    ensure((lo_ref - 15.088_681_0).abs() <= 1e-6, || format!("oracle lower {lo_ref}"))?;
    ensure((hi_ref - 24.911_319_0).abs() <= 1e-6, || format!("oracle upper {hi_ref}"))?;
    ensure((lo - lo_ref).abs() <= 1e-6 && (hi - hi_ref).abs() <= 1e-6, || {
        format!("bounds ({lo}, {hi}) vs oracle ({lo_ref}, {hi_ref})")
    })?;
    Ok(format!("bounds ({lo:.7}, {hi:.7})"))
}

// ---------------------------------------------------------------------------
// Transcription derivatives.

fn random_point(sc: &Scenario, grid: &TimeGrid, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut x = initial_guess(sc, grid).x;
    for node in x.chunks_exact_mut(NODE_VARS) {
        node[0] += rng.gen_range(-3.0..3.0);
        node[1] += rng.gen_range(-3.0..3.0);
        node[2] += rng.gen_range(-0.4..0.4);
        node[3] += rng.gen_range(-3.0..3.0);
        node[4] = rng.gen_range(-2.5..2.5);
        node[5] = rng.gen_range(-0.5..0.5);
    }
    x
}

/// Largest relative error between analytic and central-difference
/// derivatives of every output at `x`.
fn derivative_error(p: &NlpProblem, x: &[f64]) -> f64 {
    let ev = p.evaluate(x, true);
    let d = ev.derivatives.expect("derivatives requested");
    let (je, ji) = (d.jac_eq.to_dense(), d.jac_ineq.to_dense());
    let rel = |an: f64, fd: f64| (an - fd).abs() / an.abs().max(fd.abs()).max(1.0);
    let mut worst = 0.0f64;
    for j in 0..x.len() {
        let step = 1e-6 * x[j].abs().max(1.0);
        let (mut xp, mut xm) = (x.to_vec(), x.to_vec());
        xp[j] += step;
        xm[j] -= step;
        let (ep, em) = (p.evaluate(&xp, false), p.evaluate(&xm, false));
        let fd = |a: f64, b: f64| (a - b) / (2.0 * step);
        worst = worst.max(rel(d.gradient[j], fd(ep.objective, em.objective)));
        for r in 0..ev.eq.len() {
            worst = worst.max(rel(je[r][j], fd(ep.eq[r], em.eq[r])));
        }
        for r in 0..ev.ineq.len() {
            worst = worst.max(rel(ji[r][j], fd(ep.ineq[r], em.ineq[r])));
        }
    }
    worst
}

fn transcription_derivatives() -> Check {
    let grid = TimeGrid::new(50.0, 20).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst = 0.0f64;
    let mut points = 0;
    for k in 0..20u64 {
        let mut sc = make_urban_scenario(k);
        sc.chance.mode = if k % 2 == 0 { ChanceMode::PaperLiteral } else { ChanceMode::Separation };
        let cont = build_continuous_nlp(&sc, grid, &sc.weights, true).map_err(|e| e.to_string())?;
        let disc = build_discrete_nlp(&sc, grid.nodes_m, grid.step(), &sc.weights, true)
            .map_err(|e| e.to_string())?;
        let x = random_point(&sc, &grid, &mut rng);
        worst = worst.max(derivative_error(&cont, &x));
        let x = random_point(&sc, &grid, &mut rng);
        worst = worst.max(derivative_error(&disc, &x));
        points += 1;
    }
    ensure(worst <= 1e-5, || format!("relative error {worst:.2e}"))?;
    Ok(format!("max relative error {worst:.2e} at {points} points per program"))
}

// ---------------------------------------------------------------------------
// Solver contract.

fn tight() -> SolveOptions {
    SolveOptions {
        kkt_tol: 1e-8,
        feas_tol: 1e-9,
        ..SolveOptions::default()
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max)
}

/// Convex QP with a known optimum: choose `x*`, an active set and
/// multipliers, then solve stationarity for the linear term.
fn random_qp(rng: &mut ChaCha8Rng) -> (DenseQp, Vec<f64>) {
    let n = rng.gen_range(2..10);
    let r: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let q_mat: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| (0..n).map(|k| r[i][k] * r[j][k]).sum::<f64>() + if i == j { 0.5 } else { 0.0 })
                .collect()
        })
        .collect();
    let x_star: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| u * v).sum::<f64>();
    let mut qp = DenseQp::new(q_mat.clone(), vec![0.0; n]);
    let mut grad_l = vec![0.0; n];
    for _ in 0..rng.gen_range(0..n.min(3)) {
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let lam = rng.gen_range(-2.0..2.0);
        grad_l.iter_mut().zip(&a).for_each(|(g, v)| *g += lam * v);
        qp.b_eq.push(dot(&a, &x_star));
        qp.a_eq.push(a);
    }
    for j in 0..rng.gen_range(1..5) {
        let c: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let slack = if j % 2 == 0 {
            let mu = rng.gen_range(0.5..2.0);
            grad_l.iter_mut().zip(&c).for_each(|(g, v)| *g += mu * v);
            0.0
        } else {
            rng.gen_range(0.5..2.0)
        };
        qp.d_in.push(dot(&c, &x_star) + slack);
        qp.c_in.push(c);
    }
    qp.q_vec = (0..n).map(|i| -dot(&q_mat[i], &x_star) - grad_l[i]).collect();
    (qp, x_star)
}

fn solver_contract() -> Check {
    let mut eq = DenseQp::new(vec![vec![2.0, 0.0], vec![0.0, 2.0]], vec![0.0, 0.0]);
    eq.a_eq = vec![vec![1.0, 1.0]];
    eq.b_eq = vec![1.0];
    let s = minimize(&eq, &[3.0, -7.0], &SolveOptions::default()).map_err(|e| e.to_string())?;
    let e1 = max_abs_diff(&s.x, &[0.5, 0.5]);
    ensure(s.status == SolveStatus::Converged && e1 <= 1e-4, || format!("equality QP error {e1:.2e}"))?;

    let mut bound = DenseQp::new(vec![vec![2.0]], vec![-6.0]);
    bound.c_in = vec![vec![1.0]];
    bound.d_in = vec![1.0];
    let s = minimize(&bound, &[0.0], &SolveOptions::default()).map_err(|e| e.to_string())?;
    let e2 = (s.x[0] - 1.0).abs();
    ensure(s.status == SolveStatus::Converged && e2 <= 1e-4, || format!("active-bound QP error {e2:.2e}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let mut worst = 0.0f64;
    for case in 0..20 {
        let (qp, x_star) = random_qp(&mut rng);
        let s = minimize(&qp, &vec![0.0; x_star.len()], &tight()).map_err(|e| e.to_string())?;
        ensure(s.status == SolveStatus::Converged, || format!("random QP {case}: {}", s.status))?;
        worst = worst.max(max_abs_diff(&s.x, &x_star));
    }
    ensure(worst <= 1e-4, || format!("random QP error {worst:.2e}"))?;
    Ok(format!("toy errors {e1:.1e} and {e2:.1e}, random QP max error {worst:.2e}"))
}

// ---------------------------------------------------------------------------
// Nominal solve and weight scaling.

fn nominal_solve() -> Check {
    let sc = nominal_urban_scenario();
    let grid = TimeGrid::new(50.0, 60).map_err(|e| e.to_string())?;
    let nlp = build_continuous_nlp(&sc, grid, &sc.weights, true).map_err(|e| e.to_string())?;
    let opts = SolveOptions::default();
    let r = solve(&nlp, &initial_guess(&sc, &grid).x, &opts).map_err(|e| e.to_string())?;
    ensure(r.status == SolveStatus::Converged, || format!("status {}", r.status))?;
    ensure(r.max_violation <= 1e-6, || format!("max violation {:.2e}", r.max_violation))?;
    let mut bound_breaches = 0;
    for (k, z) in r.trajectory.states.iter().enumerate() {
        let sum = z.x + z.y;
        if nlp.chance_upper(k).is_some_and(|u| sum > u + 1e-6)
            || nlp.chance_lower(k).is_some_and(|l| sum < l - 1e-6)
        {
            bound_breaches += 1;
        }
    }
    ensure(bound_breaches == 0, || format!("{bound_breaches} nodes outside their chance bounds"))?;
    let target = sc.target_on_grid(&grid);
    let v = count_violations(&r.trajectory, &target, sc.limits.d_min).map_err(|e| e.to_string())?;
    ensure(v.violation_count == 0, || format!("{} distance violations", v.violation_count))?;
    Ok(format!(
        "Converged in {} iterations, max violation {:.1e}, no bound breaches",
        r.iterations, r.max_violation
    ))
}

fn weight_scaling() -> Check {
    let sc = nominal_urban_scenario();
    let grid = TimeGrid::new(50.0, 60).map_err(|e| e.to_string())?;
    let x0 = initial_guess(&sc, &grid).x;
    let mut states = Vec::new();
    for w in [sc.weights, sc.weights.scaled(10.0)] {
        let nlp = build_continuous_nlp(&sc, grid, &w, true).map_err(|e| e.to_string())?;
        let r = solve(&nlp, &x0, &SolveOptions::default()).map_err(|e| e.to_string())?;
        ensure(r.status == SolveStatus::Converged, || format!("status {}", r.status))?;
        states.push(r.trajectory.states.iter().flat_map(|z| z.as_array()).collect::<Vec<f64>>());
    }
    let worst = max_abs_diff(&states[0], &states[1]);
    ensure(worst <= 1e-4, || format!("largest state change {worst:.2e}"))?;
    Ok(format!("largest state change {worst:.2e}"))
}

// ---------------------------------------------------------------------------
// Experiments.

fn mean_violations(s: &ExperimentSummary, m: Model) -> f64 {
    s.aggregates.get(&m.label()).map_or(f64::NAN, |a| a.mean_violations)
}

fn deterministic_ordering() -> Check {
    let s = run_deterministic_study(50, &HarnessConfig::default()).map_err(|e| e.to_string())?;
    let cd = mean_violations(&s, Model::CONTINUOUS_DETERMINISTIC);
    let cs = mean_violations(&s, Model::CONTINUOUS_STOCHASTIC);
    let dd = mean_violations(&s, Model::DISCRETE_DETERMINISTIC);
    let ds = mean_violations(&s, Model::DISCRETE_STOCHASTIC);
    ensure(cd >= cs && dd >= ds, || {
        format!("continuous {cd} vs {cs}, discrete {dd} vs {ds}")
    })?;
    Ok(format!(
        "mean violations continuous {cd:.2} >= {cs:.2}, discrete {dd:.2} >= {ds:.2}"
    ))
}

fn runs_csv(s: &ExperimentSummary) -> Result<Vec<u8>, String> {
    let mut buf = Vec::new();
    write_csv(&mut buf, &s.run_rows()).map_err(|e| e.to_string())?;
    Ok(buf)
}

fn experiment1(csv_out: &mut Vec<u8>) -> Check {
    let s = run_experiment1(50, &HarnessConfig::default()).map_err(|e| e.to_string())?;
    *csv_out = runs_csv(&s)?;
    let cs = mean_violations(&s, Model::CONTINUOUS_STOCHASTIC);
    let ds = mean_violations(&s, Model::DISCRETE_STOCHASTIC);
    let label = Model::CONTINUOUS_STOCHASTIC.label();
    let runs: Vec<_> = s.model_runs(&label).collect();
    let low = runs.iter().filter(|r| r.report.violation_count <= 1).count();
    let frac = low as f64 / runs.len() as f64;
    ensure(cs <= ds, || format!("continuous {cs} > discrete {ds}"))?;
    ensure(frac >= 0.8, || format!("only {low}/{} runs at <= 1 violation", runs.len()))?;
    Ok(format!(
        "mean violations {cs:.2} <= {ds:.2}, {low}/{} continuous runs at <= 1",
        runs.len()
    ))
}

fn experiment2_and_alpha() -> (Check, Check) {
    let s = match run_experiment2(50, &HarnessConfig::default()) {
        Ok(s) => s,
        Err(e) => return (Err(e.to_string()), Err("experiment 2 failed".into())),
    };
    let label = Model::CONTINUOUS_STOCHASTIC.label();
    let runs: Vec<_> = s.model_runs(&label).collect();
    let clean = runs.iter().filter(|r| r.converged() && r.report.violation_count == 0).count();
    let frac = clean as f64 / runs.len() as f64;
    let c8 = ensure(frac >= 0.9, || format!("{clean}/{} runs without violations", runs.len()))
        .map(|_| format!("{clean}/{} runs without violations", runs.len()));
    let c9 = alpha_validation(&s, 0.95, &label)
        .map_err(|e| e.to_string())
        .and_then(|v| {
            ensure(v.fraction_at_least_alpha == 1.0 && v.mean_proportion >= 0.97, || {
                format!(
                    "fraction {:.3} at >= 0.95, mean {:.4}, min {:.4}",
                    v.fraction_at_least_alpha, v.mean_proportion, v.min_proportion
                )
            })?;
            Ok(format!(
                "{} converged runs, min valid proportion {:.4}, mean {:.4}",
                v.runs, v.min_proportion, v.mean_proportion
            ))
        });
    (c8, c9)
}

fn feasibility_ordering() -> Check {
    let s = run_feasibility_study(20, &HarnessConfig::default()).map_err(|e| e.to_string())?;
    let cont = Model::CONTINUOUS_STOCHASTIC.label();
    let disc = Model::DISCRETE_STOCHASTIC.label();
    let mut lines = Vec::new();
    for c in s.cells.iter().filter(|c| c.model == cont) {
        let d = s
            .cells
            .iter()
            .find(|d| d.model == disc && d.v_r == c.v_r && d.omega_max == c.omega_max)
            .ok_or("missing discrete cell")?;
        ensure(c.converged >= d.converged, || {
            format!("v_r {} omega {:.3}: {} < {}", c.v_r, c.omega_max, c.converged, d.converged)
        })?;
        if c.v_r == 22.0 {
            let rate = c.converged as f64 / c.n as f64;
            ensure(rate >= 0.85, || format!("22 m/s rate {rate:.2} at omega {:.3}", c.omega_max))?;
        }
        lines.push(format!("{}/{}", c.converged, d.converged));
    }
    ensure(lines.len() == 6, || format!("{} cells", lines.len()))?;
    Ok(format!("continuous/discrete converged per cell: {}", lines.join(" ")))
}

fn determinism(reference: &[u8]) -> Check {
    for threads in [1, 8] {
        let cfg = HarnessConfig {
            parallelism: threads,
            ..HarnessConfig::default()
        };
        let s = run_experiment1(50, &cfg).map_err(|e| e.to_string())?;
        let bytes = runs_csv(&s)?;
        ensure(!reference.is_empty() && bytes == reference, || {
            format!("runs.csv differs at parallelism {threads}")
        })?;
    }
    Ok(format!("runs.csv identical ({} bytes) at parallelism 1 and 8", reference.len()))
}

// ---------------------------------------------------------------------------

struct Outcome {
    id: usize,
    title: &'static str,
    result: Check,
    elapsed: Duration,
    budget: Duration,
}

fn timed(f: impl FnOnce() -> Check) -> (Check, Duration) {
    let t = Instant::now();
    let r = f();
    (r, t.elapsed())
}

fn main() -> ExitCode {
    let secs = Duration::from_secs;
    let mut out = Vec::new();
    let mut push = |id, title, (result, elapsed): (Check, Duration), budget| {
        out.push(Outcome { id, title, result, elapsed, budget })
    };
    push(1, "quantile accuracy", timed(quantile_accuracy), secs(1));
    push(2, "deterministic-equivalent bounds", timed(bound_check), secs(1));
    push(3, "transcription derivatives", timed(transcription_derivatives), secs(30));
    push(4, "solver contract", timed(solver_contract), secs(30));
    push(5, "nominal solve", timed(nominal_solve), secs(60));
    push(6, "deterministic vs stochastic ordering", timed(deterministic_ordering), secs(900));
    let mut exp1_csv = Vec::new();
    push(7, "experiment 1 ordering", timed(|| experiment1(&mut exp1_csv)), secs(1200));
    let t = Instant::now();
    let (c8, c9) = experiment2_and_alpha();
    let shared = t.elapsed();
    push(8, "experiment 2 zero-violation rate", (c8, shared), secs(1200));
    push(9, "alpha validation", (c9, Duration::ZERO), secs(1200));
    push(10, "feasibility ordering", timed(feasibility_ordering), secs(1800));
    push(11, "weight-scaling invariance", timed(weight_scaling), secs(120));
    push(12, "determinism across thread counts", timed(|| determinism(&exp1_csv)), secs(1200));

    let mut failed = 0;
    for o in &out {
        let over = o.elapsed > o.budget;
        let verdict = match (&o.result, over) {
            (Ok(_), false) => "PASS",
            _ => "FAIL",
        };
        let detail = match &o.result {
            Ok(s) if over => format!("{s}; over budget of {:?}", o.budget),
            Ok(s) => s.clone(),
            Err(e) => e.clone(),
        };
        if verdict == "FAIL" {
            failed += 1;
        }
        println!(
            "{verdict} criterion {:>2} ({}): {detail} [{:.2}s]",
            o.id,
            o.title,
            o.elapsed.as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", out.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
