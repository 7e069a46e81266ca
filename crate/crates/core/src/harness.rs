//! Violation metrics and the experiment pipelines.
//!
//! Every run follows the same recipe: build a scenario, draw one noisy
//! realization of the target on the solver grid, plan against the measured
//! positions, then count violations against the true target means. Runs are
//! mapped over a worker pool; seeds are `seed_base + run_index`, so results
//! do not depend on scheduling.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chance::ChanceMode;
use crate::error::HarnessError;
use crate::geometry::Point2;
use crate::scenario::{
    make_highspeed_scenario, make_mixed_scenario, make_risky_scenario,
    make_urban_scenario_with_horizon, realize_measurements, Scenario, HIGHSPEED_HORIZON,
    HIGHSPEED_OMEGAS, HIGHSPEED_SPEEDS,
};
use crate::solve::{initial_guess, solve, SolveOptions, SolveStatus};
use crate::transcribe::{
    build_continuous_nlp, build_discrete_nlp, EgoTrajectory, TimeGrid, Transcription,
};
use crate::vehicle::{k_distance, Weights};

/// Metrics of one solved trajectory against the true target positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    /// `d_min - K` at every node; positive values are violations.
    pub margins: Vec<f64>,
    pub violation_count: usize,
    pub valid_proportion: f64,
    pub avg_speed: f64,
    pub avg_accel_mag: f64,
    pub avg_ang_vel_mag: f64,
    /// Mean Euclidean distance between ego and target.
    pub avg_gap: f64,
    pub wall_time: f64,
}

/// Margins up to this size are within the solver's feasibility tolerance
/// and are not counted as violations.
pub const VIOLATION_TOL: f64 = 1e-6;

/// Computes the per-node margins and kinematic averages of a trajectory.
pub fn count_violations(
    traj: &EgoTrajectory,
    target_xy: &[Point2],
    d_min: f64,
) -> Result<ViolationReport, HarnessError> {
    let m = traj.len();
    if target_xy.len() != m {
        return Err(HarnessError::Shape {
            expected: m,
            got: target_xy.len(),
        });
    }
    if m == 0 {
        return Err(HarnessError::Invalid("empty trajectory".into()));
    }
    let margins: Vec<f64> = traj
        .states
        .iter()
        .zip(target_xy)
        .map(|(z, t)| d_min - k_distance(t.x, z.x, t.y, z.y))
        .collect();
    let violation_count = margins.iter().filter(|&&g| g > VIOLATION_TOL).count();
    let mean = |it: &mut dyn Iterator<Item = f64>| it.sum::<f64>() / m as f64;
    Ok(ViolationReport {
        violation_count,
        valid_proportion: 1.0 - violation_count as f64 / m as f64,
        avg_speed: mean(&mut traj.states.iter().map(|z| z.v)),
        avg_accel_mag: mean(&mut traj.controls.iter().map(|u| u.a.abs())),
        avg_ang_vel_mag: mean(&mut traj.controls.iter().map(|u| u.omega.abs())),
        avg_gap: mean(
            &mut traj
                .states
                .iter()
                .zip(target_xy)
                .map(|(z, t)| z.position().dist(*t)),
        ),
        wall_time: 0.0,
        margins,
    })
}

/// One of the four planning models.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Model {
    pub scheme: Transcription,
    pub stochastic: bool,
}

impl Model {
    pub const CONTINUOUS_STOCHASTIC: Model = Model {
        scheme: Transcription::Continuous,
        stochastic: true,
    };
    pub const DISCRETE_STOCHASTIC: Model = Model {
        scheme: Transcription::Discrete,
        stochastic: true,
    };
    pub const CONTINUOUS_DETERMINISTIC: Model = Model {
        scheme: Transcription::Continuous,
        stochastic: false,
    };
    pub const DISCRETE_DETERMINISTIC: Model = Model {
        scheme: Transcription::Discrete,
        stochastic: false,
    };
    pub const ALL: [Model; 4] = [
        Model::CONTINUOUS_STOCHASTIC,
        Model::DISCRETE_STOCHASTIC,
        Model::CONTINUOUS_DETERMINISTIC,
        Model::DISCRETE_DETERMINISTIC,
    ];

    /// Label such as `discrete-deterministic`.
    pub fn label(&self) -> String {
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

    pub fn from_label(label: &str) -> Option<Model> {
        Model::ALL.into_iter().find(|m| m.label() == label)
    }
}

/// Settings shared by every pipeline.
#[derive(Debug, Clone)]
pub struct HarnessConfig {
    pub grid: TimeGrid,
    pub seed_base: u64,
    /// Worker threads; 0 uses the rayon default.
    pub parallelism: usize,
    /// Record wall-clock times; off by default so outputs are reproducible.
    pub timing: bool,
    pub chance_mode: ChanceMode,
    /// Overrides the scenario's confidence level when set.
    pub alpha: Option<f64>,
    pub solve: SolveOptions,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            grid: TimeGrid::new(50.0, 60).expect("valid default grid"),
            seed_base: 0,
            parallelism: 1,
            timing: false,
            chance_mode: ChanceMode::Separation,
            alpha: None,
            solve: SolveOptions::default(),
        }
    }
}

/// Outcome of one model on one scenario realization.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    /// Row identifier; the models of one realization have consecutive ids
    /// and share their seeds.
    pub run_id: usize,
    pub model: String,
    pub scenario_seed: u64,
    pub noise_seed: u64,
    /// Solver status, or `Error` when the program could not be built or
    /// solved.
    pub status: String,
    pub report: ViolationReport,
}

impl RunRecord {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged.as_str()
    }
}

/// Converged counts of one high-speed cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellCount {
    pub v_r: f64,
    pub omega_max: f64,
    pub model: String,
    pub n: usize,
    pub converged: usize,
}

/// Means over the runs of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelAggregate {
    pub runs: usize,
    pub converged: usize,
    pub mean_violations: f64,
    pub mean_valid_proportion: f64,
    pub mean_speed: f64,
    pub mean_accel: f64,
    pub mean_ang_vel: f64,
    pub mean_gap: f64,
    pub mean_wall_time: f64,
}

/// Result of a pipeline.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentSummary {
    pub runs: Vec<RunRecord>,
    /// Per model, the number of runs with 0, 1, 2, ... violations.
    pub histograms: BTreeMap<String, Vec<usize>>,
    pub cells: Vec<CellCount>,
    pub aggregates: BTreeMap<String, ModelAggregate>,
}

impl ExperimentSummary {
    /// Builds histograms and aggregates from the runs, folding in run order.
    pub fn from_runs(runs: Vec<RunRecord>, cells: Vec<CellCount>) -> Self {
        let mut by_model: BTreeMap<String, Vec<&RunRecord>> = BTreeMap::new();
        for r in &runs {
            by_model.entry(r.model.clone()).or_default().push(r);
        }
        let mut histograms = BTreeMap::new();
        let mut aggregates = BTreeMap::new();
        for (model, rs) in &by_model {
            let max = rs.iter().map(|r| r.report.violation_count).max().unwrap_or(0);
            let mut hist = vec![0; max + 1];
            for r in rs {
                hist[r.report.violation_count] += 1;
            }
            histograms.insert(model.clone(), hist);
            let n = rs.len() as f64;
            let mean = |f: &dyn Fn(&RunRecord) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / n;
            aggregates.insert(
                model.clone(),
                ModelAggregate {
                    runs: rs.len(),
                    converged: rs.iter().filter(|r| r.converged()).count(),
                    mean_violations: mean(&|r| r.report.violation_count as f64),
                    mean_valid_proportion: mean(&|r| r.report.valid_proportion),
                    mean_speed: mean(&|r| r.report.avg_speed),
                    mean_accel: mean(&|r| r.report.avg_accel_mag),
                    mean_ang_vel: mean(&|r| r.report.avg_ang_vel_mag),
                    mean_gap: mean(&|r| r.report.avg_gap),
                    mean_wall_time: mean(&|r| r.report.wall_time),
                },
            );
        }
        Self {
            runs,
            histograms,
            cells,
            aggregates,
        }
    }

    /// Runs of one model in run order.
    pub fn model_runs<'a>(&'a self, model: &'a str) -> impl Iterator<Item = &'a RunRecord> + 'a {
        self.runs.iter().filter(move |r| r.model == model)
    }
}

/// One solve request inside a pipeline.
struct Job {
    index: usize,
    scenario_seed: u64,
    noise_seed: u64,
    scenario: Scenario,
    grid: TimeGrid,
    models: Vec<Model>,
    weights: Option<Weights>,
}

fn prepare(sc: &mut Scenario, cfg: &HarnessConfig) {
    sc.chance.mode = cfg.chance_mode;
    if let Some(a) = cfg.alpha {
        sc.chance.alpha = a;
    }
}

/// Solves every model of a job against one shared realization.
fn run_job(job: &Job, cfg: &HarnessConfig) -> Vec<RunRecord> {
    let sc = &job.scenario;
    let grid = job.grid;
    let truth = sc.target_on_grid(&grid);
    let realization = realize_measurements(sc, &grid, job.noise_seed);
    let planned = sc.with_measurements(&realization, &grid);
    let weights = job.weights.unwrap_or(sc.weights);
    job.models
        .iter()
        .enumerate()
        .map(|(k, model)| {
            let start = Instant::now();
            let outcome = planned.as_ref().map_err(|e| e.to_string()).and_then(|p| {
                let nlp = match model.scheme {
                    Transcription::Continuous => {
                        build_continuous_nlp(p, grid, &weights, model.stochastic)
                    }
                    Transcription::Discrete => build_discrete_nlp(
                        p,
                        grid.nodes_m,
                        grid.step(),
                        &weights,
                        model.stochastic,
                    ),
                }
                .map_err(|e| e.to_string())?;
                solve(&nlp, &initial_guess(p, &grid).x, &cfg.solve).map_err(|e| e.to_string())
            });
            let wall = if cfg.timing {
                start.elapsed().as_secs_f64()
            } else {
                0.0
            };
            let (status, report) = match outcome {
                Ok(rep) => {
                    let mut v = count_violations(&rep.trajectory, &truth, sc.limits.d_min)
                        .expect("trajectory and truth share the grid");
                    v.wall_time = wall;
                    (rep.status.as_str().to_string(), v)
                }
                Err(_) => (
                    "Error".to_string(),
                    ViolationReport {
                        margins: Vec::new(),
                        violation_count: grid.nodes_m,
                        valid_proportion: 0.0,
                        avg_speed: 0.0,
                        avg_accel_mag: 0.0,
                        avg_ang_vel_mag: 0.0,
                        avg_gap: 0.0,
                        wall_time: wall,
                    },
                ),
            };
            RunRecord {
                run_id: job.index * job.models.len() + k,
                model: model.label(),
                scenario_seed: job.scenario_seed,
                noise_seed: job.noise_seed,
                status,
                report,
            }
        })
        .collect()
}

/// Maps jobs over a pool of `parallelism` workers, keeping job order.
fn run_jobs(jobs: Vec<Job>, cfg: &HarnessConfig) -> Result<Vec<RunRecord>, HarnessError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism)
        .build()
        .map_err(|e| HarnessError::Invalid(e.to_string()))?;
    let nested: Vec<Vec<RunRecord>> =
        pool.install(|| jobs.par_iter().map(|j| run_job(j, cfg)).collect());
    Ok(nested.into_iter().flatten().collect())
}

fn check_grid(sc: &Scenario, grid: &TimeGrid) -> Result<(), HarnessError> {
    if grid.horizon_t > sc.horizon_t * (1.0 + 1e-12) {
        return Err(HarnessError::Invalid(format!(
            "grid horizon {} exceeds scenario horizon {}",
            grid.horizon_t, sc.horizon_t
        )));
    }
    Ok(())
}

/// Many realizations of one risky scenario, planned with both stochastic
/// models.
pub fn run_experiment1(
    n_realizations: usize,
    cfg: &HarnessConfig,
) -> Result<ExperimentSummary, HarnessError> {
    let mut sc = make_risky_scenario(cfg.seed_base);
    prepare(&mut sc, cfg);
    run_experiment1_on(&sc, n_realizations, cfg)
}

/// Experiment 1 on a given scenario.
pub fn run_experiment1_on(
    sc: &Scenario,
    n_realizations: usize,
    cfg: &HarnessConfig,
) -> Result<ExperimentSummary, HarnessError> {
    if n_realizations == 0 {
        return Err(HarnessError::Invalid("n must be at least 1".into()));
    }
    check_grid(sc, &cfg.grid)?;
    let jobs = (0..n_realizations)
        .map(|i| Job {
            index: i,
            scenario_seed: cfg.seed_base,
            noise_seed: cfg.seed_base + i as u64,
            scenario: sc.clone(),
            grid: cfg.grid,
            models: vec![Model::CONTINUOUS_STOCHASTIC, Model::DISCRETE_STOCHASTIC],
            weights: None,
        })
        .collect();
    Ok(ExperimentSummary::from_runs(run_jobs(jobs, cfg)?, Vec::new()))
}

/// One realization on each of `n_scenarios` distinct urban scenarios.
pub fn run_experiment2(
    n_scenarios: usize,
    cfg: &HarnessConfig,
) -> Result<ExperimentSummary, HarnessError> {
    per_scenario_study(
        n_scenarios,
        cfg,
        vec![Model::CONTINUOUS_STOCHASTIC, Model::DISCRETE_STOCHASTIC],
        |seed, _| make_urban_scenario_with_horizon(seed, cfg.grid.horizon_t.max(50.0)),
    )
}

/// All four models on a mixed-risk corpus: urban scenarios at even run
/// indices, risky ones at odd.
pub fn run_deterministic_study(
    n_scenarios: usize,
    cfg: &HarnessConfig,
) -> Result<ExperimentSummary, HarnessError> {
    per_scenario_study(n_scenarios, cfg, Model::ALL.to_vec(), |seed, i| {
        Ok(make_mixed_scenario(i as u64, seed))
    })
}

fn per_scenario_study(
    n: usize,
    cfg: &HarnessConfig,
    models: Vec<Model>,
    make: impl Fn(u64, usize) -> Result<Scenario, crate::error::ScenarioError>,
) -> Result<ExperimentSummary, HarnessError> {
    if n == 0 {
        return Err(HarnessError::Invalid("n must be at least 1".into()));
    }
    let jobs = (0..n)
        .map(|i| {
            let seed = cfg.seed_base + i as u64;
            let mut sc = make(seed, i)?;
            prepare(&mut sc, cfg);
            check_grid(&sc, &cfg.grid)?;
            Ok(Job {
                index: i,
                scenario_seed: seed,
                noise_seed: seed,
                scenario: sc,
                grid: cfg.grid,
                models: models.clone(),
                weights: None,
            })
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    Ok(ExperimentSummary::from_runs(run_jobs(jobs, cfg)?, Vec::new()))
}

/// The eight weight ratios: a 5 in each of the seven positions, then all
/// ones.
pub fn default_ratios() -> Vec<[f64; 7]> {
    let mut out: Vec<[f64; 7]> = (0..7)
        .map(|k| {
            let mut r = [1.0; 7];
            r[k] = 5.0;
            r
        })
        .collect();
    out.push([1.0; 7]);
    out
}

/// Horizons of the weight sweep, seconds.
pub const SWEEP_HORIZONS: [f64; 3] = [50.0, 200.0, 400.0];

/// Aggregates of one (ratio, horizon) configuration of the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub ratio: String,
    pub horizon_t: f64,
    pub n: usize,
    pub converged: usize,
    pub mean_wall_time: f64,
    pub mean_accel: f64,
    pub mean_ang_vel: f64,
    pub mean_speed: f64,
    pub mean_gap: f64,
}

fn ratio_label(r: &[f64; 7]) -> String {
    r.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(":")
}

/// Continuous-stochastic solves for every weight ratio and horizon, on a
/// grid with a step of about one second.
pub fn run_weight_sweep(
    ratios: &[[f64; 7]],
    horizons: &[f64],
    n_scenarios: usize,
    cfg: &HarnessConfig,
) -> Result<Vec<SweepRow>, HarnessError> {
    if ratios.is_empty() {
        return Err(HarnessError::Invalid("ratios must not be empty".into()));
    }
    let mut rows = Vec::new();
    for &horizon in horizons {
        let nodes = (horizon.round() as usize + 1).max(3);
        let grid = TimeGrid::new(horizon, nodes)?;
        let scenarios = (0..n_scenarios)
            .map(|i| {
                let mut sc = make_urban_scenario_with_horizon(cfg.seed_base + i as u64, horizon)?;
                prepare(&mut sc, cfg);
                Ok(sc)
            })
            .collect::<Result<Vec<_>, HarnessError>>()?;
        for ratio in ratios {
            let weights = Weights::from_array(*ratio);
            weights.validate()?;
            let jobs = scenarios
                .iter()
                .enumerate()
                .map(|(i, sc)| Job {
                    index: i,
                    scenario_seed: cfg.seed_base + i as u64,
                    noise_seed: cfg.seed_base + i as u64,
                    scenario: sc.clone(),
                    grid,
                    models: vec![Model::CONTINUOUS_STOCHASTIC],
                    weights: Some(weights),
                })
                .collect();
            let runs = run_jobs(jobs, cfg)?;
            let n = runs.len();
            let mean = |f: &dyn Fn(&RunRecord) -> f64| {
                if n == 0 {
                    0.0
                } else {
                    runs.iter().map(f).sum::<f64>() / n as f64
                }
            };
            rows.push(SweepRow {
                ratio: ratio_label(ratio),
                horizon_t: horizon,
                n,
                converged: runs.iter().filter(|r| r.converged()).count(),
                mean_wall_time: mean(&|r| r.report.wall_time),
                mean_accel: mean(&|r| r.report.avg_accel_mag),
                mean_ang_vel: mean(&|r| r.report.avg_ang_vel_mag),
                mean_speed: mean(&|r| r.report.avg_speed),
                mean_gap: mean(&|r| r.report.avg_gap),
            });
        }
    }
    Ok(rows)
}

/// Converged counts of both stochastic models over the six high-speed
/// cells, `n_per_cell` scenarios each, on a 100 s grid with 101 nodes.
pub fn run_feasibility_study(
    n_per_cell: usize,
    cfg: &HarnessConfig,
) -> Result<ExperimentSummary, HarnessError> {
    if n_per_cell == 0 {
        return Ok(ExperimentSummary::default());
    }
    let grid = TimeGrid::new(HIGHSPEED_HORIZON, 101)?;
    let models = [Model::CONTINUOUS_STOCHASTIC, Model::DISCRETE_STOCHASTIC];
    let mut jobs = Vec::new();
    for v_r in HIGHSPEED_SPEEDS {
        for omega in HIGHSPEED_OMEGAS {
            for i in 0..n_per_cell {
                let seed = cfg.seed_base + i as u64;
                let mut sc = make_highspeed_scenario(v_r, omega, seed)?;
                prepare(&mut sc, cfg);
                jobs.push(Job {
                    index: jobs.len(),
                    scenario_seed: seed,
                    noise_seed: seed,
                    scenario: sc,
                    grid,
                    models: models.to_vec(),
                    weights: None,
                });
            }
        }
    }
    let runs = run_jobs(jobs, cfg)?;
    let mut cells = Vec::new();
    for (c, (v_r, omega)) in HIGHSPEED_SPEEDS
        .iter()
        .flat_map(|v| HIGHSPEED_OMEGAS.iter().map(move |w| (*v, *w)))
        .enumerate()
    {
        let rows = &runs[c * n_per_cell * models.len()..(c + 1) * n_per_cell * models.len()];
        for model in models {
            let label = model.label();
            let converged = rows
                .iter()
                .filter(|r| r.model == label && r.converged())
                .count();
            cells.push(CellCount {
                v_r,
                omega_max: omega,
                model: label,
                n: n_per_cell,
                converged,
            });
        }
    }
    Ok(ExperimentSummary::from_runs(runs, cells))
}

/// How the valid proportions of one model compare with a confidence level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaValidation {
    pub alpha: f64,
    pub model: String,
    pub runs: usize,
    /// Fraction of runs whose valid proportion reaches `alpha`.
    pub fraction_at_least_alpha: f64,
    pub mean_proportion: f64,
    pub min_proportion: f64,
    /// `(run_id, valid_proportion >= alpha)` in run order.
    pub flags: Vec<(usize, bool)>,
}

/// Compares the converged runs of `model` against `alpha`.
pub fn alpha_validation(
    summary: &ExperimentSummary,
    alpha: f64,
    model: &str,
) -> Result<AlphaValidation, HarnessError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(HarnessError::Invalid(format!("alpha {alpha} outside (0, 1)")));
    }
    let props: Vec<(usize, f64)> = summary
        .model_runs(model)
        .filter(|r| r.converged())
        .map(|r| (r.run_id, r.report.valid_proportion))
        .collect();
    if props.is_empty() {
        return Err(HarnessError::Invalid(format!(
            "no converged runs of model {model}"
        )));
    }
    let n = props.len() as f64;
    let flags: Vec<(usize, bool)> = props.iter().map(|&(id, p)| (id, p >= alpha)).collect();
    Ok(AlphaValidation {
        alpha,
        model: model.to_string(),
        runs: props.len(),
        fraction_at_least_alpha: flags.iter().filter(|f| f.1).count() as f64 / n,
        mean_proportion: props.iter().map(|p| p.1).sum::<f64>() / n,
        min_proportion: props.iter().map(|p| p.1).fold(f64::INFINITY, f64::min),
        flags,
    })
}

/// A row of `runs.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub run_id: usize,
    pub model: String,
    pub scenario_seed: u64,
    pub noise_seed: u64,
    pub status: String,
    pub violations: usize,
    pub valid_proportion: f64,
    pub avg_speed: f64,
    pub avg_accel: f64,
    pub avg_ang_vel: f64,
    pub avg_gap: f64,
    pub wall_time_s: f64,
}

/// A row of `margins.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginRow {
    pub run_id: usize,
    pub node_index: usize,
    pub t: f64,
    pub margin_m: f64,
}

impl From<&RunRecord> for RunRow {
    fn from(r: &RunRecord) -> Self {
        Self {
            run_id: r.run_id,
            model: r.model.clone(),
            scenario_seed: r.scenario_seed,
            noise_seed: r.noise_seed,
            status: r.status.clone(),
            violations: r.report.violation_count,
            valid_proportion: r.report.valid_proportion,
            avg_speed: r.report.avg_speed,
            avg_accel: r.report.avg_accel_mag,
            avg_ang_vel: r.report.avg_ang_vel_mag,
            avg_gap: r.report.avg_gap,
            wall_time_s: r.report.wall_time,
        }
    }
}

/// Writes any serializable rows as CSV with a header line.
pub fn write_csv<W: Write, T: Serialize>(out: W, rows: &[T]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads CSV written by [`write_csv`].
pub fn read_csv<R: Read, T: for<'de> Deserialize<'de>>(input: R) -> Result<Vec<T>, HarnessError> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(HarnessError::from))
        .collect()
}

impl ExperimentSummary {
    pub fn run_rows(&self) -> Vec<RunRow> {
        self.runs.iter().map(RunRow::from).collect()
    }

    /// Per-node margins; node times come from `grid`.
    pub fn margin_rows(&self, grid: &TimeGrid) -> Vec<MarginRow> {
        self.runs
            .iter()
            .flat_map(|r| {
                r.report
                    .margins
                    .iter()
                    .enumerate()
                    .map(move |(k, &g)| MarginRow {
                        run_id: r.run_id,
                        node_index: k,
                        t: grid.time(k),
                        margin_m: g,
                    })
            })
            .collect()
    }

    /// Rebuilds a summary from `runs.csv` and `margins.csv` contents.
    pub fn from_rows(runs: &[RunRow], margins: &[MarginRow], cells: Vec<CellCount>) -> Self {
        let records = runs
            .iter()
            .map(|r| RunRecord {
                run_id: r.run_id,
                model: r.model.clone(),
                scenario_seed: r.scenario_seed,
                noise_seed: r.noise_seed,
                status: r.status.clone(),
                report: ViolationReport {
                    margins: margins
                        .iter()
                        .filter(|m| m.run_id == r.run_id)
                        .map(|m| m.margin_m)
                        .collect(),
                    violation_count: r.violations,
                    valid_proportion: r.valid_proportion,
                    avg_speed: r.avg_speed,
                    avg_accel_mag: r.avg_accel,
                    avg_ang_vel_mag: r.avg_ang_vel,
                    avg_gap: r.avg_gap,
                    wall_time: r.wall_time_s,
                },
            })
            .collect();
        Self::from_runs(records, cells)
    }
}
