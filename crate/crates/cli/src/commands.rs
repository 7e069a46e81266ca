//! Subcommand implementations. Each returns the process exit code; errors
//! bubble up to `main`, which reports them and exits with 1.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::json;

use ccplan_core::harness::{
    alpha_validation, count_violations, default_ratios, run_deterministic_study,
    run_experiment1, run_experiment2, run_feasibility_study, run_weight_sweep, write_csv,
    ExperimentSummary, HarnessConfig, MarginRow, Model,
};
use ccplan_core::scenario::{
    make_highspeed_scenario, make_risky_scenario, make_urban_scenario,
};
use ccplan_core::{
    build_continuous_nlp, build_discrete_nlp, initial_guess, solve, ChanceMode, Scenario,
    SolveOptions, SolveStatus, TimeGrid,
};

use crate::args::{ChanceModeArg, ExperimentArgs, GenArgs, GeneratorArgs, ModelArg, PlanArgs};

fn chance_mode(arg: ChanceModeArg) -> ChanceMode {
    match arg {
        ChanceModeArg::Paper => ChanceMode::PaperLiteral,
        ChanceModeArg::Separation => ChanceMode::Separation,
    }
}

fn generate(family: &str, g: &GeneratorArgs) -> Result<Scenario> {
    Ok(match family {
        "urban" => make_urban_scenario(g.seed),
        "risky" => make_risky_scenario(g.seed),
        "highspeed" => make_highspeed_scenario(g.v_r, g.omega_max, g.seed)?,
        other => bail!("unknown scenario family {other:?}; expected urban, risky or highspeed"),
    })
}

fn create_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = fs::File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
    write_csv(file, rows)?;
    Ok(())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

#[derive(Serialize)]
struct TrajectoryRow {
    t: f64,
    x: f64,
    y: f64,
    theta: f64,
    v: f64,
    a: f64,
    omega: f64,
    /// Empty on the last node, which starts no interval.
    jerk: Option<f64>,
}

pub fn plan(args: &PlanArgs) -> Result<i32> {
    let mut sc = match (&args.scenario, &args.gen) {
        (Some(path), _) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("cannot read {}", path.display()))?;
            Scenario::from_json(&text).with_context(|| format!("invalid scenario {}", path.display()))?
        }
        (None, Some(family)) => generate(family, &args.generator)?,
        (None, None) => bail!("either --scenario or --gen is required"),
    };
    if let Some(mode) = args.chance_mode {
        sc.chance.mode = chance_mode(mode);
    }
    if let Some(alpha) = args.alpha {
        sc.chance.alpha = alpha;
    }
    sc.validate()?;
    let grid = TimeGrid::new(args.horizon.unwrap_or(sc.horizon_t), args.nodes)?;
    let stochastic = !args.deterministic;
    let nlp = match args.model {
        ModelArg::Continuous => build_continuous_nlp(&sc, grid, &sc.weights, stochastic)?,
        ModelArg::Discrete => {
            build_discrete_nlp(&sc, grid.nodes_m, grid.step(), &sc.weights, stochastic)?
        }
    };
    let guess = initial_guess(&sc, &grid);
    let report = solve(&nlp, &guess.x, &SolveOptions::default())?;

    create_dir(&args.out)?;
    let traj = &report.trajectory;
    let rows: Vec<TrajectoryRow> = traj
        .states
        .iter()
        .zip(&traj.controls)
        .enumerate()
        .map(|(i, (z, u))| TrajectoryRow {
            t: grid.time(i),
            x: z.x,
            y: z.y,
            theta: z.theta,
            v: z.v,
            a: u.a,
            omega: u.omega,
            jerk: traj.jerks.get(i).copied(),
        })
        .collect();
    write_rows(&args.out.join("trajectory.csv"), &rows)?;

    let target = sc.target_on_grid(&grid);
    let violations = count_violations(traj, &target, sc.limits.d_min)?;
    let margins: Vec<MarginRow> = violations
        .margins
        .iter()
        .enumerate()
        .map(|(k, &g)| MarginRow {
            run_id: 0,
            node_index: k,
            t: grid.time(k),
            margin_m: g,
        })
        .collect();
    write_rows(&args.out.join("margins.csv"), &margins)?;

    let report_json = json!({
        "model": nlp.model_label(),
        "status": report.status.as_str(),
        "iterations": report.iterations,
        "kkt_residual": report.kkt_residual,
        "max_violation": report.max_violation,
        "objective": report.objective,
        "wall_time": report.wall_time,
        "scenario_id": sc.id(),
        "chance_mode": sc.chance.mode,
        "alpha": sc.chance.alpha,
        "grid": grid,
        "initial_guess_clamped": guess.clamped,
        "violations": violations.violation_count,
        "valid_proportion": violations.valid_proportion,
    });
    write_json(&args.out.join("report.json"), &report_json)?;
    println!(
        "{} {} after {} iterations (kkt {:.2e}, violation {:.2e})",
        nlp.model_label(),
        report.status,
        report.iterations,
        report.kkt_residual,
        report.max_violation
    );
    Ok(if report.status == SolveStatus::Converged { 0 } else { 2 })
}

fn parse_ratios(s: &str) -> Result<Vec<[f64; 7]>> {
    if s == "default" {
        return Ok(default_ratios());
    }
    s.split(';')
        .map(|block| {
            let vals = block
                .split(':')
                .map(|v| v.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .with_context(|| format!("bad ratio {block:?}"))?;
            <[f64; 7]>::try_from(vals)
                .map_err(|v| anyhow::anyhow!("ratio {block:?} has {} entries, expected 7", v.len()))
        })
        .collect()
}

fn parse_horizons(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().with_context(|| format!("bad horizon {v:?}")))
        .collect()
}

fn summary_json(name: &str, args: &ExperimentArgs, n: usize, s: &ExperimentSummary) -> serde_json::Value {
    json!({
        "experiment": name,
        "n": n,
        "seed": args.seed,
        "grid": { "horizon_T": args.horizon, "nodes_M": args.nodes },
        "chance_mode": chance_mode(args.chance_mode),
        "runs": s.runs.len(),
        "aggregates": s.aggregates,
        "histograms": s.histograms,
    })
}

fn write_summary_files(out: &Path, grid: &TimeGrid, s: &ExperimentSummary) -> Result<()> {
    write_rows(&out.join("runs.csv"), &s.run_rows())?;
    write_rows(&out.join("margins.csv"), &s.margin_rows(grid))?;
    Ok(())
}

pub fn experiment(args: &ExperimentArgs) -> Result<i32> {
    const NAMES: [&str; 6] = ["det-study", "exp1", "exp2", "sweep", "feasibility", "alpha"];
    let name = args.name.as_str();
    if !NAMES.contains(&name) {
        bail!("unknown experiment {name:?}; expected one of {}", NAMES.join(", "));
    }
    let grid = TimeGrid::new(args.horizon, args.nodes)?;
    let cfg = HarnessConfig {
        grid,
        seed_base: args.seed,
        parallelism: args.parallel.max(1),
        timing: args.timing,
        chance_mode: chance_mode(args.chance_mode),
        alpha: args.alpha,
        solve: SolveOptions::default(),
    };
    create_dir(&args.out)?;
    match name {
        "sweep" => {
            let n = args.n.unwrap_or(10);
            let ratios = parse_ratios(&args.ratios)?;
            let horizons = parse_horizons(&args.horizons)?;
            let rows = run_weight_sweep(&ratios, &horizons, n, &cfg)?;
            write_rows(&args.out.join("sweep.csv"), &rows)?;
            let summary = json!({
                "experiment": name,
                "n": n,
                "seed": args.seed,
                "ratio_blocks": ratios.len(),
                "horizons": horizons,
                "rows": rows,
            });
            write_json(&args.out.join("summary.json"), &summary)?;
            println!("sweep: {} rows over {} ratio blocks", rows.len(), ratios.len());
        }
        "feasibility" => {
            let n = args.n.unwrap_or(20);
            let s = run_feasibility_study(n, &cfg)?;
            let fgrid = TimeGrid::new(100.0, 101)?;
            write_summary_files(&args.out, &fgrid, &s)?;
            write_rows(&args.out.join("cells.csv"), &s.cells)?;
            let mut summary = summary_json(name, args, n, &s);
            summary["grid"] = json!({ "horizon_T": 100.0, "nodes_M": 101 });
            summary["cells"] = json!(s.cells);
            write_json(&args.out.join("summary.json"), &summary)?;
            for c in &s.cells {
                println!("v_r {} omega_max {:.4} {}: {}/{}", c.v_r, c.omega_max, c.model, c.converged, c.n);
            }
        }
        _ => {
            let n = args.n.unwrap_or(50);
            let s = match name {
                "det-study" => run_deterministic_study(n, &cfg)?,
                "exp1" => run_experiment1(n, &cfg)?,
                _ => run_experiment2(n, &cfg)?,
            };
            write_summary_files(&args.out, &grid, &s)?;
            let mut summary = summary_json(name, args, n, &s);
            if name == "alpha" {
                let threshold = args.alpha.unwrap_or(0.95);
                let v = alpha_validation(&s, threshold, &Model::CONTINUOUS_STOCHASTIC.label())?;
                summary["alpha"] = json!(threshold);
                summary["alpha_validation"] = json!(v);
            }
            write_json(&args.out.join("summary.json"), &summary)?;
            for (model, a) in &s.aggregates {
                println!(
                    "{model}: {}/{} converged, mean violations {:.3}, mean valid proportion {:.4}",
                    a.converged, a.runs, a.mean_violations, a.mean_valid_proportion
                );
            }
        }
    }
    Ok(0)
}

pub fn gen(args: &GenArgs) -> Result<i32> {
    let sc = generate(&args.family, &args.generator)?;
    let text = sc.to_json();
    match &args.out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                create_dir(dir)?;
            }
            fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))?;
        }
        None => print!("{text}"),
    }
    Ok(0)
}
