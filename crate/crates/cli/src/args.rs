//! Command-line definitions.

use std::f64::consts::PI;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "ccplan", version, about = "Chance-constrained trajectory planning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one scenario and write the trajectory, report and margins.
    Plan(PlanArgs),
    /// Run an experiment pipeline: det-study, exp1, exp2, sweep,
    /// feasibility or alpha.
    Experiment(ExperimentArgs),
    /// Write a generated scenario as JSON: urban, risky or highspeed.
    Gen(GenArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Continuous,
    Discrete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ChanceModeArg {
    Paper,
    Separation,
}

/// Options shared by the commands that pick a generated scenario.
#[derive(Debug, Clone, Args)]
pub struct GeneratorArgs {
    /// Scenario and noise seed.
    #[arg(long, env = "PLANNER_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Reference speed of a high-speed scenario, m/s.
    #[arg(long = "v-r", default_value_t = 22.0)]
    pub v_r: f64,
    /// Turn-rate limit of a high-speed scenario; accepts pi/6, pi/4, pi/2.
    #[arg(long = "omega-max", default_value = "pi/6", value_parser = parse_angle)]
    pub omega_max: f64,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    /// Scenario JSON file.
    #[arg(long, conflicts_with = "gen", required_unless_present = "gen")]
    pub scenario: Option<PathBuf>,
    /// Generator family instead of a file.
    #[arg(long)]
    pub gen: Option<String>,
    #[command(flatten)]
    pub generator: GeneratorArgs,
    /// Horizon in seconds; defaults to the scenario horizon.
    #[arg(long = "T")]
    pub horizon: Option<f64>,
    /// Number of grid nodes.
    #[arg(long = "M", default_value_t = 60)]
    pub nodes: usize,
    #[arg(long, value_enum, default_value_t = ModelArg::Continuous)]
    pub model: ModelArg,
    #[arg(long, conflicts_with = "deterministic")]
    pub stochastic: bool,
    #[arg(long)]
    pub deterministic: bool,
    /// Overrides the scenario's chance-constraint form.
    #[arg(long = "chance-mode", value_enum)]
    pub chance_mode: Option<ChanceModeArg>,
    /// Overrides the scenario's confidence level.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// det-study, exp1, exp2, sweep, feasibility or alpha.
    pub name: String,
    /// Runs (scenarios, realizations or scenarios per cell).
    #[arg(long)]
    pub n: Option<usize>,
    /// Base seed; run i uses seed + i.
    #[arg(long, env = "PLANNER_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long = "T", default_value_t = 50.0)]
    pub horizon: f64,
    #[arg(long = "M", default_value_t = 60)]
    pub nodes: usize,
    #[arg(long = "chance-mode", value_enum, default_value_t = ChanceModeArg::Separation)]
    pub chance_mode: ChanceModeArg,
    /// Confidence level for planning and the validity threshold.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    pub parallel: usize,
    /// Record wall-clock times (outputs are then no longer reproducible).
    #[arg(long)]
    pub timing: bool,
    /// Weight ratios for the sweep: `default` or `a:b:c:d:e:f:g;...`.
    #[arg(long, default_value = "default")]
    pub ratios: String,
    /// Horizons for the sweep, seconds, comma separated.
    #[arg(long, default_value = "50,200,400")]
    pub horizons: String,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// urban, risky or highspeed.
    pub family: String,
    #[command(flatten)]
    pub generator: GeneratorArgs,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses an angle given as a number or as `pi`, `pi/k` or `k*pi/m`.
pub fn parse_angle(s: &str) -> Result<f64, String> {
    let t = s.trim().to_ascii_lowercase().replace(' ', "");
    if let Ok(v) = t.parse::<f64>() {
        return Ok(v);
    }
    let (num, den) = match t.split_once('/') {
        Some((n, d)) => (
            n,
            d.parse::<f64>()
                .map_err(|_| format!("bad denominator in angle {s:?}"))?,
        ),
        None => (t.as_str(), 1.0),
    };
    let factor = match num {
        "pi" => 1.0,
        other => other
            .strip_suffix("*pi")
            .or_else(|| other.strip_suffix("pi"))
            .and_then(|k| k.parse::<f64>().ok())
            .ok_or_else(|| format!("cannot read angle {s:?}"))?,
    };
    if den == 0.0 {
        return Err(format!("zero denominator in angle {s:?}"));
    }
    Ok(factor * PI / den)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symbolic_angles_are_exact() {
        assert_eq!(parse_angle("pi/6").unwrap(), PI / 6.0);
        assert_eq!(parse_angle("pi/4").unwrap(), PI / 4.0);
        assert_eq!(parse_angle("PI/2").unwrap(), PI / 2.0);
        assert_eq!(parse_angle("pi").unwrap(), PI);
        assert_eq!(parse_angle("2*pi/3").unwrap(), 2.0 * PI / 3.0);
        assert_eq!(parse_angle("0.5").unwrap(), 0.5);
        assert!(parse_angle("tau/2").is_err());
        assert!(parse_angle("pi/0").is_err());
    }
}
