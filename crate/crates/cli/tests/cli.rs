//! End-to-end checks of the `ccplan` binary: exit codes, output files and
//! reproducibility.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ccplan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ccplan"))
        .args(args)
        .env_remove("PLANNER_SEED")
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_is_byte_identical_per_seed() {
    for family in ["urban", "risky", "highspeed"] {
        let a = ccplan(&["gen", family, "--seed", "7"]);
        let b = ccplan(&["gen", family, "--seed", "7"]);
        assert!(a.status.success(), "{family}");
        assert_eq!(a.stdout, b.stdout, "{family}");
        let c = ccplan(&["gen", family, "--seed", "8"]);
        if family != "risky" {
            assert_ne!(a.stdout, c.stdout, "{family}");
        }
    }
}

#[test]
fn gen_seed_comes_from_environment() {
    let flag = ccplan(&["gen", "urban", "--seed", "11"]);
    let env = Command::new(env!("CARGO_BIN_EXE_ccplan"))
        .args(["gen", "urban"])
        .env("PLANNER_SEED", "11")
        .output()
        .unwrap();
    assert_eq!(flag.stdout, env.stdout);
}

#[test]
fn gen_rejects_unknown_family_and_bad_speed() {
    assert_eq!(ccplan(&["gen", "rural"]).status.code(), Some(1));
    let out = ccplan(&["gen", "highspeed", "--v-r", "30"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn plan_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("urban.json");
    let out = ccplan(&["gen", "urban", "--seed", "2", "--out", path(&scenario)]);
    assert!(out.status.success());

    let out_dir = dir.path().join("plan");
    let out = ccplan(&["plan", "--scenario", path(&scenario), "--out", path(&out_dir)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let traj = fs::read_to_string(out_dir.join("trajectory.csv")).unwrap();
    let lines: Vec<&str> = traj.lines().collect();
    assert_eq!(lines[0], "t,x,y,theta,v,a,omega,jerk");
    assert_eq!(lines.len(), 61);
    assert!(lines[60].ends_with(','), "last jerk is empty");

    let margins = fs::read_to_string(out_dir.join("margins.csv")).unwrap();
    assert!(margins.starts_with("run_id,node_index,t,margin_m\n"));
    assert_eq!(margins.lines().count(), 61);

    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["model"], "continuous-stochastic");
    assert_eq!(report["status"], "Converged");
    for key in ["iterations", "kkt_residual", "max_violation", "objective", "wall_time"] {
        assert!(report.get(key).is_some(), "{key}");
    }
}

#[test]
fn plan_model_flags_select_the_label() {
    let dir = tempfile::tempdir().unwrap();
    let out = ccplan(&[
        "plan", "--gen", "urban", "--seed", "4", "--model", "discrete", "--deterministic",
        "--out", path(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["model"], "discrete-deterministic");
}

#[test]
fn plan_names_the_offending_field() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("bad.json");
    let text = String::from_utf8(ccplan(&["gen", "urban"]).stdout).unwrap();
    let mut value: serde_json::Value = serde_json::from_str(&text).unwrap();
    value["weights"]["w_v"] = serde_json::json!(-1.0);
    fs::write(&scenario, value.to_string()).unwrap();
    let out = ccplan(&["plan", "--scenario", path(&scenario), "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("weights.w_v"), "{stderr}");

    fs::write(&scenario, "{ not json").unwrap();
    let out = ccplan(&["plan", "--scenario", path(&scenario), "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn plan_reports_nonconvergence_with_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("tight.json");
    let text = String::from_utf8(ccplan(&["gen", "urban", "--seed", "5"]).stdout).unwrap();
    let mut value: serde_json::Value = serde_json::from_str(&text).unwrap();
    // A target parked on the pinned start position violates the separation
    // row at node 0 no matter what the planner does.
    let (x0, y0) = (value["z_init"][0].clone(), value["z_init"][1].clone());
    for (key, v) in [("mu_x", x0), ("mu_y", y0)] {
        for m in value["target"][key].as_array_mut().unwrap() {
            *m = v.clone();
        }
    }
    fs::write(&scenario, value.to_string()).unwrap();
    let out = ccplan(&["plan", "--scenario", path(&scenario), "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn experiment_outputs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for (d, threads) in [(&a, "1"), (&b, "3")] {
        let out = ccplan(&[
            "experiment", "exp1", "--n", "4", "--seed", "9", "--parallel", threads, "--out", path(d),
        ]);
        assert_eq!(out.status.code(), Some(0));
    }
    for file in ["runs.csv", "margins.csv", "summary.json"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file}");
    }
}

#[test]
fn experiment_alpha_records_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let out = ccplan(&["experiment", "alpha", "--n", "2", "--alpha", "0.9", "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(0));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["alpha"], 0.9);
    assert!(summary["alpha_validation"]["fraction_at_least_alpha"].is_number());
}

#[test]
fn experiment_sweep_and_feasibility_write_tables() {
    let dir = tempfile::tempdir().unwrap();
    let sweep = dir.path().join("sweep");
    let out = ccplan(&[
        "experiment", "sweep", "--n", "1", "--ratios", "5:1:1:1:1:1:1;1:1:1:1:1:1:5",
        "--horizons", "50", "--out", path(&sweep),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(sweep.join("sweep.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);

    let feas = dir.path().join("feas");
    let out = ccplan(&["experiment", "feasibility", "--n", "1", "--out", path(&feas)]);
    assert_eq!(out.status.code(), Some(0));
    let cells = fs::read_to_string(feas.join("cells.csv")).unwrap();
    assert_eq!(cells.lines().count(), 1 + 2 * 3 * 2);
}

#[test]
fn unknown_experiment_and_bad_flags_exit_one() {
    assert_eq!(ccplan(&["experiment", "exp9"]).status.code(), Some(1));
    assert_eq!(ccplan(&["plan", "--gen", "urban", "--M", "zero"]).status.code(), Some(1));
    assert_eq!(ccplan(&["--help"]).status.code(), Some(0));
}
