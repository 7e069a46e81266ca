//! Property tests over the public API.

use ccplan_core::harness::count_violations;
use ccplan_core::nlp::{DenseQp, Nlp};
use ccplan_core::scenario::{
    make_highspeed_scenario, make_mixed_scenario, make_urban_scenario, realize_measurements,
    HIGHSPEED_OMEGAS, HIGHSPEED_SPEEDS,
};
use ccplan_core::solve::minimize;
use ccplan_core::{
    build_continuous_nlp, build_discrete_nlp, Point2, Scenario, SolveOptions, SolveStatus,
    TimeGrid,
};
use proptest::prelude::*;

fn corridor_ok(sc: &Scenario) -> bool {
    let half = sc.bounds.usable_half_width();
    let len = sc.lane.length();
    (0..200).all(|k| {
        let s = len * k as f64 / 199.0;
        sc.lane.point(s).is_ok()
    }) && sc
        .lane
        .project(sc.z_init.position())
        .is_ok_and(|p| p.offset.abs() <= half)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn generated_scenarios_are_valid_and_round_trip(seed in 0u64..1_000_000) {
        let sc = make_urban_scenario(seed);
        prop_assert!(sc.validate().is_ok());
        prop_assert!(corridor_ok(&sc));
        let back = Scenario::from_json(&sc.to_json()).unwrap();
        prop_assert_eq!(&back, &sc);
        prop_assert_eq!(back.to_json(), sc.to_json());

        let mixed = make_mixed_scenario(seed % 50, seed);
        prop_assert!(mixed.validate().is_ok());
    }

    #[test]
    fn highspeed_scenarios_are_valid(seed in 0u64..1_000_000, cell in 0usize..6) {
        let v_r = HIGHSPEED_SPEEDS[cell / 3];
        let om = HIGHSPEED_OMEGAS[cell % 3];
        let sc = make_highspeed_scenario(v_r, om, seed).unwrap();
        prop_assert!(sc.validate().is_ok());
        prop_assert!(corridor_ok(&sc));
        prop_assert_eq!(sc.limits.v_r, v_r);
    }

    #[test]
    fn measurements_match_the_grid(seed in 0u64..10_000, m in 5usize..80) {
        let sc = make_urban_scenario(seed % 7);
        let grid = TimeGrid::new(sc.horizon_t, m).unwrap();
        let r = realize_measurements(&sc, &grid, seed);
        prop_assert_eq!(r.samples.len(), m);
        prop_assert_eq!(&r, &realize_measurements(&sc, &grid, seed));
        let planned = sc.with_measurements(&r, &grid).unwrap();
        prop_assert!(planned.target.mu_x.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn grids_are_uniform(t in 1.0..500.0f64, m in 3usize..400) {
        prop_assert!(TimeGrid::new(t, 2).is_err());
        let g = TimeGrid::new(t, m).unwrap();
        let times = g.times();
        prop_assert_eq!(times.len(), m);
        prop_assert_eq!(times[0], 0.0);
        prop_assert!((times[m - 1] - t).abs() <= 1e-9 * t);
        let h = g.step();
        for w in times.windows(2) {
            prop_assert!(w[1] > w[0]);
            prop_assert!((w[1] - w[0] - h).abs() <= 1e-9 * t);
        }
    }

    #[test]
    fn unpacked_jerk_is_a_forward_difference(
        m in 3usize..40,
        seed in 0u64..1000,
        x in prop::collection::vec(-50.0..50.0f64, 240),
    ) {
        let sc = make_urban_scenario(seed % 5);
        let grid = TimeGrid::new(50.0, m).unwrap();
        let p = build_continuous_nlp(&sc, grid, &sc.weights, true).unwrap();
        let x: Vec<f64> = x.iter().cycle().take(p.n_vars()).copied().collect();
        let tr = p.unpack(&x).unwrap();
        prop_assert_eq!(tr.states.len(), m);
        prop_assert_eq!(tr.jerks.len(), m - 1);
        for i in 0..m - 1 {
            let expect = (tr.controls[i + 1].a - tr.controls[i].a) / grid.step();
            prop_assert!((tr.jerks[i] - expect).abs() <= 1e-12 * expect.abs().max(1.0));
        }
        prop_assert_eq!(tr.pack(), x);
    }

    #[test]
    fn evaluator_dimensions_match_the_census(
        m in 3usize..50,
        seed in 0u64..1000,
        stochastic in any::<bool>(),
        discrete in any::<bool>(),
    ) {
        let sc = make_urban_scenario(seed % 5);
        let grid = TimeGrid::new(50.0, m).unwrap();
        let p = if discrete {
            build_discrete_nlp(&sc, m, grid.step(), &sc.weights, stochastic).unwrap()
        } else {
            build_continuous_nlp(&sc, grid, &sc.weights, stochastic).unwrap()
        };
        let census = p.census();
        prop_assert_eq!(p.n_eq(), census.n_eq());
        prop_assert_eq!(p.n_ineq(), census.n_ineq());
        let x = vec![1.0; p.n_vars()];
        let ev = p.evaluate(&x, true);
        let d = ev.derivatives.unwrap();
        prop_assert_eq!(ev.eq.len(), p.n_eq());
        prop_assert_eq!(ev.ineq.len(), p.n_ineq());
        prop_assert_eq!(d.gradient.len(), p.n_vars());
        prop_assert_eq!(d.jac_eq.nrows(), p.n_eq());
        prop_assert_eq!(d.jac_ineq.nrows(), p.n_ineq());
    }

    #[test]
    fn converged_status_honors_the_tolerances(
        diag in prop::collection::vec(0.1..10.0f64, 2..6),
        lin in prop::collection::vec(-5.0..5.0f64, 6),
        cap in -1.0..1.0f64,
    ) {
        let n = diag.len();
        let q_mat = (0..n)
            .map(|i| (0..n).map(|j| if i == j { diag[i] } else { 0.0 }).collect())
            .collect();
        let mut qp = DenseQp::new(q_mat, lin[..n].to_vec());
        qp.c_in = vec![vec![1.0; n]];
        qp.d_in = vec![cap];
        let opts = SolveOptions::default();
        let s = minimize(&qp, &vec![0.0; n], &opts).unwrap();
        if s.status == SolveStatus::Converged {
            prop_assert!(s.kkt_residual <= opts.kkt_tol);
            prop_assert!(s.max_violation <= opts.feas_tol);
        }
        let ev = qp.evaluate(&s.x, false);
        prop_assert!(ev.ineq[0] <= 1e-5);
    }

    #[test]
    fn violation_summary_is_consistent(gaps in prop::collection::vec(-20.0..20.0f64, 60)) {
        let sc = make_urban_scenario(1);
        let grid = TimeGrid::new(50.0, 60).unwrap();
        let p = build_continuous_nlp(&sc, grid, &sc.weights, true).unwrap();
        let tr = p.unpack(&vec![0.0; p.n_vars()]).unwrap();
        let targets: Vec<Point2> = gaps.iter().map(|g| Point2::new(*g, 0.0)).collect();
        let r = count_violations(&tr, &targets, 5.0).unwrap();
        prop_assert_eq!(r.margins.len(), 60);
        let expect = gaps.iter().filter(|g| 5.0 - g.abs() > 1e-6).count();
        prop_assert_eq!(r.violation_count, expect);
        prop_assert!((r.valid_proportion - (1.0 - expect as f64 / 60.0)).abs() < 1e-15);
    }
}
