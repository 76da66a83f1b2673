//! End-to-end paths through simulation, filtering, solving and evaluation.

mod common;

use driftlab::dpe::{self, DpeOptions};
use driftlab::eval::{self, McOptions};
use driftlab::filter::{bound_violations, integrate_riccati, run_filter, RowKind};
use driftlab::grid::Grid2D;
use driftlab::io;
use driftlab::market::{simulate_bundle, BundleOptions};
use driftlab::oracles;
use driftlab::par::Execution;
use driftlab::rng::SeedTree;
use driftlab::rule::DecisionRule;
use driftlab::state_space::VecState;
use driftlab::OneAsset;

#[test]
fn without_views_the_filter_is_kalman_bucy() {
    let model = OneAsset { lambda: 0.0, q0: 0.02, ..Default::default() }.model().unwrap();
    let p = model.params();
    let b = simulate_bundle(&model, &BundleOptions { n_steps: 200 }, &SeedTree::new(4), 0).unwrap();
    assert!(b.views.is_empty());
    let f = run_filter(&model, &b, &p.m0, &p.q0).unwrap();
    assert_eq!(f.len(), b.grid.len());
    assert!(f.kind.iter().all(|k| *k == RowKind::Regular));
    let h = b.grid[1] - b.grid[0];
    for &i in &[50usize, 120, 200] {
        let q = integrate_riccati(&model, &p.q0, 0.0, b.grid[i], h).unwrap();
        assert!((f.q_at(i)[(0, 0)] - q[(0, 0)]).abs() < 1e-12);
    }
}

#[test]
fn covariance_stays_bounded_on_random_models() {
    let pool: Vec<f64> = (0..200).map(|i| ((i * 37 % 101) as f64 / 50.0) - 1.0).collect();
    for d in 1..=3 {
        let model = common::model_from(d, &pool[d..], 3.0, 0.5);
        for i in 0..20 {
            let b = simulate_bundle(&model, &BundleOptions { n_steps: 200 }, &SeedTree::new(9), i).unwrap();
            let p = model.params();
            let f = run_filter(&model, &b, &p.m0, &p.q0).unwrap();
            assert_eq!(bound_violations(&model, &f), 0);
        }
    }
}

#[test]
fn value_grid_survives_a_disk_round_trip() {
    let model = OneAsset::default().model().unwrap();
    let grid = Grid2D::for_model(&model, 21, 9, 5).unwrap();
    let vg = dpe::solve_dpe(&model, &grid, &DpeOptions::default()).unwrap();
    assert!(vg.slice(grid.t.n - 1).iter().all(|v| *v == 1.0));
    let dir = tempfile::tempdir().unwrap();
    let (c, j) = (dir.path().join("v.csv"), dir.path().join("v.json"));
    io::write_value_grid(&c, &j, &model, &vg).unwrap();
    let back = io::read_value_grid(&c, &j).unwrap();
    assert_eq!(back.values.len(), vg.values.len());
    assert!(back.values.iter().zip(&vg.values).all(|(a, b)| a.to_bits() == b.to_bits()));
    assert_eq!(back, vg);
}

#[test]
fn lattice_error_shrinks_under_refinement() {
    let model = OneAsset { lambda: 0.0, kappa: 0.0, sigma_mu: 0.0, ..Default::default() }.model().unwrap();
    let err = |nq: usize, sub: usize| {
        let g = Grid2D::for_model(&model, 81, nq, 11).unwrap();
        let vg = dpe::solve_dpe(&model, &g, &DpeOptions { min_substeps: sub, ..Default::default() }).unwrap();
        let rule = dpe::optimal_rule(&model, &vg).unwrap();
        oracles::compare_with_ansatz(&model, &vg, &rule, 1000).unwrap().max_rel_value
    };
    let (coarse, fine) = (err(21, 1), err(81, 4));
    assert!(fine < coarse / 3.0, "coarse {coarse:e}, fine {fine:e}");
}

#[test]
fn zero_rule_anchors_hold_on_every_estimator() {
    let model = OneAsset { theta: -1.0, x0: 2.0, ..Default::default() }.model().unwrap();
    let opts = McOptions { n_steps: 100, exec: Execution::Parallel(2) };
    let z = DecisionRule::zero();
    let seeds = SeedTree::new(1);
    let r = eval::reward_mc(&model, &z, 0.0, &VecState::initial(&model).unwrap(), 50, None, &opts, &seeds).unwrap();
    assert_eq!((r.estimate.mean, r.estimate.std_error), (1.0, 0.0));
    let l = eval::lambda_martingale_check(&model, &z, 50, &opts, &seeds).unwrap();
    assert_eq!(l.mean, 1.0);
    let u = eval::wealth_utility_mc(&model, &z, 50, &opts, &seeds).unwrap();
    assert_eq!(u.mean, 2f64.powf(-1.0) / -1.0);
}

#[test]
fn optimal_rule_is_not_beaten_by_the_myopic_rule() {
    let model = OneAsset::default().model().unwrap();
    let grid = Grid2D::for_model(&model, 81, 41, 21).unwrap();
    let vg = dpe::solve_dpe(&model, &grid, &DpeOptions { min_substeps: 4, ..Default::default() }).unwrap();
    let star = dpe::optimal_rule(&model, &vg).unwrap();
    let myopic = DecisionRule::myopic(&model, dpe::default_clip(&model).unwrap()).unwrap();
    let opts = McOptions { n_steps: 500, exec: Execution::Parallel(0) };
    let y0 = VecState::initial(&model).unwrap();
    let p = eval::compare_rules(&model, &star, &myopic, &y0, 4000, &opts, &SeedTree::new(5)).unwrap();
    assert!(p.diff.mean > -3.0 * p.diff.std_error, "{:?}", p.diff);
}
