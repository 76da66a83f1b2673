//! Properties of the regularization experiments.

use driftlab::dpe::{self, DpeOptions};
use driftlab::eval::{self, McOptions};
use driftlab::grid::Grid2D;
use driftlab::par::Execution;
use driftlab::regularization::{self, coupled_gap, exp_moment_diag, gronwall_factor, reward_gap, LabSettings};
use driftlab::rng::SeedTree;
use driftlab::rule::DecisionRule;
use driftlab::state_space::{RegularizationConfig, VecState};
use driftlab::OneAsset;

fn opts(n_steps: usize) -> McOptions {
    McOptions { n_steps, exec: Execution::Parallel(0) }
}

fn stress() -> OneAsset {
    OneAsset {
        kappa: 1.0,
        mu_bar: 0.5,
        sigma_mu: 0.5,
        sigma_r: 1.0,
        gamma: 0.25,
        lambda: 1.0,
        theta: 0.5,
        horizon: 1.0,
        m0: 0.5,
        q0: 0.1,
        x0: 1.0,
    }
}

fn joint(a: f64, b: f64) -> f64 {
    (a * a + b * b).sqrt()
}

#[test]
fn coupled_gap_shrinks_with_k_for_the_zero_rule() {
    let model = OneAsset { lambda: 0.0, ..stress() }.model().unwrap();
    let y0 = VecState::initial(&model).unwrap();
    let gap = |k| {
        let cfg = RegularizationConfig::with_k(&model, k).unwrap();
        coupled_gap(&model, &DecisionRule::zero(), &y0, &cfg, 1000, &opts(200), &SeedTree::new(2)).unwrap()
    };
    let (a, b) = (gap(100), gap(10_000));
    assert!(b.mean < a.mean, "{a:?} {b:?}");
}

#[test]
fn huge_k_respects_the_gronwall_scale() {
    let model = stress().model().unwrap();
    let y0 = VecState::initial(&model).unwrap();
    let k = 100_000_000;
    let cfg = RegularizationConfig::with_k(&model, k).unwrap();
    let rule = DecisionRule::myopic(&model, dpe::default_clip(&model).unwrap()).unwrap();
    let g = coupled_gap(&model, &rule, &y0, &cfg, 500, &opts(200), &SeedTree::new(3)).unwrap();
    assert!(g.mean < 10.0 * gronwall_factor(&model, k), "{g:?}");
}

#[test]
fn coupled_gap_is_seed_consistent() {
    let model = stress().model().unwrap();
    let y0 = VecState::initial(&model).unwrap();
    let cfg = RegularizationConfig::with_k(&model, 100).unwrap();
    let rule = DecisionRule::myopic(&model, dpe::default_clip(&model).unwrap()).unwrap();
    let a = coupled_gap(&model, &rule, &y0, &cfg, 2000, &opts(200), &SeedTree::new(10)).unwrap();
    let b = coupled_gap(&model, &rule, &y0, &cfg, 2000, &opts(200), &SeedTree::new(11)).unwrap();
    assert!((a.mean - b.mean).abs() <= 3.0 * joint(a.std_error, b.std_error));
}

#[test]
fn zero_rule_reward_gap_is_exactly_zero() {
    let model = stress().model().unwrap();
    let y0 = VecState::initial(&model).unwrap();
    let eps = RegularizationConfig::default_epsilon(&model);
    for p in reward_gap(&model, &DecisionRule::zero(), &y0, &[1, 10, 1000], eps, 100, &opts(100), &SeedTree::new(1)).unwrap() {
        assert_eq!((p.diff.mean, p.diff.std_error), (0.0, 0.0));
    }
}

#[test]
fn exponential_moments_are_uniform_in_k() {
    let model = stress().model().unwrap();
    let y0 = VecState::initial(&model).unwrap();
    let rule = DecisionRule::myopic(&model, dpe::default_clip(&model).unwrap()).unwrap();
    let moment = |k, seed| {
        let cfg = RegularizationConfig::with_k(&model, k).unwrap();
        exp_moment_diag(&model, &rule, &y0, 0.5, Some(&cfg), 4000, &opts(200), &SeedTree::new(seed)).unwrap()
    };
    let (a, b) = (moment(100, 20), moment(10_000, 21));
    assert!(!a.unstable && !b.unstable);
    let (a, b) = (a.estimate, b.estimate);
    assert!((a.mean - b.mean).abs() <= 3.0 * joint(a.std_error, b.std_error), "{a:?} {b:?}");
    assert!(exp_moment_diag(&model, &rule, &y0, 0.0, None, 10, &opts(10), &SeedTree::new(1)).is_err());
}

#[test]
fn singleton_report_has_one_row_per_metric() {
    let model = stress().model().unwrap();
    let rule = DecisionRule::myopic(&model, dpe::default_clip(&model).unwrap()).unwrap();
    let grid = Grid2D::for_model(&model, 41, 11, 6).unwrap();
    let settings = LabSettings {
        k_values: vec![1000],
        epsilon: RegularizationConfig::default_epsilon(&model),
        delta: 0.5,
        n_paths: 200,
        eps_grid: Some((grid, DpeOptions::default())),
    };
    let r = regularization::convergence_report(&model, &rule, &settings, &opts(100), &SeedTree::new(1)).unwrap();
    r.validate().unwrap();
    assert_eq!(r.l2_gaps.len(), 1);
    assert_eq!(r.eps_opt_gaps.len(), 1);
    let rows = r.flat_rows();
    assert!(rows.iter().all(|row| row.0 == 1000));
    assert_eq!(rows.len(), 6);
}

/// With large drift uncertainty the k = 1 rule is visibly suboptimal.
#[test]
fn small_k_rules_lose_reward() {
    let model = stress().model().unwrap();
    let grid = Grid2D::for_model(&model, 81, 41, 21).unwrap();
    let eps = RegularizationConfig::default_epsilon(&model);
    let rule = |k| {
        let cfg = RegularizationConfig::new(&model, eps, Some(k)).unwrap();
        let g = regularization::regularized_grid(&model, &grid, &cfg).unwrap();
        let o = DpeOptions { min_substeps: 4, regularization: Some(cfg), ..Default::default() };
        dpe::optimal_rule(&model, &dpe::solve_dpe(&model, &g, &o).unwrap()).unwrap()
    };
    let y0 = VecState::initial(&model).unwrap();
    let p = eval::compare_rules(&model, &rule(10_000), &rule(1), &y0, 4000, &opts(500), &SeedTree::new(4)).unwrap();
    assert!(p.diff.mean > p.diff.std_error, "{:?}", p.diff);
}
