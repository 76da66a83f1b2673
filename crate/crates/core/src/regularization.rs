//! Regularization experiments: regularized and unregularized states on
//! shared noise, convergence of states, rewards and values as the
//! perturbation index `k` grows, and epsilon-optimality of the regularized
//! optimal rules.

use serde::{Deserialize, Serialize};

use crate::dpe::{self, DpeOptions};
use crate::error::{Error, Result};
use crate::eval::{self, McOptions, Paired};
use crate::grid::{Axis, Grid2D};
use crate::linalg;
use crate::market::Model;
use crate::par;
use crate::rng::SeedTree;
use crate::rule::DecisionRule;
use crate::state_space::{simulate_state, RegularizationConfig, StateNoise, VecState};
use crate::stats::{self, Estimate};

/// `E[max_t |kY_t - Y_t|^2]` (max norm) on shared returns noise, arrivals
/// and marks; the perturbation is independent.
#[allow(clippy::too_many_arguments)]
pub fn coupled_gap(
    model: &Model,
    rule: &DecisionRule,
    y0: &VecState,
    cfg: &RegularizationConfig,
    n_paths: usize,
    opts: &McOptions,
    seeds: &SeedTree,
) -> Result<Estimate> {
    if cfg.k.is_none() {
        return Err(Error::Parameter("coupled gap needs a perturbation index k".into()));
    }
    let gaps = par::map_indexed(opts.exec, n_paths, |i| -> Result<f64> {
        let noise = StateNoise::generate(model, &opts.bundle(), 0.0, seeds, i as u64, true)?;
        let base = simulate_state(model, y0, rule, &noise, None, true)?;
        let reg = simulate_state(model, y0, rule, &noise, Some(cfg), true)?;
        let worst = base
            .y
            .iter()
            .zip(&reg.y)
            .collect::<Vec<_>>()
            .chunks(model.d_y())
            .map(|c| c.iter().map(|(a, b)| (*a - *b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        Ok(worst * worst)
    });
    let gaps: Vec<f64> = gaps.into_iter().collect::<Result<_>>()?;
    Ok(Estimate::from_samples(&gaps))
}

/// `4 d_Y T / k`, the leading factor of the Gronwall bound.
pub fn gronwall_factor(model: &Model, k: u64) -> f64 {
    4.0 * model.d_y() as f64 * model.horizon() / k as f64
}

/// Paired estimates of `E[exp(k eta)] - E[exp(eta)]` for each `k`
/// (`a` regularized, `b` unregularized).
#[allow(clippy::too_many_arguments)]
pub fn reward_gap(
    model: &Model,
    rule: &DecisionRule,
    y0: &VecState,
    k_list: &[u64],
    epsilon: f64,
    n_paths: usize,
    opts: &McOptions,
    seeds: &SeedTree,
) -> Result<Vec<Paired>> {
    let cfgs: Vec<RegularizationConfig> = k_list
        .iter()
        .map(|&k| RegularizationConfig::new(model, epsilon, Some(k)))
        .collect::<Result<_>>()?;
    let rows = par::map_indexed(opts.exec, n_paths, |i| -> Result<Vec<f64>> {
        let noise = StateNoise::generate(model, &opts.bundle(), 0.0, seeds, i as u64, true)?;
        let mut out = Vec::with_capacity(cfgs.len() + 1);
        out.push(simulate_state(model, y0, rule, &noise, None, false)?.eta.exp());
        for c in &cfgs {
            out.push(simulate_state(model, y0, rule, &noise, Some(c), false)?.eta.exp());
        }
        Ok(out)
    });
    let rows: Vec<Vec<f64>> = rows.into_iter().collect::<Result<_>>()?;
    let base: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    (0..cfgs.len())
        .map(|c| {
            let reg: Vec<f64> = rows.iter().map(|r| r[c + 1]).collect();
            Paired::from_samples(&reg, &base)
        })
        .collect()
}

/// Exponential moment diagnostic for the integrated running reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpMoment {
    /// Estimate of `E[exp((1 + delta) k eta)]`.
    pub estimate: Estimate,
    /// Largest sampled exponent, flags heavy tails.
    pub max_exponent: f64,
    pub non_finite: usize,
    /// More than 1% non-finite exponents.
    pub unstable: bool,
}

#[allow(clippy::too_many_arguments)]
pub fn exp_moment_diag(
    model: &Model,
    rule: &DecisionRule,
    y0: &VecState,
    delta: f64,
    cfg: Option<&RegularizationConfig>,
    n_paths: usize,
    opts: &McOptions,
    seeds: &SeedTree,
) -> Result<ExpMoment> {
    if !(delta > 0.0) {
        return Err(Error::Parameter(format!("delta must be > 0, got {delta}")));
    }
    let eta = eval::eta_samples(model, rule, 0.0, y0, n_paths, cfg, opts, seeds)?;
    Ok(exp_moment_from_eta(&eta, delta))
}

/// Moment diagnostic from precomputed `eta` samples.
pub fn exp_moment_from_eta(eta: &[f64], delta: f64) -> ExpMoment {
    let x: Vec<f64> = eta.iter().map(|e| (1.0 + delta) * e).collect();
    let ok: Vec<f64> = x.iter().copied().filter(|v| v.is_finite()).collect();
    let non_finite = x.len() - ok.len();
    ExpMoment {
        estimate: stats::exp_mean(&ok),
        max_exponent: ok.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        non_finite,
        unstable: non_finite as f64 > 0.01 * x.len() as f64,
    }
}

/// Lattice for the regularized equation: the q-axis extends `2 epsilon`
/// beyond `[0, K_G]` at the same spacing, the m-axis by four standard
/// deviations of the perturbation over the horizon.
pub fn regularized_grid(model: &Model, base: &Grid2D, cfg: &RegularizationConfig) -> Result<Grid2D> {
    let dq = base.q.step();
    let lo = -2.0 * cfg.epsilon;
    let hi = (model.cov_bound + 2.0 * cfg.epsilon).max(base.q.hi);
    let nq = ((hi - lo) / dq).ceil() as usize + 1;
    let q = Axis::new(lo, lo + (nq - 1) as f64 * dq, nq)?;
    let pad = 4.0 * cfg.noise_scale() * model.horizon().sqrt();
    let dm = base.m.step();
    let extra = (pad / dm).ceil() as usize;
    let m = Axis::new(
        base.m.lo - extra as f64 * dm,
        base.m.hi + extra as f64 * dm,
        base.m.n + 2 * extra,
    )?;
    Ok(Grid2D::new(m, q, base.t))
}

/// One row of the epsilon-optimality experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsOptRow {
    pub k: u64,
    /// `kV(0, y0)` from the regularized equation.
    pub regularized_value: f64,
    /// `D(0, y0; kPi*)` on the unregularized dynamics.
    pub reward: Estimate,
    /// `|V(0, y0) - D(0, y0; kPi*)|` with the reward's standard error.
    pub gap: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsOptimality {
    /// Unregularized value `V(0, y0)`.
    pub value: f64,
    /// Discretization error estimate of `value` from a refined solve.
    pub scheme_tolerance: f64,
    pub rows: Vec<EpsOptRow>,
}

/// `|V(grid) - V(refined grid)|` at `(0, m0, q0)`.
pub fn scheme_tolerance(model: &Model, grid: &Grid2D, opts: &DpeOptions) -> Result<(f64, f64)> {
    let coarse = dpe::solve_dpe(model, grid, opts)?;
    let fine_grid = grid.refined(2)?;
    let fine_opts = DpeOptions { min_substeps: 2 * opts.min_substeps.max(1), ..opts.clone() };
    let fine = dpe::solve_dpe(model, &fine_grid, &fine_opts)?;
    let v = dpe::initial_value(model, &coarse);
    Ok((v, (v - dpe::initial_value(model, &fine)).abs()))
}

/// For each `k`: solve the regularized equation, extract its optimal rule,
/// evaluate it on the unregularized dynamics and compare with the
/// unregularized value.
#[allow(clippy::too_many_arguments)]
pub fn eps_optimality(
    model: &Model,
    grid: &Grid2D,
    dpe_opts: &DpeOptions,
    k_list: &[u64],
    epsilon: f64,
    n_paths: usize,
    opts: &McOptions,
    seeds: &SeedTree,
) -> Result<EpsOptimality> {
    let (value, tol) = scheme_tolerance(model, grid, dpe_opts)?;
    let y0 = VecState::initial(model)?;
    let p = model.params();
    let mut rows = Vec::with_capacity(k_list.len());
    for &k in k_list {
        let cfg = RegularizationConfig::new(model, epsilon, Some(k))?;
        let rg = regularized_grid(model, grid, &cfg)?;
        let o = DpeOptions { regularization: Some(cfg), ..dpe_opts.clone() };
        let vg = dpe::solve_dpe(model, &rg, &o).map_err(|e| match e {
            Error::Cfl(s) => Error::Cfl(format!("k={k}: {s}")),
            Error::Scheme(s) => Error::Scheme(format!("k={k}: {s}")),
            Error::Numerical(s) => Error::Numerical(format!("k={k}: {s}")),
            other => other,
        })?;
        let kv = vg.value_at(0.0, p.m0[0], p.q0[(0, 0)]);
        let rule = dpe::optimal_rule(model, &vg)?;
        let r = eval::reward_mc(model, &rule, 0.0, &y0, n_paths, None, opts, seeds)?;
        rows.push(EpsOptRow {
            k,
            regularized_value: kv,
            reward: r.estimate,
            gap: Estimate { mean: (value - r.estimate.mean).abs(), ..r.estimate },
        });
    }
    Ok(EpsOptimality { value, scheme_tolerance: tol, rows })
}

/// Summary of a regularization experiment, aligned with `k_values`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub k_values: Vec<u64>,
    pub epsilon: f64,
    pub delta: f64,
    pub rule: String,
    pub n_paths: usize,
    pub l2_gaps: Vec<Estimate>,
    pub gronwall_factors: Vec<f64>,
    pub reward_gaps: Vec<Estimate>,
    pub exp_moments: Vec<ExpMoment>,
    /// `|V - D(.; kPi*)|` per k; empty when the experiment was skipped.
    pub eps_opt_gaps: Vec<Estimate>,
    pub eps_opt: Option<EpsOptimality>,
}

impl ConvergenceReport {
    pub fn validate(&self) -> Result<()> {
        let n = self.k_values.len();
        if self.l2_gaps.len() != n || self.reward_gaps.len() != n || self.exp_moments.len() != n {
            return Err(Error::Consistency("report arrays are not aligned with k_values".into()));
        }
        if let Some(e) = &self.eps_opt {
            if e.rows.len() != n || self.eps_opt_gaps.len() != n {
                return Err(Error::Consistency("epsilon-optimality rows not aligned".into()));
            }
        }
        let finite = |e: &Estimate| e.mean.is_finite() && e.std_error.is_finite();
        if !self.l2_gaps.iter().chain(&self.reward_gaps).chain(&self.eps_opt_gaps).all(finite)
            || !self.exp_moments.iter().all(|m| finite(&m.estimate))
        {
            return Err(Error::Statistical("non-finite entries in the convergence report".into()));
        }
        Ok(())
    }

    /// Flat rows `(k, metric, estimate, std_error)`.
    pub fn flat_rows(&self) -> Vec<(u64, &'static str, f64, f64)> {
        let mut out = Vec::new();
        for (i, &k) in self.k_values.iter().enumerate() {
            out.push((k, "l2_gap", self.l2_gaps[i].mean, self.l2_gaps[i].std_error));
            out.push((k, "gronwall_factor", self.gronwall_factors[i], 0.0));
            out.push((k, "reward_gap", self.reward_gaps[i].mean, self.reward_gaps[i].std_error));
            let em = &self.exp_moments[i];
            out.push((k, "exp_moment", em.estimate.mean, em.estimate.std_error));
            if let Some(e) = &self.eps_opt {
                let r = &e.rows[i];
                out.push((k, "eps_opt_gap", r.gap.mean, r.gap.std_error));
                out.push((k, "regularized_value", r.regularized_value, 0.0));
            }
        }
        out
    }
}

/// Experiment settings for [`convergence_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct LabSettings {
    pub k_values: Vec<u64>,
    pub epsilon: f64,
    pub delta: f64,
    pub n_paths: usize,
    /// Lattice for the epsilon-optimality experiment (one-asset only).
    pub eps_grid: Option<(Grid2D, DpeOptions)>,
}

/// Run all regularization diagnostics for `rule` from the prior state.
pub fn convergence_report(
    model: &Model,
    rule: &DecisionRule,
    settings: &LabSettings,
    opts: &McOptions,
    seeds: &SeedTree,
) -> Result<ConvergenceReport> {
    if settings.k_values.is_empty() {
        return Err(Error::Parameter("k_values must not be empty".into()));
    }
    let y0 = VecState::initial(model)?;
    let mut l2 = Vec::new();
    let mut moments = Vec::new();
    for &k in &settings.k_values {
        let cfg = RegularizationConfig::new(model, settings.epsilon, Some(k))?;
        l2.push(coupled_gap(model, rule, &y0, &cfg, settings.n_paths, opts, &seeds.child("l2"))?);
        let em = exp_moment_diag(model, rule, &y0, settings.delta, Some(&cfg), settings.n_paths, opts, &seeds.child("moments"))?;
        if em.unstable {
            return Err(Error::Statistical(format!(
                "k={k}: {} of {} exponential moments are non-finite",
                em.non_finite, settings.n_paths
            )));
        }
        moments.push(em);
    }
    let rg = reward_gap(model, rule, &y0, &settings.k_values, settings.epsilon, settings.n_paths, opts, &seeds.child("reward"))?;
    let eps_opt = match &settings.eps_grid {
        Some((g, o)) => Some(eps_optimality(
            model,
            g,
            o,
            &settings.k_values,
            settings.epsilon,
            settings.n_paths,
            opts,
            &seeds.child("eps_opt"),
        )?),
        None => None,
    };
    let report = ConvergenceReport {
        k_values: settings.k_values.clone(),
        epsilon: settings.epsilon,
        delta: settings.delta,
        rule: rule.name().to_string(),
        n_paths: settings.n_paths,
        gronwall_factors: settings.k_values.iter().map(|&k| gronwall_factor(model, k)).collect(),
        l2_gaps: l2,
        reward_gaps: rg.iter().map(|p| Estimate { mean: p.diff.mean.abs(), ..p.diff }).collect(),
        exp_moments: moments,
        eps_opt_gaps: eps_opt.as_ref().map_or_else(Vec::new, |e| e.rows.iter().map(|r| r.gap).collect()),
        eps_opt,
    };
    report.validate()?;
    Ok(report)
}

/// Smallest eigenvalue of `beta beta^T + I/(2k)` at a state.
pub fn ellipticity(model: &Model, y: &VecState, p: &nalgebra::DVector<f64>, cfg: &RegularizationConfig) -> Result<f64> {
    let k = cfg.k.ok_or_else(|| Error::Parameter("ellipticity needs k".into()))?;
    let c = crate::state_space::extended_coeffs(model, y, p, cfg)?;
    Ok(linalg::min_eigenvalue(&c.ellipticity_matrix(k)))
}
