//! The five subcommands. Each writes its artifacts plus a copy of the
//! resolved configuration into the output directory and returns a summary.

use std::path::{Path, PathBuf};
use std::time::Instant;

use driftlab::dpe::{self, DpeOptions};
use driftlab::eval::{self, McOptions};
use driftlab::filter::{bound_violations, run_filter, FilterPath};
use driftlab::io::{self, LedgerRow};
use driftlab::market::{simulate_bundle, BundleOptions, PathBundle};
use driftlab::oracles;
use driftlab::par::{self, Execution};
use driftlab::regularization::{self, LabSettings};
use driftlab::rng::SeedTree;
use driftlab::rule::DecisionRule;
use driftlab::state_space::VecState;
use driftlab::stats::Estimate;
use driftlab::Model;
use nalgebra::DVector;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{Resolved, RuleName};
use crate::CliError;

pub const RESOLVED_CONFIG: &str = "resolved_config.json";
pub const LEDGER: &str = "ledger.csv";

type Res<T> = Result<T, CliError>;

fn prepare(r: &Resolved) -> Res<PathBuf> {
    let out = r.config.output.dir.clone();
    std::fs::create_dir_all(&out)?;
    io::write_json(&out.join(RESOLVED_CONFIG), &r.config)?;
    Ok(out)
}

fn mc_options(r: &Resolved, exec: Execution) -> McOptions {
    McOptions { n_steps: r.n_steps, exec }
}

fn write_summary(r: &Resolved, out: &Path, name: &str, summary: &Value) -> Res<()> {
    if r.config.output.json() {
        io::write_json(&out.join(name), summary)?;
    }
    Ok(())
}

fn mean_vec(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.len().max(1) as f64;
    let d = rows.first().map_or(0, Vec::len);
    (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect()
}

/// Draw `mc.n_bundles` scenarios and write `bundle_NNNN.csv` / `views_NNNN.csv`.
pub fn simulate(r: &Resolved, exec: Execution) -> Res<Value> {
    let out = prepare(r)?;
    let seeds = SeedTree::new(r.config.mc.seed);
    let opts = BundleOptions { n_steps: r.n_steps };
    let csv = r.config.output.csv();
    let n = r.config.mc.n_bundles;
    let stats = par::map_indexed(exec, n, |i| -> Res<(usize, Vec<f64>, Vec<f64>)> {
        let b = simulate_bundle(&r.model, &opts, &seeds, i as u64)?;
        if csv {
            io::write_bundle_csv(&out.join(format!("bundle_{i:04}.csv")), &b)?;
            io::write_views_csv(&out.join(format!("views_{i:04}.csv")), &b)?;
        }
        let last = b.grid.len() - 1;
        Ok((b.views.len(), b.drift_at(last).to_vec(), b.return_at(last).to_vec()))
    });
    let stats: Vec<_> = stats.into_iter().collect::<Res<_>>()?;
    let views: usize = stats.iter().map(|s| s.0).sum();
    let drift: Vec<Vec<f64>> = stats.iter().map(|s| s.1.clone()).collect();
    let ret: Vec<Vec<f64>> = stats.iter().map(|s| s.2.clone()).collect();
    let summary = json!({
        "command": "simulate",
        "n_bundles": n,
        "n_steps": r.n_steps,
        "views_total": views,
        "views_per_bundle": views as f64 / n.max(1) as f64,
        "mean_terminal_drift": mean_vec(&drift),
        "mean_terminal_return": mean_vec(&ret),
    });
    write_summary(r, &out, "simulate_summary.json", &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct Probe {
    pub t: f64,
    /// `E|mu_t - M_t|^2`.
    pub mse: Estimate,
    /// `E tr Q_t`.
    pub mean_q: Estimate,
    /// Per-bundle difference `|mu - M|^2 - tr Q`.
    pub diff: Estimate,
    pub z: f64,
}

struct FilterStats {
    violations: usize,
    max_q_norm: f64,
    err: Vec<f64>,
    trq: Vec<f64>,
}

fn probe_stats(b: &PathBundle, f: &FilterPath, probes: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let d = b.d;
    probes
        .iter()
        .map(|&tp| {
            let i = b.grid.partition_point(|&t| t < tp - 1e-12).min(b.grid.len() - 1);
            let row = f.grid_row[i];
            let e: f64 = b.drift_at(i).iter().zip(f.m_at(row)).map(|(a, m)| (a - m).powi(2)).sum();
            let q = f.q_at(row);
            (e, (0..d).map(|k| q[(k, k)]).sum::<f64>())
        })
        .unzip()
}

/// Filter `mc.n_paths` bundles from the prior; write the first
/// `mc.n_bundles` paths and report MSE consistency and the covariance bound.
pub fn filter(r: &Resolved, exec: Execution) -> Res<Value> {
    let out = prepare(r)?;
    let model = &r.model;
    let p = model.params();
    let seeds = SeedTree::new(r.config.mc.seed);
    let opts = BundleOptions { n_steps: r.n_steps };
    let (n, dump) = (r.config.mc.n_paths, r.config.mc.n_bundles);
    let csv = r.config.output.csv();
    let horizon = model.horizon();
    let probes: Vec<f64> = (1..=10).map(|k| horizon * k as f64 / 10.0).collect();
    let res = par::map_indexed(exec, n.max(dump), |i| -> Res<FilterStats> {
        let b = simulate_bundle(model, &opts, &seeds, i as u64)?;
        let f = run_filter(model, &b, &p.m0, &p.q0)?;
        if csv && i < dump {
            io::write_filter_csv(&out.join(format!("filter_{i:04}.csv")), &f)?;
        }
        let (err, trq) = probe_stats(&b, &f, &probes);
        Ok(FilterStats { violations: bound_violations(model, &f), max_q_norm: f.max_q_norm(), err, trq })
    });
    let res: Vec<FilterStats> = res.into_iter().take(n).collect::<Res<_>>()?;
    let violations: usize = res.iter().map(|s| s.violations).sum();
    let max_q = res.iter().map(|s| s.max_q_norm).fold(0.0, f64::max);
    let probe_rows: Vec<Probe> = probes
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let e: Vec<f64> = res.iter().map(|s| s.err[k]).collect();
            let q: Vec<f64> = res.iter().map(|s| s.trq[k]).collect();
            let d: Vec<f64> = e.iter().zip(&q).map(|(a, b)| a - b).collect();
            let diff = Estimate::from_samples(&d);
            Probe {
                t,
                mse: Estimate::from_samples(&e),
                mean_q: Estimate::from_samples(&q),
                z: if diff.std_error > 0.0 { diff.mean / diff.std_error } else { 0.0 },
                diff,
            }
        })
        .collect();
    let max_z = probe_rows.iter().map(|p| p.z.abs()).fold(0.0, f64::max);
    let summary = json!({
        "command": "filter",
        "n_bundles": n,
        "paths_written": if csv { dump } else { 0 },
        "cov_bound": model.cov_bound,
        "max_q_norm": max_q,
        "bound_violations": violations,
        "mse_probes": probe_rows,
        "mse_max_abs_z": max_z,
        "mse_consistent": max_z <= 3.0,
    });
    write_summary(r, &out, "filter_summary.json", &summary)?;
    if violations > 0 {
        return Err(CliError::from(driftlab::Error::Consistency(format!(
            "{violations} covariance bound violations (C_Q = {})",
            model.cov_bound
        ))));
    }
    Ok(summary)
}

fn dpe_options(r: &Resolved, exec: Execution) -> DpeOptions {
    let g = &r.config.grid;
    DpeOptions {
        gh_order: g.gh_order,
        regularization: None,
        min_substeps: g.min_substeps,
        max_steps: g.max_steps,
        exec,
    }
}

fn lattice(r: &Resolved) -> Res<driftlab::grid::Grid2D> {
    r.grid.ok_or_else(|| CliError::config("model.d: the lattice solver supports d = 1 only"))
}

/// Solve the one-asset equation; write the value grid, its sidecar and the
/// rule table.
pub fn solve(r: &Resolved, exec: Execution) -> Res<Value> {
    let grid = lattice(r)?;
    let out = prepare(r)?;
    let model = &r.model;
    let vg = dpe::solve_dpe(model, &grid, &dpe_options(r, exec))?;
    let rule = dpe::optimal_rule(model, &vg)?;
    if r.config.output.csv() {
        io::write_value_grid(&out.join("value_grid.csv"), &out.join("value_grid.json"), model, &vg)?;
        write_rule_table(&out.join("rule_table.csv"), &vg, &rule)?;
    }
    let mut summary = json!({
        "command": "solve",
        "value_at_prior": dpe::initial_value(model, &vg),
        "original_value_at_prior": eval::original_value(
            model.params().x0, model.theta(), dpe::initial_value(model, &vg))?,
        "terminal_slice_is_one": vg.slice(grid.t.n - 1).iter().all(|v| *v == 1.0),
        "rule_clip": rule.clip,
        "diagnostics": vg.diagnostics,
    });
    if model.lambda() == 0.0 {
        let c = oracles::compare_with_ansatz(model, &vg, &rule, 2000)?;
        summary["ansatz_oracle"] = serde_json::to_value(c).map_err(driftlab::Error::from)?;
    }
    let s = model.scalar().expect("one-asset model");
    if s.sigma_mu_cov == 0.0 && s.kappa == 0.0 {
        summary["merton_row_max_rel_error"] = json!(oracles::merton_row_error(model, &vg)?);
    }
    write_summary(r, &out, "solve_summary.json", &summary)?;
    Ok(summary)
}

fn write_rule_table(path: &Path, vg: &dpe::ValueGrid, rule: &DecisionRule) -> Res<()> {
    let g = &vg.grid;
    let header: Vec<String> = ["t", "m", "q", "Pi_star"].iter().map(|s| s.to_string()).collect();
    let rows = (0..g.t.n).flat_map(|i| {
        (0..g.q.n).flat_map(move |l| {
            (0..g.m.n).map(move |j| {
                let (t, m, q) = (g.t.at(i), g.m.at(j), g.q.at(l));
                [t, m, q, rule.eval_scalar(t, m, q)].into_iter().map(io::fmt_f64).collect()
            })
        })
    });
    Ok(io::write_csv(path, &header, rows)?)
}

fn clip(r: &Resolved) -> Res<f64> {
    match r.config.evaluate.clip {
        Some(c) => Ok(c),
        None => Ok(dpe::default_clip(&r.model)?),
    }
}

fn build_rule(r: &Resolved, name: RuleName, exec: Execution) -> Res<DecisionRule> {
    let model = &r.model;
    let c = clip(r)?;
    Ok(match name {
        RuleName::Zero => DecisionRule::zero(),
        RuleName::Constant => {
            let p = r.config.evaluate.constant.clone().expect("validated at resolution");
            DecisionRule::constant(DVector::from_vec(p), c)?
        }
        RuleName::Myopic => DecisionRule::myopic(model, c)?,
        RuleName::Optimal => {
            let vg = dpe::solve_dpe(model, &lattice(r)?, &dpe_options(r, exec))?;
            dpe::optimal_rule(model, &vg)?
        }
    })
}

fn z(e: &Estimate) -> f64 {
    if e.std_error > 0.0 {
        e.mean / e.std_error
    } else if e.mean == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Estimate the reward of each configured rule `evaluate.runs` times and
/// append one ledger row per estimate (plus identity-check rows).
pub fn evaluate(r: &Resolved, exec: Execution) -> Res<Value> {
    let out = prepare(r)?;
    let model = &r.model;
    let cfg = &r.config;
    let seed = cfg.mc.seed;
    let seeds = SeedTree::new(seed);
    let opts = mc_options(r, exec);
    let y0 = VecState::initial(model)?;
    let n = cfg.mc.n_paths;
    let rules: Vec<(RuleName, DecisionRule)> = cfg
        .evaluate
        .rules
        .iter()
        .map(|&name| build_rule(r, name, exec).map(|rule| (name, rule)))
        .collect::<Res<_>>()?;
    let mut ledger = Vec::new();
    let mut estimates = Vec::new();
    for run in 0..cfg.evaluate.runs {
        let run_seeds = seeds.child(&format!("run{run}"));
        for (name, rule) in &rules {
            let start = Instant::now();
            let est = eval::reward_mc(model, rule, 0.0, &y0, n, None, &opts, &run_seeds)?;
            ledger.push(LedgerRow {
                run_id: format!("{seed}-{run}-{}", name.as_str()),
                rule_kind: name.as_str().to_string(),
                theta: model.theta(),
                lambda: model.lambda(),
                n_paths: n,
                estimate: est.estimate.mean,
                std_error: est.estimate.std_error,
                seed,
                wall_time_s: start.elapsed().as_secs_f64(),
            });
            estimates.push(json!({
                "run": run,
                "rule": name.as_str(),
                "estimate": est.estimate,
                "rejected": est.rejected,
                "eta": est.eta_summary,
            }));
        }
    }
    let mut identity = Vec::new();
    if cfg.evaluate.identity_check {
        let id_seeds = seeds.child("identity");
        for (name, rule) in &rules {
            let start = Instant::now();
            let p = eval::identity_check(model, rule, n, &opts, &id_seeds)?;
            ledger.push(LedgerRow {
                run_id: format!("{seed}-identity-{}", name.as_str()),
                rule_kind: format!("identity_{}", name.as_str()),
                theta: model.theta(),
                lambda: model.lambda(),
                n_paths: n,
                estimate: p.diff.mean,
                std_error: p.diff.std_error,
                seed,
                wall_time_s: start.elapsed().as_secs_f64(),
            });
            identity.push(json!({
                "rule": name.as_str(),
                "utility": p.a,
                "scaled_reward": p.b,
                "difference": p.diff,
                "z": z(&p.diff),
                "pass": z(&p.diff).abs() <= 3.0,
            }));
        }
    }
    io::append_ledger(&out.join(LEDGER), &ledger)?;
    let summary = json!({
        "command": "evaluate",
        "n_paths": n,
        "ledger_rows": ledger.len(),
        "estimates": estimates,
        "identity": identity,
    });
    write_summary(r, &out, "evaluate_summary.json", &summary)?;
    Ok(summary)
}

/// Convergence report of the regularized dynamics.
pub fn regularize(r: &Resolved, exec: Execution) -> Res<Value> {
    let out = prepare(r)?;
    let model: &Model = &r.model;
    let cfg = &r.config.regularization;
    let rule = build_rule(r, cfg.rule, exec)?;
    let eps_grid = if cfg.eps_optimality {
        Some((lattice(r)?, dpe_options(r, exec)))
    } else {
        None
    };
    let settings = LabSettings {
        k_values: cfg.k_list.clone(),
        epsilon: cfg.epsilon.expect("resolved"),
        delta: cfg.delta,
        n_paths: r.config.mc.n_paths,
        eps_grid,
    };
    let seeds = SeedTree::new(r.config.mc.seed);
    let report = regularization::convergence_report(model, &rule, &settings, &mc_options(r, exec), &seeds)?;
    if r.config.output.json() {
        io::write_json(&out.join("report.json"), &report)?;
    }
    if r.config.output.csv() {
        let header: Vec<String> = ["k", "metric", "estimate", "std_error"].iter().map(|s| s.to_string()).collect();
        let rows = report
            .flat_rows()
            .into_iter()
            .map(|(k, m, e, s)| vec![k.to_string(), m.to_string(), io::fmt_f64(e), io::fmt_f64(s)]);
        io::write_csv(&out.join("report.csv"), &header, rows)?;
    }
    Ok(json!({
        "command": "regularize",
        "k_values": report.k_values,
        "l2_gaps": report.l2_gaps,
        "reward_gaps": report.reward_gaps,
        "eps_opt_gaps": report.eps_opt_gaps,
    }))
}
