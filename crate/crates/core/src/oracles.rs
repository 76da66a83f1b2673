//! Independent reference solutions used to validate the numerical modules.
//!
//! Nothing here shares code with the solver or the filter beyond the model
//! constants.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dpe::ValueGrid;
use crate::rule::DecisionRule;

use crate::error::{Error, Result};
use crate::market::{Model, PathBundle};
use crate::rng::{self, SeedTree};
use crate::stats;

/// Coefficients of `log V = A + B m + C m^2` for the one-asset problem
/// without expert views.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ansatz {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Ansatz {
    pub fn log_value(&self, m: f64) -> f64 {
        self.a + self.b * m + self.c * m * m
    }

    /// `(m + q (B + 2 C m)) / ((1 - theta) Sigma_R)`.
    pub fn rule(&self, model: &Model, m: f64, q: f64) -> f64 {
        let s = model.scalar().expect("one-asset model");
        (m + q * (self.b + 2.0 * self.c * m)) / ((1.0 - s.theta) * s.sigma_r_cov)
    }
}

/// Exponential-quadratic solution at `(t, q)` for `lambda = 0`.
///
/// Along the variance characteristic `q' = Sigma_mu - 2 kappa q - q^2/Sigma_R`
/// started at `(t, q)`, the coefficients solve (with `c1 = theta/(1-theta)`,
/// `a = 1/Sigma_R`, `e = c1 a q - kappa`)
///
/// ```text
/// C' = -(2 e C + 2 a q^2 C^2 / (1-theta) + c1 a / 2)
/// B' = -(2 kappa mu_bar C + e B + 2 a q^2 B C / (1-theta))
/// A' = -(kappa mu_bar B + a q^2 C + a q^2 B^2 / (2 (1-theta)))
/// ```
///
/// backward from `A = B = C = 0` at `T`, integrated with `steps` RK4 steps.
pub fn ansatz(model: &Model, t: f64, q: f64, steps: usize) -> Result<Ansatz> {
    let s = model
        .scalar()
        .ok_or_else(|| Error::Parameter("the ansatz oracle is one-asset only".into()))?;
    if model.lambda() != 0.0 {
        return Err(Error::Parameter("the ansatz oracle requires lambda = 0".into()));
    }
    let horizon = model.horizon();
    if !(t <= horizon) || steps == 0 {
        return Err(Error::Parameter(format!("invalid oracle request t={t}, steps={steps}")));
    }
    if t == horizon {
        return Ok(Ansatz { a: 0.0, b: 0.0, c: 0.0 });
    }
    let h = (horizon - t) / steps as f64;
    let qdot = |q: f64| s.sigma_mu_cov - 2.0 * s.kappa * q - q * q / s.sigma_r_cov;
    // Forward pass: variance at nodes and midpoints.
    let mut qs = Vec::with_capacity(2 * steps + 1);
    qs.push(q);
    let mut x = q;
    let rk = |x: f64, h: f64| {
        let k1 = qdot(x);
        let k2 = qdot(x + 0.5 * h * k1);
        let k3 = qdot(x + 0.5 * h * k2);
        let k4 = qdot(x + h * k3);
        x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    };
    for _ in 0..steps {
        qs.push(rk(x, 0.5 * h));
        x = rk(x, h);
        qs.push(x);
    }
    let th = s.theta;
    let a = 1.0 / s.sigma_r_cov;
    let c1 = th / (1.0 - th);
    let (k, mb) = (s.kappa, s.mu_bar);
    // Derivatives with respect to time, given the variance on the characteristic.
    let rhs = |q: f64, y: [f64; 3]| -> [f64; 3] {
        let [_, b, c] = y;
        let e = c1 * a * q - k;
        let dc = -(2.0 * e * c + 2.0 * a * q * q * c * c / (1.0 - th) + 0.5 * c1 * a);
        let db = -(2.0 * k * mb * c + e * b + 2.0 * a * q * q * b * c / (1.0 - th));
        let da = -(k * mb * b + a * q * q * c + 0.5 * a * q * q * b * b / (1.0 - th));
        [da, db, dc]
    };
    let add = |y: [f64; 3], k: [f64; 3], f: f64| [y[0] + f * k[0], y[1] + f * k[1], y[2] + f * k[2]];
    let mut y = [0.0; 3];
    for n in (0..steps).rev() {
        let (q1, qm, q0) = (qs[2 * n + 2], qs[2 * n + 1], qs[2 * n]);
        // Step backward in time: dt = -h.
        let k1 = rhs(q1, y);
        let k2 = rhs(qm, add(y, k1, -0.5 * h));
        let k3 = rhs(qm, add(y, k2, -0.5 * h));
        let k4 = rhs(q0, add(y, k3, -h));
        for i in 0..3 {
            y[i] -= h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    Ok(Ansatz { a: y[0], b: y[1], c: y[2] })
}

/// Full-information log-value `theta m^2 (T - t) / (2 (1 - theta) Sigma_R)`
/// for a constant drift `m`.
pub fn merton_log_value(model: &Model, t: f64, m: f64) -> f64 {
    let s = model.scalar().expect("one-asset model");
    s.theta * m * m * (model.horizon() - t) / (2.0 * (1.0 - s.theta) * s.sigma_r_cov)
}

/// Worst deviations of a solved lattice from the ansatz oracle over the
/// middle half of the m- and q-axes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleComparison {
    /// `max |V / V_oracle - 1|`.
    pub max_rel_value: f64,
    /// `max |Pi* - Pi_oracle| / max(1, |Pi_oracle|)`.
    pub max_rule_error: f64,
    pub points: usize,
}

pub fn compare_with_ansatz(model: &Model, vg: &ValueGrid, rule: &DecisionRule, steps: usize) -> Result<OracleComparison> {
    let g = &vg.grid;
    let (nm, nq) = (g.m.n, g.q.n);
    let mut out = OracleComparison { max_rel_value: 0.0, max_rule_error: 0.0, points: 0 };
    for i in 0..g.t.n {
        let t = g.t.at(i);
        for l in nq / 4..=3 * nq / 4 {
            let q = g.q.at(l);
            let a = ansatz(model, t, q, steps)?;
            for j in nm / 4..=3 * nm / 4 {
                let m = g.m.at(j);
                let rel = (vg.value(i, j, l) / a.log_value(m).exp() - 1.0).abs();
                let want = a.rule(model, m, q);
                let err = (rule.eval_scalar(t, m, q) - want).abs() / want.abs().max(1.0);
                out.max_rel_value = out.max_rel_value.max(rel);
                out.max_rule_error = out.max_rule_error.max(err);
                out.points += 1;
            }
        }
    }
    Ok(out)
}

/// `max |V(t, m, 0) / V_Merton - 1|` over the `q = 0` row.
pub fn merton_row_error(model: &Model, vg: &ValueGrid) -> Result<f64> {
    let g = &vg.grid;
    if g.q.lo != 0.0 {
        return Err(Error::Grid("the q-axis does not start at 0".into()));
    }
    let mut worst: f64 = 0.0;
    for i in 0..g.t.n {
        for j in 0..g.m.n {
            let exact = merton_log_value(model, g.t.at(i), g.m.at(j)).exp();
            worst = worst.max((vg.value(i, j, 0) / exact - 1.0).abs());
        }
    }
    Ok(worst)
}

/// Bootstrap particle filter for the one-asset model: posterior mean of the
/// drift at every grid point of `bundle` (after absorbing any view there).
/// Particles move with the exact OU transition and are weighted by the
/// Euler likelihood of each return increment and by the view likelihood.
pub fn particle_filter(model: &Model, bundle: &PathBundle, n: usize, seeds: &SeedTree, index: u64) -> Result<Vec<f64>> {
    let p = model.params();
    if p.d != 1 || n == 0 {
        return Err(Error::Parameter("particle filter needs d = 1 and n > 0".into()));
    }
    let kappa = p.kappa[(0, 0)];
    let mu_bar = p.mu_bar[0];
    let smu = p.sigma_mu[(0, 0)].powi(2);
    let sr = p.sigma_r[(0, 0)].powi(2);
    let gamma = p.gamma[(0, 0)];
    let mut rng = seeds.stream(rng::PARTICLES, index);
    let m0 = p.m0[0];
    let s0 = p.q0[(0, 0)].sqrt();
    let mut x: Vec<f64> = (0..n).map(|_| m0 + s0 * rng::normal(&mut rng)).collect();
    let mut logw = vec![0.0; n];
    let mut out = Vec::with_capacity(bundle.grid.len());
    let weighted_mean = |x: &[f64], logw: &[f64]| {
        let mx = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logw.iter().map(|l| (l - mx).exp()).collect();
        let num: Vec<f64> = w.iter().zip(x).map(|(w, x)| w * x).collect();
        stats::pairwise_sum(&num) / stats::pairwise_sum(&w)
    };
    out.push(weighted_mean(&x, &logw));
    let mut view = 0;
    let mut scratch = vec![0.0; n];
    for i in 0..bundle.n_steps() {
        let h = bundle.grid[i + 1] - bundle.grid[i];
        let dr = bundle.return_path[i + 1] - bundle.return_path[i];
        let phi = (-kappa * h).exp();
        let sd = if kappa.abs() * h < 1e-8 {
            (smu * h).sqrt()
        } else {
            (smu * (1.0 - phi * phi) / (2.0 * kappa)).sqrt()
        };
        for (xi, lw) in x.iter_mut().zip(logw.iter_mut()) {
            // Return increment over the step uses the drift at its start.
            let r = dr - *xi * h;
            *lw -= r * r / (2.0 * sr * h);
            *xi = mu_bar + phi * (*xi - mu_bar) + sd * rng::normal(&mut rng);
        }
        if view < bundle.view_steps.len() && bundle.view_steps[view] == i + 1 {
            let z = bundle.views[view].value[0];
            for (xi, lw) in x.iter().zip(logw.iter_mut()) {
                *lw -= (z - xi).powi(2) / (2.0 * gamma);
            }
            view += 1;
        }
        out.push(weighted_mean(&x, &logw));
        // Systematic resampling when the effective sample size drops below n/2.
        let mx = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logw.iter().map(|l| (l - mx).exp()).collect();
        let sw = stats::pairwise_sum(&w);
        let sq: Vec<f64> = w.iter().map(|w| w * w).collect();
        let ess = sw * sw / stats::pairwise_sum(&sq);
        if ess < 0.5 * n as f64 {
            let step = sw / n as f64;
            let mut u = rng.random::<f64>() * step;
            let mut acc = w[0];
            let mut k = 0;
            for s in scratch.iter_mut() {
                while acc < u && k + 1 < n {
                    k += 1;
                    acc += w[k];
                }
                *s = x[k];
                u += step;
            }
            std::mem::swap(&mut x, &mut scratch);
            logw.iter_mut().for_each(|l| *l = 0.0);
        }
    }
    Ok(out)
}
