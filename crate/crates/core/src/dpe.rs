//! Lattice solver for the one-asset dynamic programming equation.
//!
//! The solver works with `L = log V` in time-to-maturity `tau = T - t`:
//!
//! ```text
//! L_tau = A L_m + D L_mm + G L_m^2 + P + R L_q + lambda (J/V - 1)
//!         [+ (L_mm + L_m^2 + L_qq + L_q^2) / (2k)]
//! ```
//!
//! with `A = f (kappa (mu_bar - m) + theta/(1-theta) q m / Sigma_R)`,
//! `D = f^2 q^2 / (2 Sigma_R)`, `G = f^2 q^2 / (2 (1-theta) Sigma_R)`,
//! `P = theta m^2 / (2 (1-theta) Sigma_R)`, `R = f * riccati(q)` and `f` the
//! taper of the regularized coefficients (1 without regularization).
//!
//! Each step is implicit in `m` per q-slice (the advection and the gradient
//! term linearized around the previous step), explicit upwind in `q`, with
//! the potential and jump terms explicit. Regularized runs add an implicit
//! q-diffusion sweep per m-line.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Axis, Grid2D};
use crate::market::{Model, ModelParams, ScalarModel};
use crate::par::{self, Execution};
use crate::rule::{DecisionRule, RuleTable};
use crate::state_space::{taper_scalar, RegularizationConfig};

/// Probabilists' Gauss–Hermite rule for a standard normal weight:
/// nodes and weights summing to one (Golub–Welsch).
pub fn gauss_hermite(order: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if order == 0 {
        return Err(Error::Parameter("quadrature order must be positive".into()));
    }
    let mut jac = DMatrix::zeros(order, order);
    for k in 1..order {
        let b = (k as f64).sqrt();
        jac[(k, k - 1)] = b;
        jac[(k - 1, k)] = b;
    }
    let eig = jac.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..order)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Symmetrize against round-off.
    for i in 0..order / 2 {
        let j = order - 1 - i;
        let x = 0.5 * (pairs[j].0 - pairs[i].0);
        let w = 0.5 * (pairs[i].1 + pairs[j].1);
        pairs[i] = (-x, w);
        pairs[j] = (x, w);
    }
    if order % 2 == 1 {
        pairs[order / 2].0 = 0.0;
    }
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    Ok((pairs.iter().map(|p| p.0).collect(), pairs.iter().map(|p| p.1 / total).collect()))
}

/// Bilinear interpolation on an `(m, q)` slice stored q-major; constant
/// outside. Returns the value and whether `m` was outside the axis.
#[inline]
fn bilinear(m_axis: &Axis, q_axis: &Axis, slice: &[f64], m: f64, q: f64) -> (f64, bool) {
    let nm = m_axis.n;
    let (j, wm) = m_axis.locate(m);
    let (l, wq) = q_axis.locate(q);
    let v = |l: usize, j: usize| slice[l * nm + j];
    let lo = v(l, j) * (1.0 - wm) + v(l, j + 1) * wm;
    let hi = v(l + 1, j) * (1.0 - wm) + v(l + 1, j + 1) * wm;
    (lo * (1.0 - wq) + hi * wq, !m_axis.contains(m))
}

/// Jump integral `int V(m + gamma_M(q,u), q + gamma_Q(q)) phi(u) du` of a
/// value slice `values[l * n_m + j]`, with bilinear interpolation. Post-jump
/// `q` is clamped to the axis; post-jump `m` outside the axis is held
/// constant and counted in the second return value.
pub fn jump_integral(
    model: &Model,
    grid: &Grid2D,
    values: &[f64],
    m: f64,
    q: f64,
    order: usize,
) -> Result<(f64, usize)> {
    let s = model
        .scalar()
        .ok_or_else(|| Error::Parameter("jump integral is one-asset only".into()))?;
    if values.len() != grid.m.n * grid.q.n {
        return Err(Error::Dimension { what: "value slice", expected: grid.m.n * grid.q.n, got: values.len() });
    }
    if order < 5 {
        return Err(Error::Parameter(format!("quadrature order must be >= 5, got {order}")));
    }
    let (nodes, weights) = gauss_hermite(order)?;
    let sq = q + s.gamma;
    let load = q / sq.sqrt();
    let q_post = (q - q * q / sq).clamp(grid.q.lo, grid.q.hi);
    let mut acc = 0.0;
    let mut outside = 0;
    for (u, w) in nodes.iter().zip(&weights) {
        let (v, out) = bilinear(&grid.m, &grid.q, values, m + load * u, q_post);
        acc += w * v;
        outside += usize::from(out);
    }
    Ok((acc, outside))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DpeOptions {
    /// Gauss–Hermite order of the jump integral.
    pub gh_order: usize,
    /// Regularized equation: tapered coefficients and, with `k`, the extra
    /// `(1/2k)` Laplacian.
    pub regularization: Option<RegularizationConfig>,
    /// Lower bound on internal steps per snapshot interval.
    pub min_substeps: usize,
    /// Abort with a CFL error if more internal steps would be needed.
    pub max_steps: usize,
    pub exec: Execution,
}

impl Default for DpeOptions {
    fn default() -> Self {
        Self {
            gh_order: 11,
            regularization: None,
            min_substeps: 1,
            max_steps: 5_000_000,
            exec: Execution::Sequential,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub steps: usize,
    pub dtau: f64,
    /// Jump-quadrature points that fell outside the m-axis.
    pub extrapolated: u64,
    pub jump_points: u64,
}

/// Value function on the lattice, `values[i][l][j] = V(t_i, m_j, q_l)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueGrid {
    pub grid: Grid2D,
    pub params: ModelParams,
    pub regularization: Option<RegularizationConfig>,
    pub values: Vec<f64>,
    pub diagnostics: SolveDiagnostics,
}

impl ValueGrid {
    #[inline]
    pub fn index(&self, i: usize, j: usize, l: usize) -> usize {
        (i * self.grid.q.n + l) * self.grid.m.n + j
    }

    pub fn value(&self, i: usize, j: usize, l: usize) -> f64 {
        self.values[self.index(i, j, l)]
    }

    pub fn slice(&self, i: usize) -> &[f64] {
        let n = self.grid.m.n * self.grid.q.n;
        &self.values[i * n..(i + 1) * n]
    }

    /// `V(t, m, q)`: log-bilinear in `(m, q)` at the snapshot nearest `t`
    /// from below, linear in `t` between snapshots.
    pub fn value_at(&self, t: f64, m: f64, q: f64) -> f64 {
        let (i, w) = self.grid.t.locate(t);
        let at = |i: usize| {
            let logs: Vec<f64> = self.slice(i).iter().map(|v| v.ln()).collect();
            bilinear(&self.grid.m, &self.grid.q, &logs, m, q).0
        };
        let a = at(i);
        if w == 0.0 {
            return a.exp();
        }
        (a * (1.0 - w) + at(i + 1) * w).exp()
    }
}

/// Per-slice coefficients.
struct Slice {
    f: f64,
    q: f64,
    diff: f64,
    grad: f64,
    adv_q: f64,
    /// Jump loading `f q / sqrt(q + Gamma)` and post-jump q.
    load: f64,
    q_post: f64,
}

fn slices(s: &ScalarModel, grid: &Grid2D, reg: Option<&RegularizationConfig>, k_g: f64) -> Vec<Slice> {
    let th = s.theta;
    let a = s.sigma_r_inv;
    let extra = reg.map_or(0.0, |c| c.k.map_or(0.0, |k| 0.5 / k as f64));
    (0..grid.q.n)
        .map(|l| {
            let q = grid.q.at(l);
            let f = reg.map_or(1.0, |c| taper_scalar(k_g, c.epsilon, q));
            let (load, q_post) = if f > 0.0 && q != 0.0 {
                let sq = q + s.gamma;
                (f * q / sq.sqrt(), q - f * q * q / sq)
            } else {
                (0.0, q)
            };
            Slice {
                f,
                q,
                diff: 0.5 * f * f * q * q * a + extra,
                grad: 0.5 * f * f * q * q * a / (1.0 - th) + extra,
                adv_q: f * s.riccati_rhs(q),
                load,
                q_post,
            }
        })
        .collect()
}

/// Solve the dynamic programming equation backward from `V(T) = 1`.
pub fn solve_dpe(model: &Model, grid: &Grid2D, opts: &DpeOptions) -> Result<ValueGrid> {
    let s = *model
        .scalar()
        .ok_or_else(|| Error::Parameter("the lattice solver supports d = 1 only".into()))?;
    let reg = opts.regularization.as_ref();
    match reg {
        Some(c) => c.validate(model)?,
        None => grid.validate(model)?,
    }
    if opts.gh_order < 5 {
        return Err(Error::Parameter(format!("quadrature order must be >= 5, got {}", opts.gh_order)));
    }
    if grid.m.n < 4 {
        return Err(Error::Grid("the m axis needs at least 4 points".into()));
    }
    let (nm, nq, nt) = (grid.m.n, grid.q.n, grid.t.n);
    let dm = grid.m.step();
    let dq = grid.q.step();
    let th = s.theta;
    let a = s.sigma_r_inv;
    let sl = slices(&s, grid, reg, model.cov_bound);
    let max_adv = sl.iter().map(|x| x.adv_q.abs()).fold(0.0, f64::max);
    let interval = grid.t.step();
    let cfl_dt = if max_adv > 0.0 { 0.4 * dq / max_adv } else { f64::INFINITY };
    let sub = ((interval / cfl_dt).ceil() as usize).max(opts.min_substeps).max(1);
    let dtau = interval / sub as f64;
    let total = sub * (nt - 1);
    if total > opts.max_steps {
        return Err(Error::Cfl(format!(
            "q-advection needs dtau <= {cfl_dt:e} (0.4 dq / max|alpha_Q|, dq={dq:e}, max|alpha_Q|={max_adv:e}); \
             {total} steps exceed the cap {}",
            opts.max_steps
        )));
    }
    if dtau * max_adv > 0.4 * dq * (1.0 + 1e-12) {
        return Err(Error::Cfl(format!("dtau={dtau:e} violates 0.4 dq / max|alpha_Q| = {cfl_dt:e}")));
    }

    let m_pts = grid.m.points();
    let potential: Vec<f64> = m_pts.iter().map(|m| 0.5 * th * a * m * m / (1.0 - th)).collect();
    let (nodes, weights) = gauss_hermite(opts.gh_order)?;
    let lambda = s.lambda;
    let k_extra = reg.and_then(|c| c.k).map(|k| 0.5 / k as f64);

    let mut values = vec![0.0; nt * nq * nm];
    let snap = (nt - 1) * nq * nm;
    values[snap..].iter_mut().for_each(|v| *v = 1.0);
    let mut lv = vec![0.0; nq * nm];
    let mut extrapolated = 0u64;
    let mut jump_points = 0u64;

    for i in (0..nt - 1).rev() {
        for _ in 0..sub {
            let old = &lv;
            let results = par::map_indexed(opts.exec, nq, |l| {
                step_slice(
                    l, old, &sl, grid, &m_pts, &potential, &s, dtau, dm, dq, lambda, &nodes, &weights,
                )
            });
            let mut next = Vec::with_capacity(nq * nm);
            for (row, out) in results {
                next.extend_from_slice(&row);
                extrapolated += out;
            }
            if lambda > 0.0 {
                jump_points += (nq * nm * nodes.len()) as u64;
            }
            if let Some(r) = k_extra {
                q_diffusion_sweep(&mut next, nm, nq, dq, dtau * r, opts.exec);
            }
            if let Some(bad) = next.iter().position(|x| !x.is_finite()) {
                return Err(Error::Scheme(format!(
                    "non-finite log-value at t={}, m={}, q={} (theta={}, lambda={}, dtau={dtau:e})",
                    grid.t.at(i),
                    grid.m.at(bad % nm),
                    grid.q.at(bad / nm),
                    th,
                    lambda
                )));
            }
            lv = next;
        }
        let off = i * nq * nm;
        for (dst, l) in values[off..off + nq * nm].iter_mut().zip(&lv) {
            *dst = l.exp();
        }
        if let Some(bad) = values[off..off + nq * nm].iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::Scheme(format!("value {bad} is not positive and finite at t={}", grid.t.at(i))));
        }
    }
    Ok(ValueGrid {
        grid: *grid,
        params: model.params().clone(),
        regularization: opts.regularization,
        values,
        diagnostics: SolveDiagnostics { steps: total, dtau, extrapolated, jump_points },
    })
}

#[allow(clippy::too_many_arguments)]
fn step_slice(
    l: usize,
    old: &[f64],
    sl: &[Slice],
    grid: &Grid2D,
    m_pts: &[f64],
    potential: &[f64],
    s: &ScalarModel,
    dtau: f64,
    dm: f64,
    dq: f64,
    lambda: f64,
    nodes: &[f64],
    weights: &[f64],
) -> (Vec<f64>, u64) {
    let nm = grid.m.n;
    let nq = grid.q.n;
    let c = &sl[l];
    let row = &old[l * nm..(l + 1) * nm];
    let mut rhs = vec![0.0; nm];
    let mut outside = 0u64;

    // Explicit part.
    let upwind: Option<&[f64]> = if c.adv_q > 0.0 && l + 1 < nq {
        Some(&old[(l + 1) * nm..(l + 2) * nm])
    } else if c.adv_q < 0.0 && l > 0 {
        Some(&old[(l - 1) * nm..l * nm])
    } else {
        None
    };
    let jump_line: Option<Vec<f64>> = (lambda > 0.0 && c.load != 0.0).then(|| {
        let (lq, wq) = grid.q.locate(c.q_post);
        let lo = &old[lq * nm..(lq + 1) * nm];
        let hi = &old[(lq + 1) * nm..(lq + 2) * nm];
        lo.iter().zip(hi).map(|(a, b)| a * (1.0 - wq) + b * wq).collect()
    });
    for j in 0..nm {
        let mut e = potential[j];
        if let Some(nb) = upwind {
            let dl = if c.adv_q > 0.0 { nb[j] - row[j] } else { row[j] - nb[j] };
            e += c.adv_q * dl / dq;
        }
        if let Some(line) = &jump_line {
            let mut acc = 0.0;
            for (u, w) in nodes.iter().zip(weights) {
                let x = m_pts[j] + c.load * u;
                if !grid.m.contains(x) {
                    outside += 1;
                }
                let (jj, wm) = grid.m.locate(x);
                let v = line[jj] * (1.0 - wm) + line[jj + 1] * wm;
                acc += w * (v - row[j]).exp();
            }
            e += lambda * (acc - 1.0);
        }
        rhs[j] = row[j] + dtau * e;
    }

    // Implicit part in m: (I - dtau Op) L = rhs.
    let th = s.theta;
    let a = s.sigma_r_inv;
    let grad_old = |j: usize| -> f64 {
        if j == 0 {
            (-3.0 * row[0] + 4.0 * row[1] - row[2]) / (2.0 * dm)
        } else if j == nm - 1 {
            (3.0 * row[nm - 1] - 4.0 * row[nm - 2] + row[nm - 3]) / (2.0 * dm)
        } else {
            (row[j + 1] - row[j - 1]) / (2.0 * dm)
        }
    };
    let adv = |j: usize| -> f64 {
        let m = m_pts[j];
        c.f * (s.kappa * (s.mu_bar - m) + th * a * c.q * m / (1.0 - th)) + c.grad * grad_old(j)
    };
    let dd = c.diff / (dm * dm);
    let mut lower = vec![0.0; nm];
    let mut diag = vec![0.0; nm];
    let mut upper = vec![0.0; nm];
    for j in 1..nm - 1 {
        let cj = adv(j) / (2.0 * dm);
        lower[j] = -dtau * (dd - cj);
        diag[j] = 1.0 + 2.0 * dtau * dd;
        upper[j] = -dtau * (dd + cj);
    }
    // One-sided second-order gradient and three-point curvature at the edges;
    // the extra band entry is eliminated with the neighbouring row.
    {
        let c0 = adv(0) / (2.0 * dm);
        let (mut a0, mut a1, a2) = (
            1.0 - dtau * (-3.0 * c0 + dd),
            -dtau * (4.0 * c0 - 2.0 * dd),
            -dtau * (-c0 + dd),
        );
        let mut r0 = rhs[0];
        if a2 != 0.0 {
            if upper[1].abs() > 1e-14 * (lower[1].abs() + diag[1].abs()) {
                let f = a2 / upper[1];
                a0 -= f * lower[1];
                a1 -= f * diag[1];
                r0 -= f * rhs[1];
            } else {
                a1 += a2;
            }
        }
        diag[0] = a0;
        upper[0] = a1;
        rhs[0] = r0;
    }
    {
        let n = nm - 1;
        let cn = adv(n) / (2.0 * dm);
        let (mut an, mut an1, an2) = (
            1.0 - dtau * (3.0 * cn + dd),
            -dtau * (-4.0 * cn - 2.0 * dd),
            -dtau * (cn + dd),
        );
        let mut rn = rhs[n];
        if an2 != 0.0 {
            if lower[n - 1].abs() > 1e-14 * (upper[n - 1].abs() + diag[n - 1].abs()) {
                let f = an2 / lower[n - 1];
                an -= f * upper[n - 1];
                an1 -= f * diag[n - 1];
                rn -= f * rhs[n - 1];
            } else {
                an1 += an2;
            }
        }
        diag[n] = an;
        lower[n] = an1;
        rhs[n] = rn;
    }
    thomas(&lower, &diag, &upper, &mut rhs);
    (rhs, outside)
}

/// Solve a tridiagonal system in place (`lower[0]`, `upper[n-1]` unused).
fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64]) {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut beta = diag[0];
    c[0] = upper[0] / beta;
    rhs[0] /= beta;
    for j in 1..n {
        beta = diag[j] - lower[j] * c[j - 1];
        if j + 1 < n {
            c[j] = upper[j] / beta;
        }
        rhs[j] = (rhs[j] - lower[j] * rhs[j - 1]) / beta;
    }
    for j in (0..n - 1).rev() {
        rhs[j] -= c[j] * rhs[j + 1];
    }
}

/// `(1/2k)(L_qq + L_q^2)` is `(1/2k) V_qq / V`, so the sweep runs implicitly
/// on `V = exp(L)` along each m-line with reflecting ends; `r = dtau / (2k)`.
/// The system is an M-matrix, which keeps the update positive at any step.
fn q_diffusion_sweep(lv: &mut [f64], nm: usize, nq: usize, dq: f64, r: f64, exec: Execution) {
    let snapshot = lv.to_vec();
    let lines = par::map_indexed(exec, nm, |j| {
        let col: Vec<f64> = (0..nq).map(|l| snapshot[l * nm + j]).collect();
        let top = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let rr = r / (dq * dq);
        let mut lower = vec![-rr; nq];
        let diag = vec![1.0 + 2.0 * rr; nq];
        let mut upper = vec![-rr; nq];
        upper[0] = -2.0 * rr;
        lower[nq - 1] = -2.0 * rr;
        let mut rhs: Vec<f64> = col.iter().map(|l| (l - top).exp()).collect();
        thomas(&lower, &diag, &upper, &mut rhs);
        rhs.into_iter().map(|w| w.ln() + top).collect::<Vec<_>>()
    });
    for (j, line) in lines.into_iter().enumerate() {
        for (l, v) in line.into_iter().enumerate() {
            lv[l * nm + j] = v;
        }
    }
}

/// Clip bound `10 max |Pi^F|` over the m-axis.
pub fn clip_bound(model: &Model, m_axis: &Axis) -> f64 {
    let gain = model.sigma_r_inv[(0, 0)] / (1.0 - model.theta());
    10.0 * gain.abs() * m_axis.lo.abs().max(m_axis.hi.abs())
}

/// Clip bound for the default lattice of `model`; for several assets the
/// same construction per coordinate with the row-sum norm of the gain.
pub fn default_clip(model: &Model) -> Result<f64> {
    if model.d() == 1 {
        let g = Grid2D::for_model(model, 3, 3, 2)?;
        return Ok(clip_bound(model, &g.m));
    }
    let p = model.params();
    let diag = |q: &nalgebra::DMatrix<f64>| q.diagonal().iter().copied().fold(0.0, f64::max);
    let q_hi = 1.25 * diag(&model.stationary_q).max(diag(&p.q0)).max(1e-12);
    let m_abs = p
        .m0
        .iter()
        .zip(p.mu_bar.iter())
        .map(|(a, b)| a.abs().max(b.abs()))
        .fold(0.0, f64::max)
        + 6.0 * q_hi.sqrt();
    let gain = crate::linalg::row_sum_norm(&model.sigma_r_inv) / (1.0 - model.theta());
    Ok(10.0 * gain.abs() * m_abs)
}

/// `Pi^F = Sigma_R^{-1} m / (1 - theta)`.
pub fn myopic_rule(model: &Model, clip: f64) -> Result<DecisionRule> {
    DecisionRule::myopic(model, clip)
}

/// Optimal rule table `(m + f q V_m / V) / ((1 - theta) Sigma_R)` with
/// central differences in `m` (one-sided at the edges).
pub fn optimal_rule(model: &Model, vg: &ValueGrid) -> Result<DecisionRule> {
    let s = *model
        .scalar()
        .ok_or_else(|| Error::Parameter("tabulated rules are one-asset only".into()))?;
    let g = &vg.grid;
    let (nm, nq, nt) = (g.m.n, g.q.n, g.t.n);
    let dm = g.m.step();
    if let Some(v) = vg.values.iter().find(|v| **v < 1e-300) {
        return Err(Error::Numerical(format!("value {v:e} below the overflow guard 1e-300")));
    }
    let scale = 1.0 / ((1.0 - s.theta) * s.sigma_r_cov);
    let mut out = Vec::with_capacity(vg.values.len());
    for i in 0..nt {
        for l in 0..nq {
            let q = g.q.at(l);
            let f = vg
                .regularization
                .as_ref()
                .map_or(1.0, |c| taper_scalar(model.cov_bound, c.epsilon, q));
            let row = &vg.values[vg.index(i, 0, l)..vg.index(i, 0, l) + nm];
            for j in 0..nm {
                let vm = if j == 0 {
                    (-3.0 * row[0] + 4.0 * row[1] - row[2]) / (2.0 * dm)
                } else if j == nm - 1 {
                    (3.0 * row[nm - 1] - 4.0 * row[nm - 2] + row[nm - 3]) / (2.0 * dm)
                } else {
                    (row[j + 1] - row[j - 1]) / (2.0 * dm)
                };
                out.push((g.m.at(j) + f * q * vm / row[j]) * scale);
            }
        }
    }
    let table = RuleTable::new(g.t, g.m, g.q, out)?;
    DecisionRule::table(table, clip_bound(model, &g.m))
}

/// Convenience: `V(0, m0, q0)`.
pub fn initial_value(model: &Model, vg: &ValueGrid) -> f64 {
    let p = model.params();
    vg.value_at(0.0, p.m0[0], p.q0[(0, 0)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::OneAsset;

    #[test]
    fn gauss_hermite_moments() {
        let (x, w) = gauss_hermite(11).unwrap();
        let mom = |k: i32| x.iter().zip(&w).map(|(x, w)| w * x.powi(k)).sum::<f64>();
        assert!((mom(0) - 1.0).abs() < 1e-14);
        assert!(mom(1).abs() < 1e-14);
        assert!((mom(2) - 1.0).abs() < 1e-12);
        assert!((mom(4) - 3.0).abs() < 1e-11);
        assert!((mom(20) - 654_729_075.0).abs() / 654_729_075.0 < 1e-9);
    }

    fn unit_grid(model: &Model) -> Grid2D {
        Grid2D::for_model(model, 81, 21, 5).unwrap()
    }

    #[test]
    fn jump_integral_examples() {
        let model = OneAsset { gamma: 1.0, q0: 1.0, ..Default::default() }.model().unwrap();
        let g = unit_grid(&model);
        let n = g.m.n * g.q.n;
        let c = vec![2.5; n];
        let (v, _) = jump_integral(&model, &g, &c, 0.1, 0.7, 11).unwrap();
        assert!((v - 2.5).abs() < 1e-13);

        let mut lin = vec![0.0; n];
        for l in 0..g.q.n {
            for j in 0..g.m.n {
                lin[l * g.m.n + j] = g.m.at(j) * (1.0 + g.q.at(l));
            }
        }
        let (v, _) = jump_integral(&model, &g, &lin, 0.3, 0.0, 11).unwrap();
        assert!((v - 0.3).abs() < 1e-13);

        let ml: Vec<f64> = (0..n).map(|k| g.m.at(k % g.m.n)).collect();
        let (v, out) = jump_integral(&model, &g, &ml, 0.2, 1.0, 11).unwrap();
        assert_eq!(out, 0);
        assert!((v - 0.2).abs() < 1e-12);
    }

    #[test]
    fn terminal_condition_and_positivity() {
        let model = OneAsset::default().model().unwrap();
        let g = Grid2D::for_model(&model, 41, 11, 6).unwrap();
        let vg = solve_dpe(&model, &g, &DpeOptions::default()).unwrap();
        assert!(vg.slice(g.t.n - 1).iter().all(|v| *v == 1.0));
        assert!(vg.values.iter().all(|v| *v >= 1.0 - 1e-12));
    }

    #[test]
    fn thomas_solves_small_system() {
        let lower = [0.0, 1.0, 1.0];
        let diag = [4.0, 4.0, 4.0];
        let upper = [1.0, 1.0, 0.0];
        let mut rhs = [5.0, 6.0, 5.0];
        thomas(&lower, &diag, &upper, &mut rhs);
        for x in rhs {
            assert!((x - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn rule_at_zero_variance_is_myopic() {
        let model = OneAsset::default().model().unwrap();
        let g = Grid2D::for_model(&model, 41, 11, 6).unwrap();
        let vg = solve_dpe(&model, &g, &DpeOptions::default()).unwrap();
        let rule = optimal_rule(&model, &vg).unwrap();
        let myo = myopic_rule(&model, f64::INFINITY).unwrap();
        for j in 0..g.m.n {
            let m = g.m.at(j);
            assert!((rule.eval_scalar(0.0, m, 0.0) - myo.eval_scalar(0.0, m, 0.0)).abs() < 1e-12);
        }
    }
}
