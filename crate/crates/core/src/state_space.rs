//! Vectorized control state `y = (m, g)`, the coefficients of its dynamics
//! under the changed measure, their tapered extensions, and a path simulator.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{dim, Error, Result};
use crate::filter::{self, riccati_rhs, FilterState};
use crate::linalg;
use crate::market::{splice_grid, simulate_arrivals, BundleOptions, Model};
use crate::rng::{self, SeedTree};
use crate::rule::DecisionRule;

/// Position of `q[i][j]` (1-based, `j <= i`) in the lower-triangle vector.
pub fn vec_index(i: usize, j: usize) -> Result<usize> {
    if j == 0 || i == 0 || j > i {
        return Err(Error::Index(format!("need 1 <= j <= i, got ({i}, {j})")));
    }
    Ok(i * (i - 1) / 2 + j)
}

/// Lower triangle of a symmetric matrix in row order.
pub fn mat_to_vec(q: &DMatrix<f64>) -> Result<DVector<f64>> {
    let d = q.nrows();
    dim("square matrix", d, q.ncols())?;
    let asym = linalg::asymmetry(q);
    if asym > 1e-10 {
        return Err(Error::Input(format!("matrix is not symmetric (deviation {asym:e})")));
    }
    let mut g = DVector::zeros(d * (d + 1) / 2);
    let mut k = 0;
    for i in 0..d {
        for j in 0..=i {
            g[k] = q[(i, j)];
            k += 1;
        }
    }
    Ok(g)
}

pub fn vec_to_mat(g: &DVector<f64>, d: usize) -> Result<DMatrix<f64>> {
    dim("vectorized matrix", d * (d + 1) / 2, g.len())?;
    let mut q = DMatrix::zeros(d, d);
    let mut k = 0;
    for i in 0..d {
        for j in 0..=i {
            q[(i, j)] = g[k];
            q[(j, i)] = g[k];
            k += 1;
        }
    }
    Ok(q)
}

fn vec_unchecked(q: &DMatrix<f64>) -> DVector<f64> {
    let d = q.nrows();
    let mut g = DVector::zeros(d * (d + 1) / 2);
    let mut k = 0;
    for i in 0..d {
        for j in 0..=i {
            g[k] = 0.5 * (q[(i, j)] + q[(j, i)]);
            k += 1;
        }
    }
    g
}

#[derive(Debug, Clone, PartialEq)]
pub struct VecState {
    pub m: DVector<f64>,
    pub g: DVector<f64>,
}

impl VecState {
    pub fn new(m: DVector<f64>, q: &DMatrix<f64>) -> Result<Self> {
        dim("q", m.len(), q.nrows())?;
        Ok(Self { g: mat_to_vec(q)?, m })
    }

    pub fn from_filter(state: &FilterState) -> Result<Self> {
        Self::new(state.m.clone(), &state.q)
    }

    /// Prior state `(m0, q0)`.
    pub fn initial(model: &Model) -> Result<Self> {
        Self::new(model.params().m0.clone(), &model.params().q0)
    }

    pub fn d(&self) -> usize {
        self.m.len()
    }

    pub fn q(&self) -> DMatrix<f64> {
        vec_to_mat(&self.g, self.d()).expect("g has length d(d+1)/2")
    }

    pub fn to_vec(&self) -> DVector<f64> {
        let mut y = DVector::zeros(self.m.len() + self.g.len());
        y.rows_mut(0, self.m.len()).copy_from(&self.m);
        y.rows_mut(self.m.len(), self.g.len()).copy_from(&self.g);
        y
    }

    pub fn from_vec(y: &DVector<f64>, d: usize) -> Result<Self> {
        dim("state vector", d * (d + 3) / 2, y.len())?;
        Ok(Self {
            m: y.rows(0, d).into_owned(),
            g: y.rows(d, d * (d + 1) / 2).into_owned(),
        })
    }
}

/// Truncation width and perturbation index of the regularized dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularizationConfig {
    pub epsilon: f64,
    /// Perturbation index; `None` keeps the tapered coefficients without noise.
    #[serde(default)]
    pub k: Option<u64>,
}

impl RegularizationConfig {
    /// `0.1 min(1, lambda_min(Gamma)) / d`.
    pub fn default_epsilon(model: &Model) -> f64 {
        0.1 * linalg::min_eigenvalue(&model.params().gamma).min(1.0) / model.d() as f64
    }

    pub fn new(model: &Model, epsilon: f64, k: Option<u64>) -> Result<Self> {
        let cfg = Self { epsilon, k };
        cfg.validate(model)?;
        Ok(cfg)
    }

    pub fn with_k(model: &Model, k: u64) -> Result<Self> {
        Self::new(model, Self::default_epsilon(model), Some(k))
    }

    pub fn validate(&self, model: &Model) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::Parameter(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        let lg = linalg::min_eigenvalue(&model.params().gamma);
        if !(lg > self.epsilon * model.d() as f64) {
            return Err(Error::Parameter(format!(
                "epsilon={} too large: need lambda_min(Gamma)={lg} > epsilon*d",
                self.epsilon
            )));
        }
        if self.k == Some(0) {
            return Err(Error::Parameter("perturbation index k must be positive".into()));
        }
        Ok(())
    }

    /// Noise scale `1/sqrt(k)`, zero without perturbation.
    pub fn noise_scale(&self) -> f64 {
        self.k.map_or(0.0, |k| 1.0 / (k as f64).sqrt())
    }
}

/// Distance of `g` from the admissible covariance set: excess of the max
/// norm over `K_G = C_Q`, or the depth of a negative eigenvalue.
pub fn dist_to_domain(model: &Model, g: &DVector<f64>) -> f64 {
    let d = model.d();
    let over = linalg::max_norm(g.as_slice()) - model.cov_bound;
    let neg = if d == 1 {
        -g[0]
    } else {
        -linalg::min_eigenvalue(&vec_to_mat(g, d).expect("length checked by caller"))
    };
    over.max(neg).max(0.0)
}

#[inline]
fn dist_scalar(k_g: f64, q: f64) -> f64 {
    (q.abs() - k_g).max(-q).max(0.0)
}

/// Taper factor `max(0, 1 - dist/epsilon)`.
pub fn taper(model: &Model, cfg: &RegularizationConfig, g: &DVector<f64>) -> f64 {
    (1.0 - dist_to_domain(model, g) / cfg.epsilon).max(0.0)
}

#[inline]
pub fn taper_scalar(k_g: f64, epsilon: f64, q: f64) -> f64 {
    (1.0 - dist_scalar(k_g, q) / epsilon).max(0.0)
}

/// Coefficients of `dY = alpha dt + beta dW + int gamma(u) N~(dt, du)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    /// `(alpha_M, vec(alpha_Q))`, length `d_Y`.
    pub alpha: DVector<f64>,
    /// `d_Y x d`; the g-block rows are zero.
    pub beta: DMatrix<f64>,
    /// Mark loading `q (q + Gamma)^{-1/2}`, so that `gamma_M(u) = gamma_m u`.
    pub gamma_m: DMatrix<f64>,
    /// `vec(-q (q + Gamma)^{-1} q)`.
    pub gamma_q: DVector<f64>,
}

impl Coefficients {
    /// Jump `gamma_Y(u)` for mark `u`.
    pub fn gamma(&self, u: &DVector<f64>) -> DVector<f64> {
        let d = self.gamma_m.nrows();
        let mut out = DVector::zeros(d + self.gamma_q.len());
        out.rows_mut(0, d).copy_from(&(&self.gamma_m * u));
        out.rows_mut(d, self.gamma_q.len()).copy_from(&self.gamma_q);
        out
    }

    fn scale(&mut self, f: f64) {
        self.alpha *= f;
        self.beta *= f;
        self.gamma_m *= f;
        self.gamma_q *= f;
    }

    /// `beta beta^T + I / (2k)`.
    pub fn ellipticity_matrix(&self, k: u64) -> DMatrix<f64> {
        let n = self.beta.nrows();
        &self.beta * self.beta.transpose() + DMatrix::identity(n, n) / (2.0 * k as f64)
    }
}

pub fn coeffs(model: &Model, y: &VecState, p: &DVector<f64>) -> Result<Coefficients> {
    let d = model.d();
    dim("state m", d, y.m.len())?;
    dim("state g", model.n_g(), y.g.len())?;
    dim("decision", d, p.len())?;
    let par = model.params();
    let q = y.q();
    let s = &q + &par.gamma;
    let s_inv = linalg::spd_inverse(&s)
        .map_err(|_| Error::Numerical("q + Gamma is singular".into()))?;
    let s_inv_sqrt = linalg::sym_inv_sqrt(&s)?;
    let gamma_q_mat = -(&q * &s_inv * &q);
    let alpha_m = &par.kappa * (&par.mu_bar - &y.m) + &q * p * model.theta();
    let alpha_q = riccati_rhs(model, &q) + &gamma_q_mat * par.lambda;
    let mut alpha = DVector::zeros(model.d_y());
    alpha.rows_mut(0, d).copy_from(&alpha_m);
    alpha.rows_mut(d, model.n_g()).copy_from(&vec_unchecked(&alpha_q));
    let mut beta = DMatrix::zeros(model.d_y(), d);
    beta.view_mut((0, 0), (d, d)).copy_from(&(&q * &model.sigma_r_inv_sqrt));
    Ok(Coefficients {
        alpha,
        beta,
        gamma_m: &q * s_inv_sqrt,
        gamma_q: vec_unchecked(&gamma_q_mat),
    })
}

/// Coefficients multiplied by the taper factor; zero (and not evaluated)
/// outside the epsilon-neighbourhood.
pub fn extended_coeffs(
    model: &Model,
    y: &VecState,
    p: &DVector<f64>,
    cfg: &RegularizationConfig,
) -> Result<Coefficients> {
    let d = model.d();
    dim("state g", model.n_g(), y.g.len())?;
    let f = taper(model, cfg, &y.g);
    if f == 0.0 {
        return Ok(Coefficients {
            alpha: DVector::zeros(model.d_y()),
            beta: DMatrix::zeros(model.d_y(), d),
            gamma_m: DMatrix::zeros(d, d),
            gamma_q: DVector::zeros(model.n_g()),
        });
    }
    let mut c = coeffs(model, y, p)?;
    if f < 1.0 {
        c.scale(f);
    }
    Ok(c)
}

/// `theta (p^T m - (1 - theta)/2 |sigma_X p|^2)`.
pub fn running_reward_b(model: &Model, m: &DVector<f64>, p: &DVector<f64>) -> f64 {
    let th = model.theta();
    let quad = p.dot(&(&model.sigma_r_cov * p));
    th * (p.dot(m) - 0.5 * (1.0 - th) * quad)
}

#[inline]
fn b_scalar(theta: f64, sigma_r_cov: f64, m: f64, p: f64) -> f64 {
    theta * (p * m - 0.5 * (1.0 - theta) * sigma_r_cov * p * p)
}

/// Driving noise of a state path on `[t0, T]` under the changed measure.
#[derive(Debug, Clone, PartialEq)]
pub struct StateNoise {
    pub grid: Vec<f64>,
    /// Brownian increments, `d` per step.
    pub dw: Vec<f64>,
    pub view_steps: Vec<usize>,
    /// Standard Gaussian marks, `d` per arrival.
    pub marks: Vec<f64>,
    /// Increments of the independent `d_Y`-dimensional perturbation.
    pub dw_star: Option<Vec<f64>>,
}

impl StateNoise {
    /// Path `index` of the experiment seeded by `seeds`. The base step is
    /// `T / opts.n_steps`; arrivals are spliced in. The return, arrival and
    /// view streams are shared with [`crate::market::simulate_bundle`].
    pub fn generate(
        model: &Model,
        opts: &BundleOptions,
        t0: f64,
        seeds: &SeedTree,
        index: u64,
        perturbed: bool,
    ) -> Result<Self> {
        let d = model.d();
        let horizon = model.horizon();
        if !(t0 >= 0.0 && t0 < horizon) {
            return Err(Error::Parameter(format!("start time {t0} outside [0, {horizon})")));
        }
        let base = ((opts.n_steps as f64) * (horizon - t0) / horizon).ceil().max(1.0) as usize;
        let mut arrivals = simulate_arrivals(model.lambda(), horizon - t0, &mut seeds.stream(rng::ARRIVALS, index))?;
        for a in arrivals.iter_mut() {
            *a += t0;
        }
        let (grid, view_steps) = splice_grid(t0, horizon, base, &mut arrivals)?;
        let steps = grid.len() - 1;
        let mut dw = vec![0.0; steps * d];
        let mut wr = seeds.stream(rng::W_R, index);
        for i in 0..steps {
            let sh = (grid[i + 1] - grid[i]).sqrt();
            for x in &mut dw[i * d..(i + 1) * d] {
                *x = rng::normal(&mut wr) * sh;
            }
        }
        let mut marks = vec![0.0; view_steps.len() * d];
        rng::fill_normal(&mut seeds.stream(rng::VIEWS, index), &mut marks);
        let dw_star = perturbed.then(|| {
            let dy = model.d_y();
            let mut ws = seeds.stream(rng::W_STAR, index);
            let mut v = vec![0.0; steps * dy];
            for i in 0..steps {
                let sh = (grid[i + 1] - grid[i]).sqrt();
                for x in &mut v[i * dy..(i + 1) * dy] {
                    *x = rng::normal(&mut ws) * sh;
                }
            }
            v
        });
        Ok(Self { grid, dw, view_steps, marks, dw_star })
    }

    pub fn n_steps(&self) -> usize {
        self.grid.len() - 1
    }
}

/// Outcome of one simulated state path.
#[derive(Debug, Clone, PartialEq)]
pub struct StatePath {
    /// Trapezoid approximation of the integrated running reward.
    pub eta: f64,
    /// Post-jump states at grid points, `d_Y` per point (empty unless recorded).
    pub y: Vec<f64>,
}

/// Euler–Maruyama simulation of the state from `y0` at `noise.grid[0]`.
///
/// The continuous g-drift is `alpha_Q - lambda gamma_Q`, i.e. the Riccati
/// flow, advanced by the same step as the filter; at arrivals the
/// uncompensated jump `gamma_Y(y-, u)` is added. With `cfg` the coefficients
/// are tapered and, if `cfg.k` is set, `dW*/sqrt(k)` is added.
pub fn simulate_state(
    model: &Model,
    y0: &VecState,
    rule: &DecisionRule,
    noise: &StateNoise,
    cfg: Option<&RegularizationConfig>,
    record: bool,
) -> Result<StatePath> {
    let d = model.d();
    dim("state m", d, y0.m.len())?;
    dim("state g", model.n_g(), y0.g.len())?;
    dim("increments", noise.n_steps() * d, noise.dw.len())?;
    dim("marks", noise.view_steps.len() * d, noise.marks.len())?;
    let scale = cfg.map_or(0.0, RegularizationConfig::noise_scale);
    if scale > 0.0 {
        let dws = noise
            .dw_star
            .as_ref()
            .ok_or_else(|| Error::Input("perturbed run without perturbation increments".into()))?;
        dim("perturbation increments", noise.n_steps() * model.d_y(), dws.len())?;
    }
    if let Some(c) = cfg {
        c.validate(model)?;
    }
    if model.scalar().is_some() {
        simulate_scalar(model, y0, rule, noise, cfg, scale, record)
    } else {
        simulate_general(model, y0, rule, noise, cfg, scale, record)
    }
}

fn consistency_error(dist: f64, k_g: f64, t: f64) -> Error {
    Error::Consistency(format!(
        "unregularized state left the covariance domain by {dist:e} at t={t} (K_G={k_g})"
    ))
}

fn simulate_scalar(
    model: &Model,
    y0: &VecState,
    rule: &DecisionRule,
    noise: &StateNoise,
    cfg: Option<&RegularizationConfig>,
    scale: f64,
    record: bool,
) -> Result<StatePath> {
    let s = *model.scalar().expect("scalar model");
    let k_g = model.cov_bound;
    let grid = &noise.grid;
    let (mut m, mut q) = (y0.m[0], y0.g[0]);
    let taper_at = |q: f64| -> Result<f64> {
        match cfg {
            Some(c) => Ok(taper_scalar(k_g, c.epsilon, q)),
            None => Ok(1.0),
        }
    };
    let check = |q: f64, t: f64| -> Result<()> {
        if cfg.is_none() {
            let dist = dist_scalar(k_g, q);
            if dist > 1e-6 * k_g {
                return Err(consistency_error(dist, k_g, t));
            }
        }
        Ok(())
    };
    check(q, grid[0])?;
    let mut y = Vec::new();
    if record {
        y.reserve(2 * grid.len());
        y.extend_from_slice(&[m, q]);
    }
    let zero = rule.is_zero();
    let mut p = rule.eval_scalar(grid[0], m, q);
    let mut b = b_scalar(s.theta, s.sigma_r_cov, m, p);
    let mut eta = 0.0;
    let mut next_view = 0;
    let star = noise.dw_star.as_deref();
    for i in 0..grid.len() - 1 {
        let h = grid[i + 1] - grid[i];
        let f = taper_at(q)?;
        let (mut m1, mut q1) = (m, q);
        if f > 0.0 {
            m1 += f * (s.kappa * (s.mu_bar - m) + s.theta * q * p) * h + f * q * s.sigma_r_inv_sqrt * noise.dw[i];
            q1 += f * (filter::riccati_step_scalar(&s, q, h) - q);
        }
        if let Some(ws) = star.filter(|_| scale > 0.0) {
            m1 += scale * ws[2 * i];
            q1 += scale * ws[2 * i + 1];
        }
        let t1 = grid[i + 1];
        let p_pre = if zero { 0.0 } else { rule.eval_scalar(t1, m1, q1) };
        let b_pre = b_scalar(s.theta, s.sigma_r_cov, m1, p_pre);
        eta += 0.5 * h * (b + b_pre);
        m = m1;
        q = q1;
        p = p_pre;
        b = b_pre;
        if next_view < noise.view_steps.len() && noise.view_steps[next_view] == i + 1 {
            let fj = taper_at(q)?;
            if fj > 0.0 {
                let u = noise.marks[next_view];
                let sq = q + s.gamma;
                m += fj * q / sq.sqrt() * u;
                q += -fj * q * q / sq;
            }
            next_view += 1;
            p = if zero { 0.0 } else { rule.eval_scalar(t1, m, q) };
            b = b_scalar(s.theta, s.sigma_r_cov, m, p);
        }
        check(q, t1)?;
        if record {
            y.extend_from_slice(&[m, q]);
        }
    }
    Ok(StatePath { eta, y })
}

fn simulate_general(
    model: &Model,
    y0: &VecState,
    rule: &DecisionRule,
    noise: &StateNoise,
    cfg: Option<&RegularizationConfig>,
    scale: f64,
    record: bool,
) -> Result<StatePath> {
    let d = model.d();
    let dy = model.d_y();
    let k_g = model.cov_bound;
    let grid = &noise.grid;
    let mut st = y0.clone();
    let taper_at = |g: &DVector<f64>| cfg.map_or(1.0, |c| taper(model, c, g));
    let check = |g: &DVector<f64>, t: f64| -> Result<()> {
        if cfg.is_none() {
            let dist = dist_to_domain(model, g);
            if dist > 1e-6 * k_g {
                return Err(consistency_error(dist, k_g, t));
            }
        }
        Ok(())
    };
    check(&st.g, grid[0])?;
    let mut y = Vec::new();
    if record {
        y.extend_from_slice(st.to_vec().as_slice());
    }
    let mut p = rule.eval(grid[0], &st.m, &st.q())?;
    let mut b = running_reward_b(model, &st.m, &p);
    let mut eta = 0.0;
    let mut next_view = 0;
    let par = model.params();
    for i in 0..grid.len() - 1 {
        let h = grid[i + 1] - grid[i];
        let f = taper_at(&st.g);
        let mut next = st.clone();
        if f > 0.0 {
            let q = st.q();
            let dw = DVector::from_column_slice(&noise.dw[i * d..(i + 1) * d]);
            let drift = &par.kappa * (&par.mu_bar - &st.m) + &q * &p * model.theta();
            next.m += (drift * h + &q * &model.sigma_r_inv_sqrt * dw) * f;
            let dq = filter::riccati_step(model, &q, h) - &q;
            next.g += vec_unchecked(&dq) * f;
        }
        if scale > 0.0 {
            let ws = noise.dw_star.as_ref().expect("checked");
            for j in 0..d {
                next.m[j] += scale * ws[i * dy + j];
            }
            for j in 0..model.n_g() {
                next.g[j] += scale * ws[i * dy + d + j];
            }
        }
        let t1 = grid[i + 1];
        let p_pre = rule.eval(t1, &next.m, &next.q())?;
        let b_pre = running_reward_b(model, &next.m, &p_pre);
        eta += 0.5 * h * (b + b_pre);
        st = next;
        p = p_pre;
        b = b_pre;
        if next_view < noise.view_steps.len() && noise.view_steps[next_view] == i + 1 {
            let u = DVector::from_column_slice(&noise.marks[next_view * d..(next_view + 1) * d]);
            let c = match cfg {
                Some(c) => extended_coeffs(model, &st, &p, c)?,
                None => coeffs(model, &st, &p)?,
            };
            let jump = c.gamma(&u);
            st.m += jump.rows(0, d);
            st.g += jump.rows(d, model.n_g());
            next_view += 1;
            p = rule.eval(t1, &st.m, &st.q())?;
            b = running_reward_b(model, &st.m, &p);
        }
        check(&st.g, t1)?;
        if record {
            y.extend_from_slice(st.to_vec().as_slice());
        }
    }
    Ok(StatePath { eta, y })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::OneAsset;

    fn v1(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    #[test]
    fn vec_index_examples() {
        assert_eq!(vec_index(1, 1).unwrap(), 1);
        assert_eq!(vec_index(2, 2).unwrap(), 3);
        assert_eq!(vec_index(3, 2).unwrap(), 5);
        assert!(matches!(vec_index(1, 2), Err(Error::Index(_))));
    }

    #[test]
    fn identity_round_trip() {
        let g = mat_to_vec(&DMatrix::identity(2, 2)).unwrap();
        assert_eq!(g.as_slice(), &[1.0, 0.0, 1.0]);
        assert_eq!(vec_to_mat(&g, 2).unwrap(), DMatrix::identity(2, 2));
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(matches!(mat_to_vec(&bad), Err(Error::Input(_))));
    }

    #[test]
    fn scalar_coefficient_examples() {
        let m = OneAsset { gamma: 1.0, kappa: 1.0, mu_bar: 0.0, theta: 0.5, q0: 1.0, sigma_mu: 2.0, ..Default::default() }
            .model()
            .unwrap();
        let y = VecState { m: v1(0.0), g: v1(1.0) };
        let c = coeffs(&m, &y, &v1(2.0)).unwrap();
        assert!((c.gamma_q[0] + 0.5).abs() < 1e-15);
        assert!((c.gamma(&v1(1.0))[0] - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((c.alpha[0] - 1.0).abs() < 1e-15);
        assert_eq!(c.beta[(1, 0)], 0.0);
    }

    #[test]
    fn reward_examples() {
        let m = OneAsset { theta: 0.5, sigma_r: 1.0, ..Default::default() }.model().unwrap();
        assert_eq!(running_reward_b(&m, &v1(0.3), &v1(0.0)), 0.0);
        assert!((running_reward_b(&m, &v1(0.2), &v1(1.0)) + 0.025).abs() < 1e-15);
    }

    #[test]
    fn reward_maximizer_is_myopic() {
        let m = OneAsset::default().model().unwrap();
        let mm = 0.07;
        let star = mm / ((1.0 - m.theta()) * m.sigma_r_cov[(0, 0)]);
        let b = |p: f64| running_reward_b(&m, &v1(mm), &v1(p));
        for dp in [1e-3, -1e-3, 0.1, -0.1] {
            assert!(b(star) > b(star + dp));
        }
    }

    #[test]
    fn taper_examples() {
        let m = OneAsset::default().model().unwrap();
        let cfg = RegularizationConfig::with_k(&m, 10).unwrap();
        let kg = m.cov_bound;
        let e = cfg.epsilon;
        let p = v1(1.0);
        let inside = VecState { m: v1(0.1), g: v1(0.5 * kg) };
        assert_eq!(extended_coeffs(&m, &inside, &p, &cfg).unwrap(), coeffs(&m, &inside, &p).unwrap());
        let far = VecState { m: v1(0.1), g: v1(kg + 2.0 * e) };
        let c = extended_coeffs(&m, &far, &p, &cfg).unwrap();
        assert!(c.alpha.iter().chain(c.beta.iter()).chain(c.gamma_q.iter()).all(|x| *x == 0.0));
        let mid = VecState { m: v1(0.1), g: v1(kg + 0.5 * e) };
        let full = coeffs(&m, &mid, &p).unwrap();
        let half = extended_coeffs(&m, &mid, &p, &cfg).unwrap();
        assert!((half.alpha - full.alpha * 0.5).norm() < 1e-15);
        assert!((half.gamma_q - full.gamma_q * 0.5).norm() < 1e-15);
    }

    #[test]
    fn epsilon_must_keep_gamma_definite() {
        let m = OneAsset { gamma: 0.02, ..Default::default() }.model().unwrap();
        assert!(RegularizationConfig::new(&m, 0.05, Some(1)).is_err());
        assert!(RegularizationConfig::new(&m, 0.001, Some(0)).is_err());
    }

    #[test]
    fn drift_identity_with_riccati() {
        let m = OneAsset { lambda: 2.5, ..Default::default() }.model().unwrap();
        for &q in &[0.0, 0.001, 0.004, 0.0075] {
            let y = VecState { m: v1(0.0), g: v1(q) };
            let c = coeffs(&m, &y, &v1(0.0)).unwrap();
            let lhs = c.alpha[1] - m.lambda() * c.gamma_q[0];
            let rhs = riccati_rhs(&m, &DMatrix::from_element(1, 1, q))[(0, 0)];
            assert!((lhs - rhs).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_rule_reward_vanishes() {
        let m = OneAsset::default().model().unwrap();
        let noise = StateNoise::generate(&m, &BundleOptions { n_steps: 100 }, 0.0, &SeedTree::new(3), 0, false).unwrap();
        let y0 = VecState::initial(&m).unwrap();
        let path = simulate_state(&m, &y0, &DecisionRule::zero(), &noise, None, false).unwrap();
        assert_eq!(path.eta, 0.0);
    }

    #[test]
    fn outside_neighbourhood_moves_with_perturbation_only() {
        let m = OneAsset::default().model().unwrap();
        let cfg = RegularizationConfig::with_k(&m, 100).unwrap();
        let noise = StateNoise::generate(&m, &BundleOptions { n_steps: 20 }, 0.0, &SeedTree::new(3), 0, true).unwrap();
        // Far outside: the state is a scaled Brownian motion until it comes back.
        let y0 = VecState { m: v1(0.3), g: v1(10.0) };
        let path = simulate_state(&m, &y0, &DecisionRule::myopic(&m, 100.0).unwrap(), &noise, Some(&cfg), true).unwrap();
        let ws = noise.dw_star.as_ref().unwrap();
        let sc = cfg.noise_scale();
        assert!((path.y[2] - (0.3 + sc * ws[0])).abs() < 1e-15);
        assert!((path.y[3] - (10.0 + sc * ws[1])).abs() < 1e-15);
    }

    #[test]
    fn general_and_scalar_simulators_agree() {
        let m = OneAsset { lambda: 4.0, ..Default::default() }.model().unwrap();
        let noise = StateNoise::generate(&m, &BundleOptions { n_steps: 50 }, 0.0, &SeedTree::new(9), 2, false).unwrap();
        let y0 = VecState::initial(&m).unwrap();
        let rule = DecisionRule::myopic(&m, 50.0).unwrap();
        let a = simulate_scalar(&m, &y0, &rule, &noise, None, 0.0, true).unwrap();
        let b = simulate_general(&m, &y0, &rule, &noise, None, 0.0, true).unwrap();
        assert!((a.eta - b.eta).abs() < 1e-12);
        for (x, y) in a.y.iter().zip(&b.y) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
