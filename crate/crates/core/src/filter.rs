//! Kalman filter for the hidden drift with Bayesian updates at expert-view
//! arrivals.
//!
//! Between arrivals the conditional covariance follows the Riccati ODE and the
//! conditional mean is driven by the return increments; at an arrival both
//! are updated by Gaussian conjugacy.

use nalgebra::{DMatrix, DVector};

use crate::error::{dim, Error, Result};
use crate::linalg;
use crate::market::{ExpertView, Model, PathBundle, ScalarModel};

/// Eigenvalues of `Q` below `-PSD_TOL` abort the filter; those above are clipped.
pub const PSD_TOL: f64 = 1e-8;

/// Relative tolerance for matching a view time to the filter time.
const TIME_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub t: f64,
    pub m: DVector<f64>,
    pub q: DMatrix<f64>,
}

impl FilterState {
    pub fn prior(model: &Model) -> Self {
        Self {
            t: 0.0,
            m: model.params().m0.clone(),
            q: model.params().q0.clone(),
        }
    }
}

/// `Sigma_mu - kappa Q - Q kappa^T - Q Sigma_R^{-1} Q`.
pub fn riccati_rhs(model: &Model, q: &DMatrix<f64>) -> DMatrix<f64> {
    let k = &model.params().kappa;
    &model.sigma_mu_cov - k * q - q * k.transpose() - q * &model.sigma_r_inv * q
}

fn rk4(model: &Model, q: &DMatrix<f64>, h: f64) -> DMatrix<f64> {
    let k1 = riccati_rhs(model, q);
    let k2 = riccati_rhs(model, &(q + &k1 * (0.5 * h)));
    let k3 = riccati_rhs(model, &(q + &k2 * (0.5 * h)));
    let k4 = riccati_rhs(model, &(q + &k3 * h));
    q + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// One Riccati step of length `h`, split into 4 sub-steps when the flow is
/// fast relative to `Q`. No symmetrization or clipping.
pub fn riccati_step(model: &Model, q: &DMatrix<f64>, h: f64) -> DMatrix<f64> {
    if let Some(s) = model.scalar() {
        return DMatrix::from_element(1, 1, riccati_step_scalar(s, q[(0, 0)], h));
    }
    let rhs = riccati_rhs(model, q);
    if linalg::row_sum_norm(&rhs) * h > 0.1 * linalg::row_sum_norm(q) {
        let mut x = q.clone();
        for _ in 0..4 {
            x = rk4(model, &x, 0.25 * h);
        }
        x
    } else {
        rk4(model, q, h)
    }
}

#[inline]
fn rk4_scalar(s: &ScalarModel, q: f64, h: f64) -> f64 {
    let k1 = s.riccati_rhs(q);
    let k2 = s.riccati_rhs(q + 0.5 * h * k1);
    let k3 = s.riccati_rhs(q + 0.5 * h * k2);
    let k4 = s.riccati_rhs(q + h * k3);
    q + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

/// Scalar version of [`riccati_step`].
#[inline]
pub fn riccati_step_scalar(s: &ScalarModel, q: f64, h: f64) -> f64 {
    if s.riccati_rhs(q).abs() * h > 0.1 * q.abs() {
        let mut x = q;
        for _ in 0..4 {
            x = rk4_scalar(s, x, 0.25 * h);
        }
        x
    } else {
        rk4_scalar(s, q, h)
    }
}

#[inline]
fn clip_scalar(q: f64) -> Result<f64> {
    if q < -PSD_TOL {
        return Err(Error::Numerical(format!("covariance lost positivity: {q}")));
    }
    Ok(q.max(0.0))
}

/// Integrate the Riccati ODE from `t0` to `t1` with steps of at most `step`.
pub fn integrate_riccati(model: &Model, q0: &DMatrix<f64>, t0: f64, t1: f64, step: f64) -> Result<DMatrix<f64>> {
    if !(step > 0.0) {
        return Err(Error::Parameter(format!("step must be > 0, got {step}")));
    }
    if t1 < t0 {
        return Err(Error::Parameter(format!("t1={t1} precedes t0={t0}")));
    }
    dim("q0", model.d(), q0.nrows())?;
    if t1 == t0 {
        return Ok(q0.clone());
    }
    let n = ((t1 - t0) / step - 1e-9).ceil().max(1.0) as usize;
    let h = (t1 - t0) / n as f64;
    let mut q = q0.clone();
    for _ in 0..n {
        q = riccati_step(model, &q, h);
        linalg::clip_psd(&mut q, PSD_TOL)?;
    }
    Ok(q)
}

/// One Euler step of the conditional mean followed by a Riccati step for `Q`.
pub fn propagate_mean(model: &Model, state: &FilterState, dr: &DVector<f64>, dt: f64) -> Result<FilterState> {
    if !(dt > 0.0) {
        return Err(Error::Parameter(format!("dt must be > 0, got {dt}")));
    }
    dim("return increment", model.d(), dr.len())?;
    let p = model.params();
    let innov = dr - &state.m * dt;
    let m = &state.m + &p.kappa * (&p.mu_bar - &state.m) * dt + &state.q * &model.sigma_r_inv * innov;
    let mut q = riccati_step(model, &state.q, dt);
    linalg::clip_psd(&mut q, PSD_TOL)?;
    Ok(FilterState { t: state.t + dt, m, q })
}

/// Conjugate update with an expert view observed at the current time.
pub fn bayes_update(model: &Model, state: &FilterState, view: &ExpertView) -> Result<FilterState> {
    if (view.arrival_time - state.t).abs() > TIME_TOL * state.t.abs().max(1.0) {
        return Err(Error::Grid(format!(
            "view at {} applied to filter state at {}",
            view.arrival_time, state.t
        )));
    }
    dim("view", model.d(), view.value.len())?;
    let gamma = &model.params().gamma;
    let s = &state.q + gamma;
    let s_inv = linalg::spd_inverse(&s)?;
    let rho = gamma * s_inv;
    let eye = DMatrix::identity(model.d(), model.d());
    let m = &rho * &state.m + (eye - &rho) * &view.value;
    let mut q = &rho * &state.q;
    linalg::clip_psd(&mut q, PSD_TOL)?;
    Ok(FilterState { t: state.t, m, q })
}

/// Law of the next view given the pre-arrival state: `(M, Gamma + Q)`.
pub fn view_predictive(model: &Model, state: &FilterState) -> (DVector<f64>, DMatrix<f64>) {
    (state.m.clone(), &model.params().gamma + &state.q)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Regular,
    /// State just before a view is absorbed.
    PreUpdate,
    /// State just after a view is absorbed.
    PostUpdate,
}

impl RowKind {
    pub fn label(self) -> &'static str {
        match self {
            RowKind::Regular => "regular",
            RowKind::PreUpdate => "pre",
            RowKind::PostUpdate => "post",
        }
    }
}

/// Filter output along a bundle: one row per grid point, two at arrivals.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterPath {
    pub d: usize,
    pub t: Vec<f64>,
    /// `d` entries per row.
    pub m: Vec<f64>,
    /// `d*d` entries per row, column-major.
    pub q: Vec<f64>,
    pub kind: Vec<RowKind>,
    /// Row holding the final (post-update) state at each grid point.
    pub grid_row: Vec<usize>,
}

impl FilterPath {
    fn with_capacity(d: usize, rows: usize) -> Self {
        Self {
            d,
            t: Vec::with_capacity(rows),
            m: Vec::with_capacity(rows * d),
            q: Vec::with_capacity(rows * d * d),
            kind: Vec::with_capacity(rows),
            grid_row: Vec::new(),
        }
    }

    fn push(&mut self, t: f64, m: &[f64], q: &[f64], kind: RowKind) {
        self.t.push(t);
        self.m.extend_from_slice(m);
        self.q.extend_from_slice(q);
        self.kind.push(kind);
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn m_at(&self, row: usize) -> &[f64] {
        &self.m[row * self.d..(row + 1) * self.d]
    }

    pub fn q_at(&self, row: usize) -> DMatrix<f64> {
        let n = self.d * self.d;
        DMatrix::from_column_slice(self.d, self.d, &self.q[row * n..(row + 1) * n])
    }

    pub fn state(&self, row: usize) -> FilterState {
        FilterState {
            t: self.t[row],
            m: DVector::from_column_slice(self.m_at(row)),
            q: self.q_at(row),
        }
    }

    /// Rows immediately before each arrival.
    pub fn pre_update_rows(&self) -> impl Iterator<Item = usize> + '_ {
        self.kind
            .iter()
            .enumerate()
            .filter(|(_, k)| **k == RowKind::PreUpdate)
            .map(|(i, _)| i)
    }

    /// Largest row-sum norm of `Q` along the path.
    pub fn max_q_norm(&self) -> f64 {
        (0..self.len())
            .map(|r| linalg::row_sum_norm(&self.q_at(r)))
            .fold(0.0, f64::max)
    }
}

/// Run the filter along `bundle` from the prior `(m0, q0)` at `grid[0]`.
pub fn run_filter(model: &Model, bundle: &PathBundle, m0: &DVector<f64>, q0: &DMatrix<f64>) -> Result<FilterPath> {
    let d = model.d();
    dim("m0", d, m0.len())?;
    dim("q0", d, q0.nrows())?;
    dim("bundle dimension", d, bundle.d)?;
    if bundle.views.len() != bundle.view_steps.len() {
        return Err(Error::Grid("views and view indices differ in length".into()));
    }
    for (v, &k) in bundle.views.iter().zip(&bundle.view_steps) {
        if k >= bundle.grid.len() || bundle.grid[k] != v.arrival_time {
            return Err(Error::Grid(format!("view at {} is not on the grid", v.arrival_time)));
        }
    }
    if let Some(s) = model.scalar() {
        return run_filter_scalar(s, bundle, m0[0], q0[(0, 0)]);
    }
    let n = bundle.grid.len();
    let mut path = FilterPath::with_capacity(d, n + bundle.views.len());
    let mut state = FilterState { t: bundle.grid[0], m: m0.clone(), q: q0.clone() };
    path.push(state.t, state.m.as_slice(), state.q.as_slice(), RowKind::Regular);
    path.grid_row.push(0);
    let mut next_view = 0;
    for i in 0..n - 1 {
        let dt = bundle.grid[i + 1] - bundle.grid[i];
        state = propagate_mean(model, &state, &bundle.return_increment(i), dt)?;
        state.t = bundle.grid[i + 1];
        if next_view < bundle.view_steps.len() && bundle.view_steps[next_view] == i + 1 {
            path.push(state.t, state.m.as_slice(), state.q.as_slice(), RowKind::PreUpdate);
            state = bayes_update(model, &state, &bundle.views[next_view])?;
            path.push(state.t, state.m.as_slice(), state.q.as_slice(), RowKind::PostUpdate);
            next_view += 1;
        } else {
            path.push(state.t, state.m.as_slice(), state.q.as_slice(), RowKind::Regular);
        }
        path.grid_row.push(path.len() - 1);
    }
    Ok(path)
}

fn run_filter_scalar(s: &ScalarModel, bundle: &PathBundle, m0: f64, q0: f64) -> Result<FilterPath> {
    let n = bundle.grid.len();
    let mut path = FilterPath::with_capacity(1, n + bundle.views.len());
    let (mut m, mut q) = (m0, q0);
    path.push(bundle.grid[0], &[m], &[q], RowKind::Regular);
    path.grid_row.push(0);
    let mut next_view = 0;
    for i in 0..n - 1 {
        let t = bundle.grid[i + 1];
        let dt = t - bundle.grid[i];
        let dr = bundle.return_path[i + 1] - bundle.return_path[i];
        m += s.kappa * (s.mu_bar - m) * dt + q * s.sigma_r_inv * (dr - m * dt);
        q = clip_scalar(riccati_step_scalar(s, q, dt))?;
        if next_view < bundle.view_steps.len() && bundle.view_steps[next_view] == i + 1 {
            path.push(t, &[m], &[q], RowKind::PreUpdate);
            let z = bundle.views[next_view].value[0];
            let rho = s.gamma / (q + s.gamma);
            m = rho * m + (1.0 - rho) * z;
            q = clip_scalar(rho * q)?;
            path.push(t, &[m], &[q], RowKind::PostUpdate);
            next_view += 1;
        } else {
            path.push(t, &[m], &[q], RowKind::Regular);
        }
        path.grid_row.push(path.len() - 1);
    }
    Ok(path)
}

/// Stationary solution of `Sigma_mu - kappa Q - Q kappa^T - Q A Q = 0` with
/// `A = Sigma_R^{-1}`. Closed form for `d = 1`; Newton–Kleinman otherwise,
/// falling back to integrating the ODE from `q0` until it settles.
pub fn stationary_riccati(
    kappa: &DMatrix<f64>,
    sigma_mu_cov: &DMatrix<f64>,
    sigma_r_inv: &DMatrix<f64>,
    q0: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let d = kappa.nrows();
    let residual = |q: &DMatrix<f64>| sigma_mu_cov - kappa * q - q * kappa.transpose() - q * sigma_r_inv * q;
    if d == 1 {
        let (k, s, a) = (kappa[(0, 0)], sigma_mu_cov[(0, 0)], sigma_r_inv[(0, 0)]);
        // Positive root of s - 2 k q - a q^2, in a cancellation-free form.
        let disc = (k * k + a * s).sqrt();
        let q = if k >= 0.0 { s / (k + disc) } else { (disc - k) / a };
        return Ok(DMatrix::from_element(1, 1, q));
    }
    let scale = linalg::row_sum_norm(sigma_mu_cov).max(1e-300);
    if let Some(q) = newton_kleinman(kappa, sigma_mu_cov, sigma_r_inv, &residual) {
        if linalg::row_sum_norm(&residual(&q)) <= 1e-10 * scale.max(1.0) && linalg::is_psd(&q, PSD_TOL) {
            return Ok(q);
        }
    }
    // Fallback: follow the flow until it settles.
    let mut q = q0.clone();
    let h = 1e-3 / (1.0 + linalg::row_sum_norm(kappa));
    for _ in 0..10_000_000 {
        let r = residual(&q);
        if linalg::row_sum_norm(&r) <= 1e-12 * scale.max(1.0) {
            return Ok(q);
        }
        let k1 = r;
        let k2 = residual(&(&q + &k1 * (0.5 * h)));
        let k3 = residual(&(&q + &k2 * (0.5 * h)));
        let k4 = residual(&(&q + &k3 * h));
        q += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        linalg::symmetrize(&mut q);
    }
    Err(Error::Numerical("stationary Riccati solution did not converge".into()))
}

fn newton_kleinman(
    kappa: &DMatrix<f64>,
    sigma_mu_cov: &DMatrix<f64>,
    a: &DMatrix<f64>,
    residual: &dyn Fn(&DMatrix<f64>) -> DMatrix<f64>,
) -> Option<DMatrix<f64>> {
    let d = kappa.nrows();
    let eye = DMatrix::<f64>::identity(d, d);
    // A large multiple of the identity makes kappa + Q A stable.
    let mut c = 1.0 + linalg::row_sum_norm(kappa) + linalg::row_sum_norm(sigma_mu_cov).sqrt();
    let mut q = &eye * c;
    for _ in 0..60 {
        let k = kappa + &q * a;
        if linalg::eigen_real_parts(&k).iter().all(|x| *x > 0.0) {
            break;
        }
        c *= 2.0;
        q = &eye * c;
    }
    for _ in 0..100 {
        let k = kappa + &q * a;
        // Solve K X + X K^T = R(Q) via the Kronecker form.
        let r = residual(&q);
        let big = eye.kronecker(&k) + k.kronecker(&eye);
        let x = big.lu().solve(&DVector::from_column_slice(r.as_slice()))?;
        let mut step = DMatrix::from_column_slice(d, d, x.as_slice());
        linalg::symmetrize(&mut step);
        q += &step;
        if linalg::row_sum_norm(&step) <= 1e-14 * linalg::row_sum_norm(&q).max(1e-300) {
            break;
        }
    }
    Some(q)
}

/// Number of grid rows where `||Q_t|| > C_Q`.
pub fn bound_violations(model: &Model, path: &FilterPath) -> usize {
    (0..path.len())
        .filter(|&r| linalg::row_sum_norm(&path.q_at(r)) > model.cov_bound)
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{BundleOptions, OneAsset, simulate_bundle};
    use crate::rng::SeedTree;

    fn scalar(kappa: f64, sigma_mu: f64, sigma_r: f64) -> Model {
        OneAsset { kappa, sigma_mu, sigma_r, ..Default::default() }.model().unwrap()
    }

    fn s1(x: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, x)
    }

    #[test]
    fn rhs_examples() {
        let m = scalar(1.0, 1.0, 1.0);
        assert_eq!(riccati_rhs(&m, &s1(0.0))[(0, 0)], 1.0);
        assert!(riccati_rhs(&m, &s1(2f64.sqrt() - 1.0))[(0, 0)].abs() < 1e-15);
        let m0 = scalar(0.0, 0.0, 1.0);
        assert_eq!(riccati_rhs(&m0, &s1(1.0))[(0, 0)], -1.0);
    }

    #[test]
    fn separable_riccati() {
        let m = scalar(0.0, 0.0, 1.0);
        let q = integrate_riccati(&m, &s1(1.0), 0.0, 1.0, 1e-3).unwrap();
        assert!((q[(0, 0)] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn stationary_root_is_preserved() {
        let m = scalar(1.0, 1.0, 1.0);
        let r = 2f64.sqrt() - 1.0;
        let q = integrate_riccati(&m, &s1(r), 0.0, 3.0, 1e-2).unwrap();
        assert!((q[(0, 0)] - r).abs() < 1e-8);
        assert!((m.stationary_q[(0, 0)] - r).abs() < 1e-14);
    }

    #[test]
    fn zero_interval_is_identity() {
        let m = scalar(1.0, 1.0, 1.0);
        let q0 = s1(0.3);
        assert_eq!(integrate_riccati(&m, &q0, 2.0, 2.0, 0.1).unwrap(), q0);
        assert!(integrate_riccati(&m, &q0, 0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn zero_gain_mean_decay() {
        let m = OneAsset { mu_bar: 0.0, kappa: 1.0, q0: 0.0, sigma_mu: 0.0, ..Default::default() }
            .model()
            .unwrap();
        let st = FilterState { t: 0.0, m: DVector::from_element(1, 1.0), q: s1(0.0) };
        let next = propagate_mean(&m, &st, &DVector::from_element(1, 123.0), 0.01).unwrap();
        assert!((next.m[0] - 0.99).abs() < 1e-15);
    }

    #[test]
    fn zero_innovation_keeps_mean() {
        let m = OneAsset { kappa: 0.0, sigma_r: 1.0, ..Default::default() }.model().unwrap();
        let st = FilterState { t: 0.0, m: DVector::from_element(1, 0.3), q: s1(1.0) };
        let next = propagate_mean(&m, &st, &DVector::from_element(1, 0.3 * 0.01), 0.01).unwrap();
        assert_eq!(next.m[0], 0.3);
    }

    #[test]
    fn bayes_examples() {
        let m = OneAsset { gamma: 1.0, ..Default::default() }.model().unwrap();
        let st = FilterState { t: 0.5, m: DVector::from_element(1, 0.0), q: s1(1.0) };
        let v = ExpertView { arrival_time: 0.5, value: DVector::from_element(1, 2.0) };
        let post = bayes_update(&m, &st, &v).unwrap();
        assert!((post.m[0] - 1.0).abs() < 1e-15);
        assert!((post.q[(0, 0)] - 0.5).abs() < 1e-15);

        let certain = FilterState { q: s1(0.0), ..st.clone() };
        assert_eq!(bayes_update(&m, &certain, &v).unwrap(), certain);

        let late = ExpertView { arrival_time: 0.6, ..v };
        assert!(matches!(bayes_update(&m, &st, &late), Err(Error::Grid(_))));
    }

    #[test]
    fn bayes_matches_precision_form() {
        let m = OneAsset { gamma: 0.5, ..Default::default() }.model().unwrap();
        let st = FilterState { t: 0.0, m: DVector::from_element(1, 0.1), q: s1(0.3) };
        let v = ExpertView { arrival_time: 0.0, value: DVector::from_element(1, -0.2) };
        let post = bayes_update(&m, &st, &v).unwrap();
        let prec = 1.0 / 0.3 + 1.0 / 0.5;
        let var = 1.0 / prec;
        let mean = var * (0.1 / 0.3 - 0.2 / 0.5);
        assert!((post.q[(0, 0)] - var).abs() < 1e-12);
        assert!((post.m[0] - mean).abs() < 1e-12);
    }

    #[test]
    fn predictive_law() {
        let m = OneAsset { gamma: 0.5, ..Default::default() }.model().unwrap();
        let st = FilterState { t: 0.0, m: DVector::from_element(1, 0.0), q: s1(0.3) };
        let (mean, cov) = view_predictive(&m, &st);
        assert_eq!(mean[0], 0.0);
        assert!((cov[(0, 0)] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn newton_kleinman_matches_scalar_root_on_diagonal_system() {
        let kappa = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]));
        let smu = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.5]));
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0]));
        let q = stationary_riccati(&kappa, &smu, &a, &DMatrix::zeros(2, 2)).unwrap();
        let root = |k: f64, s: f64, a: f64| (-k + (k * k + a * s).sqrt()) / a;
        assert!((q[(0, 0)] - root(1.0, 1.0, 1.0)).abs() < 1e-12);
        assert!((q[(1, 1)] - root(2.0, 0.5, 4.0)).abs() < 1e-12);
        assert!(q[(0, 1)].abs() < 1e-12);
    }

    #[test]
    fn scalar_and_matrix_filters_agree() {
        let m = OneAsset { lambda: 3.0, ..Default::default() }.model().unwrap();
        let b = simulate_bundle(&m, &BundleOptions { n_steps: 200 }, &SeedTree::new(1), 0).unwrap();
        let p = m.params();
        let fast = run_filter(&m, &b, &p.m0, &p.q0).unwrap();
        let mut st = FilterState::prior(&m);
        let mut v = 0;
        for i in 0..b.n_steps() {
            st = propagate_mean(&m, &st, &b.return_increment(i), b.grid[i + 1] - b.grid[i]).unwrap();
            st.t = b.grid[i + 1];
            if v < b.views.len() && b.view_steps[v] == i + 1 {
                st = bayes_update(&m, &st, &b.views[v]).unwrap();
                v += 1;
            }
            let row = fast.grid_row[i + 1];
            assert!((fast.m_at(row)[0] - st.m[0]).abs() < 1e-13);
            assert!((fast.q_at(row)[(0, 0)] - st.q[(0, 0)]).abs() < 1e-15);
        }
        assert_eq!(fast.pre_update_rows().count(), b.views.len());
    }
}
