//! Monte Carlo evaluation of decision rules under the changed measure
//! (risk-sensitive reward) and under the original measure (expected power
//! utility of terminal wealth and the density process of the measure change).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::run_filter;
use crate::market::{simulate_bundle, BundleOptions, Model};
use crate::par::{self, Execution};
use crate::rng::SeedTree;
use crate::rule::DecisionRule;
use crate::state_space::{simulate_state, RegularizationConfig, StateNoise, VecState};
use crate::stats::{self, Estimate, Summary};

/// Largest tolerated share of rejected (non-finite) paths.
pub const MAX_REJECT_RATE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McOptions {
    /// Base steps on `[0, T]`; arrivals are spliced in.
    pub n_steps: usize,
    pub exec: Execution,
}

impl Default for McOptions {
    fn default() -> Self {
        Self { n_steps: 2000, exec: Execution::Sequential }
    }
}

impl McOptions {
    pub fn bundle(&self) -> BundleOptions {
        BundleOptions { n_steps: self.n_steps }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardEstimate {
    /// Estimate of `E[exp(eta)]`.
    pub estimate: Estimate,
    pub eta_summary: Summary,
    pub rejected: usize,
}

fn check_rejections(rejected: usize, n: usize, what: &str) -> Result<()> {
    if n == 0 {
        return Err(Error::Parameter("n_paths must be positive".into()));
    }
    if rejected as f64 > MAX_REJECT_RATE * n as f64 {
        return Err(Error::Statistical(format!(
            "{what}: {rejected} of {n} paths produced non-finite values"
        )));
    }
    Ok(())
}

/// Integrated running reward `eta` of each path, in path order (NaN for
/// rejected paths).
#[allow(clippy::too_many_arguments)]
pub fn eta_samples(
    model: &Model,
    rule: &DecisionRule,
    t0: f64,
    y0: &VecState,
    n_paths: usize,
    cfg: Option<&RegularizationConfig>,
    opts: &McOptions,
    seeds: &SeedTree,
) -> Result<Vec<f64>> {
    let perturbed = cfg.is_some_and(|c| c.k.is_some());
    let out = par::map_indexed(opts.exec, n_paths, |i| -> Result<f64> {
        let noise = StateNoise::generate(model, &opts.bundle(), t0, seeds, i as u64, perturbed)?;
        Ok(simulate_state(model, y0, rule, &noise, cfg, false)?.eta)
    });
    out.into_iter()
        .map(|r| r.map(|x| if x.is_finite() { x } else { f64::NAN }))
        .collect()
}

fn finite(x: &[f64]) -> (Vec<f64>, usize) {
    let v: Vec<f64> = x.iter().copied().filter(|v| v.is_finite()).collect();
    let rej = x.len() - v.len();
    (v, rej)
}

/// Reward `D(t0, y0; rule) = E[exp(eta)]` with its standard error.
#[allow(clippy::too_many_arguments)]
pub fn reward_mc(
    model: &Model,
    rule: &DecisionRule,
    t0: f64,
    y0: &VecState,
    n_paths: usize,
    cfg: Option<&RegularizationConfig>,
    opts: &McOptions,
    seeds: &SeedTree,
) -> Result<RewardEstimate> {
    let eta = eta_samples(model, rule, t0, y0, n_paths, cfg, opts, seeds)?;
    let (ok, rejected) = finite(&eta);
    check_rejections(rejected, n_paths, "reward")?;
    Ok(RewardEstimate {
        estimate: stats::exp_mean(&ok),
        eta_summary: Summary::of(&ok),
        rejected,
    })
}

/// Per-path outcome under the original measure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WealthSample {
    /// `log(X_T / x0)`.
    pub log_return: f64,
    /// `log Lambda_T`.
    pub log_density: f64,
}

/// Simulate drift, returns and views under the original measure, run the
/// filter, invest according to `rule` and record terminal log-wealth and
/// the log of the density `Lambda_T`.
pub fn wealth_samples(
    model: &Model,
    rule: &DecisionRule,
    n_paths: usize,
    opts: &McOptions,
    seeds: &SeedTree,
) -> Result<Vec<WealthSample>> {
    let th = model.theta();
    let out = par::map_indexed(opts.exec, n_paths, |i| -> Result<WealthSample> {
        let b = simulate_bundle(model, &opts.bundle(), seeds, i as u64)?;
        let p = model.params();
        let path = run_filter(model, &b, &p.m0, &p.q0)?;
        let mut lr = 0.0;
        let mut ld = 0.0;
        if let Some(s) = model.scalar() {
            for k in 0..b.n_steps() {
                let row = path.grid_row[k];
                let (m, q) = (path.m[row], path.q[row]);
                let pi = rule.eval_scalar(b.grid[k], m, q);
                let h = b.grid[k + 1] - b.grid[k];
                let dr = b.return_path[k + 1] - b.return_path[k];
                let var = pi * pi * s.sigma_r_cov * h;
                lr += pi * dr - 0.5 * var;
                ld += th * pi * (dr - m * h) - 0.5 * th * th * var;
            }
        } else {
            for k in 0..b.n_steps() {
                let st = path.state(path.grid_row[k]);
                let pi = rule.eval(b.grid[k], &st.m, &st.q)?;
                let h = b.grid[k + 1] - b.grid[k];
                let dr = b.return_increment(k);
                let var = pi.dot(&(&model.sigma_r_cov * &pi)) * h;
                lr += pi.dot(&dr) - 0.5 * var;
                ld += th * pi.dot(&(dr - &st.m * h)) - 0.5 * th * th * var;
            }
        }
        Ok(WealthSample { log_return: lr, log_density: ld })
    });
    out.into_iter().collect()
}

/// `x0^theta / theta * exp(theta * log_return)`.
pub fn utility(model: &Model, log_return: f64) -> f64 {
    let th = model.theta();
    let x0 = model.params().x0;
    x0.powf(th) / th * (th * log_return).exp()
}

/// Expected power utility of terminal wealth.
pub fn wealth_utility_mc(
    model: &Model,
    rule: &DecisionRule,
    n_paths: usize,
    opts: &McOptions,
    seeds: &SeedTree,
) -> Result<Estimate> {
    let s = wealth_samples(model, rule, n_paths, opts, seeds)?;
    let u: Vec<f64> = s.iter().map(|w| utility(model, w.log_return)).collect();
    let (ok, rejected) = finite(&u);
    check_rejections(rejected, n_paths, "utility")?;
    Ok(Estimate::from_samples(&ok))
}

/// `E[Lambda_T]`, which equals one for admissible rules.
pub fn lambda_martingale_check(
    model: &Model,
    rule: &DecisionRule,
    n_paths: usize,
    opts: &McOptions,
    seeds: &SeedTree,
) -> Result<Estimate> {
    let s = wealth_samples(model, rule, n_paths, opts, seeds)?;
    let l: Vec<f64> = s.iter().map(|w| w.log_density.exp()).collect();
    let (ok, rejected) = finite(&l);
    check_rejections(rejected, n_paths, "density")?;
    Ok(Estimate::from_samples(&ok))
}

/// `(x0^theta / theta) V0`.
pub fn original_value(x0: f64, theta: f64, v0: f64) -> Result<f64> {
    if !(x0 > 0.0) || !(v0 > 0.0) || theta == 0.0 || !(theta < 1.0) {
        return Err(Error::Parameter(format!("invalid original_value({x0}, {theta}, {v0})")));
    }
    Ok(x0.powf(theta) / theta * v0)
}

/// Two estimators on common random numbers and their paired difference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Paired {
    pub a: Estimate,
    pub b: Estimate,
    /// Estimate of `E[a - b]`; its standard error is the joint SE.
    pub diff: Estimate,
}

impl Paired {
    pub fn from_samples(a: &[f64], b: &[f64]) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::Dimension { what: "paired samples", expected: a.len(), got: b.len() });
        }
        let keep: Vec<usize> = (0..a.len()).filter(|&i| a[i].is_finite() && b[i].is_finite()).collect();
        check_rejections(a.len() - keep.len(), a.len(), "paired estimate")?;
        let xa: Vec<f64> = keep.iter().map(|&i| a[i]).collect();
        let xb: Vec<f64> = keep.iter().map(|&i| b[i]).collect();
        let d: Vec<f64> = xa.iter().zip(&xb).map(|(x, y)| x - y).collect();
        Ok(Self {
            a: Estimate::from_samples(&xa),
            b: Estimate::from_samples(&xb),
            diff: Estimate::from_samples(&d),
        })
    }
}

/// Measure-change identity: expected utility against
/// `(x0^theta/theta) E[exp(eta)]` on common random numbers. `a` is the
/// utility, `b` the scaled reward.
pub fn identity_check(
    model: &Model,
    rule: &DecisionRule,
    n_paths: usize,
    opts: &McOptions,
    seeds: &SeedTree,
) -> Result<Paired> {
    let w = wealth_samples(model, rule, n_paths, opts, seeds)?;
    let y0 = VecState::initial(model)?;
    let eta = eta_samples(model, rule, 0.0, &y0, n_paths, None, opts, seeds)?;
    let u: Vec<f64> = w.iter().map(|s| utility(model, s.log_return)).collect();
    let x0 = model.params().x0;
    let th = model.theta();
    let r: Vec<f64> = eta.iter().map(|e| x0.powf(th) / th * e.exp()).collect();
    Paired::from_samples(&u, &r)
}

/// Rewards of two rules on common random numbers (`a - b`).
#[allow(clippy::too_many_arguments)]
pub fn compare_rules(
    model: &Model,
    a: &DecisionRule,
    b: &DecisionRule,
    y0: &VecState,
    n_paths: usize,
    opts: &McOptions,
    seeds: &SeedTree,
) -> Result<Paired> {
    let ea = eta_samples(model, a, 0.0, y0, n_paths, None, opts, seeds)?;
    let eb = eta_samples(model, b, 0.0, y0, n_paths, None, opts, seeds)?;
    let xa: Vec<f64> = ea.iter().map(|e| e.exp()).collect();
    let xb: Vec<f64> = eb.iter().map(|e| e.exp()).collect();
    Paired::from_samples(&xa, &xb)
}
