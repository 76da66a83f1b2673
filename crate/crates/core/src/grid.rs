//! Uniform axes and the (t, m, q) lattice used by the one-asset solver.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::Model;

/// `n` uniformly spaced points on `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Grid(format!("axis needs at least 2 points, got {n}")));
        }
        if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Grid(format!("invalid axis bounds [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi, n })
    }

    #[inline]
    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.n - 1) as f64
    }

    #[inline]
    pub fn at(&self, i: usize) -> f64 {
        if i + 1 == self.n {
            self.hi
        } else {
            self.lo + i as f64 * self.step()
        }
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.at(i)).collect()
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    /// Cell index and weight of the right neighbour for linear
    /// interpolation; `x` is clamped to the axis.
    #[inline]
    pub fn locate(&self, x: f64) -> (usize, f64) {
        let h = self.step();
        let s = ((x - self.lo) / h).clamp(0.0, (self.n - 1) as f64);
        let i = (s.floor() as usize).min(self.n - 2);
        (i, s - i as f64)
    }
}

/// Lattice of snapshot times, filter means and filter variances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    pub m: Axis,
    pub q: Axis,
    pub t: Axis,
}

impl Grid2D {
    pub fn new(m: Axis, q: Axis, t: Axis) -> Self {
        Self { m, q, t }
    }

    /// Grid covering the prior, the stationary variance and the long-run
    /// mean level with a margin of six standard deviations in `m`.
    pub fn for_model(model: &Model, n_m: usize, n_q: usize, n_t: usize) -> Result<Self> {
        let (m_lo, m_hi, q_hi) = default_bounds(model)?;
        Ok(Self {
            m: Axis::new(m_lo, m_hi, n_m)?,
            q: Axis::new(0.0, q_hi, n_q)?,
            t: Axis::new(0.0, model.horizon(), n_t)?,
        })
    }

    /// Check the solver's coverage requirements for `model`.
    pub fn validate(&self, model: &Model) -> Result<()> {
        if model.d() != 1 {
            return Err(Error::Parameter("the lattice solver supports d = 1 only".into()));
        }
        let p = model.params();
        let tol = 1e-12;
        if self.q.lo > 0.0 {
            return Err(Error::Grid(format!("q axis must start at or below 0, got {}", self.q.lo)));
        }
        let qs = model.stationary_q[(0, 0)];
        let q0 = p.q0[(0, 0)];
        if self.q.hi < qs * (1.0 - tol) || self.q.hi < q0 * (1.0 - tol) {
            return Err(Error::Grid(format!(
                "q_hi={} must cover the stationary variance {qs} and q0={q0}",
                self.q.hi
            )));
        }
        let half = 6.0 * self.q.hi.sqrt();
        let m0 = p.m0[0];
        if self.m.lo > m0 - half + tol || self.m.hi < m0 + half - tol {
            return Err(Error::Grid(format!(
                "m axis [{}, {}] must cover m0 +- 6 sqrt(q_hi) = [{}, {}]",
                self.m.lo,
                self.m.hi,
                m0 - half,
                m0 + half
            )));
        }
        if (self.t.lo != 0.0) || (self.t.hi - model.horizon()).abs() > tol * model.horizon() {
            return Err(Error::Grid(format!(
                "t axis must span [0, {}], got [{}, {}]",
                model.horizon(),
                self.t.lo,
                self.t.hi
            )));
        }
        Ok(())
    }

    /// Same bounds, every resolution scaled by `factor` (in intervals).
    pub fn refined(&self, factor: usize) -> Result<Self> {
        let f = |a: Axis| Axis::new(a.lo, a.hi, (a.n - 1) * factor + 1);
        Ok(Self { m: f(self.m)?, q: f(self.q)?, t: self.t })
    }
}

fn default_bounds(model: &Model) -> Result<(f64, f64, f64)> {
    if model.d() != 1 {
        return Err(Error::Parameter("the lattice solver supports d = 1 only".into()));
    }
    let p = model.params();
    let q_hi = 1.25 * model.stationary_q[(0, 0)].max(p.q0[(0, 0)]).max(1e-12);
    let half = 6.0 * q_hi.sqrt();
    let m0 = p.m0[0];
    let mb = p.mu_bar[0];
    Ok((m0.min(mb) - half, m0.max(mb) + half, q_hi))
}
