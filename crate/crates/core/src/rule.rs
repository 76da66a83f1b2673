//! Decision rules: fraction of wealth in the risky assets as a function of
//! time and filter state, always clipped to a bound `L`.

use nalgebra::{DMatrix, DVector};

use crate::error::{dim, Error, Result};
use crate::grid::Axis;
use crate::market::Model;

/// Tabulated one-asset rule `p(t_i, m_j, q_l)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleTable {
    pub t: Axis,
    pub m: Axis,
    pub q: Axis,
    /// Indexed `[i][l][j]`: time, then q-slice, then m.
    pub values: Vec<f64>,
}

impl RuleTable {
    pub fn new(t: Axis, m: Axis, q: Axis, values: Vec<f64>) -> Result<Self> {
        dim("rule table size", t.n * m.n * q.n, values.len())?;
        Ok(Self { t, m, q, values })
    }

    #[inline]
    fn slice(&self, i: usize, jm: usize, wm: f64, lq: usize, wq: f64) -> f64 {
        let nm = self.m.n;
        let base = i * self.q.n * nm;
        let v = |l: usize, j: usize| self.values[base + l * nm + j];
        let lo = v(lq, jm) * (1.0 - wm) + v(lq, jm + 1) * wm;
        let hi = v(lq + 1, jm) * (1.0 - wm) + v(lq + 1, jm + 1) * wm;
        lo * (1.0 - wq) + hi * wq
    }

    /// Linear in `t`, bilinear in `(m, q)`, constant outside the table.
    #[inline]
    pub fn eval(&self, t: f64, m: f64, q: f64) -> f64 {
        let (it, wt) = self.t.locate(t);
        let (jm, wm) = self.m.locate(m);
        let (lq, wq) = self.q.locate(q);
        let a = self.slice(it, jm, wm, lq, wq);
        if wt == 0.0 {
            return a;
        }
        let b = self.slice(it + 1, jm, wm, lq, wq);
        a * (1.0 - wt) + b * wt
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RuleKind {
    Zero,
    Constant(DVector<f64>),
    /// `Sigma_R^{-1} m / (1 - theta)`.
    Myopic(DMatrix<f64>),
    Table(RuleTable),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionRule {
    pub kind: RuleKind,
    /// Componentwise bound on the fraction.
    pub clip: f64,
}

impl DecisionRule {
    pub fn zero() -> Self {
        Self { kind: RuleKind::Zero, clip: f64::INFINITY }
    }

    pub fn constant(p: DVector<f64>, clip: f64) -> Result<Self> {
        check_clip(clip)?;
        Ok(Self { kind: RuleKind::Constant(p), clip })
    }

    pub fn myopic(model: &Model, clip: f64) -> Result<Self> {
        check_clip(clip)?;
        let gain = &model.sigma_r_inv / (1.0 - model.theta());
        Ok(Self { kind: RuleKind::Myopic(gain), clip })
    }

    pub fn table(table: RuleTable, clip: f64) -> Result<Self> {
        check_clip(clip)?;
        Ok(Self { kind: RuleKind::Table(table), clip })
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            RuleKind::Zero => "zero",
            RuleKind::Constant(_) => "constant",
            RuleKind::Myopic(_) => "myopic",
            RuleKind::Table(_) => "grid",
        }
    }

    pub fn is_zero(&self) -> bool {
        match &self.kind {
            RuleKind::Zero => true,
            RuleKind::Constant(p) => p.iter().all(|x| *x == 0.0),
            _ => false,
        }
    }

    /// One-asset evaluation.
    #[inline]
    pub fn eval_scalar(&self, t: f64, m: f64, q: f64) -> f64 {
        let p = match &self.kind {
            RuleKind::Zero => 0.0,
            RuleKind::Constant(p) => p[0],
            RuleKind::Myopic(g) => g[(0, 0)] * m,
            RuleKind::Table(tab) => tab.eval(t, m, q),
        };
        p.clamp(-self.clip, self.clip)
    }

    pub fn eval(&self, t: f64, m: &DVector<f64>, q: &DMatrix<f64>) -> Result<DVector<f64>> {
        let d = m.len();
        let mut p = match &self.kind {
            RuleKind::Zero => DVector::zeros(d),
            RuleKind::Constant(p) => {
                dim("constant rule", d, p.len())?;
                p.clone()
            }
            RuleKind::Myopic(g) => {
                dim("myopic gain", d, g.nrows())?;
                g * m
            }
            RuleKind::Table(tab) => {
                if d != 1 {
                    return Err(Error::Parameter("tabulated rules are one-asset only".into()));
                }
                DVector::from_element(1, tab.eval(t, m[0], q[(0, 0)]))
            }
        };
        for x in p.iter_mut() {
            *x = x.clamp(-self.clip, self.clip);
        }
        Ok(p)
    }
}

fn check_clip(clip: f64) -> Result<()> {
    if !(clip > 0.0) {
        return Err(Error::Parameter(format!("clip bound must be > 0, got {clip}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::OneAsset;

    #[test]
    fn myopic_examples() {
        let m = OneAsset { theta: 0.5, sigma_r: 0.2, ..Default::default() }.model().unwrap();
        let r = DecisionRule::myopic(&m, f64::INFINITY).unwrap();
        assert!((r.eval_scalar(0.0, 0.02, 0.0) - 1.0).abs() < 1e-12);
        assert_eq!(r.eval_scalar(0.0, 0.0, 0.0), 0.0);
        let log = OneAsset { theta: 1e-6, sigma_r: 0.2, ..Default::default() }.model().unwrap();
        let r = DecisionRule::myopic(&log, f64::INFINITY).unwrap();
        assert!((r.eval_scalar(0.0, 0.02, 0.0) / 0.5 - 1.0).abs() < 2e-6);
    }

    #[test]
    fn clip_applies() {
        let m = OneAsset::default().model().unwrap();
        let r = DecisionRule::myopic(&m, 2.0).unwrap();
        assert_eq!(r.eval_scalar(0.0, 10.0, 0.0), 2.0);
        assert_eq!(r.eval_scalar(0.0, -10.0, 0.0), -2.0);
    }

    #[test]
    fn table_interpolates_trilinear_functions_exactly() {
        let t = Axis::new(0.0, 1.0, 3).unwrap();
        let m = Axis::new(-1.0, 1.0, 5).unwrap();
        let q = Axis::new(0.0, 0.5, 4).unwrap();
        let f = |t: f64, m: f64, q: f64| 1.0 + 2.0 * t + 3.0 * m - q + m * q;
        let mut v = Vec::new();
        for i in 0..t.n {
            for l in 0..q.n {
                for j in 0..m.n {
                    v.push(f(t.at(i), m.at(j), q.at(l)));
                }
            }
        }
        let tab = RuleTable::new(t, m, q, v).unwrap();
        for &(a, b, c) in &[(0.3, 0.1, 0.2), (0.75, -0.9, 0.45), (1.0, 1.0, 0.0)] {
            assert!((tab.eval(a, b, c) - f(a, b, c)).abs() < 1e-12);
        }
        // Constant extrapolation.
        assert!((tab.eval(0.5, 3.0, 0.1) - tab.eval(0.5, 1.0, 0.1)).abs() < 1e-15);
    }
}
