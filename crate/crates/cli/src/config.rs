//! Run configuration: a single JSON file, strictly validated, resolved to
//! fully explicit values before any command runs.

use std::path::{Path, PathBuf};

use driftlab::grid::{Axis, Grid2D};
use driftlab::state_space::RegularizationConfig;
use driftlab::{Model, ModelParams};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelParams,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub mc: McConfig,
    #[serde(default)]
    pub regularization: RegularizationBlock,
    #[serde(default)]
    pub evaluate: EvaluateConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Lattice for the one-asset solver. Unset bounds follow the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub n_m: usize,
    pub n_q: usize,
    pub n_t: usize,
    pub m_lo: Option<f64>,
    pub m_hi: Option<f64>,
    pub q_hi: Option<f64>,
    pub min_substeps: usize,
    pub gh_order: usize,
    pub max_steps: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            n_m: 81,
            n_q: 41,
            n_t: 21,
            m_lo: None,
            m_hi: None,
            q_hi: None,
            min_substeps: 4,
            gh_order: 11,
            max_steps: 5_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McConfig {
    /// Paths per estimate (bundles for the filter diagnostics).
    pub n_paths: usize,
    /// Base step; arrivals are spliced into the uniform grid. Unset means `T/2000`.
    pub dt: Option<f64>,
    pub seed: u64,
    /// Bundles (and filter paths) written to disk.
    pub n_bundles: usize,
}

impl Default for McConfig {
    fn default() -> Self {
        Self { n_paths: 10_000, dt: None, seed: 0, n_bundles: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleName {
    Zero,
    Constant,
    Myopic,
    Optimal,
}

impl RuleName {
    pub fn as_str(self) -> &'static str {
        match self {
            RuleName::Zero => "zero",
            RuleName::Constant => "constant",
            RuleName::Myopic => "myopic",
            RuleName::Optimal => "optimal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegularizationBlock {
    /// Taper width; unset means `0.1 min(lambda_min(Gamma), 1) / d`.
    pub epsilon: Option<f64>,
    pub k_list: Vec<u64>,
    pub delta: f64,
    pub rule: RuleName,
    /// Run the epsilon-optimality experiment (one asset only).
    pub eps_optimality: bool,
}

impl Default for RegularizationBlock {
    fn default() -> Self {
        Self {
            epsilon: None,
            k_list: vec![10, 100, 1000, 10_000],
            delta: 0.5,
            rule: RuleName::Myopic,
            eps_optimality: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateConfig {
    pub rules: Vec<RuleName>,
    /// Fraction vector of the constant rule.
    pub constant: Option<Vec<f64>>,
    /// Clip bound; unset means ten times the largest myopic fraction on the lattice.
    pub clip: Option<f64>,
    /// Independent estimates per rule.
    pub runs: usize,
    /// Also compare expected utility with the risk-sensitive reward.
    pub identity_check: bool,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            rules: vec![RuleName::Zero, RuleName::Myopic],
            constant: None,
            clip: None,
            runs: 1,
            identity_check: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub formats: Vec<Format>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), formats: vec![Format::Csv, Format::Json] }
    }
}

impl OutputConfig {
    pub fn csv(&self) -> bool {
        self.formats.contains(&Format::Csv)
    }

    pub fn json(&self) -> bool {
        self.formats.contains(&Format::Json)
    }
}

/// Parse a configuration, reporting the offending field path on failure.
pub fn parse(text: &str) -> Result<RunConfig, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        CliError::config(format!("{path}: {}", e.into_inner()))
    })
}

pub fn load(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    parse(&text)
}

/// Configuration with every default filled in, plus the derived model.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: RunConfig,
    pub model: Model,
    pub n_steps: usize,
    /// Solver lattice (one asset only).
    pub grid: Option<Grid2D>,
}

fn field(name: &str, ok: bool, msg: &str) -> Result<(), CliError> {
    if ok {
        Ok(())
    } else {
        Err(CliError::config(format!("{name}: {msg}")))
    }
}

impl RunConfig {
    /// Validate and fill unset values; `seed` and `out` override the file.
    pub fn resolve(mut self, seed: Option<u64>, out: Option<PathBuf>) -> Result<Resolved, CliError> {
        if let Some(s) = seed {
            self.mc.seed = s;
        }
        if let Some(o) = out {
            self.output.dir = o;
        }
        let model = Model::new(self.model.clone()).map_err(|e| CliError::config(format!("model: {e}")))?;
        self.model = model.params().clone();
        let horizon = model.horizon();

        field("mc.n_paths", self.mc.n_paths > 0, "must be positive")?;
        let dt = *self.mc.dt.get_or_insert(horizon / 2000.0);
        field("mc.dt", dt > 0.0 && dt <= horizon, "must lie in (0, T]")?;
        let n_steps = (horizon / dt).round().max(1.0) as usize;
        field(
            "mc.dt",
            ((n_steps as f64) * dt - horizon).abs() <= 1e-9 * horizon,
            "must divide the horizon",
        )?;

        let r = &mut self.regularization;
        let eps = *r.epsilon.get_or_insert(RegularizationConfig::default_epsilon(&model));
        RegularizationConfig::new(&model, eps, None)
            .map_err(|e| CliError::config(format!("regularization.epsilon: {e}")))?;
        field("regularization.k_list", !r.k_list.is_empty(), "must not be empty")?;
        field("regularization.k_list", r.k_list.iter().all(|&k| k > 0), "entries must be positive")?;
        field("regularization.delta", r.delta > 0.0, "must be positive")?;
        field(
            "regularization.rule",
            matches!(r.rule, RuleName::Zero | RuleName::Myopic | RuleName::Constant),
            "must be zero, constant or myopic",
        )?;
        if model.d() != 1 {
            r.eps_optimality = false;
        }

        let e = &self.evaluate;
        field("evaluate.rules", !e.rules.is_empty(), "must not be empty")?;
        field("evaluate.runs", e.runs > 0, "must be positive")?;
        let wants_constant = e.rules.contains(&RuleName::Constant) || r.rule == RuleName::Constant;
        if let Some(c) = &e.constant {
            field("evaluate.constant", c.len() == model.d(), "needs one entry per asset")?;
            field("evaluate.constant", c.iter().all(|x| x.is_finite()), "entries must be finite")?;
        } else {
            field("evaluate.constant", !wants_constant, "required by the constant rule")?;
        }
        if let Some(c) = e.clip {
            field("evaluate.clip", c > 0.0, "must be positive")?;
        }
        field(
            "evaluate.rules",
            model.d() == 1 || !e.rules.contains(&RuleName::Optimal),
            "the optimal rule needs a one-asset model",
        )?;
        field("output.formats", !self.output.formats.is_empty(), "must not be empty")?;

        let grid = if model.d() == 1 {
            let g = &mut self.grid;
            field("grid.n_m", g.n_m >= 5, "needs at least 5 points")?;
            field("grid.n_q", g.n_q >= 3, "needs at least 3 points")?;
            field("grid.n_t", g.n_t >= 2, "needs at least 2 points")?;
            field("grid.min_substeps", g.min_substeps >= 1, "must be positive")?;
            field("grid.gh_order", g.gh_order >= 1, "must be positive")?;
            let auto = Grid2D::for_model(&model, g.n_m, g.n_q, g.n_t)
                .map_err(|e| CliError::config(format!("grid: {e}")))?;
            let m_lo = *g.m_lo.get_or_insert(auto.m.lo);
            let m_hi = *g.m_hi.get_or_insert(auto.m.hi);
            let q_hi = *g.q_hi.get_or_insert(auto.q.hi);
            let axis = |lo, hi, n, name: &str| Axis::new(lo, hi, n).map_err(|e| CliError::config(format!("grid.{name}: {e}")));
            Some(Grid2D::new(
                axis(m_lo, m_hi, g.n_m, "m")?,
                axis(0.0, q_hi, g.n_q, "q_hi")?,
                auto.t,
            ))
        } else {
            None
        };
        Ok(Resolved { config: self, model, n_steps, grid })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MIN: &str = r#"{"model": {"d": 1, "kappa": [[1.0]], "mu_bar": [0.05], "sigma_mu": [[0.1]],
        "sigma_r": [[0.2]], "gamma": [[0.02]], "lambda": 1.0, "theta": 0.5, "horizon": 1.0,
        "m0": [0.05], "q0": [[0.005]], "x0": 1.0}}"#;

    #[test]
    fn minimal_config_resolves() {
        let r = parse(MIN).unwrap().resolve(Some(9), None).unwrap();
        assert_eq!(r.config.mc.seed, 9);
        assert_eq!(r.n_steps, 2000);
        assert!(r.config.regularization.epsilon.is_some());
        assert!(r.config.grid.m_lo.is_some());
        // the echo re-parses to the same resolution
        let echo = serde_json::to_string(&r.config).unwrap();
        let again = parse(&echo).unwrap().resolve(None, None).unwrap();
        assert_eq!(again.config, r.config);
    }

    #[test]
    fn unknown_key_names_the_field() {
        let bad = MIN.replace("\"x0\": 1.0", "\"x0\": 1.0, \"colour\": 3");
        let e = parse(&bad).unwrap_err();
        assert!(e.message.contains("model") && e.message.contains("colour"), "{}", e.message);
        let bad = format!("{},\"mc\":{{\"n_path\":3}}}}", &MIN[..MIN.len() - 1]);
        assert!(parse(&bad).unwrap_err().message.contains("mc"));
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let c = parse(&MIN.replace("\"theta\": 0.5", "\"theta\": 1.5")).unwrap();
        assert_eq!(c.resolve(None, None).unwrap_err().exit_code(), 2);
        let mut c = parse(MIN).unwrap();
        c.evaluate.rules = vec![RuleName::Constant];
        let e = c.resolve(None, None).unwrap_err();
        assert!(e.message.starts_with("evaluate.constant"));
    }
}
