//! Problem configuration files.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::grid::Grid1D;
use crate::harness::Schedule;
use crate::potential::{BlockStructure, Monomial, Potential};

/// Largest tolerated `|Q_ij − Q_ji|`.
pub const SYMMETRY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub blocks: Vec<usize>,
    pub quadratic: QuadraticConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub monomials: Vec<MonomialConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extra_smoothness: Option<Vec<f64>>,
    #[serde(default)]
    pub engine: EngineKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    #[serde(default, skip_serializing_if = "InitConfig::is_standard")]
    pub init: InitConfig,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default = "default_updates")]
    pub updates: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// Declared convexity constant used instead of the computed one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_star: Option<f64>,
}

fn default_updates() -> u64 {
    100
}

fn default_trials() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticConfig {
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonomialConfig {
    pub coeff: f64,
    /// Coordinate index (as a string key) to exponent.
    pub powers: BTreeMap<String, u32>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EngineKind {
    #[default]
    Gaussian,
    Grid,
}

impl fmt::Display for EngineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EngineKind::Gaussian => "gaussian",
            EngineKind::Grid => "grid",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitConfig {
    /// Independent normals, one mean and variance per coordinate.
    Product { means: Vec<f64>, variances: Vec<f64> },
    /// One cyclic sweep from the point mass at the given point.
    OneSweep { one_sweep_from_point: Vec<f64> },
    /// Standard normal in every coordinate.
    #[default]
    #[serde(skip_deserializing)]
    Standard,
}

impl InitConfig {
    pub fn is_standard(&self) -> bool {
        matches!(self, InitConfig::Standard)
    }
}


#[derive(Debug, Clone, PartialEq)]
pub enum ConfigError {
    Io(String),
    /// Syntax or type error at a position of the file.
    Parse { line: usize, column: usize, message: String },
    /// Every semantic problem found, each prefixed by its field path.
    Invalid(Vec<String>),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Io(msg) => write!(f, "cannot read config: {msg}"),
            ConfigError::Parse { line, column, message } => {
                write!(f, "config parse error at line {line}, column {column}: {message}")
            }
            ConfigError::Invalid(errors) => {
                write!(f, "invalid config:")?;
                for e in errors {
                    write!(f, "\n  {e}")?;
                }
                Ok(())
            }
        }
    }
}

impl std::error::Error for ConfigError {}

/// A validated configuration with its potential assembled.
#[derive(Debug, Clone)]
pub struct Problem {
    pub config: ProblemConfig,
    pub potential: Potential,
    pub blocks: BlockStructure,
    pub grid: Option<Grid1D>,
}

impl Problem {
    pub fn block_count(&self) -> usize {
        self.blocks.count()
    }

    pub fn domain(&self) -> Option<(f64, f64)> {
        self.grid.map(|g| (g.lo(), g.hi()))
    }
}

pub fn load_config(path: &Path) -> Result<Problem, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<Problem, ConfigError> {
    let config: ProblemConfig = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    config.build()
}

fn finite(errors: &mut Vec<String>, path: &str, values: &[f64]) {
    for (i, v) in values.iter().enumerate() {
        if !v.is_finite() {
            errors.push(format!("{path}[{i}]: must be finite"));
        }
    }
}

impl ProblemConfig {
    /// Checks every field and assembles the problem, or returns all errors.
    pub fn build(&self) -> Result<Problem, ConfigError> {
        let mut errors = Vec::new();
        let dim: usize = self.blocks.iter().sum();
        let k = self.blocks.len();

        if self.blocks.is_empty() {
            errors.push("blocks: at least one block is required".into());
        }
        for (i, &d) in self.blocks.iter().enumerate() {
            if d == 0 {
                errors.push(format!("blocks[{i}]: block size must be positive"));
            }
        }

        let q = &self.quadratic.q;
        let mut square = q.len() == dim;
        if q.len() != dim {
            errors.push(format!("quadratic.Q: expected {dim} rows for blocks summing to {dim}, got {}", q.len()));
        }
        for (i, row) in q.iter().enumerate() {
            if row.len() != q.len() {
                errors.push(format!("quadratic.Q[{i}]: expected {} entries, got {}", q.len(), row.len()));
                square = false;
            }
            finite(&mut errors, &format!("quadratic.Q[{i}]"), row);
        }
        if square {
            #[allow(clippy::needless_range_loop)]
            for i in 0..dim {
                for j in i + 1..dim {
                    let diff = (q[i][j] - q[j][i]).abs();
                    if diff > SYMMETRY_TOL {
                        errors.push(format!(
                            "quadratic.Q[{i}][{j}] = {} and quadratic.Q[{j}][{i}] = {} differ by {diff:e}; Q must be symmetric",
                            q[i][j], q[j][i]
                        ));
                    }
                }
            }
        }
        if self.quadratic.b.len() != dim {
            errors.push(format!("quadratic.b: expected {dim} entries, got {}", self.quadratic.b.len()));
        }
        finite(&mut errors, "quadratic.b", &self.quadratic.b);

        let mut monomials = Vec::new();
        for (m, mono) in self.monomials.iter().enumerate() {
            if !mono.coeff.is_finite() {
                errors.push(format!("monomials[{m}].coeff: must be finite"));
            }
            let mut powers = Vec::new();
            for (key, &p) in &mono.powers {
                match key.parse::<usize>() {
                    Ok(i) if i < dim => powers.push((i, p)),
                    Ok(i) => errors.push(format!("monomials[{m}].powers.{key}: coordinate {i} out of range 0..{dim}")),
                    Err(_) => errors.push(format!("monomials[{m}].powers.{key}: not a coordinate index")),
                }
            }
            monomials.push(Monomial::new(mono.coeff, powers));
        }
        let nonquadratic = monomials.iter().any(|m| m.degree() > 2);

        if let Some(extra) = &self.extra_smoothness {
            if extra.len() != k {
                errors.push(format!("extra_smoothness: expected {k} entries, got {}", extra.len()));
            }
            for (i, v) in extra.iter().enumerate() {
                if !(v.is_finite() && *v >= 0.0) {
                    errors.push(format!("extra_smoothness[{i}]: must be finite and nonnegative"));
                }
            }
        } else if nonquadratic {
            errors.push("extra_smoothness: required when monomials of degree above two are present".into());
        }

        let mut grid = None;
        match self.engine {
            EngineKind::Gaussian => {
                if nonquadratic {
                    errors.push("engine: gaussian engine requires purely quadratic potential".into());
                }
                if self.grid.is_some() {
                    errors.push("grid: only used by the grid engine".into());
                }
            }
            EngineKind::Grid => {
                if let Some(i) = self.blocks.iter().position(|&d| d != 1) {
                    errors.push(format!("blocks[{i}]: grid engine requires one-dimensional blocks"));
                }
                match &self.grid {
                    None => errors.push("grid: required for the grid engine".into()),
                    Some(g) => match Grid1D::new(g.lo, g.hi, g.points) {
                        Ok(g) => grid = Some(g),
                        Err(e) => errors.push(format!("grid: {e}")),
                    },
                }
            }
        }

        match &self.init {
            InitConfig::Product { means, variances } => {
                if means.len() != dim {
                    errors.push(format!("init.means: expected {dim} entries, got {}", means.len()));
                }
                if variances.len() != dim {
                    errors.push(format!("init.variances: expected {dim} entries, got {}", variances.len()));
                }
                finite(&mut errors, "init.means", means);
                for (i, v) in variances.iter().enumerate() {
                    if !(v.is_finite() && *v > 0.0) {
                        errors.push(format!("init.variances[{i}]: must be positive"));
                    }
                }
            }
            InitConfig::OneSweep { one_sweep_from_point: x } => {
                if x.len() != dim {
                    errors.push(format!("init.one_sweep_from_point: expected {dim} entries, got {}", x.len()));
                }
                finite(&mut errors, "init.one_sweep_from_point", x);
            }
            InitConfig::Standard => {}
        }

        if let Err(e) = self.schedule.validate(k.max(1)) {
            errors.push(format!("schedule: {e}"));
        }
        if self.updates == 0 {
            errors.push("updates: must be positive".into());
        }
        if self.trials == 0 {
            errors.push("trials: must be positive".into());
        }
        if let Some(eps) = self.epsilon {
            if !(eps.is_finite() && eps > 0.0) {
                errors.push("epsilon: must be positive".into());
            }
        }
        if let Some(delta) = self.delta {
            if !(delta > 0.0 && delta < 1.0) {
                errors.push("delta: must lie in (0, 1)".into());
            }
        }
        if let Some(l) = self.lambda_star {
            if !(l > 0.0 && l <= 1.0) {
                errors.push("lambda_star: must lie in (0, 1]".into());
            }
        }

        if !errors.is_empty() {
            return Err(ConfigError::Invalid(errors));
        }

        let blocks = BlockStructure::new(self.blocks.clone()).map_err(|e| ConfigError::Invalid(vec![format!("blocks: {e}")]))?;
        let qm = DMatrix::from_fn(dim, dim, |i, j| q[i][j]);
        let b = DVector::from_column_slice(&self.quadratic.b);
        let mut potential =
            Potential::new(qm, b, monomials).map_err(|e| ConfigError::Invalid(vec![format!("quadratic: {e}")]))?;
        if let Some(extra) = &self.extra_smoothness {
            potential = potential
                .with_extra_smoothness(extra.clone())
                .map_err(|e| ConfigError::Invalid(vec![format!("extra_smoothness: {e}")]))?;
        }
        if self.engine == EngineKind::Gaussian && nalgebra::Cholesky::new(potential.q().clone()).is_none() {
            return Err(ConfigError::Invalid(vec![
                "quadratic.Q: gaussian engine requires Q positive definite".into(),
            ]));
        }
        Ok(Problem {
            config: self.clone(),
            potential,
            blocks,
            grid,
        })
    }
}
