//! One-dimensional densities on a shared uniform grid, integrated with the
//! trapezoid rule throughout.

mod engine;
mod transport;

pub use engine::{GridModel, GridProduct, GridReference};
pub use transport::{cdf, displacement_interpolate_1d, quantile_levels, quantiles, w2_1d, QUANTILE_LEVELS};

use crate::error::{Error, Result};

/// Largest probability mass tolerated in the outermost grid cells.
pub const BOUNDARY_GUARD: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid1D {
    lo: f64,
    hi: f64,
    n: usize,
}

impl Grid1D {
    pub const MIN_POINTS: usize = 64;

    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Precondition(format!("grid domain [{lo}, {hi}] is empty")));
        }
        if n < Self::MIN_POINTS {
            return Err(Error::Precondition(format!(
                "grid needs at least {} points, got {n}",
                Self::MIN_POINTS
            )));
        }
        Ok(Self { lo, hi, n })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.n - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i == self.n - 1 {
            self.hi
        } else {
            self.lo + i as f64 * self.spacing()
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(|i| self.node(i))
    }

    /// Trapezoid weight of node `i`.
    pub fn weight(&self, i: usize) -> f64 {
        if i == 0 || i == self.n - 1 {
            0.5 * self.spacing()
        } else {
            self.spacing()
        }
    }

    pub fn integrate(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.n);
        let inner: f64 = values[1..self.n - 1].iter().sum();
        self.spacing() * (inner + 0.5 * (values[0] + values[self.n - 1]))
    }
}

/// A normalized density on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    grid: Grid1D,
    /// Unnormalized log density at the nodes; `-inf` marks zero density.
    log_values: Vec<f64>,
    /// Log of the trapezoid integral of `exp(log_values)`.
    normalizer: f64,
    values: Vec<f64>,
}

impl GridDensity {
    /// Normalizes `exp(log_values)` after shifting by the maximum.
    pub fn normalize(log_values: Vec<f64>, grid: Grid1D) -> Result<Self> {
        if log_values.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                got: log_values.len(),
            });
        }
        if let Some(i) = log_values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        let shift = log_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut values: Vec<f64> = log_values.iter().map(|&v| (v - shift).exp()).collect();
        let z = grid.integrate(&values);
        values.iter_mut().for_each(|v| *v /= z);
        Ok(Self {
            grid,
            log_values,
            normalizer: shift + z.ln(),
            values,
        })
    }

    /// Normalizes nonnegative density values, zeros allowed.
    pub fn from_values(values: Vec<f64>, grid: Grid1D) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::NonFinite(i));
        }
        let z = grid.integrate(&values);
        if !(z > 0.0) {
            return Err(Error::DegenerateCdf("density has zero mass".into()));
        }
        let log_values = values.iter().map(|v| v.ln()).collect();
        let values = values.into_iter().map(|v| v / z).collect();
        Ok(Self {
            grid,
            log_values,
            normalizer: z.ln(),
            values,
        })
    }

    /// Normalizes and then enforces the boundary-mass guard.
    pub fn normalize_guarded(log_values: Vec<f64>, grid: Grid1D) -> Result<Self> {
        let q = Self::normalize(log_values, grid)?;
        q.check_boundary(BOUNDARY_GUARD)?;
        Ok(q)
    }

    pub fn grid(&self) -> Grid1D {
        self.grid
    }

    pub fn log_values(&self) -> &[f64] {
        &self.log_values
    }

    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    /// Normalized density at the nodes.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn log_density(&self, i: usize) -> f64 {
        self.log_values[i] - self.normalizer
    }

    /// Probability mass in the first and last grid cells.
    pub fn boundary_mass(&self) -> f64 {
        let n = self.values.len();
        let h = self.grid.spacing();
        0.5 * h * (self.values[0] + self.values[1] + self.values[n - 2] + self.values[n - 1])
    }

    pub fn check_boundary(&self, guard: f64) -> Result<()> {
        let mass = self.boundary_mass();
        if mass >= guard {
            return Err(Error::BoundaryMass { mass, guard });
        }
        Ok(())
    }

    /// `E[x^p]` for `p = 0..=max_order`.
    pub fn moments(&self, max_order: u32) -> Vec<f64> {
        let mut out = vec![0.0; max_order as usize + 1];
        for (i, x) in self.grid.nodes().enumerate() {
            let w = self.grid.weight(i) * self.values[i];
            let mut xp = 1.0;
            for slot in out.iter_mut() {
                *slot += w * xp;
                xp *= x;
            }
        }
        out
    }

    /// `H(q) = ∫ q log q`, with `0 · log 0 = 0`.
    pub fn entropy(&self) -> f64 {
        (0..self.values.len())
            .filter(|&i| self.values[i] > 0.0)
            .map(|i| self.grid.weight(i) * self.values[i] * self.log_density(i))
            .sum()
    }
}
