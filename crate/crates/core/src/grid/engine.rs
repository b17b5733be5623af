use super::transport::{quantile_levels, quantiles, w2_1d, w2_from_quantiles, QUANTILE_LEVELS};
use super::{Grid1D, GridDensity};
use crate::error::{Error, Result};
use crate::potential::{BlockStructure, MomentTable, Potential};

/// Product of one-dimensional grid factors with a moment cache kept in
/// step with the factors.
#[derive(Debug, Clone, PartialEq)]
pub struct GridProduct {
    grid: Grid1D,
    factors: Vec<GridDensity>,
    moments: MomentTable,
    updated: Vec<bool>,
    max_order: u32,
}

impl GridProduct {
    pub fn new(factors: Vec<GridDensity>, max_order: u32) -> Result<Self> {
        let grid = factors
            .first()
            .ok_or_else(|| Error::Precondition("product needs at least one factor".into()))?
            .grid();
        if factors.iter().any(|f| f.grid() != grid) {
            return Err(Error::Precondition("factors must share one grid".into()));
        }
        let max_order = max_order.max(2);
        let moments = MomentTable::new(factors.iter().map(|f| f.moments(max_order)).collect());
        let updated = vec![false; factors.len()];
        Ok(Self {
            grid,
            factors,
            moments,
            updated,
            max_order,
        })
    }

    pub fn grid(&self) -> Grid1D {
        self.grid
    }

    pub fn factors(&self) -> &[GridDensity] {
        &self.factors
    }

    pub fn moments(&self) -> &MomentTable {
        &self.moments
    }

    pub fn block_count(&self) -> usize {
        self.factors.len()
    }

    pub fn all_updated(&self) -> bool {
        self.updated.iter().all(|&u| u)
    }

    pub fn means(&self) -> Vec<f64> {
        (0..self.factors.len()).map(|k| self.moments.row(k)[1]).collect()
    }

    /// `Σ_k E[x_k²]`.
    pub fn second_moment_total(&self) -> f64 {
        (0..self.factors.len()).map(|k| self.moments.row(k)[2]).sum()
    }

    fn replace(&mut self, k: usize, factor: GridDensity) {
        self.moments.set_row(k, factor.moments(self.max_order));
        self.factors[k] = factor;
        self.updated[k] = true;
    }
}

/// The converged numerical stand-in for the mean-field optimum, with its
/// quantile functions cached for repeated distance evaluations.
#[derive(Debug, Clone)]
pub struct GridReference {
    pub state: GridProduct,
    pub free_energy: f64,
    /// Sweeps whose movement was at least the tolerance.
    pub sweeps: usize,
    pub final_movement: f64,
    /// `W_{2,L}` movement of every sweep after the initial one.
    pub movements: Vec<f64>,
    quantiles: Vec<Vec<f64>>,
}

impl GridReference {
    pub fn quantiles(&self, k: usize) -> &[f64] {
        &self.quantiles[k]
    }
}

/// Polynomial potential with scalar blocks discretized on a shared grid.
#[derive(Debug, Clone)]
pub struct GridModel {
    pot: Potential,
    blocks: BlockStructure,
    grid: Grid1D,
    weights: Vec<f64>,
    max_order: u32,
}

impl GridModel {
    pub fn new(pot: Potential, blocks: BlockStructure, grid: Grid1D, weights: Vec<f64>) -> Result<Self> {
        if blocks.dim() != pot.dim() {
            return Err(Error::DimensionMismatch {
                expected: pot.dim(),
                got: blocks.dim(),
            });
        }
        if let Some(k) = blocks.sizes().iter().position(|&s| s != 1) {
            return Err(Error::MultivariateBlock(k));
        }
        if weights.len() != blocks.count() {
            return Err(Error::DimensionMismatch {
                expected: blocks.count(),
                got: weights.len(),
            });
        }
        let max_order = pot.max_degree().max(2);
        Ok(Self {
            pot,
            blocks,
            grid,
            weights,
            max_order,
        })
    }

    pub fn potential(&self) -> &Potential {
        &self.pot
    }

    pub fn blocks(&self) -> &BlockStructure {
        &self.blocks
    }

    pub fn grid(&self) -> Grid1D {
        self.grid
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Independent Gaussian factors discretized on the grid.
    pub fn gaussian_product(&self, means: &[f64], variances: &[f64]) -> Result<GridProduct> {
        let k = self.blocks.count();
        if means.len() != k || variances.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: means.len().min(variances.len()),
            });
        }
        let factors = means
            .iter()
            .zip(variances)
            .map(|(&m, &v)| {
                if !(v > 0.0) {
                    return Err(Error::NotPositiveDefinite(" (initial variance)".into()));
                }
                let lv = self.grid.nodes().map(|x| -(x - m) * (x - m) / (2.0 * v)).collect();
                GridDensity::normalize_guarded(lv, self.grid)
            })
            .collect::<Result<Vec<_>>>()?;
        GridProduct::new(factors, self.max_order)
    }

    fn conditional_factor(&self, k: usize, moments: &MomentTable) -> Result<GridDensity> {
        let poly = self.pot.conditional_polynomial(&self.blocks, k, moments)?;
        let lv = self.grid.nodes().map(|x| -poly.eval(x)).collect();
        GridDensity::normalize_guarded(lv, self.grid)
    }

    /// Replaces factor `k` by `exp(−∫U dq_{−k}) / Z`.
    pub fn cavi_update(&self, state: &mut GridProduct, k: usize) -> Result<()> {
        self.blocks.check_index(k)?;
        if state.block_count() != self.blocks.count() {
            return Err(Error::DimensionMismatch {
                expected: self.blocks.count(),
                got: state.block_count(),
            });
        }
        let factor = self.conditional_factor(k, &state.moments)?;
        state.replace(k, factor);
        Ok(())
    }

    /// Starts from the point mass at `x` and performs one cyclic sweep.
    pub fn one_sweep_from_point(&self, x: &[f64]) -> Result<GridProduct> {
        if x.len() != self.blocks.count() {
            return Err(Error::DimensionMismatch {
                expected: self.blocks.count(),
                got: x.len(),
            });
        }
        let mut moments = MomentTable::point_mass(x, self.max_order);
        let mut factors = Vec::with_capacity(x.len());
        for k in 0..x.len() {
            let f = self.conditional_factor(k, &moments)?;
            moments.set_row(k, f.moments(self.max_order));
            factors.push(f);
        }
        let mut state = GridProduct::new(factors, self.max_order)?;
        state.updated.iter_mut().for_each(|u| *u = true);
        Ok(state)
    }

    /// `Ψ(q) = Σ_k H(q_k) + ∫U dq`, equal to `KL(q‖π)` up to `log Z`.
    pub fn free_energy(&self, state: &GridProduct) -> Result<f64> {
        let entropy: f64 = state.factors.iter().map(GridDensity::entropy).sum();
        Ok(entropy + self.pot.expectation(&state.moments)?)
    }

    pub fn w2l(&self, a: &GridProduct, b: &GridProduct) -> Result<f64> {
        let mut total = 0.0;
        for (k, l) in self.weights.iter().enumerate() {
            let w = w2_1d(&a.factors[k], &b.factors[k])?;
            total += l * w * w;
        }
        Ok(total.sqrt())
    }

    pub fn w2l_to_reference(&self, state: &GridProduct, reference: &GridReference) -> Result<f64> {
        let levels = quantile_levels(QUANTILE_LEVELS);
        let mut total = 0.0;
        for (k, l) in self.weights.iter().enumerate() {
            let q = quantiles(&state.factors[k], &levels)?;
            let w = w2_from_quantiles(&q, reference.quantiles(k));
            total += l * w * w;
        }
        Ok(total.sqrt())
    }

    /// Cyclic sweeps from the point mass at the domain centre until one full
    /// sweep moves the state less than `tol` in `W_{2,L}`.
    pub fn solve_reference(&self, tol: f64, max_sweeps: usize) -> Result<GridReference> {
        let centre = 0.5 * (self.grid.lo() + self.grid.hi());
        let mut state = self.one_sweep_from_point(&vec![centre; self.blocks.count()])?;
        let mut movements = Vec::new();
        loop {
            let previous = state.clone();
            for k in 0..self.blocks.count() {
                self.cavi_update(&mut state, k)?;
            }
            let movement = self.w2l(&previous, &state)?;
            movements.push(movement);
            if movement < tol {
                break;
            }
            if movements.len() >= max_sweeps {
                return Err(Error::NoConvergence {
                    sweeps: movements.len(),
                    movement,
                });
            }
        }
        let levels = quantile_levels(QUANTILE_LEVELS);
        let quantiles = state
            .factors
            .iter()
            .map(|f| quantiles(f, &levels))
            .collect::<Result<Vec<_>>>()?;
        Ok(GridReference {
            free_energy: self.free_energy(&state)?,
            sweeps: movements.len(),
            final_movement: *movements.last().unwrap(),
            movements,
            state,
            quantiles,
        })
    }
}
