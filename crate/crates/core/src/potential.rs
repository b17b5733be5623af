//! Block structure and polynomial potentials `U(x) = ½ xᵀQx + bᵀx + Σ c·Π x_i^{p_i}`.
//!
//! The quadratic part is kept canonical: any monomial of total degree ≤ 2
//! handed to [`Potential::new`] is folded into `Q` and `b`, and constants are
//! dropped since they only shift the log normalizer.

use std::collections::BTreeMap;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Partition of `ℝ^d` into `K` consecutive blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockStructure {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
    weights: Option<Vec<f64>>,
}

impl BlockStructure {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::InvalidBlocks("at least one block is required".into()));
        }
        if let Some(k) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::InvalidBlocks(format!("block {k} has size 0")));
        }
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut acc = 0;
        for &s in &sizes {
            offsets.push(acc);
            acc += s;
        }
        Ok(Self {
            sizes,
            offsets,
            weights: None,
        })
    }

    /// `K` blocks of size one.
    pub fn scalar(count: usize) -> Result<Self> {
        Self::new(vec![1; count])
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.sizes.len() {
            return Err(Error::DimensionMismatch {
                expected: self.sizes.len(),
                got: weights.len(),
            });
        }
        if let Some((index, &value)) = weights
            .iter()
            .enumerate()
            .find(|(_, w)| !(w.is_finite() && **w > 0.0))
        {
            return Err(Error::NonPositiveSmoothness { index, value });
        }
        self.weights = Some(weights);
        Ok(self)
    }

    pub fn count(&self) -> usize {
        self.sizes.len()
    }

    pub fn dim(&self) -> usize {
        self.offsets.last().unwrap() + self.sizes.last().unwrap()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn size(&self, k: usize) -> usize {
        self.sizes[k]
    }

    pub fn range(&self, k: usize) -> Range<usize> {
        self.offsets[k]..self.offsets[k] + self.sizes[k]
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn all_scalar(&self) -> bool {
        self.sizes.iter().all(|&s| s == 1)
    }

    /// Block that owns coordinate `i`.
    pub fn block_of(&self, i: usize) -> usize {
        match self.offsets.binary_search(&i) {
            Ok(k) => k,
            Err(k) => k - 1,
        }
    }

    pub fn check_index(&self, k: usize) -> Result<()> {
        if k >= self.count() {
            return Err(Error::BlockIndex {
                index: k,
                count: self.count(),
            });
        }
        Ok(())
    }
}

/// `coeff · Π x_i^{p_i}`; powers are sorted by coordinate, unique, and positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coeff: f64,
    pub powers: Vec<(usize, u32)>,
}

impl Monomial {
    pub fn new(coeff: f64, powers: impl IntoIterator<Item = (usize, u32)>) -> Self {
        let mut merged: BTreeMap<usize, u32> = BTreeMap::new();
        for (i, p) in powers {
            if p > 0 {
                *merged.entry(i).or_default() += p;
            }
        }
        Self {
            coeff,
            powers: merged.into_iter().collect(),
        }
    }

    pub fn degree(&self) -> u32 {
        self.powers.iter().map(|&(_, p)| p).sum()
    }

    pub fn power_of(&self, i: usize) -> u32 {
        self.powers
            .iter()
            .find(|&&(j, _)| j == i)
            .map_or(0, |&(_, p)| p)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.powers
            .iter()
            .fold(self.coeff, |acc, &(i, p)| acc * x[i].powi(p as i32))
    }

    /// Expands `coeff · (Σ a_i x_i)^power` into monomials, merging like terms.
    pub fn expand_linear_power(coeff: f64, form: &[(usize, f64)], power: u32) -> Vec<Monomial> {
        let mut acc: BTreeMap<Vec<(usize, u32)>, f64> = BTreeMap::new();
        acc.insert(Vec::new(), coeff);
        for _ in 0..power {
            let mut next: BTreeMap<Vec<(usize, u32)>, f64> = BTreeMap::new();
            for (key, c) in &acc {
                for &(i, a) in form {
                    let m = Monomial::new(1.0, key.iter().copied().chain([(i, 1)]));
                    *next.entry(m.powers).or_default() += c * a;
                }
            }
            acc = next;
        }
        acc.into_iter()
            .filter(|(_, c)| *c != 0.0)
            .map(|(powers, c)| Monomial { coeff: c, powers })
            .collect()
    }
}

/// Polynomial in one variable; `coeffs[p]` multiplies `x^p`.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial1D {
    pub coeffs: Vec<f64>,
}

impl Polynomial1D {
    pub fn degree(&self) -> usize {
        self.coeffs
            .iter()
            .rposition(|&c| c != 0.0)
            .unwrap_or(0)
    }

    pub fn coeff(&self, p: usize) -> f64 {
        self.coeffs.get(p).copied().unwrap_or(0.0)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }
}

/// Per-coordinate moment tables: `table[j][p] = E[x_j^p]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentTable {
    table: Vec<Vec<f64>>,
}

impl MomentTable {
    pub fn new(table: Vec<Vec<f64>>) -> Self {
        Self { table }
    }

    /// Moments of the point mass at `a`.
    pub fn point_mass(a: &[f64], max_order: u32) -> Self {
        Self::new(
            a.iter()
                .map(|&v| (0..=max_order).map(|p| v.powi(p as i32)).collect())
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn get(&self, coord: usize, order: u32) -> Result<f64> {
        if order == 0 {
            return Ok(1.0);
        }
        self.table
            .get(coord)
            .and_then(|row| row.get(order as usize))
            .copied()
            .ok_or(Error::MissingMoment { coord, order })
    }

    pub fn set_row(&mut self, coord: usize, row: Vec<f64>) {
        self.table[coord] = row;
    }

    pub fn row(&self, coord: usize) -> &[f64] {
        &self.table[coord]
    }
}

/// Neumaier-compensated running sum.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Potential {
    q: DMatrix<f64>,
    b: DVector<f64>,
    monomials: Vec<Monomial>,
    extra_smoothness: Option<Vec<f64>>,
}

impl Potential {
    /// Builds a potential, symmetrizing `q` and folding monomials of degree
    /// ≤ 2 into the quadratic part.
    pub fn new(q: DMatrix<f64>, b: DVector<f64>, monomials: Vec<Monomial>) -> Result<Self> {
        let d = b.len();
        if q.nrows() != d || q.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: q.nrows().max(q.ncols()),
            });
        }
        if q.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidPotential("non-finite coefficient".into()));
        }
        let mut q = (&q + q.transpose()) * 0.5;
        let mut b = b;
        let mut kept = Vec::new();
        for m in monomials {
            let m = Monomial::new(m.coeff, m.powers);
            if let Some(&(i, _)) = m.powers.iter().find(|&&(i, _)| i >= d) {
                return Err(Error::InvalidPotential(format!(
                    "monomial references coordinate {i} but dimension is {d}"
                )));
            }
            if !m.coeff.is_finite() {
                return Err(Error::InvalidPotential("non-finite monomial coefficient".into()));
            }
            if m.coeff == 0.0 {
                continue;
            }
            match m.powers.as_slice() {
                [] => {}
                [(i, 1)] => b[*i] += m.coeff,
                [(i, 2)] => q[(*i, *i)] += 2.0 * m.coeff,
                [(i, 1), (j, 1)] => {
                    q[(*i, *j)] += m.coeff;
                    q[(*j, *i)] += m.coeff;
                }
                _ => kept.push(m),
            }
        }
        Ok(Self {
            q,
            b,
            monomials: kept,
            extra_smoothness: None,
        })
    }

    pub fn quadratic(q: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        Self::new(q, b, Vec::new())
    }

    /// Declares the per-block smoothness `ℓ_k` contributed by the monomials on
    /// the working domain.
    pub fn with_extra_smoothness(mut self, extra: Vec<f64>) -> Result<Self> {
        if extra.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidPotential(
                "declared extra smoothness must be finite and nonnegative".into(),
            ));
        }
        self.extra_smoothness = Some(extra);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn monomials(&self) -> &[Monomial] {
        &self.monomials
    }

    pub fn extra_smoothness(&self) -> Option<&[f64]> {
        self.extra_smoothness.as_deref()
    }

    pub fn is_quadratic(&self) -> bool {
        self.monomials.is_empty()
    }

    /// Largest exponent of coordinate `i` across `Q` (1 or 2) and monomials.
    pub fn max_power_of(&self, i: usize) -> u32 {
        let quad = if self.q[(i, i)] != 0.0 {
            2
        } else if self.q.row(i).iter().any(|&v| v != 0.0) || self.b[i] != 0.0 {
            1
        } else {
            0
        };
        self.monomials
            .iter()
            .map(|m| m.power_of(i))
            .fold(quad, u32::max)
    }

    pub fn max_degree(&self) -> u32 {
        self.monomials.iter().map(Monomial::degree).fold(2, u32::max)
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        let d = self.dim();
        let mut sum = CompensatedSum::default();
        for i in 0..d {
            sum.add(0.5 * self.q[(i, i)] * x[i] * x[i]);
            for j in i + 1..d {
                sum.add(self.q[(i, j)] * x[i] * x[j]);
            }
            sum.add(self.b[i] * x[i]);
        }
        for m in &self.monomials {
            sum.add(m.eval(x));
        }
        Ok(sum.total())
    }

    pub fn grad(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.check_dim(x)?;
        let xv = DVector::from_column_slice(x);
        let mut g = &self.q * &xv + &self.b;
        for m in &self.monomials {
            for (slot, &(i, p)) in m.powers.iter().enumerate() {
                let mut term = m.coeff * f64::from(p) * x[i].powi(p as i32 - 1);
                for (other, &(j, pj)) in m.powers.iter().enumerate() {
                    if other != slot {
                        term *= x[j].powi(pj as i32);
                    }
                }
                g[i] += term;
            }
        }
        Ok(g)
    }

    pub fn hessian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_dim(x)?;
        let mut h = self.q.clone();
        h += self.monomial_hessian(x);
        Ok(h)
    }

    /// Hessian of the monomial part alone.
    pub fn monomial_hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let d = self.dim();
        let mut h = DMatrix::zeros(d, d);
        for m in &self.monomials {
            for (a, &(i, pi)) in m.powers.iter().enumerate() {
                for (bidx, &(j, pj)) in m.powers.iter().enumerate() {
                    let mut term = m.coeff;
                    if a == bidx {
                        if pi < 2 {
                            continue;
                        }
                        term *= f64::from(pi * (pi - 1)) * x[i].powi(pi as i32 - 2);
                    } else {
                        term *= f64::from(pi) * x[i].powi(pi as i32 - 1);
                        term *= f64::from(pj) * x[j].powi(pj as i32 - 1);
                    }
                    for (c, &(l, pl)) in m.powers.iter().enumerate() {
                        if c != a && c != bidx {
                            term *= x[l].powi(pl as i32);
                        }
                    }
                    h[(i, j)] += term;
                }
            }
        }
        h
    }

    fn require_scalar_blocks(&self, blocks: &BlockStructure) -> Result<()> {
        if blocks.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: blocks.dim(),
            });
        }
        if let Some(k) = blocks.sizes().iter().position(|&s| s != 1) {
            return Err(Error::MultivariateBlock(k));
        }
        Ok(())
    }

    /// The 1D polynomial `x_k ↦ ∫ U dq_{-k}` with the other coordinates
    /// replaced by their moments. The additive constant is dropped.
    pub fn conditional_polynomial(
        &self,
        blocks: &BlockStructure,
        k: usize,
        moments: &MomentTable,
    ) -> Result<Polynomial1D> {
        self.require_scalar_blocks(blocks)?;
        blocks.check_index(k)?;
        let degree = self.max_power_of(k).max(2) as usize;
        let mut coeffs = vec![0.0; degree + 1];
        coeffs[2] = 0.5 * self.q[(k, k)];
        let mut linear = CompensatedSum::default();
        linear.add(self.b[k]);
        for j in 0..self.dim() {
            if j != k && self.q[(k, j)] != 0.0 {
                linear.add(self.q[(k, j)] * moments.get(j, 1)?);
            }
        }
        coeffs[1] = linear.total();
        for m in &self.monomials {
            let mut c = m.coeff;
            let mut pk = 0;
            for &(j, p) in &m.powers {
                if j == k {
                    pk = p;
                } else {
                    c *= moments.get(j, p)?;
                }
            }
            if pk > 0 {
                coeffs[pk as usize] += c;
            }
        }
        Ok(Polynomial1D { coeffs })
    }

    /// `∫ U dq` for a product of one-dimensional factors with the given moments.
    pub fn expectation(&self, moments: &MomentTable) -> Result<f64> {
        let d = self.dim();
        let mut sum = CompensatedSum::default();
        for i in 0..d {
            if self.q[(i, i)] != 0.0 {
                sum.add(0.5 * self.q[(i, i)] * moments.get(i, 2)?);
            }
            for j in i + 1..d {
                if self.q[(i, j)] != 0.0 {
                    sum.add(self.q[(i, j)] * moments.get(i, 1)? * moments.get(j, 1)?);
                }
            }
            if self.b[i] != 0.0 {
                sum.add(self.b[i] * moments.get(i, 1)?);
            }
        }
        for m in &self.monomials {
            let mut term = m.coeff;
            for &(j, p) in &m.powers {
                term *= moments.get(j, p)?;
            }
            sum.add(term);
        }
        Ok(sum.total())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};
    use proptest::prelude::*;

    fn coupled() -> Potential {
        Potential::quadratic(dmatrix![1.0, 0.5; 0.5, 1.0], dvector![1.0, 0.0]).unwrap()
    }

    /// Sum of ½xᵀQx + bᵀx + monomials by explicit scalar loops.
    fn scalar_loop_eval(q: &[[f64; 2]; 2], b: &[f64; 2], x: &[f64; 2]) -> f64 {
        let mut s = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                s += 0.5 * q[i][j] * x[i] * x[j];
            }
            s += b[i] * x[i];
        }
        s
    }

    #[test]
    fn block_offsets() {
        let b = BlockStructure::new(vec![2, 1, 3]).unwrap();
        assert_eq!(b.offsets(), &[0, 2, 3]);
        assert_eq!(b.dim(), 6);
        assert_eq!(b.range(2), 3..6);
        assert_eq!(b.block_of(4), 2);
        assert_eq!(b.block_of(2), 1);
        assert!(BlockStructure::new(vec![]).is_err());
        assert!(BlockStructure::new(vec![1, 0]).is_err());
        assert!(b.clone().with_weights(vec![1.0, 0.0, 1.0]).is_err());
        assert!(b.with_weights(vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn eval_examples() {
        let p = Potential::quadratic(DMatrix::identity(2, 2), dvector![0.0, 0.0]).unwrap();
        assert_eq!(p.eval(&[0.0, 0.0]).unwrap(), 0.0);

        let oracle = scalar_loop_eval(&[[1.0, 0.5], [0.5, 1.0]], &[1.0, 0.0], &[1.0, 1.0]);
        assert!((oracle - 2.5).abs() < 1e-15);
        assert!((coupled().eval(&[1.0, 1.0]).unwrap() - 2.5).abs() < 1e-15);

        let quartic = Potential::new(
            DMatrix::zeros(1, 1),
            dvector![0.0],
            vec![Monomial::new(0.25, [(0, 4)])],
        )
        .unwrap();
        assert_eq!(quartic.eval(&[2.0]).unwrap(), 4.0);
        assert_eq!(
            quartic.eval(&[1.0, 2.0]),
            Err(Error::DimensionMismatch { expected: 1, got: 2 })
        );
    }

    #[test]
    fn grad_examples() {
        let p = Potential::quadratic(DMatrix::identity(2, 2), dvector![0.0, 0.0]).unwrap();
        assert_eq!(p.grad(&[3.0, -1.0]).unwrap(), dvector![3.0, -1.0]);
        let quartic = Potential::new(
            DMatrix::zeros(1, 1),
            dvector![0.0],
            vec![Monomial::new(0.25, [(0, 4)])],
        )
        .unwrap();
        assert_eq!(quartic.grad(&[2.0]).unwrap(), dvector![8.0]);
    }

    #[test]
    fn folding_low_degree_monomials() {
        let folded = Potential::new(
            DMatrix::zeros(2, 2),
            dvector![0.0, 0.0],
            vec![
                Monomial::new(0.5, [(0, 2)]),
                Monomial::new(0.5, [(1, 2)]),
                Monomial::new(0.5, [(0, 1), (1, 1)]),
                Monomial::new(1.0, [(0, 1)]),
                Monomial::new(7.0, []),
            ],
        )
        .unwrap();
        assert!(folded.is_quadratic());
        assert_eq!(folded.q(), coupled().q());
        assert_eq!(folded.b(), coupled().b());
        for x in [[1.0, 1.0], [-0.3, 2.0], [4.0, -1.5]] {
            assert_eq!(folded.eval(&x).unwrap(), coupled().eval(&x).unwrap());
        }
    }

    #[test]
    fn expand_linear_power_binomial() {
        // ¼(x0 - x1)^4
        let ms = Monomial::expand_linear_power(0.25, &[(0, 1.0), (1, -1.0)], 4);
        assert_eq!(ms.len(), 5);
        let binom = [1.0, 4.0, 6.0, 4.0, 1.0];
        for m in &ms {
            let p0 = m.power_of(0);
            let sign = if (4 - p0) % 2 == 0 { 1.0 } else { -1.0 };
            assert_eq!(m.coeff, 0.25 * binom[p0 as usize] * sign);
        }
    }

    #[test]
    fn conditional_polynomial_coupled_quadratic() {
        let rho = 0.3;
        let m = -1.7;
        let p = Potential::quadratic(dmatrix![1.0, rho; rho, 1.0], dvector![0.0, 0.0]).unwrap();
        let blocks = BlockStructure::scalar(2).unwrap();
        let moments = MomentTable::new(vec![vec![1.0, 0.0, 1.0], vec![1.0, m, m * m + 1.0]]);
        let poly = p.conditional_polynomial(&blocks, 0, &moments).unwrap();
        assert_eq!(poly.coeff(2), 0.5);
        assert!((poly.coeff(1) - rho * m).abs() < 1e-15);

        // 2D quadrature oracle: ∫U(x0, y) N(y; m, 1) dy, differenced to drop the constant.
        let integrate = |x0: f64| {
            let n = 4001;
            let (lo, hi) = (m - 12.0, m + 12.0);
            let h = (hi - lo) / (n - 1) as f64;
            (0..n)
                .map(|i| {
                    let y = lo + i as f64 * h;
                    let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
                    let dens = (-(y - m) * (y - m) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
                    w * h * dens * p.eval(&[x0, y]).unwrap()
                })
                .sum::<f64>()
        };
        let base = integrate(0.0);
        for x0 in [-2.0, 0.5, 3.0] {
            let expect = integrate(x0) - base;
            assert!((poly.eval(x0) - expect).abs() < 1e-9, "{x0}");
        }
    }

    #[test]
    fn conditional_polynomial_independent_target_ignores_moments() {
        let p = Potential::quadratic(DMatrix::from_diagonal(&dvector![2.0, 3.0]), dvector![1.0, -1.0])
            .unwrap();
        let blocks = BlockStructure::scalar(2).unwrap();
        let a = MomentTable::new(vec![vec![1.0, 0.0, 1.0], vec![1.0, 5.0, 30.0]]);
        let b = MomentTable::new(vec![vec![1.0, 0.0, 1.0], vec![1.0, -2.0, 4.5]]);
        assert_eq!(
            p.conditional_polynomial(&blocks, 0, &a).unwrap(),
            p.conditional_polynomial(&blocks, 0, &b).unwrap()
        );
    }

    #[test]
    fn conditional_polynomial_quartic_symbolic() {
        let p = Potential::new(
            DMatrix::zeros(2, 2),
            dvector![0.0, 0.0],
            Monomial::expand_linear_power(0.25, &[(0, 1.0), (1, -1.0)], 4),
        )
        .unwrap();
        let blocks = BlockStructure::scalar(2).unwrap();
        let gauss = [1.0, 0.0, 1.0, 0.0, 3.0];
        let moments = MomentTable::new(vec![gauss.to_vec(), gauss.to_vec()]);
        let poly = p.conditional_polynomial(&blocks, 0, &moments).unwrap();
        let binom = [1.0, 4.0, 6.0, 4.0, 1.0];
        for pw in 1..=4usize {
            let sign = if (4 - pw) % 2 == 0 { 1.0 } else { -1.0 };
            let expect = 0.25 * binom[4 - pw] * sign * gauss[4 - pw];
            assert!((poly.coeff(pw) - expect).abs() < 1e-15, "p = {pw}");
        }
    }

    #[test]
    fn conditional_polynomial_errors() {
        let p = coupled();
        let moments = MomentTable::new(vec![vec![1.0], vec![1.0]]);
        assert_eq!(
            p.conditional_polynomial(&BlockStructure::scalar(2).unwrap(), 0, &moments),
            Err(Error::MissingMoment { coord: 1, order: 1 })
        );
        let p3 = Potential::quadratic(DMatrix::identity(3, 3), dvector![0.0, 0.0, 0.0]).unwrap();
        assert_eq!(
            p3.conditional_polynomial(&BlockStructure::new(vec![2, 1]).unwrap(), 1, &moments),
            Err(Error::MultivariateBlock(0))
        );
    }

    fn test_potentials() -> Vec<Potential> {
        let mut ms = Monomial::expand_linear_power(0.25, &[(0, 1.0), (1, -1.0)], 4);
        ms.extend(Monomial::expand_linear_power(0.25, &[(0, 1.0), (1, 1.0), (2, 0.5)], 4));
        ms.push(Monomial::new(0.1, [(0, 1), (1, 1), (2, 1)]));
        ms.push(Monomial::new(0.05, [(2, 6)]));
        vec![
            Potential::quadratic(
                dmatrix![2.0, 0.3, -0.1; 0.3, 1.0, 0.2; -0.1, 0.2, 3.0],
                dvector![0.5, -1.0, 0.25],
            )
            .unwrap(),
            Potential::new(
                dmatrix![1.0, 0.2, 0.0; 0.2, 1.0, 0.0; 0.0, 0.0, 0.5],
                dvector![0.0, 0.3, 0.0],
                ms,
            )
            .unwrap(),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn grad_matches_central_differences(x in prop::array::uniform3(-2.0f64..2.0)) {
            let h = 1e-5;
            for pot in test_potentials() {
                let g = pot.grad(&x).unwrap();
                for i in 0..3 {
                    let mut xp = x;
                    let mut xm = x;
                    xp[i] += h;
                    xm[i] -= h;
                    let fd = (pot.eval(&xp).unwrap() - pot.eval(&xm).unwrap()) / (2.0 * h);
                    let scale = g[i].abs().max(1.0);
                    prop_assert!((fd - g[i]).abs() <= 1e-6 * scale, "coord {} fd {} grad {}", i, fd, g[i]);
                }
            }
        }

        #[test]
        fn hessian_matches_gradient_differences(x in prop::array::uniform3(-2.0f64..2.0)) {
            let h = 1e-5;
            for pot in test_potentials() {
                let hess = pot.hessian(&x).unwrap();
                for j in 0..3 {
                    let mut xp = x;
                    let mut xm = x;
                    xp[j] += h;
                    xm[j] -= h;
                    let col = (pot.grad(&xp).unwrap() - pot.grad(&xm).unwrap()) / (2.0 * h);
                    for i in 0..3 {
                        let scale = hess[(i, j)].abs().max(1.0);
                        prop_assert!((col[i] - hess[(i, j)]).abs() <= 1e-6 * scale);
                    }
                }
            }
        }

        #[test]
        fn point_mass_conditional_reproduces_eval(a in prop::array::uniform3(-2.0f64..2.0), k in 0usize..3) {
            let blocks = BlockStructure::scalar(3).unwrap();
            for pot in test_potentials() {
                let moments = MomentTable::point_mass(&a, pot.max_degree());
                let poly = pot.conditional_polynomial(&blocks, k, &moments).unwrap();
                let mut x0 = a;
                x0[k] = 0.0;
                let offset = pot.eval(&x0).unwrap() - poly.eval(0.0);
                for step in 0..20 {
                    let t = -2.0 + 0.2 * step as f64;
                    let mut x = a;
                    x[k] = t;
                    let direct = pot.eval(&x).unwrap();
                    prop_assert!((poly.eval(t) + offset - direct).abs() <= 1e-10 * direct.abs().max(1.0));
                }
            }
        }
    }
}
